import sys

from gpslab.cli import main

sys.exit(main())
