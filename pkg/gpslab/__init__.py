"""
gpslab: Gaussian Process States for many-body ground states
"""
__version__ = "0.1.0"
