"""
Shared test fixtures.

Strategy:
  * Settings are read once at import, so the environment is prepared
    before anything imports `gpslab.core.config`: test mode, no progress
    bars, a fixed default seed.
  * Small lattices and Hamiltonians come from plain fixtures; models and
    training sets from factory fixtures whose defaults can be overridden
    per test with keyword arguments.
  * Oracles are brute force: full sector enumeration, dense matrices,
    finite differences.
"""
from __future__ import annotations

import os

import numpy as np
import pytest

# ---------------------------------------------------------------------------
# Environment BEFORE gpslab.core.config is imported.
# ---------------------------------------------------------------------------
os.environ.setdefault("APP_ENV", "test")
os.environ.setdefault("SHOW_PROGRESS", "False")
os.environ.setdefault("DEFAULT_SEED", "1234")
os.environ.setdefault("LOG_LEVEL", "WARNING")


@pytest.fixture()
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture()
def chain4():
    from gpslab.models.config_space import Lattice
    return Lattice.chain(4)


@pytest.fixture()
def square():
    from gpslab.models.config_space import Lattice
    return Lattice.rectangle(2, 2)


@pytest.fixture()
def heisenberg_dimer():
    """Two-site open chain in the Sz = 0 sector; ground energy -3/4."""
    from gpslab.models.config_space import Lattice, SectorSpec
    from gpslab.models.hamiltonian import HeisenbergSpec
    return HeisenbergSpec(Lattice.chain(2, "open"), sector=SectorSpec(n_up=1))


@pytest.fixture()
def heisenberg4():
    from gpslab.models.config_space import Lattice, SectorSpec
    from gpslab.models.hamiltonian import HeisenbergSpec
    return HeisenbergSpec(Lattice.chain(4), sector=SectorSpec(n_up=2))


@pytest.fixture()
def hubbard4():
    from gpslab.models.config_space import Lattice, SectorSpec
    from gpslab.models.hamiltonian import HubbardSpec
    return HubbardSpec(Lattice.chain(4, "antiperiodic"), t=1.0, U=4.0, sector=SectorSpec(2, 2))


@pytest.fixture()
def make_qgps():
    """Factory for random qGPS models. Override defaults with kwargs."""
    from gpslab.models.qgps import random_init

    def _make(**overrides):
        params = {
            "n_sites": 4,
            "local_dim": 2,
            "n_supports": 2,
            "scale": 0.3,
            "seed": 7,
        }
        params.update(overrides)
        return random_init(**params)

    return _make


@pytest.fixture()
def make_train_set():
    """Factory: every configuration of a sector labelled by a source model."""
    from gpslab.models.config_space import enumerate_sector
    from gpslab.services.sweep import TrainSet

    def _make(model, sector=None, **overrides):
        configs = enumerate_sector(model.n_sites, model.local_dim, sector)
        return TrainSet(configs, model.log_psi(configs), **overrides)

    return _make


@pytest.fixture()
def write_toml(tmp_path):
    """Writes a TOML run configuration and returns its path."""

    def _write(text: str, name: str = "run.toml"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
