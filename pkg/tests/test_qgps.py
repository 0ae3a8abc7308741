"""
qGPS models.

Scenarios:
  * log amplitudes match the explicit support-product sum
  * log-derivatives agree with finite differences in every mode
  * cached ratio updates agree with full evaluation
  * sign-structure constructors (Marshall sign, reordering sign)
  * conversion from an exponential-kernel GPS
  * container round trip, including split and symmetrized models
"""
import numpy as np
import pytest

from gpslab.core.exceptions import InvalidArgumentError, UnsupportedOperationError
from gpslab.models.config_space import Lattice, SectorSpec, build_group, enumerate_sector
from gpslab.models.gps_kernel import GPSModel, KernelSpec, KernelVariant
from gpslab.models.qgps import (
    QGPSModel,
    from_gps,
    msr_qgps,
    msr_qgps_local,
    reorder_sign_qgps,
)


def brute_log_psi(epsilon, x):
    n_sites = epsilon.shape[1]
    return np.sum(np.prod(epsilon[x, np.arange(n_sites), :], axis=0))


def finite_difference(model, configs, step=1e-6):
    base = model.parameters
    columns = []
    for k in range(len(base)):
        shifted = base.copy()
        shifted[k] += step
        plus = model.with_parameters(shifted).log_psi(configs)
        shifted[k] -= 2 * step
        minus = model.with_parameters(shifted).log_psi(configs)
        columns.append((plus - minus) / (2 * step))
    return np.stack(columns, axis=1)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def test_log_psi_matches_product_sum(make_qgps):
    model = make_qgps(n_supports=3)
    configs = enumerate_sector(4, 2)
    expected = [brute_log_psi(model.epsilon, x) for x in configs]
    assert np.allclose(model.log_psi(configs), expected)


def test_random_init_is_near_zero(make_qgps):
    model = make_qgps(scale=1e-3)
    assert np.all(np.abs(model.log_psi(enumerate_sector(4, 2))) < 0.1)
    assert np.allclose(model.epsilon[:, 1:, :], 1.0, atol=0.01)


def test_kernel_mode_is_group_invariant(chain4, make_qgps):
    group = build_group(chain4, ["translations", "point_group"])
    model = make_qgps(mode="kernel", group=group, lattice=chain4)
    configs = enumerate_sector(4, 2)
    for op in group:
        assert np.allclose(model.log_psi(op.apply(configs)), model.log_psi(configs))


def test_projective_mode_sums_amplitudes(chain4, make_qgps):
    group = build_group(chain4, ["translations"])
    model = make_qgps(mode="projective", group=group, lattice=chain4)
    plain = QGPSModel(model.epsilon)
    x = np.array([0, 1, 1, 0])
    expected = sum(np.exp(plain.log_psi_one(op.apply(x))) for op in group)
    assert np.exp(model.log_psi_one(x)) == pytest.approx(expected)
    with pytest.raises(UnsupportedOperationError):
        model.log_amplitude(x)


def test_split_model_separates_phase(make_qgps):
    model = make_qgps(split=True)
    configs = enumerate_sector(4, 2)
    log_psi = model.log_psi(configs)
    assert np.allclose(log_psi.real, model.magnitude_part().log_psi(configs).real)
    assert np.allclose(log_psi.imag, model.phase_part().log_psi(configs).real)
    assert model.real_parameters


def test_magnitude_part_needs_split(make_qgps):
    with pytest.raises(UnsupportedOperationError):
        make_qgps().magnitude_part()


def test_epsilon_shape_is_validated():
    with pytest.raises(InvalidArgumentError):
        QGPSModel(np.ones((2, 4)))
    with pytest.raises(InvalidArgumentError):
        QGPSModel(np.full((2, 4, 1), np.nan))


# ---------------------------------------------------------------------------
# Derivatives
# ---------------------------------------------------------------------------

@pytest.mark.parametrize(
    "overrides",
    [
        {},
        {"split": True},
        {"mode": "kernel", "symmetries": ["translations"]},
        {"mode": "projective", "symmetries": ["translations"]},
    ],
)
def test_log_derivatives_match_finite_differences(chain4, make_qgps, overrides):
    overrides = dict(overrides)
    symmetries = overrides.pop("symmetries", None)
    if symmetries:
        overrides.update(group=build_group(chain4, symmetries), lattice=chain4)
    model = make_qgps(scale=0.4, **overrides)
    configs = enumerate_sector(4, 2, SectorSpec(n_up=2))
    analytic = model.log_derivatives(configs)
    numeric = finite_difference(model, configs)
    assert analytic.shape == (len(configs), model.n_parameters)
    assert np.allclose(analytic, numeric, atol=1e-6)


# ---------------------------------------------------------------------------
# Fast updates
# ---------------------------------------------------------------------------

def test_fast_update_many_matches_full_evaluation(chain4, heisenberg4, make_qgps):
    group = build_group(chain4, ["translations"])
    model = make_qgps(mode="kernel", group=group, lattice=chain4)
    x = np.array([0, 1, 0, 1])
    targets, _ = heisenberg4.row(x)
    cache = model.init_cache(x)
    assert np.allclose(model.fast_update_many(cache, targets), model.log_psi(targets))


def test_fast_update_survives_zero_factor(make_qgps):
    model = make_qgps()
    epsilon = model.epsilon.copy()
    epsilon[0, 2, :] = 0.0
    model = model.with_epsilon(epsilon)
    x = np.array([1, 1, 0, 1])
    cache = model.init_cache(x)
    targets = np.array([[1, 1, 1, 1], [0, 1, 1, 1]])
    assert np.allclose(model.fast_update_many(cache, targets), model.log_psi(targets))


def test_fast_update_walk_tracks_state(make_qgps, rng):
    model = make_qgps(n_supports=3)
    x = np.array([0, 1, 0, 1])
    cache = model.init_cache(x)
    for _ in range(25):
        i, j = rng.choice(4, size=2, replace=False)
        cache = model.fast_update(cache, [(int(i), int(cache.config[j])), (int(j), int(cache.config[i]))])
    assert cache.log_value == pytest.approx(model.log_psi_one(cache.config))


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def test_msr_qgps_sign(chain4):
    sub = np.flatnonzero(chain4.sublattice() == 0)
    model = msr_qgps(4, sub)
    for x in enumerate_sector(4, 2):
        up_on_a = int(np.sum(x[sub] == 0))
        assert model.amplitude(x) == pytest.approx(1j * (-1) ** up_on_a)


def test_msr_qgps_local_sign(chain4):
    sub = np.flatnonzero(chain4.sublattice() == 0)
    model = msr_qgps_local(4, sub)
    for x in enumerate_sector(4, 2):
        up_on_a = int(np.sum(x[sub] == 0))
        assert model.amplitude(x) == pytest.approx((-1) ** up_on_a)


def test_msr_qgps_removes_marshall_sign(chain4, heisenberg4):
    """Marshall-rotated ground state times the MSR model is the plain ground state (up to a global phase)."""
    from gpslab.models.hamiltonian import HeisenbergSpec
    from gpslab.services.exact_oracle import ground_state

    rotated = HeisenbergSpec(chain4, msr_transform=True, sector=heisenberg4.sector)
    plain_state = ground_state(heisenberg4)
    rotated_state = ground_state(rotated)
    sub = np.flatnonzero(chain4.sublattice() == 0)
    signs = msr_qgps_local(4, sub).amplitudes(plain_state.basis).real
    product = rotated_state.values * signs
    assert abs(np.vdot(product, plain_state.values)) == pytest.approx(1.0)


def test_reorder_sign():
    model = reorder_sign_qgps([1, 0, 2])
    assert model.amplitude(np.array([1, 1, 0])) == pytest.approx(-1.0)
    assert model.amplitude(np.array([1, 0, 1])) == pytest.approx(1.0)
    assert model.amplitude(np.array([0, 1, 1])) == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        reorder_sign_qgps([0, 0, 1])


def test_from_gps_reproduces_exponential_kernel(chain4):
    group = build_group(chain4, ["translations"])
    supports = np.array([[0, 1, 0, 1], [0, 0, 1, 1], [1, 0, 0, 1]])
    gps = GPSModel(KernelSpec(theta=0.6, gamma=1.5), supports, [0.5, -0.2 + 0.1j, 0.3j], chain4, group)
    qgps = from_gps(gps)
    configs = enumerate_sector(4, 2)
    assert qgps.n_supports == 3
    assert np.allclose(qgps.log_psi(configs), gps.log_psi(configs))


def test_from_gps_needs_exponential_kernel(chain4):
    gps = GPSModel(KernelSpec(KernelVariant.P_BODY), np.array([[0, 1, 0, 1]]), [1.0], chain4)
    with pytest.raises(UnsupportedOperationError):
        from_gps(gps)


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("split", [False, True])
def test_container_round_trip(tmp_path, make_qgps, split):
    lattice = Lattice.chain(4)
    model = make_qgps(split=split, mode="kernel", group=build_group(lattice, ["translations"]), lattice=lattice)
    loaded = QGPSModel.load(model.save(tmp_path / "model.yaml"))
    configs = enumerate_sector(4, 2)
    assert loaded.split == split
    assert loaded.mode == model.mode
    assert len(loaded.group) == 4
    assert np.allclose(loaded.log_psi(configs), model.log_psi(configs))
