"""
Bayesian site sweeps and supervised wavefunction optimization.

Scenarios:
  * zigzag site orders
  * per-site features reproduce the model's log amplitudes
  * sweeping towards a source model lowers the training error
  * split models sweep magnitude and phase separately
  * projective models and incomplete schedules are rejected
  * SWO iterations produce a finite energy trace
"""
import numpy as np
import pytest

from gpslab.core.exceptions import InvalidArgumentError, UnsupportedOperationError
from gpslab.models.config_space import Lattice, SectorSpec, build_group, enumerate_sector
from gpslab.models.hamiltonian import HeisenbergSpec
from gpslab.models.qgps import QGPSModel
from gpslab.services.bayes_linear import RegressionData
from gpslab.services.sweep import (
    SweepOptions,
    TrainSet,
    extract_site_features,
    solve_shared_alpha,
    sweep_fit,
    swo_run,
    zigzag_schedule,
)
from gpslab.services.vmc import SamplerSpec


def train_mse(model, train):
    return float(np.mean(np.abs(model.log_psi(train.configs) - train.log_amplitudes) ** 2))


# ---------------------------------------------------------------------------
# Schedules and features
# ---------------------------------------------------------------------------

def test_zigzag_schedule():
    assert zigzag_schedule(4) == [0, 1, 2, 3]
    assert zigzag_schedule((2, 3)) == [0, 1, 2, 5, 4, 3]
    assert zigzag_schedule(Lattice.rectangle(3, 2)) == [0, 1, 3, 2, 4, 5]
    with pytest.raises(InvalidArgumentError):
        zigzag_schedule((0, 3))


@pytest.mark.parametrize("site", [0, 2])
def test_site_features_reproduce_log_psi(make_qgps, site):
    model = make_qgps(n_supports=3, scale=0.5)
    configs = enumerate_sector(4, 2)
    phi, w = extract_site_features(model, site, configs)
    assert phi.shape == (16, 2 * 3)
    assert np.allclose(phi @ w, model.log_psi(configs))


def test_site_features_under_kernel_symmetrization(chain4, make_qgps):
    model = make_qgps(mode="kernel", group=build_group(chain4, ["translations"]), lattice=chain4)
    configs = enumerate_sector(4, 2)
    phi, w = extract_site_features(model, 1, configs)
    assert np.allclose(phi @ w, model.log_psi(configs))


def test_projective_and_split_models_are_rejected(chain4, make_qgps):
    projective = make_qgps(mode="projective", group=build_group(chain4, ["translations"]), lattice=chain4)
    with pytest.raises(UnsupportedOperationError):
        extract_site_features(projective, 0, enumerate_sector(4, 2))
    with pytest.raises(UnsupportedOperationError):
        extract_site_features(make_qgps(split=True), 0, enumerate_sector(4, 2))


def test_site_outside_model(make_qgps):
    with pytest.raises(InvalidArgumentError):
        extract_site_features(make_qgps(), 4, enumerate_sector(4, 2))


# ---------------------------------------------------------------------------
# Training sets
# ---------------------------------------------------------------------------

def test_train_set_validation():
    configs = enumerate_sector(4, 2)
    with pytest.raises(InvalidArgumentError):
        TrainSet(configs, np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        TrainSet(configs, np.full(16, np.nan))
    with pytest.raises(InvalidArgumentError):
        TrainSet(configs, np.zeros(16), probabilities=np.ones(2))


def test_train_set_subset(make_qgps, make_train_set):
    train = make_train_set(make_qgps(), probabilities=np.full(16, 1 / 16))
    part = train.subset(np.array([0, 3, 5]))
    assert len(part) == 3
    assert np.array_equal(part.configs, train.configs[[0, 3, 5]])
    assert len(part.probabilities) == 3


# ---------------------------------------------------------------------------
# Sweeping
# ---------------------------------------------------------------------------

def test_shared_alpha_is_positive(rng):
    phi = rng.standard_normal((30, 4))
    data = RegressionData(phi, phi @ np.array([1.0, 0.5, -0.5, 0.2]), 100.0)
    fit, alpha = solve_shared_alpha(data, 1.0)
    assert alpha > 0
    assert np.allclose(fit.weights(), [1.0, 0.5, -0.5, 0.2], atol=0.1)


def test_sweep_fit_lowers_training_error(make_qgps, make_train_set):
    train = make_train_set(make_qgps(scale=0.5, seed=3), SectorSpec(n_up=2))
    model = make_qgps(scale=0.1, seed=11)
    before = train_mse(model, train)
    result = sweep_fit(model, train, SweepOptions(max_sweeps=4, sigma2=1e-3, noise_update="fixed"))
    assert train_mse(result.model, train) < before
    assert len(result.log) == 4 * len(result.sweep_log_ml)
    assert {"sweep", "site", "log_ml", "alpha", "sigma2", "train_mse"} <= set(result.log[0])


def test_sweep_fit_gradient_noise_stays_below_initial(make_qgps, make_train_set):
    train = make_train_set(make_qgps(scale=0.5, seed=3))
    result = sweep_fit(make_qgps(scale=0.1, seed=11), train, SweepOptions(max_sweeps=2, sigma2=0.5))
    assert 0 < result.sigma2 <= 0.5
    assert result.alphas.shape == (4,)


def test_sweep_fit_on_real_targets_keeps_real_tensor(make_qgps):
    configs = enumerate_sector(4, 2)
    train = TrainSet(configs, np.linspace(-1.0, 1.0, 16))
    model = QGPSModel(make_qgps().epsilon.real)
    result = sweep_fit(model, train, SweepOptions(max_sweeps=2, sigma2=1e-2, noise_update="fixed"))
    assert not np.any(result.model.epsilon.imag)


def test_split_model_sweeps_both_parts(make_qgps, make_train_set):
    train = make_train_set(make_qgps(scale=0.5, seed=3))
    model = make_qgps(split=True, scale=0.1, seed=11)
    result = sweep_fit(model, train, SweepOptions(max_sweeps=2, sigma2=1e-2, noise_update="fixed"))
    assert result.model.split
    assert len(result.log) % 4 == 0
    assert train_mse(result.model, train) < train_mse(model, train)


def test_schedule_must_cover_all_sites(make_qgps, make_train_set):
    model = make_qgps()
    with pytest.raises(InvalidArgumentError):
        sweep_fit(model, make_train_set(model), SweepOptions(schedule=[0, 1, 2]))


def test_sweep_options_reject_unknown_fields():
    with pytest.raises(ValueError):
        SweepOptions(sweeps=3)


# ---------------------------------------------------------------------------
# Supervised wavefunction optimization
# ---------------------------------------------------------------------------

def test_swo_run_produces_trace(chain4, make_qgps):
    ham = HeisenbergSpec(chain4, msr_transform=True, sector=SectorSpec(n_up=2))
    sampler = SamplerSpec(n_chains=4, warmup=20, thinning=4, seed=9)
    result = swo_run(ham, make_qgps(scale=0.1), tau=0.1, iterations=2, n_train=40, sampler=sampler)
    assert len(result.trace) == 2
    assert all(np.isfinite(r["energy"]) for r in result.trace)
    assert result.sigma2 > 0
    assert np.isnan(result.trace[0]["sigma2_sign"])
    assert [(r["n_markov"], r["n_uniform"], r["n_phase"]) for r in result.trace] == [(20, 20, 0)] * 2


def test_swo_split_model_tracks_sign_noise(chain4, make_qgps):
    ham = HeisenbergSpec(chain4, msr_transform=True, sector=SectorSpec(n_up=2))
    sampler = SamplerSpec(n_chains=4, warmup=20, thinning=4, seed=9)
    result = swo_run(ham, make_qgps(scale=0.1, split=True), 0.1, 1, 40, sampler)
    assert result.model.split
    assert np.isfinite(result.trace[0]["sigma2_sign"])
    record = result.trace[0]
    assert (record["n_markov"], record["n_uniform"], record["n_phase"]) == (20, 20, 40)


def test_swo_validates_arguments(heisenberg4, make_qgps):
    with pytest.raises(InvalidArgumentError):
        swo_run(heisenberg4, make_qgps(), tau=0.0, iterations=1, n_train=10, sampler=SamplerSpec())
    with pytest.raises(InvalidArgumentError):
        swo_run(heisenberg4, make_qgps(), tau=0.1, iterations=1, n_train=1, sampler=SamplerSpec())
