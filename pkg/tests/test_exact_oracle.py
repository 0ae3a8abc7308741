"""
Exact diagonalization and full-state comparisons.

Scenarios:
  * dense ground states of small spin and fermion systems
  * Rayleigh quotients of exact and variational states
  * overlap and rescaled MSE invariances (global scale and phase)
  * zero-amplitude fallback and zero-norm errors
  * full-state file round trip and malformed files
"""
import numpy as np
import pytest

from gpslab.core.config import settings
from gpslab.core.exceptions import DimensionCapError, FormatError, NumericalDomainError, ZeroNormError
from gpslab.services.exact_oracle import (
    FullState,
    compare_states,
    ground_state,
    overlap,
    relative_energy_error,
    variational_energy_exact,
)


def test_dimer_singlet(heisenberg_dimer):
    state = ground_state(heisenberg_dimer)
    assert state.energy == pytest.approx(-0.75)
    assert np.allclose(np.abs(state.values), 1 / np.sqrt(2))
    # singlet: opposite signs on 01 and 10
    assert state.values[0] == pytest.approx(-state.values[1])


def test_gauge_fixes_largest_entry(heisenberg4):
    values = ground_state(heisenberg4).values
    k = np.argmax(np.abs(values))
    assert values[k].imag == pytest.approx(0.0)
    assert values[k].real > 0


def test_rayleigh_quotient_of_ground_state(heisenberg4):
    state = ground_state(heisenberg4)
    assert variational_energy_exact(state, heisenberg4) == pytest.approx(state.energy)


def test_rayleigh_quotient_is_an_upper_bound(heisenberg4, make_qgps):
    exact = ground_state(heisenberg4).energy
    energy = variational_energy_exact(make_qgps(scale=0.5), heisenberg4)
    assert energy >= exact - 1e-10


def test_dimension_cap(heisenberg4, monkeypatch):
    monkeypatch.setattr(settings, "ED_MAX_DIM", 3)
    with pytest.raises(DimensionCapError):
        ground_state(heisenberg4)


def test_lanczos_agrees_with_dense(hubbard4, monkeypatch):
    dense = ground_state(hubbard4).energy
    monkeypatch.setattr(settings, "ED_DENSE_MAX_DIM", 1)
    assert ground_state(hubbard4).energy == pytest.approx(dense, abs=1e-8)


# ---------------------------------------------------------------------------
# Comparisons
# ---------------------------------------------------------------------------

def test_overlap_ignores_scale_and_phase(heisenberg4):
    state = ground_state(heisenberg4)
    rotated = FullState(state.basis, 3.0 * np.exp(0.7j) * state.values)
    assert overlap(rotated, state) == pytest.approx(1.0)


def test_mse_is_zero_for_rescaled_state(hubbard4):
    state = ground_state(hubbard4)
    rescaled = FullState(state.basis, -2.5j * state.values)
    result = compare_states(rescaled, state)
    assert result.mse == pytest.approx(0.0, abs=1e-20)


def test_mse_compares_normalized_vectors():
    basis = np.array([[0, 1], [1, 0]])
    target = FullState(basis, [1.0, 1.0])
    model = FullState(basis, [7.0, 0.0])
    # norm-1 vectors: mse = 2 (1 - |<a|b>|) / N
    assert compare_states(model, target).mse == pytest.approx(1.0 - 1.0 / np.sqrt(2.0))


def test_mse_matches_overlap_identity(heisenberg4, make_qgps):
    state = ground_state(heisenberg4)
    model = make_qgps(scale=0.5)
    expected = 2.0 * (1.0 - overlap(model, state)) / len(state)
    assert compare_states(model, state).mse == pytest.approx(expected, rel=1e-9, abs=1e-15)


def test_log_rescaled_mse_needs_nonzero_amplitudes():
    basis = np.array([[0, 1], [1, 0], [1, 1]])
    target = FullState(basis, [1.0, 1.0, 0.0])
    model = FullState(basis, [1.0, 0.5, 0.0])
    result = compare_states(model, target)
    assert result.mse_log_rescaled is None
    assert result.mse > 0


def test_mse_is_positive_for_different_states(heisenberg4, make_qgps):
    state = ground_state(heisenberg4)
    result = compare_states(make_qgps(scale=0.5), state)
    assert result.mse > 0
    assert result.mse_log_rescaled > 0


def test_zero_state_is_rejected():
    with pytest.raises(ZeroNormError):
        FullState(np.array([[0, 1]]), [0.0])


def test_relative_energy_error():
    assert relative_energy_error(-0.99, -1.0) == pytest.approx(0.01)
    with pytest.raises(NumericalDomainError):
        relative_energy_error(1.0, 0.0)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def test_full_state_file_round_trip(tmp_path, hubbard4):
    state = ground_state(hubbard4)
    loaded = FullState.load(state.save(tmp_path / "state.txt"), local_dim=4)
    assert np.array_equal(loaded.basis, state.basis)
    assert np.allclose(loaded.values, state.values)
    assert loaded.local_dim == 4


def test_lookup_outside_basis_is_zero(heisenberg_dimer):
    state = ground_state(heisenberg_dimer)
    assert state.lookup(np.array([[0, 0]]))[0] == 0


@pytest.mark.parametrize("text", ["# config re im\n0101 1.0\n", "# config re im\n01x1 1.0 0.0\n", "# only a header\n"])
def test_malformed_state_files(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(FormatError):
        FullState.load(path)
