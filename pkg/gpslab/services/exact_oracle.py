"""
Exact diagonalization and full-state utilities.

Ground truth for every fitted or optimized model: sector Hamiltonian
matrices, lowest eigenpairs, exact Rayleigh quotients, overlaps and the
rescaled mean squared error between amplitude vectors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from tqdm import tqdm

from gpslab.core.config import settings
from gpslab.core.exceptions import (
    DimensionCapError,
    FormatError,
    InvalidArgumentError,
    NonConvergenceError,
    NumericalDomainError,
    ZeroNormError,
)
from gpslab.models.config_space import SectorSpec, enumerate_sector
from gpslab.models.hamiltonian import HamiltonianSpec
from gpslab.models.wavefunction import Wavefunction
from gpslab.utils.io import CONFIG_DTYPE, config_from_string, config_to_string, write_columns

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Sector matrices
# ---------------------------------------------------------------------------

def sector_basis(spec: HamiltonianSpec, sector: Optional[SectorSpec] = None) -> np.ndarray:
    sector = sector if sector is not None else spec.sector
    return enumerate_sector(spec.n_sites, spec.local_dim, sector)


def build_hamiltonian_matrix(spec: HamiltonianSpec, basis: np.ndarray) -> csr_matrix:
    """Sparse sector Hamiltonian in the order of `basis`."""
    basis = np.ascontiguousarray(basis, dtype=CONFIG_DTYPE)
    index = {row.tobytes(): k for k, row in enumerate(basis)}
    rows, cols, values = [], [], []
    complex_valued = False
    iterator = tqdm(
        enumerate(basis),
        total=len(basis),
        desc="H rows",
        disable=not settings.SHOW_PROGRESS or len(basis) < 20_000,
        leave=False,
    )
    for k, x in iterator:
        targets, amplitudes = spec.row(x)
        targets = np.ascontiguousarray(targets, dtype=CONFIG_DTYPE)
        for target, amp in zip(targets, amplitudes):
            j = index.get(target.tobytes())
            if j is None:
                raise InvalidArgumentError(
                    f"Row of {config_to_string(x)} leaves the sector basis", field="basis"
                )
            rows.append(k)
            cols.append(j)
            values.append(amp)
            complex_valued |= amp.imag != 0
    values = np.asarray(values, dtype=complex)
    if not complex_valued:
        values = values.real
    n = len(basis)
    return csr_matrix((values, (rows, cols)), shape=(n, n))


# ---------------------------------------------------------------------------
# Full states
# ---------------------------------------------------------------------------

class FullState(Wavefunction):
    """Amplitude lookup over an enumerated sector basis."""

    def __init__(self, basis: np.ndarray, amplitudes: np.ndarray, energy: Optional[float] = None, local_dim: Optional[int] = None):
        basis = np.ascontiguousarray(np.atleast_2d(basis), dtype=CONFIG_DTYPE)
        amplitudes = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if len(basis) != len(amplitudes):
            raise InvalidArgumentError("One amplitude per basis configuration is required", field="amplitudes")
        if not np.all(np.isfinite(amplitudes)):
            raise InvalidArgumentError("Amplitudes must be finite", field="amplitudes")
        if not np.any(amplitudes):
            raise ZeroNormError("Full state has zero norm")
        self.basis = basis
        self.values = amplitudes
        self.energy = energy
        self.n_sites = basis.shape[1]
        self.local_dim = local_dim or (4 if basis.size and basis.max() > 1 else 2)
        self._index = {row.tobytes(): k for k, row in enumerate(basis)}

    def __len__(self) -> int:
        return len(self.basis)

    def lookup(self, configs: np.ndarray) -> np.ndarray:
        configs = np.ascontiguousarray(np.atleast_2d(configs), dtype=CONFIG_DTYPE)
        out = np.zeros(len(configs), dtype=complex)
        for n, x in enumerate(configs):
            k = self._index.get(x.tobytes())
            if k is not None:
                out[n] = self.values[k]
        return out

    def log_psi(self, configs: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.lookup(configs))

    def amplitudes(self, configs: np.ndarray) -> np.ndarray:
        return self.lookup(configs)

    def normalized(self) -> "FullState":
        return FullState(self.basis, self.values / np.linalg.norm(self.values), self.energy, self.local_dim)

    def save(self, path: str | Path) -> Path:
        rows = ((config_to_string(x), float(a.real), float(a.imag)) for x, a in zip(self.basis, self.values))
        return write_columns(path, ("config", "re", "im"), rows)

    @classmethod
    def load(cls, path: str | Path, local_dim: Optional[int] = None) -> "FullState":
        configs, values = [], []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise FormatError("Expected 'config re im'", path=str(path), line=lineno)
                try:
                    configs.append(config_from_string(parts[0]))
                    values.append(complex(float(parts[1]), float(parts[2])))
                except (ValueError, InvalidArgumentError):
                    raise FormatError(f"Unparseable record '{line.strip()}'", path=str(path), line=lineno)
        if not configs:
            raise FormatError("Full-state file has no records", path=str(path))
        return cls(np.stack(configs), np.asarray(values), local_dim=local_dim)


def _fix_gauge(vector: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry real and positive."""
    k = int(np.argmax(np.abs(vector)))
    return vector * (abs(vector[k]) / vector[k])


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def ground_state(
    spec: HamiltonianSpec,
    sector: Optional[SectorSpec] = None,
    basis: Optional[np.ndarray] = None,
    matrix: Optional[csr_matrix] = None,
) -> FullState:
    """Lowest eigenpair of the sector Hamiltonian.

    Dense `eigh` up to ED_DENSE_MAX_DIM states, Lanczos (`eigsh`) with a
    seeded start vector above that, up to ED_MAX_DIM.
    """
    basis = sector_basis(spec, sector) if basis is None else np.asarray(basis)
    dim = len(basis)
    if dim == 0:
        raise InvalidArgumentError("Sector basis is empty", field="sector")
    if dim > settings.ED_MAX_DIM:
        raise DimensionCapError(dim, settings.ED_MAX_DIM)

    H = build_hamiltonian_matrix(spec, basis) if matrix is None else matrix
    if dim <= settings.ED_DENSE_MAX_DIM:
        values, vectors = scipy.linalg.eigh(H.toarray(), subset_by_index=[0, 0])
        energy, vector = float(values[0]), vectors[:, 0]
        solver = "dense"
    else:
        rng = np.random.default_rng(settings.DEFAULT_SEED)
        v0 = rng.standard_normal(dim)
        try:
            values, vectors = eigsh(H, k=1, which="SA", v0=v0, maxiter=settings.ED_MAX_ITER, tol=0)
        except ArpackNoConvergence as exc:
            raise NonConvergenceError(f"Lanczos did not converge: {exc}", iterations=settings.ED_MAX_ITER)
        energy, vector = float(values[0]), vectors[:, 0]
        solver = "lanczos"

    vector = vector / np.linalg.norm(vector)
    residual = float(np.linalg.norm(H @ vector - energy * vector))
    tol = settings.ED_RESIDUAL_TOL * max(1.0, abs(energy))
    if residual > tol:
        raise NonConvergenceError(
            f"Ground-state residual {residual:.3e} exceeds {tol:.1e}", residual=residual
        )
    logger.info(f"Ground state ({solver}, dim={dim}): E={energy:.12f} residual={residual:.2e}")
    return FullState(basis, _fix_gauge(vector.astype(complex)), energy, spec.local_dim)


def _model_vector(model: Wavefunction, basis: np.ndarray) -> np.ndarray:
    """Amplitudes on the basis, rescaled by the largest log magnitude."""
    if isinstance(model, FullState):
        return model.lookup(basis)
    log_psi = model.log_psi(basis)
    finite = np.isfinite(log_psi.real)
    if not np.any(finite):
        raise ZeroNormError("Model amplitudes vanish on the whole basis")
    shift = np.max(log_psi.real[finite])
    out = np.zeros(len(basis), dtype=complex)
    out[finite] = np.exp(log_psi[finite] - shift)
    return out


def variational_energy_exact(
    model: Wavefunction,
    spec: HamiltonianSpec,
    sector: Optional[SectorSpec] = None,
    basis: Optional[np.ndarray] = None,
    matrix: Optional[csr_matrix] = None,
) -> float:
    """Exact Rayleigh quotient <Psi|H|Psi> / <Psi|Psi> over the sector."""
    basis = sector_basis(spec, sector) if basis is None else np.asarray(basis)
    H = build_hamiltonian_matrix(spec, basis) if matrix is None else matrix
    psi = _model_vector(model, basis)
    norm = float(np.vdot(psi, psi).real)
    if norm == 0.0:
        raise ZeroNormError("Model has zero norm on the sector")
    energy = np.vdot(psi, H @ psi) / norm
    if abs(energy.imag) > 1e-8 * max(1.0, abs(energy.real)):
        logger.warning(f"Rayleigh quotient has imaginary part {energy.imag:.3e}")
    return float(energy.real)


def overlap(model: Wavefunction, state: FullState) -> float:
    """|<model|state>| / (||model|| ||state||) on the state's basis."""
    a = _model_vector(model, state.basis)
    b = state.values
    norms = np.linalg.norm(a) * np.linalg.norm(b)
    if norms == 0.0:
        raise ZeroNormError("Cannot take the overlap with a zero-norm state")
    return float(min(1.0, abs(np.vdot(a, b)) / norms))


@dataclass
class StateComparison:
    mse: float
    mse_log_rescaled: Optional[float] = None
    details: dict = field(default_factory=dict)


def _phase_aligned_mse(a: np.ndarray, b: np.ndarray) -> float:
    inner = np.vdot(a, b)
    if abs(inner) > 0:
        a = a * (inner / abs(inner))
    return float(np.mean(np.abs(a - b) ** 2))


def compare_states(model: Wavefunction, state: FullState) -> StateComparison:
    """Mean squared amplitude error of norm-1, phase-aligned vectors over the sector.

    `mse_log_rescaled` repeats the comparison after shifting both log
    amplitude vectors to zero mean, the scale the regression targets live
    on; it is None when either state has zero amplitudes.
    """
    a = _model_vector(model, state.basis)
    b = state.values
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("Cannot compare zero-norm states")
    result = StateComparison(_phase_aligned_mse(a / na, b / nb))

    if isinstance(model, FullState):
        values = model.lookup(state.basis)
        la = np.log(values) if np.all(values != 0) else None
    else:
        la = model.log_psi(state.basis)
    if la is not None and np.all(np.isfinite(la)) and np.all(b != 0):
        lb = np.log(b)
        result.mse_log_rescaled = _phase_aligned_mse(np.exp(la - la.mean()), np.exp(lb - lb.mean()))
    return result


def mse(model: Wavefunction, state: FullState) -> float:
    return compare_states(model, state).mse


def relative_energy_error(energy: float, reference: float) -> float:
    if reference == 0.0:
        raise NumericalDomainError("Relative error against a zero reference energy")
    return abs(energy - reference) / abs(reference)
