"""
qGPS: exponentiated CP decomposition of the log-amplitude tensor.

    ln Psi(x) = sum_S sum_m prod_i eps[S[x]_i, i, m]

with epsilon of shape (D, L, M). Symmetrization modes:

  * none        identity only
  * kernel      sum over the group inside the exponent
  * projective  Psi(x) = sum_S chi_S exp(sum_m prod_i eps[S[x]_i, i, m])

In split mode epsilon is real and a second real tensor carries the
phase: ln Psi = sum_m prod eps + i sum_m prod eps_phase. Internally both
tensors are stacked along the support axis with per-support coefficients
(1 for magnitude, 1j for phase).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from gpslab.core.config import settings
from gpslab.core.exceptions import (
    InvalidArgumentError,
    NumericalDomainError,
    UnsupportedOperationError,
)
from gpslab.models.config_space import SPIN_DIM, Lattice, SymmetryGroup, build_group
from gpslab.models.gps_kernel import GPSModel, KernelVariant, kernel_geometry
from gpslab.models.wavefunction import Wavefunction, WavefunctionCache
from gpslab.utils.io import (
    check_container,
    complex_from_pairs,
    complex_pairs,
    read_yaml,
    write_yaml,
)

logger = logging.getLogger(__name__)

QGPS_FORMAT = "gpslab.qgps"
QGPS_VERSION = 1


class SymmetrizationMode(str, Enum):
    NONE = "none"
    KERNEL = "kernel"
    PROJECTIVE = "projective"


@dataclass
class AmplitudeCache(WavefunctionCache):
    """Per-op images of the cached configuration and their support products."""

    images: Optional[np.ndarray] = None  # (G, L)
    products: Optional[np.ndarray] = None  # (G, Mt)


def _log_sum_exp(values: np.ndarray, characters: np.ndarray) -> np.ndarray:
    """ln sum_S chi_S exp(values[S]) along axis 0."""
    shift = np.max(values.real, axis=0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(characters[:, None] * np.exp(values - shift), axis=0)) + shift


class QGPSModel(Wavefunction):
    def __init__(
        self,
        epsilon: np.ndarray,
        mode: SymmetrizationMode | str = SymmetrizationMode.NONE,
        group: Optional[SymmetryGroup] = None,
        phase: Optional[np.ndarray] = None,
        lattice: Optional[Lattice] = None,
    ):
        epsilon = np.asarray(epsilon)
        if epsilon.ndim != 3 or epsilon.shape[2] < 1:
            raise InvalidArgumentError("epsilon must have shape (D, L, M) with M >= 1", field="epsilon")
        self.mode = SymmetrizationMode(mode)
        self.split = phase is not None
        if self.split:
            phase = np.asarray(phase)
            if phase.shape != epsilon.shape:
                raise InvalidArgumentError("Phase tensor must match epsilon", field="phase")
            if np.iscomplexobj(epsilon) and np.any(epsilon.imag) or np.iscomplexobj(phase) and np.any(phase.imag):
                raise InvalidArgumentError("Split-mode tensors must be real", field="phase")
            epsilon = epsilon.real.astype(float)
            phase = phase.real.astype(float)
        else:
            epsilon = epsilon.astype(complex)
        if not np.all(np.isfinite(epsilon)) or (self.split and not np.all(np.isfinite(phase))):
            raise InvalidArgumentError("qGPS parameters must be finite", field="epsilon")

        self.epsilon = epsilon
        self.phase = phase
        self.local_dim, self.n_sites, self.n_supports = epsilon.shape
        self.lattice = lattice
        if group is None or self.mode is SymmetrizationMode.NONE:
            group = SymmetryGroup.trivial(self.n_sites) if group is None else group
        if group.n_sites != self.n_sites:
            raise InvalidArgumentError("Group and model act on different site counts", field="group")
        self.group = group
        self.real_parameters = self.split

        if self.split:
            self._stacked = np.concatenate([epsilon, phase], axis=2).astype(complex)
            self._coef = np.concatenate([np.ones(self.n_supports), np.full(self.n_supports, 1j)])
        else:
            self._stacked = epsilon
            self._coef = np.ones(self.n_supports, dtype=complex)

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    @property
    def operations(self):
        if self.mode is SymmetrizationMode.NONE:
            return self.group.operations[:1]
        return self.group.operations

    @property
    def characters(self) -> np.ndarray:
        return np.array([op.character for op in self.operations], dtype=complex)

    def _factors(self, images: np.ndarray) -> np.ndarray:
        """(N, L) images -> (N, L, Mt) per-site factors."""
        return self._stacked[images, np.arange(self.n_sites)]

    def support_products(self, configs: np.ndarray) -> np.ndarray:
        """(G, N, Mt) products prod_i eps[S[x]_i, i, m] for every op."""
        configs = np.atleast_2d(configs)
        return np.stack([np.prod(self._factors(op.apply(configs)), axis=1) for op in self.operations])

    def _combine(self, omegas: np.ndarray) -> np.ndarray:
        """(G, N) per-op exponents -> (N,) log amplitudes."""
        if self.mode is SymmetrizationMode.PROJECTIVE:
            return _log_sum_exp(omegas, self.characters)
        return omegas.sum(axis=0)

    def log_psi(self, configs: np.ndarray) -> np.ndarray:
        return self._combine(self.support_products(configs) @ self._coef)

    def log_amplitude(self, x: np.ndarray) -> complex:
        if self.mode is SymmetrizationMode.PROJECTIVE:
            raise UnsupportedOperationError("Projective qGPS amplitudes have no single-valued log", mode=self.mode.value)
        return self.log_psi_one(x)

    def amplitude(self, x: np.ndarray) -> complex:
        return complex(np.exp(self.log_psi_one(x)))

    # ------------------------------------------------------------------
    # Parameters and derivatives
    # ------------------------------------------------------------------

    @property
    def parameters(self) -> np.ndarray:
        if self.split:
            return np.concatenate([self.epsilon.ravel(), self.phase.ravel()])
        return self.epsilon.ravel().copy()

    def with_parameters(self, parameters: np.ndarray) -> "QGPSModel":
        parameters = np.asarray(parameters)
        size = self.epsilon.size
        expected = 2 * size if self.split else size
        if parameters.shape != (expected,):
            raise InvalidArgumentError(f"Expected {expected} parameters, got {parameters.shape}", field="parameters")
        if self.split:
            return QGPSModel(
                parameters[:size].real.reshape(self.epsilon.shape),
                self.mode,
                self.group,
                parameters[size:].real.reshape(self.epsilon.shape),
                self.lattice,
            )
        return QGPSModel(parameters.reshape(self.epsilon.shape), self.mode, self.group, None, self.lattice)

    def with_epsilon(self, epsilon: np.ndarray, phase: Optional[np.ndarray] = None) -> "QGPSModel":
        return QGPSModel(epsilon, self.mode, self.group, phase if self.split else None, self.lattice)

    def stacked_derivatives(self, configs: np.ndarray) -> np.ndarray:
        """(N, D, L, Mt) derivatives of ln Psi with respect to the stacked tensor."""
        configs = np.atleast_2d(configs)
        n = len(configs)
        ops = self.operations
        images = [op.apply(configs) for op in ops]
        factors = [self._factors(img) for img in images]

        if self.mode is SymmetrizationMode.PROJECTIVE:
            omegas = np.stack([np.prod(f, axis=1) @ self._coef for f in factors])
            log_total = _log_sum_exp(omegas, self.characters)
            if not np.all(np.isfinite(log_total)):
                raise NumericalDomainError("Log-derivative requested at a zero amplitude")
            op_weights = self.characters[:, None] * np.exp(omegas - log_total[None, :])
        else:
            op_weights = np.ones((len(ops), n), dtype=complex)

        out = np.zeros((n, self.local_dim, self.n_sites, len(self._coef)), dtype=complex)
        rows = np.arange(n)[:, None]
        cols = np.arange(self.n_sites)[None, :]
        for img, fac, w in zip(images, factors, op_weights):
            ones = np.ones_like(fac[:, :1, :])
            prefix = np.cumprod(np.concatenate([ones, fac[:, :-1, :]], axis=1), axis=1)
            suffix = np.cumprod(np.concatenate([ones, fac[:, :0:-1, :]], axis=1), axis=1)[:, ::-1, :]
            excluded = prefix * suffix * self._coef * w[:, None, None]
            out[rows, img, cols, :] += excluded
        return out

    def log_derivatives(self, configs: np.ndarray) -> np.ndarray:
        stacked = self.stacked_derivatives(configs)
        n = stacked.shape[0]
        m = self.n_supports
        if self.split:
            return np.concatenate(
                [stacked[..., :m].reshape(n, -1), stacked[..., m:].reshape(n, -1)], axis=1
            )
        return stacked.reshape(n, -1)

    # ------------------------------------------------------------------
    # Fast updates
    # ------------------------------------------------------------------

    def init_cache(self, x: np.ndarray) -> AmplitudeCache:
        x = np.array(x, copy=True)
        images = np.stack([op.apply(x) for op in self.operations])
        products = np.prod(self._factors(images), axis=1)
        log_value = complex(self._combine((products @ self._coef)[:, None])[0])
        return AmplitudeCache(config=x, log_value=log_value, images=images, products=products)

    def _ratio_products(self, cache: AmplitudeCache, targets: np.ndarray) -> np.ndarray:
        """(G, K, Mt) support products of targets from the cached products."""
        targets = np.atleast_2d(targets)
        k = len(targets)
        out = np.empty((len(self.operations), k, len(self._coef)), dtype=complex)
        for g, op in enumerate(self.operations):
            img_t = op.apply(targets)
            img_x = cache.images[g]
            t_idx, s_idx = np.nonzero(img_t != img_x[None, :])
            new = self._stacked[img_t[t_idx, s_idx], s_idx]
            old = self._stacked[img_x[s_idx], s_idx]
            small = np.any(np.abs(old) < settings.SMALL_FACTOR, axis=1)

            ratio = np.ones((k, len(self._coef)), dtype=complex)
            safe = ~small
            np.multiply.at(ratio, t_idx[safe], new[safe] / old[safe])
            out[g] = cache.products[g][None, :] * ratio

            redo = np.unique(t_idx[small])
            if len(redo):
                out[g, redo] = np.prod(self._factors(img_t[redo]), axis=1)
        return out

    def fast_update_many(self, cache: AmplitudeCache, targets: np.ndarray) -> np.ndarray:
        products = self._ratio_products(cache, targets)
        return self._combine(products @ self._coef)

    def fast_update(self, cache: AmplitudeCache, changes: Sequence[tuple[int, int]]) -> AmplitudeCache:
        x = cache.config.copy()
        for site, value in changes:
            x[site] = value
        moves = cache.moves + 1
        if not changes:
            return cache
        if moves % settings.CACHE_REFRESH_INTERVAL == 0:
            fresh = self.init_cache(x)
            fresh.moves = moves
            return fresh
        products = self._ratio_products(cache, x[None, :])[:, 0, :]
        images = np.stack([op.apply(x) for op in self.operations])
        log_value = complex(self._combine((products @ self._coef)[:, None])[0])
        return AmplitudeCache(config=x, log_value=log_value, images=images, products=products, moves=moves)

    # ------------------------------------------------------------------
    # Split parts
    # ------------------------------------------------------------------

    def magnitude_part(self) -> "QGPSModel":
        if not self.split:
            raise UnsupportedOperationError("Model is not in split mode", mode="split")
        return QGPSModel(self.epsilon.astype(complex), self.mode, self.group, None, self.lattice)

    def phase_part(self) -> "QGPSModel":
        if not self.split:
            raise UnsupportedOperationError("Model is not in split mode", mode="split")
        return QGPSModel(self.phase.astype(complex), self.mode, self.group, None, self.lattice)

    def with_parts(self, magnitude: "QGPSModel", phase: "QGPSModel") -> "QGPSModel":
        return QGPSModel(magnitude.epsilon.real, self.mode, self.group, phase.epsilon.real, self.lattice)

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        document = {
            "format": QGPS_FORMAT,
            "version": QGPS_VERSION,
            "local_dim": self.local_dim,
            "n_sites": self.n_sites,
            "n_supports": self.n_supports,
            "mode": self.mode.value,
            "split": self.split,
            "real_only": False,
            "lattice": self.lattice.to_dict() if self.lattice is not None else None,
            "group": self.group.descriptor(),
            "epsilon": complex_pairs(self.epsilon.ravel()),
        }
        if self.split:
            document["phase"] = [float(v) for v in self.phase.ravel()]
        return document

    @classmethod
    def from_dict(cls, document: dict) -> "QGPSModel":
        check_container(document, QGPS_FORMAT, QGPS_VERSION)
        shape = (int(document["local_dim"]), int(document["n_sites"]), int(document["n_supports"]))
        lattice = Lattice.from_dict(document["lattice"]) if document.get("lattice") else None
        group_doc = document.get("group") or {}
        factors = group_doc.get("factors") or ()
        if factors and lattice is None:
            raise InvalidArgumentError("A symmetrized qGPS container needs its lattice", field="lattice")
        group = build_group(lattice, factors, shape[0]) if factors else SymmetryGroup.trivial(shape[1])
        if group_doc.get("characters") and len(group_doc["characters"]) == len(group):
            group = group.with_characters(complex_from_pairs(group_doc["characters"]))
        epsilon = complex_from_pairs(document["epsilon"]).reshape(shape)
        phase = None
        if document.get("split"):
            epsilon = epsilon.real
            phase = np.asarray(document["phase"], dtype=float).reshape(shape)
        return cls(epsilon, document.get("mode", "none"), group, phase, lattice)

    def save(self, path: str | Path) -> Path:
        return write_yaml(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "QGPSModel":
        return cls.from_dict(read_yaml(path))


def log_amplitude(model: QGPSModel, x: np.ndarray) -> complex:
    return model.log_amplitude(x)


def amplitude(model: QGPSModel, x: np.ndarray) -> complex:
    return model.amplitude(x)


def log_derivatives(model: QGPSModel, x: np.ndarray) -> np.ndarray:
    return model.log_derivatives(np.asarray(x)[None, :])[0]


def fast_update(cache: AmplitudeCache, changes: Sequence[tuple[int, int]], model: QGPSModel) -> tuple[complex, AmplitudeCache]:
    updated = model.fast_update(cache, changes)
    return complex(np.exp(updated.log_value)), updated


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def _sublattice_mask(n_sites: int, sublattice_a: Sequence[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(sublattice_a)
    if arr.dtype == bool:
        if arr.shape != (n_sites,):
            raise InvalidArgumentError("Sublattice mask must have one entry per site", field="sublattice_a")
        return arr
    mask = np.zeros(n_sites, dtype=bool)
    if arr.size:
        if arr.min() < 0 or arr.max() >= n_sites:
            raise InvalidArgumentError("Sublattice site outside the lattice", field="sublattice_a")
        mask[arr.astype(int)] = True
    return mask


def msr_qgps(n_sites: int, sublattice_a: Sequence[int] | np.ndarray, **kwargs) -> QGPSModel:
    """M=1 model whose amplitude is +-i, with sign (-1)**(up spins on A)."""
    in_a = _sublattice_mask(n_sites, sublattice_a)
    root = (1j * np.pi / 2) ** (1.0 / n_sites)
    epsilon = np.full((SPIN_DIM, n_sites, 1), root, dtype=complex)
    epsilon[0, in_a, 0] = -root
    return QGPSModel(epsilon, **kwargs)


def msr_qgps_local(n_sites: int, sublattice_a: Sequence[int] | np.ndarray, **kwargs) -> QGPSModel:
    """M=L model with ln Psi = i*pi * (up spins on A)."""
    in_a = _sublattice_mask(n_sites, sublattice_a)
    epsilon = np.ones((SPIN_DIM, n_sites, n_sites), dtype=complex)
    diagonal = np.arange(n_sites)
    epsilon[:, diagonal, diagonal] = 0.0
    epsilon[0, diagonal[in_a], diagonal[in_a]] = 1j * np.pi
    return QGPSModel(epsilon, **kwargs)


def reorder_sign_qgps(permutation: Sequence[int], n_sites: Optional[int] = None) -> QGPSModel:
    """Sign of reordering the occupied modes of x (local state 1 = occupied) into the order given by P.

    One support per mode pair (a, b), a < b; inverted pairs contribute
    i*pi * n_a * n_b, the rest vanish.
    """
    perm = np.asarray(permutation, dtype=int)
    n_sites = n_sites or len(perm)
    if len(perm) != n_sites or sorted(perm.tolist()) != list(range(n_sites)):
        raise InvalidArgumentError("Reordering must be a permutation of the modes", field="permutation")
    pairs = [(a, b) for a in range(n_sites) for b in range(a + 1, n_sites)]
    if not pairs:
        return QGPSModel(np.zeros((SPIN_DIM, n_sites, 1), dtype=complex))
    epsilon = np.ones((SPIN_DIM, n_sites, len(pairs)), dtype=complex)
    for m, (a, b) in enumerate(pairs):
        epsilon[0, a, m] = 0.0
        epsilon[0, b, m] = 0.0
        epsilon[1, a, m] = 1j * np.pi if perm[a] > perm[b] else 0.0
    return QGPSModel(epsilon)


def random_init(
    n_sites: int,
    local_dim: int,
    n_supports: int,
    scale: float = 0.01,
    seed: Optional[int] = None,
    mode: SymmetrizationMode | str = SymmetrizationMode.NONE,
    group: Optional[SymmetryGroup] = None,
    split: bool = False,
    lattice: Optional[Lattice] = None,
) -> QGPSModel:
    """Products near zero: eps = 1 + eta off site 0 and eta on site 0."""
    if scale <= 0:
        raise InvalidArgumentError("Initialization scale must be positive", field="scale")
    rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
    shape = (local_dim, n_sites, n_supports)

    def draw(real: bool) -> np.ndarray:
        if real:
            eta = scale * rng.standard_normal(shape)
        else:
            eta = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
        tensor = 1.0 + eta
        tensor[:, 0, :] = eta[:, 0, :]
        return tensor

    if split:
        return QGPSModel(draw(True), mode, group, draw(True), lattice)
    return QGPSModel(draw(False), mode, group, None, lattice)


def from_gps(gps: GPSModel) -> QGPSModel:
    """qGPS reproducing an exponential-kernel GPS: eps = w**(1/L) exp(-(1 - delta) / (theta f(i)))."""
    kernel = gps.kernel
    if kernel.variant is not KernelVariant.EXPONENTIAL:
        raise UnsupportedOperationError("Only exponential-kernel GPS models have a product form", mode=kernel.variant.value)
    if gps.support_lattice.extents != gps.lattice.extents:
        raise UnsupportedOperationError("Cross-size GPS models have no qGPS counterpart", mode="cross_size")
    geometry = kernel_geometry(kernel, gps.lattice, gps.support_lattice)
    n_sites, local_dim, n_supports = gps.n_sites, gps.local_dim, gps.n_supports
    if n_supports == 0:
        raise InvalidArgumentError("GPS model has no supports", field="supports")

    root = gps.weights ** (1.0 / n_sites)
    epsilon = np.ones((local_dim, n_sites, n_supports), dtype=complex) * root[None, None, :]
    states = np.arange(local_dim)[:, None]
    r0 = geometry.ref_x
    epsilon[:, r0, :] *= (states == gps.supports[:, r0][None, :])
    for site, weight in zip(geometry.sites_x, geometry.weights):
        mismatch = states != gps.supports[:, site][None, :]
        epsilon[:, site, :] *= np.exp(-(mismatch * weight) / kernel.theta)
    mode = SymmetrizationMode.KERNEL if len(gps.group) > 1 else SymmetrizationMode.NONE
    return QGPSModel(epsilon, mode, gps.group, None, gps.lattice)
