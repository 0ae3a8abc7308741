"""
Classical Gaussian Process States.

A GPS assigns ln Psi(x) = sum_m w_m sum_S k(S[x], x'_m) for weighted
support configurations x'_m. Three kernel families are available:

  * plaquette    product of site deltas over a fixed site set
  * p_body       delta at the reference site times a normalized polynomial
                 in the distance-weighted number of matching sites
  * exponential  the p -> infinity limit of p_body

Kernels are evaluated through one-hot matrix products, so whole
(data x support) blocks are computed at once.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from gpslab.core.exceptions import InvalidArgumentError
from gpslab.models.config_space import (
    SPIN_DIM,
    Boundary,
    Lattice,
    SymmetryGroup,
    as_config,
    build_group,
)
from gpslab.models.wavefunction import Wavefunction
from gpslab.utils.io import (
    check_container,
    complex_from_pairs,
    complex_pairs,
    config_from_string,
    config_to_string,
    read_yaml,
    write_yaml,
)

logger = logging.getLogger(__name__)

GPS_FORMAT = "gpslab.gps"
GPS_VERSION = 1

# Rows of data evaluated per kernel block
KERNEL_CHUNK = 4096


class KernelVariant(str, Enum):
    PLAQUETTE = "plaquette"
    P_BODY = "p_body"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class KernelSpec:
    variant: KernelVariant = KernelVariant.EXPONENTIAL
    reference_site: int = 0
    plaquette: Optional[tuple[int, ...]] = None
    p: int = 2
    theta: float = 1.0
    gamma: float = 1.0
    cutoff: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "variant", KernelVariant(self.variant))
        if self.reference_site < 0:
            raise InvalidArgumentError("Reference site must be non-negative", field="reference_site")
        if not (math.isfinite(self.theta) and math.isfinite(self.gamma)):
            raise InvalidArgumentError("Kernel hyperparameters must be finite", field="theta")
        if self.variant is KernelVariant.PLAQUETTE:
            if not self.plaquette:
                raise InvalidArgumentError("Plaquette kernels need a site set", field="plaquette")
            plaquette = tuple(int(s) for s in self.plaquette)
            if self.reference_site not in plaquette:
                raise InvalidArgumentError("Plaquette must contain the reference site", field="plaquette")
            object.__setattr__(self, "plaquette", plaquette)
        if self.variant is KernelVariant.P_BODY:
            if int(self.p) != self.p or self.p < 1:
                raise InvalidArgumentError("p must be an integer >= 1", field="p")
            if self.theta < 0:
                raise InvalidArgumentError("p-body kernels need theta >= 0", field="theta")
        if self.variant is KernelVariant.EXPONENTIAL and self.theta <= 0:
            raise InvalidArgumentError("Exponential kernels need theta > 0", field="theta")
        if self.cutoff is not None and self.cutoff < 0:
            raise InvalidArgumentError("Range cutoff must be non-negative", field="cutoff")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "reference_site": self.reference_site,
            "plaquette": list(self.plaquette) if self.plaquette else None,
            "p": int(self.p),
            "theta": float(self.theta),
            "gamma": float(self.gamma),
            "cutoff": None if self.cutoff is None else float(self.cutoff),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        data = dict(data)
        if data.get("plaquette") is not None:
            data["plaquette"] = tuple(data["plaquette"])
        return cls(**data)


# ---------------------------------------------------------------------------
# Geometry: which sites enter the kernel and with which weight
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelGeometry:
    """Aligned site lists of the data and support lattices.

    `ref_*` are the reference sites, `sites_*` the remaining sites in the
    kernel window and `weights` their 1 / distance**gamma factors.
    """

    ref_x: int
    ref_xp: int
    sites_x: np.ndarray
    sites_xp: np.ndarray
    weights: np.ndarray = field(repr=False)


def _minimal_image(lattice: Lattice, site: int, origin: int) -> tuple[int, ...]:
    disp = []
    for axis, n in enumerate(lattice.extents):
        d = int(lattice.coordinates[site, axis] - lattice.coordinates[origin, axis])
        if lattice.boundary[axis] is not Boundary.OPEN:
            d = (d + n // 2) % n - n // 2
        disp.append(d)
    return tuple(disp)


def _window(lattice: Lattice, origin: int, cutoff: float) -> dict[tuple[int, ...], int]:
    return {
        _minimal_image(lattice, s, origin): s
        for s in range(lattice.n_sites)
        if lattice.distances[origin, s] <= cutoff
    }


def kernel_geometry(spec: KernelSpec, lattice_x: Lattice, lattice_xp: Optional[Lattice] = None) -> KernelGeometry:
    lattice_xp = lattice_xp or lattice_x
    return _kernel_geometry(spec, lattice_x, lattice_xp)


@lru_cache(maxsize=64)
def _kernel_geometry(spec: KernelSpec, lattice_x: Lattice, lattice_xp: Lattice) -> KernelGeometry:
    r0 = spec.reference_site
    if r0 >= lattice_x.n_sites or r0 >= lattice_xp.n_sites:
        raise InvalidArgumentError(f"Reference site {r0} outside the lattice", field="reference_site")

    if spec.variant is KernelVariant.PLAQUETTE:
        if lattice_x.extents != lattice_xp.extents:
            raise InvalidArgumentError("Plaquette kernels need equal lattices", field="lattice")
        if max(spec.plaquette) >= lattice_x.n_sites:
            raise InvalidArgumentError("Plaquette site outside the lattice", field="plaquette")
        others = np.array([s for s in spec.plaquette if s != r0], dtype=int)
        return KernelGeometry(r0, r0, others, others, np.ones(len(others)))

    if spec.cutoff is None:
        if lattice_x.extents != lattice_xp.extents:
            raise InvalidArgumentError(
                "Full-range kernels need equal lattice sizes; set a range cutoff for cross-size evaluation",
                field="cutoff",
            )
        sites = np.array([s for s in range(lattice_x.n_sites) if s != r0], dtype=int)
        sites_xp = sites
    else:
        window_x = _window(lattice_x, r0, spec.cutoff)
        window_xp = _window(lattice_xp, r0, spec.cutoff)
        if set(window_x) != set(window_xp):
            raise InvalidArgumentError(
                "Lattices do not both contain the full cutoff plaquette around the reference site",
                field="cutoff",
            )
        keys = sorted(k for k in window_x if window_x[k] != r0)
        sites = np.array([window_x[k] for k in keys], dtype=int)
        sites_xp = np.array([window_xp[k] for k in keys], dtype=int)

    dist = lattice_x.distances[r0, sites] if len(sites) else np.zeros(0)
    weights = np.where(np.isfinite(dist), dist ** (-float(spec.gamma)), 0.0) if len(sites) else np.zeros(0)
    return KernelGeometry(r0, r0, sites, sites_xp, weights)


# ---------------------------------------------------------------------------
# Kernel evaluation
# ---------------------------------------------------------------------------

def _one_hot(configs: np.ndarray, local_dim: int) -> np.ndarray:
    """(N, K) -> (N, K * D) float indicator matrix."""
    n, k = configs.shape
    out = np.zeros((n, k, local_dim))
    out[np.arange(n)[:, None], np.arange(k)[None, :], configs] = 1.0
    return out.reshape(n, k * local_dim)


def _block(spec: KernelSpec, geometry: KernelGeometry, data: np.ndarray, supports: np.ndarray, local_dim: int) -> np.ndarray:
    """Unsymmetrized kernel values for an (N, L) data block against (M, L') supports."""
    delta0 = (data[:, geometry.ref_x][:, None] == supports[:, geometry.ref_xp][None, :]).astype(float)
    weights = np.repeat(geometry.weights, local_dim)
    matched = _one_hot(data[:, geometry.sites_x], local_dim) @ (
        _one_hot(supports[:, geometry.sites_xp], local_dim) * weights
    ).T
    total = float(geometry.weights.sum())

    if spec.variant is KernelVariant.PLAQUETTE:
        return delta0 * np.isclose(matched, total)
    if spec.variant is KernelVariant.EXPONENTIAL:
        return delta0 * np.exp(-(total - matched) / spec.theta)
    if spec.p == 1:
        return delta0
    q = spec.p - 1
    numerator = spec.theta + matched / q
    denominator = spec.theta + total / q
    if denominator == 0.0:
        return delta0
    return delta0 * (numerator / denominator) ** q


def _local_dim(*arrays: np.ndarray) -> int:
    return int(max((int(a.max()) for a in arrays if a.size), default=0)) + 1


def kernel_matrix(
    spec: KernelSpec,
    group: Optional[SymmetryGroup],
    lattice: Lattice,
    data: np.ndarray,
    supports: np.ndarray,
    support_lattice: Optional[Lattice] = None,
    local_dim: Optional[int] = None,
) -> np.ndarray:
    """Phi[n, m] = sum_S k(S[data_n], support_m), computed in blocks of rows."""
    data = np.atleast_2d(as_config(data, lattice.n_sites))
    support_lattice = support_lattice or lattice
    supports = np.atleast_2d(as_config(supports, support_lattice.n_sites))
    geometry = kernel_geometry(spec, lattice, support_lattice)
    local_dim = local_dim or _local_dim(data, supports)
    operations = group.operations if group is not None else (None,)

    out = np.zeros((len(data), len(supports)))
    if len(supports) == 0:
        return out
    for start in range(0, len(data), KERNEL_CHUNK):
        block = data[start:start + KERNEL_CHUNK]
        for op in operations:
            image = block if op is None else op.apply(block)
            out[start:start + KERNEL_CHUNK] += _block(spec, geometry, image, supports, local_dim)
    return out


def kernel_value(spec: KernelSpec, lattice_x: Lattice, x: np.ndarray, lattice_xp: Lattice, xp: np.ndarray) -> float:
    return float(kernel_matrix(spec, None, lattice_x, np.asarray(x)[None, :], np.asarray(xp)[None, :], lattice_xp)[0, 0])


def symmetrized_kernel(
    spec: KernelSpec,
    group: SymmetryGroup,
    lattice: Lattice,
    x: np.ndarray,
    xp: np.ndarray,
    support_lattice: Optional[Lattice] = None,
) -> float:
    return float(kernel_matrix(spec, group, lattice, np.asarray(x)[None, :], np.asarray(xp)[None, :], support_lattice)[0, 0])


def feature_matrix(
    spec: KernelSpec,
    group: Optional[SymmetryGroup],
    supports: np.ndarray,
    data_configs: np.ndarray,
    lattice: Lattice,
    support_lattice: Optional[Lattice] = None,
) -> np.ndarray:
    """Design matrix (N_data x M) for Bayesian fits."""
    return kernel_matrix(spec, group, lattice, data_configs, supports, support_lattice)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

class GPSModel(Wavefunction):
    """Kernel-symmetrized GPS with complex support weights."""

    def __init__(
        self,
        kernel: KernelSpec,
        supports: np.ndarray,
        weights: Sequence[complex],
        lattice: Lattice,
        group: Optional[SymmetryGroup] = None,
        support_lattice: Optional[Lattice] = None,
        local_dim: int = SPIN_DIM,
    ):
        self.kernel = kernel
        self.lattice = lattice
        self.support_lattice = support_lattice or lattice
        self.supports = np.atleast_2d(as_config(supports, self.support_lattice.n_sites, local_dim)).reshape(-1, self.support_lattice.n_sites)
        self.weights = np.asarray(weights, dtype=complex).reshape(-1)
        if len(self.weights) != len(self.supports):
            raise InvalidArgumentError(
                f"{len(self.weights)} weights for {len(self.supports)} supports", field="weights"
            )
        self.group = group or SymmetryGroup.trivial(lattice.n_sites)
        self.local_dim = local_dim
        self.n_sites = lattice.n_sites
        kernel_geometry(kernel, lattice, self.support_lattice)

    @property
    def n_supports(self) -> int:
        return len(self.supports)

    def features(self, configs: np.ndarray) -> np.ndarray:
        return kernel_matrix(
            self.kernel, self.group, self.lattice, configs, self.supports, self.support_lattice, self.local_dim
        )

    def log_psi(self, configs: np.ndarray) -> np.ndarray:
        configs = np.atleast_2d(configs)
        if self.n_supports == 0:
            return np.zeros(len(configs), dtype=complex)
        return self.features(configs) @ self.weights

    @property
    def parameters(self) -> np.ndarray:
        return self.weights.copy()

    def with_parameters(self, parameters: np.ndarray) -> "GPSModel":
        return self.with_supports(self.supports, parameters)

    def with_supports(self, supports: np.ndarray, weights: Sequence[complex]) -> "GPSModel":
        return GPSModel(
            self.kernel, supports, weights, self.lattice, self.group, self.support_lattice, self.local_dim
        )

    def log_derivatives(self, configs: np.ndarray) -> np.ndarray:
        return self.features(configs).astype(complex)

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        document = {
            "format": GPS_FORMAT,
            "version": GPS_VERSION,
            "local_dim": self.local_dim,
            "kernel": self.kernel.to_dict(),
            "lattice": self.lattice.to_dict(),
            "group": self.group.descriptor(),
            "supports": [config_to_string(s) for s in self.supports],
            "weights": complex_pairs(self.weights),
        }
        if self.support_lattice is not self.lattice:
            document["support_lattice"] = self.support_lattice.to_dict()
        return document

    @classmethod
    def from_dict(cls, document: dict) -> "GPSModel":
        check_container(document, GPS_FORMAT, GPS_VERSION)
        lattice = Lattice.from_dict(document["lattice"])
        local_dim = int(document.get("local_dim", SPIN_DIM))
        group_doc = document.get("group") or {}
        group = build_group(lattice, group_doc.get("factors", ()), local_dim)
        if group_doc.get("characters"):
            group = group.with_characters(complex_from_pairs(group_doc["characters"]))
        support_lattice = Lattice.from_dict(document["support_lattice"]) if document.get("support_lattice") else None
        support_sites = (support_lattice or lattice).n_sites
        supports = np.array([config_from_string(s) for s in document["supports"]]).reshape(-1, support_sites)
        return cls(
            KernelSpec.from_dict(document["kernel"]),
            supports,
            complex_from_pairs(document["weights"]),
            lattice,
            group,
            support_lattice,
            local_dim,
        )

    def save(self, path: str | Path) -> Path:
        return write_yaml(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "GPSModel":
        return cls.from_dict(read_yaml(path))


def gps_log_amplitude(model: GPSModel, x: np.ndarray) -> complex:
    return model.log_psi_one(x)


def gps_amplitude(model: GPSModel, x: np.ndarray) -> complex:
    return complex(np.exp(gps_log_amplitude(model, x)))
