"""
Sparse-row Hamiltonians.

Every spec exposes `row(x) -> (targets, amplitudes)` with the diagonal
element first; `connected_elements` wraps that into ConnectedElement
records. Fermionic spin-orbitals are ordered all-up then all-down,
mode m = site + spin * L.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np

from gpslab.core.exceptions import InvalidArgumentError
from gpslab.models.config_space import (
    FERMION_DIM,
    SPIN_DIM,
    Lattice,
    SectorSpec,
    as_config,
)
from gpslab.utils.io import CONFIG_DTYPE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConnectedElement:
    target: np.ndarray
    amplitude: complex


# ---------------------------------------------------------------------------
# Fermionic helpers
# ---------------------------------------------------------------------------

def mode_occupations(x: np.ndarray) -> np.ndarray:
    """(..., 2L) 0/1 occupations of the spin-orbitals of D=4 configurations."""
    x = np.asarray(x)
    up = (x == 1) | (x == 3)
    down = (x == 2) | (x == 3)
    return np.concatenate([up, down], axis=-1).astype(CONFIG_DTYPE)


def from_mode_occupations(n: np.ndarray) -> np.ndarray:
    n = np.asarray(n)
    n_sites = n.shape[-1] // 2
    return (n[..., :n_sites] + 2 * n[..., n_sites:]).astype(CONFIG_DTYPE)


def _mode(n_sites: int, site: int, spin: int) -> int:
    if spin not in (0, 1) or not 0 <= site < n_sites:
        raise InvalidArgumentError(f"Invalid spin-orbital ({site}, {spin})", field="mode")
    return site + spin * n_sites


def fermion_parity(
    x: np.ndarray,
    removals: Sequence[tuple[int, int]],
    additions: Sequence[tuple[int, int]],
) -> int:
    """Sign of the operator string acting on |x>.

    Removals are applied first, in order, then additions. Each operator on
    mode m contributes (-1)**(occupied modes below m) in the configuration
    it acts on, read from one prefix sum of |x> plus the modes already
    changed by earlier operators.
    """
    x = as_config(x, local_dim=FERMION_DIM)
    n_sites = len(x)
    occ = mode_occupations(x)
    cumulative = _cumulative(occ)
    changed: dict[int, int] = {}
    sign = 1
    for ops, value, field_name in ((removals, 0, "removals"), (additions, 1, "additions")):
        for site, spin in ops:
            m = _mode(n_sites, site, spin)
            if changed.get(m, int(occ[m])) == value:
                state = "empty" if value == 0 else "occupied"
                verb = "remove from" if value == 0 else "add to"
                raise InvalidArgumentError(f"Cannot {verb} {state} mode ({site}, {spin})", field=field_name)
            below = cumulative[m] + sum(v - int(occ[k]) for k, v in changed.items() if k < m)
            if below % 2:
                sign = -sign
            changed[m] = value
    return sign


def _hop_sign(cumulative: np.ndarray, src: int, dst: int) -> int:
    """Parity of c_dst^dag c_src given cumulative occupancies (cumulative[m] = occupied modes < m)."""
    lo, hi = (src, dst) if src < dst else (dst, src)
    between = cumulative[hi] - cumulative[lo + 1]
    return -1 if between % 2 else 1


def _cumulative(occ: np.ndarray) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(occ)])


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

def _check_sector(spec, x: np.ndarray) -> np.ndarray:
    x = as_config(x, spec.n_sites, spec.local_dim)
    if spec.sector is not None and not spec.sector.contains(x, spec.local_dim):
        raise InvalidArgumentError("Configuration lies outside the Hamiltonian sector", field="config")
    return x


@dataclass(frozen=True)
class HeisenbergSpec:
    """J1-J2 spin-1/2 model, S entries +-1/2."""

    lattice: Lattice
    J1: float = 1.0
    J2: float = 0.0
    msr_transform: bool = False
    sector: Optional[SectorSpec] = None

    local_dim: int = field(default=SPIN_DIM, init=False)

    def __post_init__(self):
        if self.msr_transform and not self.lattice.is_bipartite:
            raise InvalidArgumentError("The Marshall sign transform requires a bipartite lattice", field="msr_transform")
        if self.J2 != 0 and len(self.lattice.next_nearest_bonds) == 0:
            raise InvalidArgumentError("J2 coupling needs next-nearest neighbors", field="J2")
        if self.sector is not None:
            self.sector.validate(self.lattice.n_sites)

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @cached_property
    def _couplings(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(pairs, J, off-diagonal sign) for every coupled bond."""
        pairs = [self.lattice.bonds]
        couplings = [np.full(len(self.lattice.bonds), float(self.J1))]
        if self.J2 != 0:
            pairs.append(self.lattice.next_nearest_bonds)
            couplings.append(np.full(len(self.lattice.next_nearest_bonds), float(self.J2)))
        pairs = np.concatenate(pairs).reshape(-1, 2)
        couplings = np.concatenate(couplings)
        signs = np.ones(len(pairs))
        if self.msr_transform:
            sub = self.lattice.sublattice()
            signs = np.where(sub[pairs[:, 0]] != sub[pairs[:, 1]], -1.0, 1.0)
        return pairs, couplings, signs

    def row(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = _check_sector(self, x)
        pairs, couplings, signs = self._couplings
        aligned = x[pairs[:, 0]] == x[pairs[:, 1]]
        diagonal = float(np.sum(np.where(aligned, 0.25, -0.25) * couplings))

        flip = np.flatnonzero(~aligned)
        targets = np.repeat(x[None, :], len(flip) + 1, axis=0)
        for k, b in enumerate(flip, start=1):
            i, j = pairs[b]
            targets[k, i], targets[k, j] = x[j], x[i]
        amplitudes = np.concatenate([[diagonal], 0.5 * couplings[flip] * signs[flip]]).astype(complex)
        return targets, amplitudes

    def hop_pairs(self) -> np.ndarray:
        return self._couplings[0]


@dataclass(frozen=True)
class HubbardSpec:
    """Fermi-Hubbard model on the lattice's nearest-neighbor bonds."""

    lattice: Lattice
    t: float = 1.0
    U: float = 0.0
    sector: Optional[SectorSpec] = None

    local_dim: int = field(default=FERMION_DIM, init=False)

    def __post_init__(self):
        if self.sector is not None:
            self.sector.validate(self.lattice.n_sites)

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    def row(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = _check_sector(self, x)
        n_sites = self.n_sites
        occ = mode_occupations(x)
        cumulative = _cumulative(occ)

        targets = [x]
        amplitudes = [float(self.U) * float(np.sum(x == 3))]
        for (i, j), bond_sign in zip(self.lattice.bonds, self.lattice.bond_signs):
            for spin in (0, 1):
                a, b = i + spin * n_sites, j + spin * n_sites
                if occ[a] == occ[b]:
                    continue
                src, dst = (a, b) if occ[a] else (b, a)
                new = occ.copy()
                new[src], new[dst] = 0, 1
                targets.append(from_mode_occupations(new))
                amplitudes.append(-float(self.t) * bond_sign * _hop_sign(cumulative, src, dst))
        return np.stack(targets), np.asarray(amplitudes, dtype=complex)

    def hop_pairs(self) -> np.ndarray:
        return self.lattice.bonds


@dataclass(frozen=True, eq=False)
class AbInitioSpec:
    """Second-quantized molecular Hamiltonian over L spatial orbitals.

    h2[i, j, k, l] holds the chemists' integral (il|jk).
    """

    h1: np.ndarray
    h2: np.ndarray
    core_energy: float = 0.0
    sector: Optional[SectorSpec] = None

    local_dim: int = field(default=FERMION_DIM, init=False)

    def __post_init__(self):
        h1 = np.asarray(self.h1, dtype=float)
        h2 = np.asarray(self.h2, dtype=float)
        n = h1.shape[0]
        if h1.shape != (n, n) or h2.shape != (n, n, n, n):
            raise InvalidArgumentError("Integral shapes must be (L, L) and (L, L, L, L)", field="integrals")
        if not (np.all(np.isfinite(h1)) and np.all(np.isfinite(h2))):
            raise InvalidArgumentError("Integrals must be finite", field="integrals")
        if not np.allclose(h1, h1.T):
            raise InvalidArgumentError("One-electron integrals must be symmetric", field="h1")
        object.__setattr__(self, "h1", h1)
        object.__setattr__(self, "h2", h2)
        if self.sector is not None:
            self.sector.validate(n)

    @property
    def n_sites(self) -> int:
        return self.h1.shape[0]

    @cached_property
    def chemist(self) -> np.ndarray:
        """(pq|rs) indexed [p, q, r, s]."""
        return np.transpose(self.h2, (0, 3, 1, 2))

    @cached_property
    def t_eff(self) -> np.ndarray:
        return effective_one_body(self)

    def row(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = _check_sector(self, x)
        n_sites = self.n_sites
        occ = mode_occupations(x)
        chemist = self.chemist
        t_eff = self.t_eff

        accumulated: dict[bytes, complex] = {x.tobytes(): complex(self.core_energy)}

        def add(n: np.ndarray, value: float):
            key = from_mode_occupations(n).tobytes()
            accumulated[key] = accumulated.get(key, 0.0) + value

        for spin in (0, 1):
            for p, q, sign in self._spin_hops(occ, spin):
                new = _hopped(occ, spin, n_sites, p, q)
                add(new, t_eff[p, q] * sign)

        # 1/2 sum (pq|rs) E_pq E_rs, E_rs applied first
        for spin_rs in (0, 1):
            for r, s, sign_rs in self._spin_hops(occ, spin_rs):
                mid = _hopped(occ, spin_rs, n_sites, r, s)
                for spin_pq in (0, 1):
                    for p, q, sign_pq in self._spin_hops(mid, spin_pq):
                        value = 0.5 * chemist[p, q, r, s]
                        if value == 0.0:
                            continue
                        add(_hopped(mid, spin_pq, n_sites, p, q), value * sign_rs * sign_pq)

        diagonal_key = x.tobytes()
        keys = [diagonal_key] + [k for k, v in accumulated.items() if k != diagonal_key and v != 0.0]
        targets = np.stack([np.frombuffer(k, dtype=x.dtype) for k in keys]).astype(CONFIG_DTYPE)
        amplitudes = np.asarray([accumulated[k] for k in keys], dtype=complex)
        return targets, amplitudes

    def _spin_hops(self, occ: np.ndarray, spin: int) -> list[tuple[int, int, int]]:
        n_sites = self.n_sites
        base = spin * n_sites
        cumulative = _cumulative(occ)
        hops = []
        for q in range(n_sites):
            if not occ[base + q]:
                continue
            hops.append((q, q, 1))
            for p in range(n_sites):
                if p != q and not occ[base + p]:
                    hops.append((p, q, _hop_sign(cumulative, base + q, base + p)))
        return hops

    def hop_pairs(self) -> np.ndarray:
        n = self.n_sites
        return np.array([(i, j) for i in range(n) for j in range(i + 1, n)], dtype=int).reshape(-1, 2)


def _hopped(occ: np.ndarray, spin: int, n_sites: int, p: int, q: int) -> np.ndarray:
    if p == q:
        return occ
    new = occ.copy()
    new[q + spin * n_sites] = 0
    new[p + spin * n_sites] = 1
    return new


HamiltonianSpec = Union[HeisenbergSpec, HubbardSpec, AbInitioSpec]


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def connected_elements(spec: HamiltonianSpec, x: np.ndarray) -> list[ConnectedElement]:
    """Row <x|H|x'> as ConnectedElement records; the diagonal comes first."""
    targets, amplitudes = spec.row(x)
    return [ConnectedElement(t, complex(a)) for t, a in zip(targets, amplitudes)]


def effective_one_body(spec: AbInitioSpec) -> np.ndarray:
    """t_ij = h_ij - 1/2 sum_k (ik|kj)."""
    t = spec.h1 - 0.5 * np.einsum("ikjk->ij", spec.h2)
    return 0.5 * (t + t.T)


def hop_pairs(spec: HamiltonianSpec) -> np.ndarray:
    return spec.hop_pairs()
