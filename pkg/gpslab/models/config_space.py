"""
Configurations, lattices, sectors and symmetry groups.

Local-state encodings shared by every module:

  * spins     D=2   0 = up, 1 = down
  * fermions  D=4   0 = empty, 1 = up, 2 = down, 3 = doubly occupied

Configurations are 1-D integer arrays of length L (batches are (N, L)).
Sites of 2-D lattices are numbered row-major.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from gpslab.core.exceptions import InvalidArgumentError
from gpslab.utils.io import CONFIG_DTYPE

logger = logging.getLogger(__name__)


SPIN_DIM = 2
FERMION_DIM = 4

# Local-state relabelings applied by spin inversion
_SPIN_INVERSION = {
    SPIN_DIM: (1, 0),
    FERMION_DIM: (0, 2, 1, 3),
}

GROUP_FACTORS = ("translations", "point_group", "spin_inversion")


class Boundary(str, Enum):
    OPEN = "open"
    PERIODIC = "periodic"
    ANTIPERIODIC = "antiperiodic"


# ---------------------------------------------------------------------------
# Lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lattice:
    """A 1-D chain or 2-D rectangle with a boundary condition per axis."""

    extents: tuple[int, ...]
    boundary: tuple[Boundary, ...]

    def __post_init__(self):
        if len(self.extents) not in (1, 2):
            raise InvalidArgumentError("Lattices have 1 or 2 dimensions", field="extents")
        if any(int(e) < 1 for e in self.extents):
            raise InvalidArgumentError("Lattice extents must be positive", field="extents")
        if len(self.boundary) != len(self.extents):
            raise InvalidArgumentError("One boundary condition per axis is required", field="boundary")
        object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))
        object.__setattr__(self, "boundary", tuple(Boundary(b) for b in self.boundary))

    @classmethod
    def chain(cls, length: int, boundary: str | Boundary = Boundary.PERIODIC) -> "Lattice":
        return cls((length,), (Boundary(boundary),))

    @classmethod
    def rectangle(cls, rows: int, cols: int, boundary: str | Boundary | Sequence = Boundary.PERIODIC) -> "Lattice":
        if isinstance(boundary, (str, Boundary)):
            boundary = (boundary, boundary)
        return cls((rows, cols), tuple(Boundary(b) for b in boundary))

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extents))

    @property
    def ndim(self) -> int:
        return len(self.extents)

    @cached_property
    def coordinates(self) -> np.ndarray:
        """(L, ndim) coordinates, row-major."""
        grids = np.meshgrid(*[np.arange(e) for e in self.extents], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def site_index(self, coord: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(c) for c in coord), self.extents))

    def _step(self, coord: np.ndarray, offsets: Sequence[int]) -> tuple[Optional[int], int]:
        """Neighbor reached by adding offsets; returns (site or None, boundary sign)."""
        target = []
        sign = 1
        for axis, (c, d) in enumerate(zip(coord, offsets)):
            n = self.extents[axis]
            t = int(c) + d
            if 0 <= t < n:
                target.append(t)
                continue
            if self.boundary[axis] is Boundary.OPEN:
                return None, 0
            if self.boundary[axis] is Boundary.ANTIPERIODIC:
                sign = -sign
            target.append(t % n)
        return self.site_index(target), sign

    def _collect(self, offset_list: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        pairs: list[tuple[int, int]] = []
        signs: list[int] = []
        seen: set[frozenset] = set()
        for site in range(self.n_sites):
            coord = self.coordinates[site]
            for offsets in offset_list:
                other, sign = self._step(coord, offsets)
                if other is None or other == site:
                    continue
                key = frozenset((site, other))
                if key in seen:
                    continue
                seen.add(key)
                pairs.append((site, other))
                signs.append(sign)
        return np.asarray(pairs, dtype=int).reshape(-1, 2), np.asarray(signs, dtype=float)

    @cached_property
    def _nearest(self) -> tuple[np.ndarray, np.ndarray]:
        if self.ndim == 1:
            return self._collect([(1,)])
        return self._collect([(0, 1), (1, 0)])

    @cached_property
    def _next_nearest(self) -> tuple[np.ndarray, np.ndarray]:
        if self.ndim == 1:
            pairs, signs = self._collect([(2,)])
        else:
            pairs, signs = self._collect([(1, 1), (1, -1)])
        nearest = {frozenset(map(int, p)) for p in self.bonds}
        keep = [k for k, p in enumerate(pairs) if frozenset(map(int, p)) not in nearest]
        return pairs[keep].reshape(-1, 2), signs[keep]

    @property
    def bonds(self) -> np.ndarray:
        """Nearest-neighbor pairs, each undirected bond once."""
        return self._nearest[0]

    @property
    def bond_signs(self) -> np.ndarray:
        """-1 for bonds crossing an antiperiodic boundary, else +1."""
        return self._nearest[1]

    @property
    def next_nearest_bonds(self) -> np.ndarray:
        return self._next_nearest[0]

    @property
    def next_nearest_signs(self) -> np.ndarray:
        return self._next_nearest[1]

    def neighbors(self, site: int) -> list[int]:
        return sorted(int(b[1 - k]) for b in self.bonds for k in (0, 1) if b[k] == site)

    def next_neighbors(self, site: int) -> list[int]:
        return sorted(int(b[1 - k]) for b in self.next_nearest_bonds for k in (0, 1) if b[k] == site)

    @cached_property
    def distances(self) -> np.ndarray:
        """Graph (Manhattan) distance matrix, counting wrap bonds."""
        n = self.n_sites
        if n == 1 or len(self.bonds) == 0:
            dist = np.full((n, n), np.inf)
            np.fill_diagonal(dist, 0)
            return dist
        rows, cols = self.bonds[:, 0], self.bonds[:, 1]
        adjacency = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
        return shortest_path(adjacency, directed=False, unweighted=True)

    def distance(self, i: int, j: int) -> float:
        return float(self.distances[i, j])

    def sublattice(self) -> np.ndarray:
        """Checkerboard labels (0 on the sublattice containing site 0)."""
        return (self.coordinates.sum(axis=1) % 2).astype(int)

    @property
    def is_bipartite(self) -> bool:
        labels = self.sublattice()
        return bool(np.all(labels[self.bonds[:, 0]] != labels[self.bonds[:, 1]]))

    def to_dict(self) -> dict:
        return {"extents": list(self.extents), "boundary": [b.value for b in self.boundary]}

    @classmethod
    def from_dict(cls, data: dict) -> "Lattice":
        return cls(tuple(data["extents"]), tuple(data["boundary"]))


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------

def as_config(x: Sequence[int] | np.ndarray, n_sites: Optional[int] = None, local_dim: Optional[int] = None) -> np.ndarray:
    """Validate one configuration (or a batch) and return it as an integer array."""
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.integer):
        if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
            raise InvalidArgumentError("Configuration entries must be integers", field="config")
        arr = arr.astype(CONFIG_DTYPE)
    if n_sites is not None and arr.shape[-1] != n_sites:
        raise InvalidArgumentError(f"Configuration length {arr.shape[-1]} != {n_sites} sites", field="config")
    if local_dim is not None and arr.size and (arr.min() < 0 or arr.max() >= local_dim):
        raise InvalidArgumentError(f"Local states must lie in [0, {local_dim})", field="config")
    return arr


def _lex_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise lexicographic a < b for equal-shape (N, L) batches."""
    diff = a != b
    has_diff = diff.any(axis=1)
    first = diff.argmax(axis=1)
    rows = np.arange(a.shape[0])
    return has_diff & (a[rows, first] < b[rows, first])


def lexsort_rows(configs: np.ndarray) -> np.ndarray:
    if len(configs) == 0:
        return configs
    order = np.lexsort(configs.T[::-1])
    return configs[order]


# ---------------------------------------------------------------------------
# Symmetry operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetryOp:
    """Site permutation (site j moves to permutation[j]), optional relabeling, character."""

    permutation: tuple[int, ...]
    relabel: Optional[tuple[int, ...]] = None
    character: complex = 1.0 + 0.0j
    name: str = ""

    def __post_init__(self):
        perm = tuple(int(p) for p in self.permutation)
        if sorted(perm) != list(range(len(perm))):
            raise InvalidArgumentError("Symmetry permutation must be a bijection", field="permutation")
        object.__setattr__(self, "permutation", perm)
        if self.relabel is not None:
            relabel = tuple(int(r) for r in self.relabel)
            if sorted(relabel) != list(range(len(relabel))):
                raise InvalidArgumentError("Relabeling must be a bijection", field="relabel")
            if relabel == tuple(range(len(relabel))):
                relabel = None
            object.__setattr__(self, "relabel", relabel)
        if not np.isclose(abs(complex(self.character)), 1.0):
            raise InvalidArgumentError("Character phases must have unit modulus", field="character")
        object.__setattr__(self, "character", complex(self.character))

    @classmethod
    def identity(cls, n_sites: int) -> "SymmetryOp":
        return cls(tuple(range(n_sites)), name="identity")

    @property
    def n_sites(self) -> int:
        return len(self.permutation)

    @cached_property
    def source(self) -> np.ndarray:
        """result[i] = x[source[i]], i.e. the inverse permutation."""
        return np.argsort(np.asarray(self.permutation))

    @property
    def is_identity(self) -> bool:
        return self.relabel is None and self.permutation == tuple(range(self.n_sites))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """S[x] for one configuration or a batch along the last axis."""
        arr = np.asarray(x)
        if arr.shape[-1] != self.n_sites:
            raise InvalidArgumentError(
                f"Configuration length {arr.shape[-1]} does not match the {self.n_sites}-site operation",
                field="config",
            )
        out = arr[..., self.source]
        if self.relabel is not None:
            out = np.asarray(self.relabel, dtype=arr.dtype)[out]
        return out

    def compose(self, other: "SymmetryOp") -> "SymmetryOp":
        """self after other."""
        perm = tuple(self.permutation[p] for p in other.permutation)
        if self.relabel is None and other.relabel is None:
            relabel = None
        else:
            dim = len(self.relabel or other.relabel)
            first = other.relabel or tuple(range(dim))
            second = self.relabel or tuple(range(dim))
            relabel = tuple(second[v] for v in first)
        name = "*".join(n for n in (self.name, other.name) if n and n != "identity") or "identity"
        return SymmetryOp(perm, relabel, self.character * other.character, name)


@dataclass(frozen=True)
class SymmetryGroup:
    """Ordered symmetry operations; element 0 is the identity."""

    operations: tuple[SymmetryOp, ...]
    factors: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.operations:
            raise InvalidArgumentError("A symmetry group needs at least one operation")
        if not self.operations[0].is_identity:
            raise InvalidArgumentError("The first group element must be the identity")
        object.__setattr__(self, "operations", tuple(self.operations))

    @classmethod
    def trivial(cls, n_sites: int) -> "SymmetryGroup":
        return cls((SymmetryOp.identity(n_sites),))

    def __len__(self) -> int:
        return len(self.operations)

    def __iter__(self) -> Iterator[SymmetryOp]:
        return iter(self.operations)

    def __getitem__(self, k: int) -> SymmetryOp:
        return self.operations[k]

    @property
    def n_sites(self) -> int:
        return self.operations[0].n_sites

    @property
    def characters(self) -> np.ndarray:
        return np.array([op.character for op in self.operations], dtype=complex)

    def with_characters(self, characters: Sequence[complex]) -> "SymmetryGroup":
        if len(characters) != len(self):
            raise InvalidArgumentError("One character per group element is required", field="characters")
        ops = tuple(
            SymmetryOp(op.permutation, op.relabel, complex(c), op.name)
            for op, c in zip(self.operations, characters)
        )
        return SymmetryGroup(ops, self.factors)

    def apply_all(self, configs: np.ndarray) -> np.ndarray:
        """(G, N, L) images of an (N, L) batch."""
        configs = np.atleast_2d(configs)
        return np.stack([op.apply(configs) for op in self.operations])

    def descriptor(self) -> dict:
        return {
            "factors": list(self.factors),
            "size": len(self),
            "characters": [[c.real, c.imag] for c in self.characters],
        }


def _translations(lattice: Lattice) -> list[SymmetryOp]:
    if any(b is Boundary.OPEN for b in lattice.boundary):
        raise InvalidArgumentError("Translations require periodic or antiperiodic axes", field="translations")
    coords = lattice.coordinates
    ops = []
    for shift in itertools.product(*[range(e) for e in lattice.extents]):
        moved = (coords + np.asarray(shift)) % np.asarray(lattice.extents)
        perm = np.ravel_multi_index(tuple(moved.T), lattice.extents)
        ops.append(SymmetryOp(tuple(perm), name=f"T{shift}" if any(shift) else "identity"))
    return ops


def _point_group(lattice: Lattice) -> list[SymmetryOp]:
    coords = lattice.coordinates
    ext = np.asarray(lattice.extents)
    maps = [coords]
    if lattice.ndim == 1:
        maps.append(ext - 1 - coords)
        names = ["identity", "reflection"]
    else:
        flip_r = coords.copy()
        flip_r[:, 0] = ext[0] - 1 - coords[:, 0]
        flip_c = coords.copy()
        flip_c[:, 1] = ext[1] - 1 - coords[:, 1]
        maps += [flip_r, flip_c, ext - 1 - coords]
        names = ["identity", "flip_rows", "flip_cols", "rotate_180"]
        if ext[0] == ext[1]:
            maps += [m[:, ::-1] for m in list(maps)]
            names += [f"{n}*transpose" if n != "identity" else "transpose" for n in list(names)]
    return [
        SymmetryOp(tuple(np.ravel_multi_index(tuple(m.T), lattice.extents)), name=n)
        for m, n in zip(maps, names)
    ]


def _spin_inversion(n_sites: int, local_dim: int) -> list[SymmetryOp]:
    if local_dim not in _SPIN_INVERSION:
        raise InvalidArgumentError(f"Spin inversion undefined for local dimension {local_dim}", field="spin_inversion")
    return [
        SymmetryOp.identity(n_sites),
        SymmetryOp(tuple(range(n_sites)), _SPIN_INVERSION[local_dim], name="spin_inversion"),
    ]


def build_group(lattice: Lattice, include: Iterable[str] = (), local_dim: int = SPIN_DIM) -> SymmetryGroup:
    """Direct product of the requested generator groups; identity first."""
    include = tuple(include)
    unknown = [name for name in include if name not in GROUP_FACTORS]
    if unknown:
        raise InvalidArgumentError(f"Unknown symmetry factors: {unknown}", field="include")

    identity = [SymmetryOp.identity(lattice.n_sites)]
    translations = _translations(lattice) if "translations" in include else identity
    point_group = _point_group(lattice) if "point_group" in include else identity
    inversion = _spin_inversion(lattice.n_sites, local_dim) if "spin_inversion" in include else identity

    ops = [t.compose(p).compose(s) for t, p, s in itertools.product(translations, point_group, inversion)]
    factors = tuple(name for name in GROUP_FACTORS if name in include)
    logger.debug(f"Built symmetry group {factors} with {len(ops)} operations")
    return SymmetryGroup(tuple(ops), factors)


def apply_symmetry(op: SymmetryOp, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


# ---------------------------------------------------------------------------
# Sectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SectorSpec:
    """Fixed magnetization (spins: number of up sites) or (N_up, N_down) for fermions.

    None leaves a count unconstrained.
    """

    n_up: Optional[int] = None
    n_down: Optional[int] = None

    def validate(self, n_sites: int) -> None:
        for name, value in (("n_up", self.n_up), ("n_down", self.n_down)):
            if value is not None and not 0 <= value <= n_sites:
                raise InvalidArgumentError(f"{name}={value} outside [0, {n_sites}]", field=name)

    @staticmethod
    def counts(configs: np.ndarray, local_dim: int) -> tuple[np.ndarray, np.ndarray]:
        configs = np.atleast_2d(configs)
        if local_dim == SPIN_DIM:
            up = (configs == 0).sum(axis=1)
            return up, configs.shape[1] - up
        up = ((configs == 1) | (configs == 3)).sum(axis=1)
        down = ((configs == 2) | (configs == 3)).sum(axis=1)
        return up, down

    def contains(self, configs: np.ndarray, local_dim: int) -> np.ndarray:
        """Boolean mask (or scalar for one configuration)."""
        arr = np.asarray(configs)
        up, down = self.counts(arr, local_dim)
        mask = np.ones(len(up), dtype=bool)
        if self.n_up is not None:
            mask &= up == self.n_up
        if self.n_down is not None:
            mask &= down == self.n_down
        return bool(mask[0]) if arr.ndim == 1 else mask

    def to_dict(self) -> dict:
        return {"n_up": self.n_up, "n_down": self.n_down}


def _occupation_rows(n_sites: int, count: Optional[int]) -> np.ndarray:
    """0/1 rows with `count` ones (all 2^L rows when count is None)."""
    if count is None:
        return np.array(list(itertools.product((0, 1), repeat=n_sites)), dtype=CONFIG_DTYPE).reshape(-1, n_sites)
    combos = list(itertools.combinations(range(n_sites), count))
    rows = np.zeros((len(combos), n_sites), dtype=CONFIG_DTYPE)
    for k, combo in enumerate(combos):
        rows[k, list(combo)] = 1
    return rows


def enumerate_sector(n_sites: int, local_dim: int, sector: Optional[SectorSpec] = None) -> np.ndarray:
    """All configurations of the sector in lexicographic order, shape (N, L)."""
    sector = sector or SectorSpec()
    sector.validate(n_sites)

    if local_dim == SPIN_DIM:
        n_down = None
        if sector.n_up is not None:
            n_down = n_sites - sector.n_up
            if sector.n_down is not None and sector.n_down != n_down:
                return np.zeros((0, n_sites), dtype=CONFIG_DTYPE)
        elif sector.n_down is not None:
            n_down = sector.n_down
        configs = _occupation_rows(n_sites, n_down)
    elif local_dim == FERMION_DIM:
        up = _occupation_rows(n_sites, sector.n_up)
        down = _occupation_rows(n_sites, sector.n_down)
        configs = (up[:, None, :] + 2 * down[None, :, :]).reshape(-1, n_sites).astype(CONFIG_DTYPE)
    else:
        if sector.n_up is not None or sector.n_down is not None:
            raise InvalidArgumentError(f"Sectors are defined for D=2 and D=4, got D={local_dim}", field="local_dim")
        configs = np.array(list(itertools.product(range(local_dim), repeat=n_sites)), dtype=CONFIG_DTYPE)
    return lexsort_rows(configs.reshape(-1, n_sites))


def random_sector_config(n_sites: int, local_dim: int, sector: Optional[SectorSpec], rng: np.random.Generator) -> np.ndarray:
    """Uniformly random configuration of the sector."""
    sector = sector or SectorSpec()
    sector.validate(n_sites)

    def occupation(count: Optional[int]) -> np.ndarray:
        if count is None:
            return rng.integers(0, 2, size=n_sites).astype(CONFIG_DTYPE)
        row = np.zeros(n_sites, dtype=CONFIG_DTYPE)
        row[rng.choice(n_sites, size=count, replace=False)] = 1
        return row

    if local_dim == SPIN_DIM:
        n_down = sector.n_down if sector.n_up is None else n_sites - sector.n_up
        return occupation(n_down)
    if local_dim == FERMION_DIM:
        return (occupation(sector.n_up) + 2 * occupation(sector.n_down)).astype(CONFIG_DTYPE)
    return rng.integers(0, local_dim, size=n_sites).astype(CONFIG_DTYPE)


# ---------------------------------------------------------------------------
# Orbits
# ---------------------------------------------------------------------------

def canonical_representatives(configs: np.ndarray, group: SymmetryGroup) -> np.ndarray:
    """Lexicographic minimum over each configuration's orbit, batched."""
    configs = np.atleast_2d(configs)
    best = configs.copy()
    for op in group.operations[1:]:
        image = op.apply(configs)
        less = _lex_less(image, best)
        best[less] = image[less]
    return best


def canonical_representative(x: np.ndarray, group: SymmetryGroup) -> np.ndarray:
    x = as_config(x, group.n_sites)
    return canonical_representatives(x[None, :], group)[0]


def orbit_representatives(configs: np.ndarray, group: SymmetryGroup) -> np.ndarray:
    """Sorted unique canonical representatives (symmetrically inequivalent pool)."""
    configs = np.atleast_2d(configs)
    if len(configs) == 0:
        return configs
    return np.unique(canonical_representatives(configs, group), axis=0)
