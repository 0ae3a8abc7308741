"""
Lattices, symmetry groups, sectors and orbit canonicalization.

Scenarios:
  * bond lists and boundary signs for chains and rectangles
  * graph distances with and without wrap bonds
  * translations, point group and spin inversion as permutations
  * sector enumeration counts for spins and fermions
  * canonical representatives are orbit invariants
"""
from math import comb

import numpy as np
import pytest

from gpslab.core.exceptions import InvalidArgumentError
from gpslab.models.config_space import (
    Boundary,
    Lattice,
    SectorSpec,
    SymmetryGroup,
    SymmetryOp,
    as_config,
    build_group,
    canonical_representatives,
    enumerate_sector,
    orbit_representatives,
    random_sector_config,
)


# ---------------------------------------------------------------------------
# Lattice
# ---------------------------------------------------------------------------

def test_periodic_chain_has_one_bond_per_site(chain4):
    assert len(chain4.bonds) == 4
    assert chain4.neighbors(0) == [1, 3]
    assert np.all(chain4.bond_signs == 1)


def test_open_chain_drops_wrap_bond():
    lattice = Lattice.chain(4, "open")
    assert len(lattice.bonds) == 3
    assert lattice.neighbors(0) == [1]
    assert lattice.distance(0, 3) == 3


def test_antiperiodic_wrap_bond_carries_minus_sign():
    lattice = Lattice.chain(4, Boundary.ANTIPERIODIC)
    signs = {frozenset(map(int, b)): s for b, s in zip(lattice.bonds, lattice.bond_signs)}
    assert signs[frozenset((3, 0))] == -1
    assert signs[frozenset((0, 1))] == 1


def test_rectangle_distances_wrap():
    lattice = Lattice.rectangle(4, 4)
    assert lattice.n_sites == 16
    assert len(lattice.bonds) == 32
    # (0,0) -> (3,3) is one wrap step along each axis
    assert lattice.distance(0, lattice.site_index((3, 3))) == 2
    assert lattice.is_bipartite


def test_next_nearest_bonds_on_square():
    lattice = Lattice.rectangle(4, 4)
    assert len(lattice.next_nearest_bonds) == 32
    assert lattice.site_index((1, 1)) in lattice.next_neighbors(0)


def test_odd_periodic_chain_is_not_bipartite():
    assert not Lattice.chain(5).is_bipartite


def test_lattice_rejects_bad_extents():
    with pytest.raises(InvalidArgumentError):
        Lattice((0,), (Boundary.OPEN,))
    with pytest.raises(InvalidArgumentError):
        Lattice((2, 2, 2), (Boundary.OPEN,) * 3)


def test_lattice_dict_round_trip(square):
    assert Lattice.from_dict(square.to_dict()) == square


# ---------------------------------------------------------------------------
# Symmetry groups
# ---------------------------------------------------------------------------

def test_translation_group_of_chain(chain4):
    group = build_group(chain4, ["translations"])
    assert len(group) == 4
    assert group[0].is_identity
    x = np.array([0, 0, 1, 1], dtype=np.int8)
    images = {tuple(img) for img in group.apply_all(x)[:, 0, :]}
    assert images == {(0, 0, 1, 1), (1, 0, 0, 1), (1, 1, 0, 0), (0, 1, 1, 0)}


def test_full_group_size_on_square():
    lattice = Lattice.rectangle(4, 4)
    group = build_group(lattice, ["translations", "point_group", "spin_inversion"])
    assert len(group) == 16 * 8 * 2
    assert group.factors == ("translations", "point_group", "spin_inversion")


def test_spin_inversion_relabels_fermions(chain4):
    group = build_group(chain4, ["spin_inversion"], local_dim=4)
    x = np.array([0, 1, 2, 3], dtype=np.int8)
    assert list(group[1].apply(x)) == [0, 2, 1, 3]


def test_translations_need_closed_axes():
    with pytest.raises(InvalidArgumentError):
        build_group(Lattice.chain(4, "open"), ["translations"])


def test_unknown_group_factor():
    with pytest.raises(InvalidArgumentError):
        build_group(Lattice.chain(4), ["rotations"])


def test_symmetry_op_validates_bijection():
    with pytest.raises(InvalidArgumentError):
        SymmetryOp((0, 0, 1))


def test_characters_must_be_unit_phases(chain4):
    group = build_group(chain4, ["translations"])
    with pytest.raises(InvalidArgumentError):
        group.with_characters([1, 1, 2, 1])
    momentum = group.with_characters([np.exp(1j * np.pi * k / 2) for k in range(4)])
    assert np.allclose(np.abs(momentum.characters), 1)


def test_group_needs_identity_first():
    with pytest.raises(InvalidArgumentError):
        SymmetryGroup((SymmetryOp((1, 0)),))


# ---------------------------------------------------------------------------
# Sectors
# ---------------------------------------------------------------------------

def test_spin_sector_size():
    configs = enumerate_sector(6, 2, SectorSpec(n_up=3))
    assert configs.shape == (comb(6, 3), 6)
    assert np.all((configs == 0).sum(axis=1) == 3)


def test_fermion_sector_size():
    configs = enumerate_sector(4, 4, SectorSpec(2, 1))
    assert len(configs) == comb(4, 2) * comb(4, 1)
    up, down = SectorSpec.counts(configs, 4)
    assert np.all(up == 2) and np.all(down == 1)


def test_enumeration_is_lexicographic():
    configs = enumerate_sector(4, 2)
    assert len(configs) == 16
    assert list(configs[0]) == [0, 0, 0, 0]
    assert list(configs[-1]) == [1, 1, 1, 1]
    keys = ["".join(map(str, c)) for c in configs]
    assert keys == sorted(keys)


def test_inconsistent_spin_sector_is_empty():
    assert len(enumerate_sector(4, 2, SectorSpec(n_up=2, n_down=1))) == 0


def test_sector_validation():
    with pytest.raises(InvalidArgumentError):
        enumerate_sector(4, 2, SectorSpec(n_up=5))


def test_random_sector_config_respects_counts(rng):
    sector = SectorSpec(3, 2)
    for _ in range(20):
        x = random_sector_config(6, 4, sector, rng)
        assert sector.contains(x, 4)


def test_as_config_checks_local_range():
    with pytest.raises(InvalidArgumentError):
        as_config([0, 2, 1], local_dim=2)
    with pytest.raises(InvalidArgumentError):
        as_config([0.5, 1.0])


# ---------------------------------------------------------------------------
# Orbits
# ---------------------------------------------------------------------------

def test_canonical_representative_is_orbit_minimum(chain4):
    group = build_group(chain4, ["translations"])
    configs = np.array([[1, 1, 0, 0], [0, 1, 1, 0], [1, 0, 0, 1]], dtype=np.int8)
    reps = canonical_representatives(configs, group)
    assert np.all(reps == np.array([0, 0, 1, 1]))


def test_orbit_representatives_count_necklaces(chain4):
    group = build_group(chain4, ["translations"])
    configs = enumerate_sector(4, 2, SectorSpec(n_up=2))
    # 0011 and 0101 orbits
    assert len(orbit_representatives(configs, group)) == 2


def test_canonical_representative_is_invariant(square):
    group = build_group(square, ["translations", "point_group", "spin_inversion"])
    configs = enumerate_sector(4, 2)
    reps = canonical_representatives(configs, group)
    for op in group:
        assert np.array_equal(canonical_representatives(op.apply(configs), group), reps)
