import numpy as np
import pytest

from kacising.lattice import (
    BlockPartition,
    MagGrid,
    SpinConfig,
    TorusLattice,
    ball_sites,
    block_average,
    block_spin_sums,
    ceil_to_grid,
    constraint_levels,
    constraint_set_membership,
    mag_grid,
    neighbor_table,
    neighbors,
)


def test_neighbors_periodic_wrap():
    lat = TorusLattice(2, 4)
    site = lat.site_at((3, 0))
    nbrs = dict(neighbors(lat, site))
    assert nbrs[lat.site_at((0, 0))] == 1


def test_neighbors_degree_2d():
    lat = TorusLattice(2, 4)
    for site in range(lat.site_count):
        nbrs = neighbors(lat, site)
        assert sum(m for _, m in nbrs) == 4
        assert len(nbrs) == 4  # side >= 3: all distinct


def test_neighbors_side_two_multiplicity():
    lat = TorusLattice(1, 2)
    assert neighbors(lat, 0) == [(1, 2)]
    assert neighbors(lat, 1) == [(0, 2)]


def test_neighbor_table_matches_listing():
    lat = TorusLattice(2, 3)
    table = neighbor_table(lat)
    for site in range(lat.site_count):
        expected = []
        for y, m in neighbors(lat, site):
            expected.extend([y] * m)
        assert sorted(table[site].tolist()) == sorted(expected)


def test_ball_small_radii():
    lat = TorusLattice(2, 16)
    center = lat.site_at((8, 8))
    assert len(ball_sites(lat, center, 1.0)) == 5
    assert len(ball_sites(lat, center, 1.5)) == 9


def test_ball_radius_4_against_brute_force():
    lat = TorusLattice(2, 64)
    center = lat.site_at((10, 20))
    got = ball_sites(lat, center, 4.0)
    # independent offset enumeration dx^2 + dy^2 <= 16
    expected = set()
    for dx in range(-4, 5):
        for dy in range(-4, 5):
            if dx * dx + dy * dy <= 16:
                expected.add(lat.site_at((10 + dx, 20 + dy)))
    assert set(got) == expected
    assert len(got) == 49


def test_ball_rejects_oversize_radius():
    lat = TorusLattice(2, 8)
    with pytest.raises(ValueError):
        ball_sites(lat, 0, 4.5)


def test_ball_translation_covariance():
    lat = TorusLattice(2, 12)
    rng = np.random.default_rng(7)
    for _ in range(20):
        cx, cy = rng.integers(0, 12, size=2)
        sx, sy = rng.integers(0, 12, size=2)
        base = ball_sites(lat, lat.site_at((cx, cy)), 2.5)
        shifted = ball_sites(lat, lat.site_at((cx + sx, cy + sy)), 2.5)
        moved = sorted(
            lat.site_at((a + sx, b + sy)) for a, b in (lat.coords(s) for s in base)
        )
        assert moved == shifted


def test_mag_grid_structure():
    g = mag_grid(4)
    assert np.allclose(g.values, [-1, -0.5, 0, 0.5, 1])
    assert isinstance(g, MagGrid)
    for n in (1, 3, 10):
        vals = mag_grid(n).values
        assert len(vals) == n + 1
        assert vals[0] == -1 and vals[-1] == 1
        assert np.allclose(vals, -vals[::-1])


def test_ceil_to_grid_examples():
    assert ceil_to_grid(0.3, 4) == 0.5
    for n in (1, 2, 5, 16):
        assert ceil_to_grid(-1.0, n) == -1.0
    assert ceil_to_grid(0.5, 4) == 0.5


def test_ceil_to_grid_monotone_and_idempotent():
    rng = np.random.default_rng(3)
    for n in (4, 10, 16, 37):
        ts = np.sort(rng.uniform(-1, 1, size=200))
        out = [ceil_to_grid(t, n) for t in ts]
        assert all(a <= b for a, b in zip(out, out[1:]))
        for v in mag_grid(n).values:
            assert ceil_to_grid(float(v), n) == v
        # returned value is >= t and is the minimal grid point above
        for t, v in zip(ts, out):
            assert v >= t - 1e-12
            below = [g for g in mag_grid(n).values if g >= t - 1e-12]
            assert v == below[0]


def test_block_average_constant_and_checkerboard():
    lat = TorusLattice(2, 8)
    part = BlockPartition(lat, 4)
    assert np.allclose(block_average(SpinConfig.all_plus(lat), part), 1.0)
    assert np.allclose(block_average(SpinConfig.checkerboard(lat), part), 0.0)


def test_block_average_matches_direct_sum():
    lat = TorusLattice(2, 8)
    part = BlockPartition(lat, 4)
    rng = np.random.default_rng(11)
    cfg = SpinConfig.random(lat, rng)
    got = block_average(cfg, part)
    for b in range(part.block_count):
        sites = part.sites_of_block(b)
        assert got[b] == pytest.approx(cfg.spins[sites].mean(), abs=1e-15)


def test_partition_identity_exact():
    # sum over blocks of |block| * average equals the total spin, exactly
    rng = np.random.default_rng(5)
    for d, side, bs in [(1, 8, 2), (2, 8, 4), (2, 16, 2)]:
        lat = TorusLattice(d, side)
        part = BlockPartition(lat, bs)
        cfg = SpinConfig.random(lat, rng)
        sums = block_spin_sums(cfg, part)
        assert sums.sum() == cfg.spins.sum()
        assert np.array_equal(
            sums, np.round(block_average(cfg, part) * part.block_volume).astype(int)
        )


def test_constraint_membership_all_plus():
    lat = TorusLattice(2, 4)
    part = BlockPartition(lat, 2)
    assert constraint_set_membership(SpinConfig.all_plus(lat), part, 1.0)
    spins = np.ones(lat.site_count, dtype=np.int8)
    spins[5] = -1
    assert not constraint_set_membership(SpinConfig(lat, spins), part, 1.0)


def test_constraint_level_grid_arithmetic():
    # target 0.3 over a 4x4 block: ceiling on I_16 is 0.375 = 11 plus, 5 minus
    lat = TorusLattice(2, 4)
    part = BlockPartition(lat, 4)
    req = constraint_levels(0.3, part)
    assert req.tolist() == [6]  # 11 - 5
    spins = np.ones(16, dtype=np.int8)
    spins[:5] = -1
    assert constraint_set_membership(SpinConfig(lat, spins), part, 0.3)
    spins[5] = -1
    assert not constraint_set_membership(SpinConfig(lat, spins), part, 0.3)


def test_block_partition_validation():
    lat = TorusLattice(2, 8)
    with pytest.raises(ValueError):
        BlockPartition(lat, 3)
    part = BlockPartition(lat, 2)
    assert part.block_count * part.block_volume == lat.site_count
    counts = np.bincount(part.block_of_site, minlength=part.block_count)
    assert np.all(counts == part.block_volume)
