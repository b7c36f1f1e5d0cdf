"""Torus geometry: site indexing, neighbours, balls, block partitions,
magnetization grids, and the block-constraint test.

Sites of a d-dimensional torus of linear size `side` are flat indices in
C order, so site = ravel(coords) and coords = unravel(site).  All geometry
here is purely discrete; blocks are treated as index sets, never as
continuum cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TorusLattice:
    """d-dimensional periodic lattice with side sites per axis.

    side = 2 is allowed (doubled edges, see `neighbors`), side = 1 is not.
    Powers of two give exactly nested block partitions; other sides are
    accepted and only restrict which partitions exist.
    """

    dim: int
    side: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.side < 2:
            raise ValueError("side must be >= 2")

    @property
    def site_count(self) -> int:
        return self.side ** self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dim

    def coords(self, site: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(site, self.shape))

    def site_at(self, coords) -> int:
        wrapped = [int(c) % self.side for c in coords]
        return int(np.ravel_multi_index(wrapped, self.shape))

    def all_coords(self) -> np.ndarray:
        """(site_count, dim) integer coordinate table in site order."""
        grids = np.indices(self.shape).reshape(self.dim, -1).T
        return np.ascontiguousarray(grids, dtype=np.int64)


def neighbors(lattice: TorusLattice, site: int) -> list[tuple[int, int]]:
    """Nearest neighbours of a site as (site, multiplicity) pairs.

    Every site has exactly 2*dim neighbour slots; for side = 2 the two
    directions along an axis wrap onto the same site, which shows up as
    multiplicity 2.
    """
    if not (0 <= site < lattice.site_count):
        raise ValueError("site index out of range")
    c = list(lattice.coords(site))
    counts: dict[int, int] = {}
    for axis in range(lattice.dim):
        for step in (+1, -1):
            c2 = list(c)
            c2[axis] = (c2[axis] + step) % lattice.side
            y = lattice.site_at(c2)
            counts[y] = counts.get(y, 0) + 1
    return sorted(counts.items())


def neighbor_table(lattice: TorusLattice) -> np.ndarray:
    """(site_count, 2*dim) neighbour indices; repeated entries encode
    multiplicity (side = 2)."""
    n, d, side = lattice.site_count, lattice.dim, lattice.side
    coords = lattice.all_coords()
    table = np.empty((n, 2 * d), dtype=np.int64)
    col = 0
    for axis in range(d):
        for step in (+1, -1):
            shifted = coords.copy()
            shifted[:, axis] = (shifted[:, axis] + step) % side
            table[:, col] = np.ravel_multi_index(shifted.T, lattice.shape)
            col += 1
    return table


def ball_offsets(lattice: TorusLattice, radius: float) -> np.ndarray:
    """Integer offsets z with Euclidean norm |z| <= radius, as a
    (count, dim) array.  Distinct after wrapping (offsets +side/2 and
    -side/2 coincide on the torus and are kept once)."""
    if not (0 < radius <= lattice.side / 2):
        raise ValueError(
            f"radius must satisfy 0 < R <= side/2 = {lattice.side / 2} "
            "(larger balls self-overlap around the torus)"
        )
    r_int = int(math.floor(radius))
    axes = [np.arange(-r_int, r_int + 1)] * lattice.dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lattice.dim)
    mask = (grid.astype(np.float64) ** 2).sum(axis=1) <= radius * radius + 1e-12
    offs = grid[mask]
    # dedupe modulo the torus (relevant only when radius == side/2 exactly)
    wrapped = np.mod(offs, lattice.side)
    _, keep = np.unique(
        np.ravel_multi_index(wrapped.T, lattice.shape), return_index=True
    )
    return offs[np.sort(keep)]


def ball_sites(lattice: TorusLattice, center: int, radius: float) -> list[int]:
    """Sites within Euclidean torus distance `radius` of `center`
    (center included)."""
    c = np.asarray(lattice.coords(center))
    offs = ball_offsets(lattice, radius)
    wrapped = np.mod(offs + c, lattice.side)
    sites = np.ravel_multi_index(wrapped.T, lattice.shape)
    return sorted(int(s) for s in sites)


def ball_mask(lattice: TorusLattice, radius: float) -> np.ndarray:
    """Indicator array of the ball around the origin, shaped like the
    lattice; used as a convolution stencil for block-averaged fields."""
    mask = np.zeros(lattice.shape, dtype=np.float64)
    offs = ball_offsets(lattice, radius)
    wrapped = tuple(np.mod(offs, lattice.side).T)
    mask[wrapped] = 1.0
    return mask


@dataclass(frozen=True)
class SpinConfig:
    """+-1-valued spin field on a torus.  The array is owned by one writer
    at a time; lattice metadata is shared and immutable."""

    lattice: TorusLattice
    spins: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.spins)
        if s.shape != (self.lattice.site_count,):
            raise ValueError("spins must be a flat array of length site_count")
        if not np.all(np.abs(s) == 1):
            raise ValueError("spins must be exactly -1 or +1")
        object.__setattr__(self, "spins", np.ascontiguousarray(s, dtype=np.int8))

    @classmethod
    def all_plus(cls, lattice: TorusLattice) -> "SpinConfig":
        return cls(lattice, np.ones(lattice.site_count, dtype=np.int8))

    @classmethod
    def all_minus(cls, lattice: TorusLattice) -> "SpinConfig":
        return cls(lattice, -np.ones(lattice.site_count, dtype=np.int8))

    @classmethod
    def checkerboard(cls, lattice: TorusLattice) -> "SpinConfig":
        coords = lattice.all_coords()
        parity = coords.sum(axis=1) % 2
        return cls(lattice, np.where(parity == 0, 1, -1).astype(np.int8))

    @classmethod
    def random(cls, lattice: TorusLattice, rng: np.random.Generator) -> "SpinConfig":
        s = rng.integers(0, 2, size=lattice.site_count) * 2 - 1
        return cls(lattice, s.astype(np.int8))

    def flipped(self) -> "SpinConfig":
        return SpinConfig(self.lattice, -self.spins)


@dataclass(frozen=True)
class BlockPartition:
    """Tiling of the torus into cubic blocks of side `block_side`.

    block_of_site maps each site to its block (C order over the block
    grid); block tiling is exact, so every site belongs to one block.
    """

    lattice: TorusLattice
    block_side: int
    block_of_site: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.block_side < 1 or self.lattice.side % self.block_side != 0:
            raise ValueError(
                f"block_side {self.block_side} must divide side {self.lattice.side}"
            )
        coords = self.lattice.all_coords()
        bcoords = coords // self.block_side
        bshape = (self.blocks_per_axis,) * self.lattice.dim
        bidx = np.ravel_multi_index(bcoords.T, bshape)
        object.__setattr__(self, "block_of_site", np.ascontiguousarray(bidx, dtype=np.int64))

    @property
    def blocks_per_axis(self) -> int:
        return self.lattice.side // self.block_side

    @property
    def block_count(self) -> int:
        return self.blocks_per_axis ** self.lattice.dim

    @property
    def block_volume(self) -> int:
        return self.block_side ** self.lattice.dim

    def sites_of_block(self, block: int) -> np.ndarray:
        return np.nonzero(self.block_of_site == block)[0]


def mag_grid(n: int) -> "MagGrid":
    if n < 1:
        raise ValueError("n must be a positive integer")
    return MagGrid(n)


@dataclass(frozen=True)
class MagGrid:
    """The n+1 attainable magnetization levels (2i - n)/n of n spins."""

    n: int

    @property
    def values(self) -> np.ndarray:
        i = np.arange(self.n + 1)
        return (2 * i - self.n) / self.n


def ceil_index(t: float, n: int) -> int:
    """Index i of the smallest grid level (2i - n)/n >= t.

    Values within 1e-9 (in index units) below a grid level snap to it, so
    binary-representable targets like 0.2 at n = 10 land on their own level.
    """
    if not (-1.0 <= t <= 1.0):
        raise ValueError("t must lie in [-1, 1]")
    i = int(math.ceil(n * (t + 1.0) / 2.0 - 1e-9))
    return min(max(i, 0), n)


def ceil_to_grid(t: float, n: int) -> float:
    """Best approximation of t from above on the n-spin magnetization grid."""
    i = ceil_index(t, n)
    return (2 * i - n) / n


def block_spin_sums(config: SpinConfig, partition: BlockPartition) -> np.ndarray:
    """Integer spin sum per block (exact; no division)."""
    return np.bincount(
        partition.block_of_site,
        weights=config.spins.astype(np.float64),
        minlength=partition.block_count,
    ).astype(np.int64)


def block_average(field_or_config, partition: BlockPartition) -> np.ndarray:
    """Per-block mean of a spin configuration or a real site field."""
    if isinstance(field_or_config, SpinConfig):
        vals = field_or_config.spins.astype(np.float64)
    else:
        vals = np.asarray(field_or_config, dtype=np.float64)
        if vals.shape != (partition.lattice.site_count,):
            raise ValueError("field length must equal site_count")
    sums = np.bincount(
        partition.block_of_site, weights=vals, minlength=partition.block_count
    )
    return sums / partition.block_volume


def constraint_levels(u_profile, partition: BlockPartition) -> np.ndarray:
    """Required integer spin sum per block: the grid ceiling of the block
    target, expressed as 2i - |block|."""
    u = np.asarray(u_profile, dtype=np.float64)
    if u.ndim == 0:
        u = np.full(partition.block_count, float(u))
    if u.shape != (partition.block_count,):
        raise ValueError("u_profile must be scalar or one value per block")
    vol = partition.block_volume
    return np.array([2 * ceil_index(t, vol) - vol for t in u], dtype=np.int64)


def constraint_set_membership(
    config: SpinConfig, partition: BlockPartition, u_profile
) -> bool:
    """True iff every block magnetization equals the grid ceiling of the
    block-averaged target (integer comparison, no float equality)."""
    required = constraint_levels(u_profile, partition)
    return bool(np.array_equal(block_spin_sums(config, partition), required))
