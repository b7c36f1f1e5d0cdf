"""Energy evaluation for H = H_nn + K and O(support) single-flip updates.

H_nn sums -sigma(x)sigma(y) over unordered nearest-neighbour pairs (each
edge once; side = 2 yields doubled edges).  The quadratic Kac penalty
K = sum_x (I_x - alpha_x)^2 is defined on the periodic torus only.
Plus/minus boundary conditions freeze a ring of +-1 spins outside a free
box and enter as a local boundary field.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernel import KacKernel, kac_field
from .lattice import SpinConfig, TorusLattice

BOUNDARIES = ("periodic", "plus", "minus", "free")


def nn_edges(lattice: TorusLattice, boundary: str) -> np.ndarray:
    """(E, 2) array of nearest-neighbour pairs, each unordered edge once.

    Periodic tori include wrap edges (twice for side = 2, where both
    directions coincide); the other boundaries drop them.
    """
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}")
    periodic = boundary == "periodic"
    coords = lattice.all_coords()
    side = lattice.side
    edges = []
    for axis in range(lattice.dim):
        if periodic:
            keep = np.ones(len(coords), dtype=bool)
        else:
            keep = coords[:, axis] + 1 < side
        shifted = coords[keep].copy()
        shifted[:, axis] = (shifted[:, axis] + 1) % side
        a = np.ravel_multi_index(coords[keep].T, lattice.shape)
        bidx = np.ravel_multi_index(shifted.T, lattice.shape)
        edges.append(np.stack([a, bidx], axis=1))
    return np.concatenate(edges, axis=0).astype(np.int64)


def boundary_field(lattice: TorusLattice, boundary: str) -> np.ndarray:
    """Frozen-ring coupling per site: tau times the number of missing
    neighbour slots (zero for periodic and free)."""
    n = lattice.site_count
    if boundary in ("periodic", "free"):
        return np.zeros(n)
    tau = 1.0 if boundary == "plus" else -1.0
    coords = lattice.all_coords()
    missing = (coords == 0).sum(axis=1) + (coords == lattice.side - 1).sum(axis=1)
    return tau * missing.astype(np.float64)


@dataclass(frozen=True)
class ModelParams:
    """Everything defining one Gibbs measure: beta, the optional Kac kernel
    with its target field alpha, or a uniform external field h for the
    plain nearest-neighbour model."""

    beta: float
    lattice: TorusLattice
    kernel: KacKernel | None = None
    alpha_field: np.ndarray | None = None
    external_h: float = 0.0
    boundary: str = "periodic"
    # derived, filled in __post_init__
    edges: np.ndarray = field(init=False, repr=False)
    local_field: np.ndarray = field(init=False, repr=False)
    nbr_flat: np.ndarray = field(init=False, repr=False)
    nbr_start: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")
        if self.kernel is not None:
            if self.external_h != 0.0:
                raise ValueError("external_h and a Kac kernel are mutually exclusive")
            if self.boundary != "periodic":
                raise ValueError("the Kac penalty is defined on the periodic torus only")
            if self.kernel.lattice != self.lattice:
                raise ValueError("kernel lattice does not match model lattice")
            alpha = np.asarray(self.alpha_field, dtype=np.float64)
            if alpha.ndim == 0:
                alpha = np.full(self.lattice.site_count, float(alpha))
            if alpha.shape != (self.lattice.site_count,):
                raise ValueError("alpha_field must provide one value per site")
            object.__setattr__(self, "alpha_field", np.ascontiguousarray(alpha))
        elif self.alpha_field is not None:
            raise ValueError("alpha_field requires a Kac kernel")

        edges = nn_edges(self.lattice, self.boundary)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(
            self,
            "local_field",
            boundary_field(self.lattice, self.boundary) + self.external_h,
        )
        # CSR neighbour lists (multiplicity as repetition) for flip updates
        n = self.lattice.site_count
        counts = np.zeros(n, dtype=np.int64)
        np.add.at(counts, edges[:, 0], 1)
        np.add.at(counts, edges[:, 1], 1)
        start = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=start[1:])
        flat = np.empty(start[-1], dtype=np.int64)
        cursor = start[:-1].copy()
        for a, b in edges:
            flat[cursor[a]] = b
            cursor[a] += 1
            flat[cursor[b]] = a
            cursor[b] += 1
        object.__setattr__(self, "nbr_flat", flat)
        object.__setattr__(self, "nbr_start", start)


def nn_energy(config: SpinConfig, boundary: str = "periodic", h: float = 0.0) -> float:
    """-sum over unordered nn pairs of sigma sigma', plus boundary and
    field couplings."""
    edges = nn_edges(config.lattice, boundary)
    s = config.spins.astype(np.float64)
    pair = -np.sum(s[edges[:, 0]] * s[edges[:, 1]])
    ring = -np.sum(boundary_field(config.lattice, boundary) * s)
    return float(pair + ring - h * s.sum())


def kac_penalty(config: SpinConfig, kernel: KacKernel, alpha_field) -> float:
    """sum_x (I_x - alpha(x))^2; zero exactly when the Kac average matches
    alpha everywhere."""
    alpha = np.asarray(alpha_field, dtype=np.float64)
    if alpha.ndim == 0:
        alpha = np.full(config.lattice.site_count, float(alpha))
    diff = kac_field(config, kernel) - alpha
    return float(np.sum(diff * diff))


@dataclass
class EnergyState:
    """Mutable simulation state: spins plus cached Kac field and energies.

    Caches track single-flip updates exactly (up to float accumulation);
    `audit` recomputes from scratch and fails hard on disagreement, which
    would indicate an implementation bug.
    """

    params: ModelParams
    spins: np.ndarray
    kac: np.ndarray | None
    e_nn: float
    e_kac: float

    @classmethod
    def create(cls, params: ModelParams, config: SpinConfig) -> "EnergyState":
        if config.lattice != params.lattice:
            raise ValueError("configuration lattice does not match model")
        spins = config.spins.copy()
        e_nn = nn_energy(config, params.boundary, params.external_h)
        if params.kernel is not None:
            kac = kac_field(config, params.kernel)
            diff = kac - params.alpha_field
            e_kac = float(np.sum(diff * diff))
            # boundary coupling is zero on the torus; fold h into local_field
            e_nn = nn_energy(config, params.boundary, 0.0) - float(
                np.sum(params.local_field * spins)
            )
        else:
            kac = None
            e_nn = float(
                -np.sum(
                    spins[params.edges[:, 0]].astype(np.float64)
                    * spins[params.edges[:, 1]]
                )
                - np.sum(params.local_field * spins)
            )
            e_kac = 0.0
        return cls(params=params, spins=spins, kac=kac, e_nn=e_nn, e_kac=e_kac)

    def config(self) -> SpinConfig:
        return SpinConfig(self.params.lattice, self.spins.copy())

    def total_energy(self) -> float:
        return self.e_nn + self.e_kac

    def nn_flip_delta(self, site: int) -> float:
        p = self.params
        s = float(self.spins[site])
        nbrs = p.nbr_flat[p.nbr_start[site] : p.nbr_start[site + 1]]
        return 2.0 * s * (float(self.spins[nbrs].sum()) + p.local_field[site])

    def kac_flip_delta(self, site: int) -> float:
        p = self.params
        if p.kernel is None:
            return 0.0
        k = p.kernel
        coords = np.asarray(p.lattice.coords(site))
        wrapped = np.mod(k.offsets + coords, p.lattice.side)
        ys = np.ravel_multi_index(wrapped.T, p.lattice.shape)
        s = float(self.spins[site])
        resid = self.kac[ys] - p.alpha_field[ys]
        return float(-4.0 * s * np.dot(k.weights, resid) + 4.0 * k.sum_sq_weights())

    def flip_delta(self, site: int) -> float:
        """Energy change of flipping one spin, from the caches."""
        return self.nn_flip_delta(site) + self.kac_flip_delta(site)

    def apply_flip(self, site: int) -> float:
        """Flip a spin, updating the Kac field on its support and both
        cached energies in O(support).  Returns the applied delta."""
        d_nn = self.nn_flip_delta(site)
        d_kac = self.kac_flip_delta(site)
        p = self.params
        s = self.spins[site]
        if p.kernel is not None:
            k = p.kernel
            coords = np.asarray(p.lattice.coords(site))
            wrapped = np.mod(k.offsets + coords, p.lattice.side)
            ys = np.ravel_multi_index(wrapped.T, p.lattice.shape)
            self.kac[ys] -= 2.0 * float(s) * k.weights
        self.spins[site] = -s
        self.e_nn += d_nn
        self.e_kac += d_kac
        return d_nn + d_kac

    def audit(self, rel_tol: float = 1e-9) -> None:
        """Hard consistency check of all caches against recomputation."""
        fresh = EnergyState.create(self.params, self.config())
        scale = max(1.0, abs(fresh.e_nn) + abs(fresh.e_kac))
        if abs(fresh.e_nn - self.e_nn) > rel_tol * scale or abs(
            fresh.e_kac - self.e_kac
        ) > rel_tol * scale:
            raise RuntimeError(
                "energy cache inconsistent with recomputation: "
                f"nn {self.e_nn} vs {fresh.e_nn}, kac {self.e_kac} vs {fresh.e_kac}"
            )
        if self.kac is not None:
            drift = np.max(np.abs(fresh.kac - self.kac))
            if drift > rel_tol * max(1.0, np.max(np.abs(fresh.kac))):
                raise RuntimeError(f"Kac field cache drifted by {drift}")


def total_energy(state: EnergyState) -> float:
    return state.total_energy()


def flip_delta(state: EnergyState, site: int) -> float:
    return state.flip_delta(site)


def apply_flip(state: EnergyState, site: int) -> float:
    return state.apply_flip(site)


def shifted_field_energy(config: SpinConfig, params: ModelParams, u: float) -> float:
    """Alternative decomposition of the Kac Hamiltonian around a reference
    level u: nearest-neighbour part with field h = 2(alpha - u) plus the
    recentred penalty sum (I - u)^2, constants dropped.

    With a discretely normalized kernel and constant alpha this differs
    from the full Hamiltonian by a configuration-independent constant, so
    both produce identical Gibbs weights.
    """
    if params.kernel is None:
        raise ValueError("decomposition requires a Kac model")
    alpha = params.alpha_field
    if np.ptp(alpha) != 0.0:
        raise ValueError("decomposition defined for constant alpha")
    h = 2.0 * (float(alpha[0]) - u)
    ii = kac_field(config, params.kernel)
    quad = float(np.sum((ii - u) ** 2))
    return nn_energy(config, params.boundary, h) + quad
