"""Brute-force oracles at tiny sizes: full enumeration of spin and
random-cluster configurations.

Spin states are enumerated in chunks of bit-unpacked blocks, so the
per-state energy work is vectorized and the high-order bit prefix gives a
natural deterministic partition of the work.  All partition-function
accumulation happens in log space.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numba import njit

from .energy import ModelParams
from .lattice import BlockPartition, constraint_levels

MAX_SPIN_SITES = 24
MAX_FK_EDGES = 20
_CHUNK_BITS = 16
_PROB_GATE = 16


def _log_add(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def _chunk_logsumexp(vals: np.ndarray) -> float:
    m = float(np.max(vals))
    return m + float(np.log(np.sum(np.exp(vals - m))))


@dataclass(frozen=True)
class ExactResult:
    """Exact partition data: log Z, per-magnetization-level canonical log
    sums over the attainable grid, and (size-gated) the full probability
    vector over configurations in bit order."""

    params: ModelParams
    log_z: float
    levels: np.ndarray            # magnetization values (2i - N)/N
    log_canonical: np.ndarray     # log sum of e^{-beta H} at each level
    probabilities: np.ndarray | None

    def canonical_resum(self) -> float:
        """log Z recomputed from the canonical sums (exact identity)."""
        out = -np.inf
        for v in self.log_canonical:
            out = _log_add(out, float(v))
        return out


def _spin_chunks(n: int):
    total = 1 << n
    step = min(total, 1 << _CHUNK_BITS)
    for start in range(0, total, step):
        states = np.arange(start, start + step, dtype=np.uint32)
        bits = (states[:, None] >> np.arange(n, dtype=np.uint32)[None, :]) & 1
        yield start, (2 * bits.astype(np.int8) - 1)


def _chunk_energies(spins: np.ndarray, params: ModelParams) -> np.ndarray:
    e0 = params.edges[:, 0]
    e1 = params.edges[:, 1]
    pair = (spins[:, e0].astype(np.int32) * spins[:, e1]).sum(axis=1)
    energy = -pair.astype(np.float64)
    energy -= spins.astype(np.float64) @ params.local_field
    if params.kernel is not None:
        w = params.kernel.dense_matrix()
        ii = spins.astype(np.float64) @ w.T
        energy += ((ii - params.alpha_field[None, :]) ** 2).sum(axis=1)
    return energy


def enumerate_gibbs(params: ModelParams, store_probabilities: bool | None = None) -> ExactResult:
    """Exact log Z and canonical sums by full enumeration (site_count <= 24)."""
    n = params.lattice.site_count
    if n > MAX_SPIN_SITES:
        raise ValueError(f"enumeration capped at {MAX_SPIN_SITES} sites, got {n}")
    if store_probabilities is None:
        store_probabilities = n <= _PROB_GATE
    elif store_probabilities and n > _PROB_GATE:
        raise ValueError(f"probability vector storage gated at {_PROB_GATE} sites")

    beta = params.beta
    log_z = -np.inf
    energies = np.empty(1 << n) if store_probabilities else None

    log_canonical = np.full(n + 1, -np.inf)
    for start, spins in _spin_chunks(n):
        e = _chunk_energies(spins, params)
        if energies is not None:
            energies[start : start + len(e)] = e
        logw = -beta * e
        log_z = _log_add(log_z, _chunk_logsumexp(logw))
        lvl = (spins.sum(axis=1, dtype=np.int32) + n) // 2
        for k in np.unique(lvl):
            log_canonical[k] = _log_add(
                log_canonical[k], _chunk_logsumexp(logw[lvl == k])
            )

    probs = None
    if energies is not None:
        probs = np.exp(-beta * energies - log_z)

    levels = (2 * np.arange(n + 1) - n) / n
    return ExactResult(
        params=params,
        log_z=log_z,
        levels=levels,
        log_canonical=log_canonical,
        probabilities=probs,
    )


def finite_free_energy(params: ModelParams, u: float, result: ExactResult | None = None) -> float:
    """Finite-volume free energy at magnetization u for the plain nn model,
    linearly interpolated between the two adjacent attainable levels."""
    if params.kernel is not None:
        raise ValueError("finite_free_energy is defined for the pure nn model")
    if not (-1.0 <= u <= 1.0):
        raise ValueError("u must lie in [-1, 1]")
    if params.beta <= 0:
        raise ValueError("finite_free_energy requires beta > 0")
    if result is None:
        result = enumerate_gibbs(params, store_probabilities=False)
    n = params.lattice.site_count
    f_vals = -result.log_canonical / (params.beta * n)
    x = (u + 1.0) * n / 2.0
    lo = int(np.floor(x))
    hi = min(lo + 1, n)
    lo = min(lo, n)
    if lo == hi:
        return float(f_vals[lo])
    t = x - lo
    return float((1.0 - t) * f_vals[lo] + t * f_vals[hi])


def ld_probability(
    params: ModelParams, partition: BlockPartition, u_profile
) -> float:
    """Exact Gibbs probability of the block-constraint set: every block
    magnetization equals the grid ceiling of its target."""
    n = params.lattice.site_count
    if n > MAX_SPIN_SITES:
        raise ValueError(f"enumeration capped at {MAX_SPIN_SITES} sites, got {n}")
    required = constraint_levels(u_profile, partition)
    indicator = np.zeros((n, partition.block_count))
    indicator[np.arange(n), partition.block_of_site] = 1.0

    beta = params.beta
    log_z = -np.inf
    log_num = -np.inf
    for _, spins in _spin_chunks(n):
        e = _chunk_energies(spins, params)
        logw = -beta * e
        log_z = _log_add(log_z, _chunk_logsumexp(logw))
        sums = spins.astype(np.float64) @ indicator
        ok = np.all(np.abs(sums - required[None, :]) < 0.5, axis=1)
        if np.any(ok):
            log_num = _log_add(log_num, _chunk_logsumexp(logw[ok]))
    if log_num == -np.inf:
        return 0.0
    return float(np.exp(log_num - log_z))


# ---------------------------------------------------------------------------
# Random-cluster enumeration
# ---------------------------------------------------------------------------


@njit(cache=True)
def _fk_scan(n_vertices, edges_a, edges_b, n_configs):
    n_open = np.zeros(n_configs, dtype=np.uint8)
    clusters = np.zeros(n_configs, dtype=np.uint8)
    parent = np.empty(n_vertices, dtype=np.int64)
    n_edges = len(edges_a)
    for cfg in range(n_configs):
        for v in range(n_vertices):
            parent[v] = v
        o = 0
        for e in range(n_edges):
            if (cfg >> e) & 1:
                o += 1
                a = edges_a[e]
                while parent[a] != a:
                    a = parent[a]
                b = edges_b[e]
                while parent[b] != b:
                    b = parent[b]
                if a != b:
                    parent[a] = b
        cl = 0
        for v in range(n_vertices):
            if parent[v] == v:
                cl += 1
        n_open[cfg] = o
        clusters[cfg] = cl
    return n_open, clusters


def _cluster_labels(n_vertices: int, edges, cfg: int) -> np.ndarray:
    parent = list(range(n_vertices))

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for e, (a, b) in enumerate(edges):
        if (cfg >> e) & 1:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
    return np.array([find(v) for v in range(n_vertices)])


@dataclass(frozen=True)
class FkTable:
    """Exact random-cluster distribution over all 2^E edge configurations,
    in bit order (bit e = edge e open)."""

    n_vertices: int
    edges: tuple[tuple[int, int], ...]
    p: float
    probabilities: np.ndarray
    n_open: np.ndarray
    clusters: np.ndarray

    def event_probability(self, event) -> float:
        """Probability of a predicate on edge configurations; `event` takes
        the open-edge bitmask."""
        total = 0.0
        for cfg, prob in enumerate(self.probabilities):
            if event(cfg):
                total += prob
        return float(total)

    def edge_marginals(self) -> np.ndarray:
        out = np.zeros(len(self.edges))
        for e in range(len(self.edges)):
            mask = (np.arange(len(self.probabilities)) >> e) & 1
            out[e] = float(np.sum(self.probabilities[mask == 1]))
        return out


def enumerate_fk(n_vertices: int, edges, p: float) -> FkTable:
    """Exact table of weights p^#open (1-p)^#closed 2^clusters, normalized."""
    edges = tuple((int(a), int(b)) for a, b in edges)
    n_edges = len(edges)
    if n_edges > MAX_FK_EDGES:
        raise ValueError(f"FK enumeration capped at {MAX_FK_EDGES} edges, got {n_edges}")
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must lie in [0, 1]")
    n_configs = 1 << n_edges
    ea = np.array([e[0] for e in edges], dtype=np.int64)
    eb = np.array([e[1] for e in edges], dtype=np.int64)
    n_open, clusters = _fk_scan(n_vertices, ea, eb, n_configs)
    weights = (
        np.power(p, n_open.astype(np.float64))
        * np.power(1.0 - p, (n_edges - n_open).astype(np.float64))
        * np.exp2(clusters.astype(np.float64))
    )
    z = weights.sum()
    return FkTable(
        n_vertices=n_vertices,
        edges=edges,
        p=p,
        probabilities=weights / z,
        n_open=n_open,
        clusters=clusters,
    )


def es_spin_marginal(table: FkTable) -> np.ndarray:
    """Spin marginal of the Edwards-Sokal coupling built on the exact FK
    table: given omega, spins are uniform and independent per cluster.

    Returns probabilities over all 2^V spin configurations in bit order
    (bit v set = spin +1 at vertex v).
    """
    v = table.n_vertices
    marg = np.zeros(1 << v)
    for cfg, prob in enumerate(table.probabilities):
        labels = _cluster_labels(v, table.edges, cfg)
        roots = sorted(set(labels.tolist()))
        share = prob / (1 << len(roots))
        for signs in itertools.product((0, 1), repeat=len(roots)):
            sign_of = dict(zip(roots, signs))
            idx = 0
            for vertex in range(v):
                idx |= sign_of[labels[vertex]] << vertex
            marg[idx] += share
    return marg


def ising_exact_distribution(params: ModelParams) -> np.ndarray:
    """Exact Gibbs probabilities over spin configurations in the same bit
    order as `es_spin_marginal` (bit v set = spin +1)."""
    res = enumerate_gibbs(params, store_probabilities=True)
    return res.probabilities
