"""MCMC engines: single-flip Metropolis/Glauber dynamics for the Kac model
and Swendsen-Wang cluster updates for the plain nearest-neighbour model.

Sweeps visit sites in fixed raster order by default (a random-site order
is available behind a flag); together with the counter-based streams this
makes every trajectory a deterministic function of (spec, seed).  The Kac
term is handled by single-flip dynamics only; cluster moves are reserved
for the pure nn model, where plus/minus boundaries enter as a ghost site.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .energy import EnergyState, ModelParams
from .hist import DEFAULT_BINS, Histogram, from_samples
from .lattice import SpinConfig, ball_offsets
from .rng import philox_stream

DYNAMICS = ("metropolis", "glauber", "swendsen-wang")


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _sweep_flip_nn(spins, nbr_flat, nbr_start, local_field, beta, uniforms, glauber, order):
    acc = 0
    de_total = 0.0
    for idx in range(order.shape[0]):
        x = order[idx]
        s = spins[x]
        nb = 0.0
        for k in range(nbr_start[x], nbr_start[x + 1]):
            nb += spins[nbr_flat[k]]
        de = 2.0 * s * (nb + local_field[x])
        if glauber:
            ok = uniforms[idx] < 1.0 / (1.0 + math.exp(beta * de))
        else:
            ok = de <= 0.0 or uniforms[idx] < math.exp(-beta * de)
        if ok:
            spins[x] = -s
            acc += 1
            de_total += de
    return acc, de_total


@njit(cache=True, nogil=True)
def _sweep_flip_kac(
    spins, kfield, alpha, off_rows, off_cols, weights, sum_w2, side, dim,
    nbr_flat, nbr_start, local_field, beta, uniforms, glauber, order,
):
    acc = 0
    de_nn_total = 0.0
    de_k_total = 0.0
    m = weights.shape[0]
    ys = np.empty(m, dtype=np.int64)
    for idx in range(order.shape[0]):
        x = order[idx]
        s = spins[x]
        nb = 0.0
        for k in range(nbr_start[x], nbr_start[x + 1]):
            nb += spins[nbr_flat[k]]
        de_nn = 2.0 * s * (nb + local_field[x])
        if dim == 1:
            for k in range(m):
                ys[k] = (x + off_rows[k]) % side
        else:
            xi = x // side
            xj = x - xi * side
            for k in range(m):
                ys[k] = ((xi + off_rows[k]) % side) * side + (xj + off_cols[k]) % side
        resid = 0.0
        for k in range(m):
            resid += weights[k] * (kfield[ys[k]] - alpha[ys[k]])
        de_k = -4.0 * s * resid + 4.0 * sum_w2
        de = de_nn + de_k
        if glauber:
            ok = uniforms[idx] < 1.0 / (1.0 + math.exp(beta * de))
        else:
            ok = de <= 0.0 or uniforms[idx] < math.exp(-beta * de)
        if ok:
            two_s = 2.0 * s
            for k in range(m):
                kfield[ys[k]] -= two_s * weights[k]
            spins[x] = -s
            acc += 1
            de_nn_total += de_nn
            de_k_total += de_k
    return acc, de_nn_total, de_k_total


@njit(cache=True, nogil=True)
def _uf_find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True, nogil=True)
def _sw_update(
    spins, edges_a, edges_b, p, ghost_sites, ghost_degree, ghost_tau,
    u_edges, u_ghost, u_signs,
):
    n = spins.shape[0]
    parent = np.arange(n + 1)
    for e in range(edges_a.shape[0]):
        a = edges_a[e]
        b = edges_b[e]
        if spins[a] == spins[b] and u_edges[e] < p:
            ra = _uf_find(parent, a)
            rb = _uf_find(parent, b)
            if ra != rb:
                parent[ra] = rb
    ghost = n
    for i in range(ghost_sites.shape[0]):
        x = ghost_sites[i]
        if spins[x] == ghost_tau:
            p_any = 1.0 - (1.0 - p) ** ghost_degree[i]
            if u_ghost[i] < p_any:
                rx = _uf_find(parent, x)
                rg = _uf_find(parent, ghost)
                if rx != rg:
                    parent[rx] = rg
    rg = _uf_find(parent, ghost)
    for x in range(n):
        r = _uf_find(parent, x)
        if r == rg and ghost_tau != 0:
            spins[x] = ghost_tau
        else:
            spins[x] = 1 if u_signs[r] < 0.5 else -1


# ---------------------------------------------------------------------------
# sweep drivers
# ---------------------------------------------------------------------------


def _site_order(n: int, rng: np.random.Generator | None, random_order: bool) -> np.ndarray:
    if random_order:
        return rng.permutation(n).astype(np.int64)
    return np.arange(n, dtype=np.int64)


def mcmc_sweep(
    state: EnergyState,
    dynamics: str,
    rng: np.random.Generator,
    random_order: bool = False,
) -> int:
    """One full sweep of single-site updates; returns the acceptance count.

    Metropolis accepts with min(1, e^{-beta dH}), Glauber with the
    heat-bath rate 1/(1 + e^{beta dH}); both satisfy detailed balance for
    the Gibbs measure defined by the state's parameters.
    """
    if dynamics not in ("metropolis", "glauber"):
        raise ValueError("mcmc_sweep drives metropolis or glauber dynamics")
    p = state.params
    n = p.lattice.site_count
    order = _site_order(n, rng, random_order)
    uniforms = rng.random(n)
    glauber = dynamics == "glauber"
    if p.kernel is None:
        acc, de = _sweep_flip_nn(
            state.spins, p.nbr_flat, p.nbr_start, p.local_field,
            p.beta, uniforms, glauber, order,
        )
        state.e_nn += de
        return int(acc)
    k = p.kernel
    if p.lattice.dim == 1:
        rows = np.ascontiguousarray(k.offsets[:, 0])
        cols = rows
    elif p.lattice.dim == 2:
        rows = np.ascontiguousarray(k.offsets[:, 0])
        cols = np.ascontiguousarray(k.offsets[:, 1])
    else:
        raise NotImplementedError("flip dynamics implemented for d = 1, 2")
    acc, de_nn, de_k = _sweep_flip_kac(
        state.spins, state.kac, p.alpha_field, rows, cols, k.weights,
        k.sum_sq_weights(), p.lattice.side, p.lattice.dim,
        p.nbr_flat, p.nbr_start, p.local_field, p.beta, uniforms, glauber, order,
    )
    state.e_nn += de_nn
    state.e_kac += de_k
    return int(acc)


def sw_sweep(state: EnergyState, rng: np.random.Generator) -> None:
    """One Swendsen-Wang update: open bonds on aligned edges with
    probability 1 - e^{-2 beta}, resample cluster signs uniformly; clusters
    touching a plus/minus boundary keep the boundary sign."""
    p = state.params
    if p.kernel is not None:
        raise ValueError("cluster updates are defined for the pure nn model only")
    if p.external_h != 0.0:
        raise ValueError("cluster updates require zero external field")
    if p.boundary == "periodic":
        raise ValueError("cluster updates run on free/plus/minus boxes")
    bond_p = 1.0 - math.exp(-2.0 * p.beta)
    n = p.lattice.site_count
    ring = p.local_field
    ghost_sites = np.nonzero(ring != 0.0)[0].astype(np.int64)
    ghost_degree = np.abs(ring[ghost_sites])
    tau = 0
    if p.boundary == "plus":
        tau = 1
    elif p.boundary == "minus":
        tau = -1
    u_edges = rng.random(len(p.edges))
    u_ghost = rng.random(len(ghost_sites))
    u_signs = rng.random(n + 1)
    _sw_update(
        state.spins,
        np.ascontiguousarray(p.edges[:, 0]),
        np.ascontiguousarray(p.edges[:, 1]),
        bond_p, ghost_sites, ghost_degree, tau, u_edges, u_ghost, u_signs,
    )
    # cluster moves touch everything; refresh the O(E) energy cache
    s = state.spins.astype(np.float64)
    state.e_nn = float(
        -np.sum(s[p.edges[:, 0]] * s[p.edges[:, 1]]) - np.sum(p.local_field * s)
    )


# ---------------------------------------------------------------------------
# chains and experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainSpec:
    """A fully reproducible chain: everything the trajectory depends on."""

    params: ModelParams
    sweeps: int
    burn_in: int | None = None
    thinning: int = 1
    seed: int = 0
    dynamics: str = "glauber"
    replicas: int = 1
    random_site_order: bool = False
    store_configs: bool = False

    def __post_init__(self):
        if self.dynamics not in DYNAMICS:
            raise ValueError(f"dynamics must be one of {DYNAMICS}")
        if self.sweeps < 0 or self.thinning < 1 or self.replicas < 1:
            raise ValueError("counts must be positive")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("counts must be positive")
        if self.dynamics == "swendsen-wang":
            if self.params.kernel is not None:
                raise ValueError("swendsen-wang requires the kernel to be absent")
            if self.params.external_h != 0.0:
                raise ValueError("swendsen-wang requires h = 0")


_OBSERVABLES = ("magnetization", "abs_magnetization", "energy", "config_index")
_CONFIG_INDEX_CAP = 20


@dataclass
class ChainStats:
    """Deterministic summary of one chain (or a replica merge)."""

    sample_count: int
    means: dict
    variances: dict
    acceptance_rate: float | None
    burn_in_used: int
    autocorr_time: float | None
    config_counts: np.ndarray | None
    configs: list | None
    seeds: tuple
    empty: bool = False


def integrated_autocorr_time(series: np.ndarray, c: float = 5.0) -> float:
    """Sokal-windowed integrated autocorrelation time of a scalar series."""
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    if n < 4:
        return 1.0
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var == 0.0:
        return 1.0
    tau = 1.0
    acc = 1.0
    for k in range(1, n // 2):
        rho = float(np.dot(x[:-k], x[k:])) / ((n - k) * var)
        acc += 2.0 * rho
        tau = acc
        if k >= c * tau:
            break
    return max(tau, 1.0)


def _observe(name: str, state: EnergyState) -> float:
    if name == "magnetization":
        return float(state.spins.mean())
    if name == "abs_magnetization":
        return float(abs(state.spins.mean()))
    if name == "energy":
        return state.total_energy()
    raise ValueError(f"unknown observable {name!r}")


_POWERS: dict[int, np.ndarray] = {}


def _config_bits(spins: np.ndarray) -> int:
    n = len(spins)
    if n not in _POWERS:
        _POWERS[n] = 1 << np.arange(n, dtype=np.int64)
    return int(np.dot((spins > 0).astype(np.int64), _POWERS[n]))


def _one_sweep(state: EnergyState, spec: ChainSpec, rng) -> int | None:
    if spec.dynamics == "swendsen-wang":
        sw_sweep(state, rng)
        return None
    return mcmc_sweep(state, spec.dynamics, rng, spec.random_site_order)


def _run_replica(spec: ChainSpec, observables, stream: int) -> ChainStats:
    rng = philox_stream(spec.seed, stream)
    state = EnergyState.create(
        spec.params, SpinConfig.random(spec.params.lattice, rng)
    )
    n = spec.params.lattice.site_count

    want_counts = "config_index" in observables
    if want_counts and n > _CONFIG_INDEX_CAP:
        raise ValueError(
            f"config_index requires site_count <= {_CONFIG_INDEX_CAP}"
        )
    scalar_obs = [o for o in observables if o != "config_index"]
    for o in scalar_obs:
        if o not in _OBSERVABLES:
            raise ValueError(f"unknown observable {o!r}")

    burn_in = spec.burn_in
    mag_series = []
    if burn_in is None:
        # pilot pass: burn-in defaults to 10x the measured autocorrelation
        pilot = max(200, 16)
        pilot_rng = philox_stream(spec.seed, stream ^ (1 << 32))
        pilot_state = EnergyState.create(
            spec.params, SpinConfig.random(spec.params.lattice, pilot_rng)
        )
        series = np.empty(pilot)
        for i in range(pilot):
            _one_sweep(pilot_state, spec, pilot_rng)
            series[i] = pilot_state.spins.mean()
        tau = integrated_autocorr_time(series[pilot // 4 :])
        burn_in = int(math.ceil(10.0 * tau))

    accepted = 0
    proposed = 0
    for _ in range(burn_in):
        _one_sweep(state, spec, rng)

    counts = np.zeros(1 << n, dtype=np.int64) if want_counts else None
    welford = {o: [0, 0.0, 0.0] for o in scalar_obs}  # count, mean, M2
    configs = [] if spec.store_configs else None
    for _ in range(spec.sweeps):
        for _ in range(spec.thinning):
            acc = _one_sweep(state, spec, rng)
            if acc is not None:
                accepted += acc
                proposed += n
        if want_counts:
            counts[_config_bits(state.spins)] += 1
        for o in scalar_obs:
            v = _observe(o, state)
            w = welford[o]
            w[0] += 1
            delta = v - w[1]
            w[1] += delta / w[0]
            w[2] += delta * (v - w[1])
        if configs is not None:
            configs.append(state.spins.copy())
        mag_series.append(float(state.spins.mean()))

    means = {o: w[1] for o, w in welford.items()}
    variances = {o: (w[2] / w[0] if w[0] else 0.0) for o, w in welford.items()}
    tau = integrated_autocorr_time(np.array(mag_series)) if len(mag_series) >= 8 else None
    return ChainStats(
        sample_count=spec.sweeps,
        means=means,
        variances=variances,
        acceptance_rate=(accepted / proposed) if proposed else None,
        burn_in_used=burn_in,
        autocorr_time=tau,
        config_counts=counts,
        configs=configs,
        seeds=(spec.seed, stream),
        empty=spec.sweeps == 0,
    )


def _merge_stats(parts: list[ChainStats]) -> ChainStats:
    if len(parts) == 1:
        return parts[0]
    total = sum(p.sample_count for p in parts)
    means = {}
    variances = {}
    for o in parts[0].means:
        m = sum(p.sample_count * p.means[o] for p in parts) / total if total else 0.0
        means[o] = m
        if total:
            ss = sum(
                p.sample_count * (p.variances[o] + (p.means[o] - m) ** 2)
                for p in parts
            )
            variances[o] = ss / total
        else:
            variances[o] = 0.0
    counts = None
    if parts[0].config_counts is not None:
        counts = np.sum([p.config_counts for p in parts], axis=0)
    configs = None
    if parts[0].configs is not None:
        configs = [c for p in parts for c in p.configs]
    rates = [p.acceptance_rate for p in parts if p.acceptance_rate is not None]
    taus = [p.autocorr_time for p in parts if p.autocorr_time is not None]
    return ChainStats(
        sample_count=total,
        means=means,
        variances=variances,
        acceptance_rate=float(np.mean(rates)) if rates else None,
        burn_in_used=parts[0].burn_in_used,
        autocorr_time=float(np.mean(taus)) if taus else None,
        config_counts=counts,
        configs=configs,
        seeds=tuple(s for p in parts for s in p.seeds),
        empty=all(p.empty for p in parts),
    )


def run_experiment(spec: ChainSpec, observables=("magnetization",)) -> ChainStats:
    """Run burn-in, thinned sampling, and replica merging.

    Replica k draws from stream k + 1 of the spec seed; merged output is
    ordered by replica index, so it does not depend on scheduling.
    """
    parts = [
        _run_replica(spec, tuple(observables), r + 1) for r in range(spec.replicas)
    ]
    return _merge_stats(parts)


# ---------------------------------------------------------------------------
# pure-phase block-magnetization laws
# ---------------------------------------------------------------------------


def sample_pure_phase_law(
    beta: float,
    tau: str,
    radius: float,
    box_side: int,
    sweeps: int,
    seed: int,
    g=None,
    burn_in: int = 100,
    thinning: int = 1,
    n_bins: int = DEFAULT_BINS,
    external_h: float | None = None,
):
    """Empirical law of g(m_{B_R}) at the center of a box_side^2 box under
    the nn model with tau in {"+", "-"} boundary (Swendsen-Wang), or under
    the field-matched measure when `external_h` is given (Glauber).

    The box must satisfy box_side >= 4 R so the observation ball is well
    separated from the boundary.  Returns (Histogram, mean of g values).
    """
    from .lattice import TorusLattice

    if box_side < 4 * radius:
        raise ValueError("box too small: need box_side >= 4 R")
    lat = TorusLattice(2, box_side)
    if external_h is None:
        boundary = {"+": "plus", "-": "minus"}.get(tau)
        if boundary is None:
            raise ValueError("tau must be '+' or '-'")
        params = ModelParams(beta=beta, lattice=lat, boundary=boundary)
        dynamics = "swendsen-wang"
    else:
        params = ModelParams(
            beta=beta, lattice=lat, external_h=external_h, boundary="free"
        )
        dynamics = "glauber"
    rng = philox_stream(seed, 1)
    state = EnergyState.create(params, SpinConfig.random(lat, rng))

    center = lat.site_at((box_side // 2, box_side // 2))
    if radius > 0:
        offs = ball_offsets(lat, radius)
        cc = np.array(lat.coords(center))
        ball = np.ravel_multi_index((offs + cc).T % box_side, lat.shape)
    else:
        ball = np.array([center])

    spec = ChainSpec(params=params, sweeps=0, seed=seed, dynamics=dynamics)
    for _ in range(burn_in):
        _one_sweep(state, spec, rng)
    vals = np.empty(sweeps)
    for i in range(sweeps):
        for _ in range(thinning):
            _one_sweep(state, spec, rng)
        m = float(state.spins[ball].mean())
        vals[i] = g(m) if g is not None else m
    return from_samples(vals, n_bins), float(vals.mean())
