"""Empirical phase-mixture statistics: per-macro-cell histograms of
block magnetizations, the test functional L, Wasserstein comparison
against reference mixtures, and the three-regime scan over ball radii.

Estimation pools the ball-averaged field over all sites of a macro cell
and over samples; merging is a histogram sum, so parallel estimation over
samples is order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hist import DEFAULT_BINS, Histogram, bin_centers, dirac, mix, wasserstein1
from .lattice import BlockPartition, SpinConfig, TorusLattice, ball_mask
from .thermo import (
    FreeEnergyCurve,
    ProfileField,
    el_alpha_of_u,
    lambda_mix,
    limit_young_measure,
)


@dataclass(frozen=True)
class EmpiricalYoungMeasure:
    """One histogram per macro cell of the ball-averaged magnetization."""

    partition: BlockPartition
    radius: float
    masses: np.ndarray        # (cells, bins), rows sum to 1
    samples_per_cell: int

    def cell(self, i: int) -> Histogram:
        return Histogram(self.masses[i])

    @property
    def n_cells(self) -> int:
        return self.masses.shape[0]

    def cell_means(self) -> np.ndarray:
        centers = bin_centers(self.masses.shape[1])
        return self.masses @ centers

    def pooled(self) -> Histogram:
        return Histogram(self.masses.mean(axis=0))


def ball_field(config: SpinConfig, radius: float) -> np.ndarray:
    """m_{B_R(x)} at every site (FFT convolution with the ball stencil)."""
    lat = config.lattice
    mask = ball_mask(lat, radius)
    mask /= mask.sum()
    s = config.spins.astype(np.float64).reshape(lat.shape)
    axes = tuple(range(lat.dim))
    out = np.fft.irfftn(
        np.fft.rfftn(s) * np.fft.rfftn(mask), s=lat.shape, axes=axes
    )
    return out.reshape(-1)


def estimate_young(
    samples,
    radius: float,
    partition: BlockPartition,
    n_bins: int = DEFAULT_BINS,
) -> EmpiricalYoungMeasure:
    """Pool the ball-magnetization histogram per macro cell over samples.

    `samples` is an iterable of SpinConfig (or flat +-1 arrays) from one
    chain spec.
    """
    lat = partition.lattice
    cells = partition.block_count
    counts = np.zeros((cells, n_bins), dtype=np.float64)
    width = 2.0 / (n_bins - 1)
    n_samples = 0
    for sample in samples:
        cfg = sample if isinstance(sample, SpinConfig) else SpinConfig(lat, sample)
        f = ball_field(cfg, radius)
        idx = np.rint((np.clip(f, -1, 1) + 1.0) / width).astype(np.int64)
        flat = partition.block_of_site * n_bins + idx
        counts += np.bincount(flat, minlength=cells * n_bins).reshape(cells, n_bins)
        n_samples += 1
    if n_samples == 0:
        raise ValueError("no samples supplied")
    row_sums = counts.sum(axis=1, keepdims=True)
    return EmpiricalYoungMeasure(
        partition=partition,
        radius=radius,
        masses=counts / row_sums,
        samples_per_cell=n_samples,
    )


def eval_L(omega: ProfileField, g, target) -> float:
    """The test functional: cellwise integral of omega(r) g(u(r)), with the
    target a ProfileField, a per-cell real array, or an empirical measure
    (then g is averaged under each cell's histogram)."""
    w = omega.flat()
    if isinstance(target, EmpiricalYoungMeasure):
        if target.n_cells != w.size:
            raise ValueError("omega resolution does not match the measure cells")
        centers = bin_centers(target.masses.shape[1])
        gv = target.masses @ g(centers)
        return float(np.mean(w * gv))
    if isinstance(target, ProfileField):
        vals = target.flat()
    else:
        vals = np.asarray(target, dtype=np.float64).ravel()
    if vals.size != w.size:
        raise ValueError("omega and target resolutions differ")
    return float(np.mean(w * g(vals)))


def compare_measures(
    empirical: EmpiricalYoungMeasure, reference
) -> tuple[np.ndarray, int]:
    """Per-cell Wasserstein-1 distance to a reference (one histogram, or a
    per-cell list); returns (distances, index of the worst cell)."""
    dists = np.empty(empirical.n_cells)
    for i in range(empirical.n_cells):
        ref = reference[i] if isinstance(reference, (list, tuple)) else reference
        dists[i] = wasserstein1(empirical.cell(i), ref)
    return dists, int(np.argmax(dists))


# ---------------------------------------------------------------------------
# mode and mass extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModeSummary:
    positive_mode: float | None
    negative_mode: float | None
    valley: float
    split_at: float
    positive_mass: float
    bimodal: bool


def mode_summary(hist: Histogram, symmetric_split: bool = True) -> ModeSummary:
    """Locate the two side modes and the mass of the positive one.

    The split is at 0 for symmetric targets, else at the histogram minimum
    between the two modes; a histogram is called bimodal when both side
    peaks exceed 1.5x the valley between them.
    """
    c = hist.centers
    m = hist.masses / hist.total()
    pos = c > 0
    neg = c < 0
    p_idx = int(np.argmax(np.where(pos, m, -1.0)))
    n_idx = int(np.argmax(np.where(neg, m, -1.0)))
    between = slice(n_idx, p_idx + 1)
    v_idx = n_idx + int(np.argmin(m[between]))
    valley = float(m[v_idx])
    peak_p, peak_n = float(m[p_idx]), float(m[n_idx])
    bimodal = min(peak_p, peak_n) > 1.5 * valley and peak_p > 0 and peak_n > 0
    split = 0.0 if symmetric_split else float(c[v_idx])
    mass = hist.mass_above(split)
    return ModeSummary(
        positive_mode=float(c[p_idx]) if peak_p > 0 else None,
        negative_mode=float(c[n_idx]) if peak_n > 0 else None,
        valley=valley,
        split_at=split,
        positive_mass=mass,
        bimodal=bimodal,
    )


# ---------------------------------------------------------------------------
# the three-regime experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegimeCellReport:
    cell: int
    radius: float
    u_target: float
    lambda_target: float | None
    positive_mass: float
    modes: ModeSummary
    dist_to_dirac: float          # delta at u(r): the large-R reference
    dist_to_limit_mixture: float  # two-point mixture at +-m_beta
    dist_to_sampled_mixture: float | None  # lambda-mix of supplied laws


@dataclass(frozen=True)
class RegimeReport:
    radii: tuple
    cells: list  # RegimeCellReport per (radius, cell)
    burn_in_used: int
    n_samples: int
    mode_rule: str

    def by_radius(self, radius: float) -> list:
        return [c for c in self.cells if c.radius == radius]


def regime_experiment(
    u_profile: ProfileField,
    beta: float,
    gamma: float,
    radii,
    lattice: TorusLattice,
    curve: FreeEnergyCurve,
    sweeps: int = 200,
    burn_in: int = 1500,
    thinning: int = 10,
    seed: int = 0,
    phase_laws: dict | None = None,
    n_bins: int = DEFAULT_BINS,
) -> RegimeReport:
    """Sample the Kac model at the field fixing u, then score the empirical
    block-magnetization law per macro cell and radius against the three
    references: the point mass at u(r), the two-point mixture at +-m_beta,
    and (when laws for this radius are supplied) the sampled pure-phase
    mixture.

    phase_laws maps radius -> (plus_law, minus_law) from the pure-phase
    sampler.  Asymmetric targets split mode mass at the histogram valley
    rather than at zero.
    """
    from .energy import EnergyState, ModelParams
    from .kernel import build_kernel
    from .rng import philox_stream
    from .sampler import mcmc_sweep

    if lattice.side % u_profile.resolution != 0:
        raise ValueError("macro resolution must divide the lattice side")
    block_side = lattice.side // u_profile.resolution
    partition = BlockPartition(lattice, block_side)

    u_cells = u_profile.flat()
    alpha_cells = np.array([el_alpha_of_u(float(u), curve) for u in u_cells])
    alpha_site = alpha_cells[partition.block_of_site]

    kernel = build_kernel(gamma, lattice)
    params = ModelParams(
        beta=beta, lattice=lattice, kernel=kernel, alpha_field=alpha_site
    )
    rng = philox_stream(seed, 1)
    state = EnergyState.create(params, SpinConfig.random(lattice, rng))
    for _ in range(burn_in):
        mcmc_sweep(state, "glauber", rng)
    configs = []
    for _ in range(sweeps):
        for _ in range(thinning):
            mcmc_sweep(state, "glauber", rng)
        configs.append(state.spins.copy())

    symmetric = bool(np.all(np.abs(u_cells) < 1e-12))
    reports = []
    for radius in radii:
        measure = estimate_young(
            (SpinConfig(lattice, c) for c in configs), radius, partition, n_bins
        )
        sampled_ref = None
        if phase_laws and radius in phase_laws:
            plus_law, minus_law = phase_laws[radius]
        else:
            plus_law = minus_law = None
        for cell in range(measure.n_cells):
            u_r = float(u_cells[cell])
            hist = measure.cell(cell)
            modes = mode_summary(hist, symmetric_split=symmetric)
            lam = (
                lambda_mix(u_r, curve.m_beta)
                if curve.m_beta > 0 and abs(u_r) <= curve.m_beta
                else None
            )
            d_dirac = wasserstein1(hist, dirac(u_r, n_bins))
            d_limit = wasserstein1(hist, limit_young_measure(u_r, curve, n_bins))
            d_sampled = None
            if plus_law is not None and lam is not None:
                sampled_ref = mix([(lam, plus_law), (1.0 - lam, minus_law)])
                d_sampled = wasserstein1(hist, sampled_ref)
            reports.append(
                RegimeCellReport(
                    cell=cell,
                    radius=radius,
                    u_target=u_r,
                    lambda_target=lam,
                    positive_mass=modes.positive_mass,
                    modes=modes,
                    dist_to_dirac=d_dirac,
                    dist_to_limit_mixture=d_limit,
                    dist_to_sampled_mixture=d_sampled,
                )
            )
    return RegimeReport(
        radii=tuple(radii),
        cells=reports,
        burn_in_used=burn_in,
        n_samples=sweeps,
        mode_rule="split at 0 for symmetric targets, else at the valley",
    )
