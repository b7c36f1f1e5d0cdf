"""Shared histogram primitives over [-1, 1]: the common bin grid for
block-magnetization laws, mixtures, and the Wasserstein-1 comparison.

Bins are centered on the regular grid -1.00, -0.99, ..., 1.00 (201 bins of
width 0.01 by default) so that attainable dyadic magnetization values and
Dirac references land on bin centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BINS = 201


def bin_centers(n_bins: int = DEFAULT_BINS) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n_bins)


@dataclass(frozen=True)
class Histogram:
    """Probability masses on the shared bin-center grid."""

    masses: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=np.float64)
        if m.ndim != 1 or len(m) < 2:
            raise ValueError("masses must be a 1-d array on the bin grid")
        object.__setattr__(self, "masses", m)

    @property
    def n_bins(self) -> int:
        return len(self.masses)

    @property
    def centers(self) -> np.ndarray:
        return bin_centers(self.n_bins)

    @property
    def spacing(self) -> float:
        return 2.0 / (self.n_bins - 1)

    def total(self) -> float:
        return float(self.masses.sum())

    def mean(self) -> float:
        return float(np.dot(self.masses, self.centers) / self.total())

    def expect(self, g) -> float:
        """< nu, g >: expectation of a function of the magnetization."""
        return float(np.dot(self.masses, g(self.centers)) / self.total())

    def mass_above(self, split: float = 0.0) -> float:
        """Mass strictly above `split`; a bin centered exactly at the split
        contributes half its mass (keeps symmetric laws at exactly 1/2)."""
        c = self.centers
        above = float(self.masses[c > split + 1e-12].sum())
        on = float(self.masses[np.abs(c - split) <= 1e-12].sum())
        return (above + 0.5 * on) / self.total()


def from_samples(values: np.ndarray, n_bins: int = DEFAULT_BINS) -> Histogram:
    """Histogram by nearest-bin-center assignment of values in [-1, 1]."""
    v = np.clip(np.asarray(values, dtype=np.float64).ravel(), -1.0, 1.0)
    idx = np.rint((v + 1.0) / (2.0 / (n_bins - 1))).astype(np.int64)
    masses = np.bincount(idx, minlength=n_bins).astype(np.float64)
    return Histogram(masses / masses.sum())


def dirac(value: float, n_bins: int = DEFAULT_BINS) -> Histogram:
    """Point mass at the bin center nearest to `value`."""
    masses = np.zeros(n_bins)
    idx = int(np.rint((np.clip(value, -1, 1) + 1.0) / (2.0 / (n_bins - 1))))
    masses[idx] = 1.0
    return Histogram(masses)


def mix(parts: list[tuple[float, Histogram]]) -> Histogram:
    """Convex combination of histograms on a shared grid."""
    if not parts:
        raise ValueError("empty mixture")
    n = parts[0][1].n_bins
    out = np.zeros(n)
    for w, h in parts:
        if h.n_bins != n:
            raise ValueError("mixture components use different bin grids")
        out += w * h.masses / h.total()
    return Histogram(out)


def wasserstein1(a: Histogram, b: Histogram) -> float:
    """W1 distance on [-1, 1] via the L1 difference of the CDFs."""
    if a.n_bins != b.n_bins:
        raise ValueError("histograms use different bin grids")
    ca = np.cumsum(a.masses / a.total())
    cb = np.cumsum(b.masses / b.total())
    return float(np.sum(np.abs(ca - cb)) * a.spacing)
