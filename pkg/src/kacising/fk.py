"""Circuit and random-cluster diagnostics: sign circuits in box annuli,
bad/good box classification against pure-phase references, bad-Kac-average
density, dual-lattice circuit detection on planar rectangles, and the
Bernoulli stochastic-domination comparison.

Box frames carry an annulus of width ceil(sqrt(K)) (integerized margin);
circuit existence is decidable from the annulus alone.  Dual-lattice
bookkeeping applies to free-boundary rectangles only.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .kernel import KacKernel, kac_field
from .lattice import SpinConfig


def beta_threshold(beta: float) -> bool:
    """True iff 3(1 - rho(beta)) < 1, with rho = (1-e^{-2b})/(1+e^{-2b});
    algebraically identical to beta > log sqrt(5)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    rho = (1.0 - math.exp(-2.0 * beta)) / (1.0 + math.exp(-2.0 * beta))
    return 3.0 * (1.0 - rho) < 1.0


def bernoulli_rho(beta: float) -> float:
    return (1.0 - math.exp(-2.0 * beta)) / (1.0 + math.exp(-2.0 * beta))


# ---------------------------------------------------------------------------
# box frames and sign circuits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxFrame:
    """A K x K box with a concentric inner box at integer margin
    ceil(sqrt(K)) (overridable) and an optional second margin inside."""

    size: int
    margin: int | None = None
    inner_margin: int | None = None

    def __post_init__(self):
        m = self.margin if self.margin is not None else math.ceil(math.sqrt(self.size))
        if m < 1:
            raise ValueError("margin must be positive")
        if self.size - 2 * m < 1:
            raise ValueError(
                f"margin {m} leaves no inner box inside size {self.size}"
            )
        object.__setattr__(self, "margin", m)
        if self.inner_margin is not None:
            if self.inner_margin < 1 or self.inner_size - 2 * self.inner_margin < 1:
                raise ValueError("second margin leaves no innermost box")

    @property
    def inner_size(self) -> int:
        return self.size - 2 * self.margin

    @property
    def innermost_size(self) -> int | None:
        if self.inner_margin is None:
            return None
        return self.inner_size - 2 * self.inner_margin


_FRAME_MASKS: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _frame_masks(frame: BoxFrame):
    """(annulus, outer ring, ring adjacent to the inner box), cached."""
    key = (frame.size, frame.margin)
    if key not in _FRAME_MASKS:
        k, m = frame.size, frame.margin
        lo, hi = m, k - m
        inner = np.zeros((k, k), dtype=bool)
        inner[lo:hi, lo:hi] = True
        annulus = ~inner
        outer = np.zeros((k, k), dtype=bool)
        outer[0, :] = outer[-1, :] = outer[:, 0] = outer[:, -1] = True
        # sites at graph distance 1 of the inner box (diagonal corners of
        # the surrounding ring are distance 2 and excluded)
        near = np.zeros((k, k), dtype=bool)
        near[lo - 1, lo:hi] = True
        near[hi, lo:hi] = True
        near[lo:hi, lo - 1] = True
        near[lo:hi, hi] = True
        _FRAME_MASKS[key] = (annulus, outer, near & annulus)
    return _FRAME_MASKS[key]


def has_spin_circuit(window: np.ndarray, frame: BoxFrame, tau: int) -> bool:
    """Whether a tau-sign circuit separates the box boundary from the inner
    box: no 4-connected path of -tau sites through the annulus joins the
    outermost layer to a site adjacent to the inner box.

    `window` is the (K, K) spin patch of the box; only the annulus is read.
    """
    k = frame.size
    if window.shape != (k, k):
        raise ValueError(f"window must be {k} x {k} for this frame")
    annulus, outer, near_inner = _frame_masks(frame)
    minus = (window == -tau) & annulus
    labels, count = ndimage.label(minus)
    if count == 0:
        return True
    from_outer = set(np.unique(labels[outer & minus])) - {0}
    touching_inner = set(np.unique(labels[near_inner & minus])) - {0}
    return not (from_outer & touching_inner)


def window_of(config: SpinConfig, corner: tuple[int, int], size: int) -> np.ndarray:
    """(size, size) spin patch at a torus corner, wrapping periodically."""
    side = config.lattice.side
    grid = config.spins.reshape(config.lattice.shape)
    rows = (np.arange(size) + corner[0]) % side
    cols = (np.arange(size) + corner[1]) % side
    return grid[np.ix_(rows, cols)]


# ---------------------------------------------------------------------------
# box classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxLabel:
    label: str           # "bad", "good+", "good-"
    deviation_plus: float
    deviation_minus: float
    has_circuit: bool


def classify_box(
    window: np.ndarray,
    frame: BoxFrame,
    zeta: float,
    reference_plus: float,
    reference_minus: float,
    box_average: float | None = None,
) -> BoxLabel:
    """Bad iff no circuit of either sign, or the box average of the local
    observable deviates more than zeta from both pure-phase references.
    Ties at exactly zeta are good, signed by the smaller deviation (then +).

    The default observable is the spin at a site, whose box average is the
    window mean; a precomputed average of another local observable may be
    passed in `box_average`.
    """
    avg = float(window.mean()) if box_average is None else box_average
    dev_p = abs(avg - reference_plus)
    dev_m = abs(avg - reference_minus)
    circuit = has_spin_circuit(window, frame, +1) or has_spin_circuit(window, frame, -1)
    if not circuit or min(dev_p, dev_m) > zeta:
        return BoxLabel("bad", dev_p, dev_m, circuit)
    sign = "+" if dev_p <= dev_m else "-"
    return BoxLabel(f"good{sign}", dev_p, dev_m, circuit)


def classify_boxes(
    config: SpinConfig,
    box_size: int,
    zeta: float,
    reference_plus: float,
    reference_minus: float,
    margin: int | None = None,
) -> list[BoxLabel]:
    """Classify every box of the natural box_size-partition of the torus."""
    side = config.lattice.side
    if side % box_size != 0:
        raise ValueError("box size must divide the lattice side")
    frame = BoxFrame(box_size, margin)
    labels = []
    for bi in range(side // box_size):
        for bj in range(side // box_size):
            window = window_of(config, (bi * box_size, bj * box_size), box_size)
            labels.append(
                classify_box(window, frame, zeta, reference_plus, reference_minus)
            )
    return labels


def label_fractions(labels: list[BoxLabel]) -> dict[str, float]:
    n = len(labels)
    out = {"bad": 0, "good+": 0, "good-": 0}
    for lab in labels:
        out[lab.label] += 1
    return {k: v / n for k, v in out.items()}


def bad_kac_density(config: SpinConfig, kernel: KacKernel, u: float, zeta: float) -> float:
    """Fraction of sites whose Kac average deviates from u by more than zeta."""
    ii = kac_field(config, kernel)
    return float(np.mean(np.abs(ii - u) > zeta))


# ---------------------------------------------------------------------------
# planar rectangles, dual lattice, circuits of open edges
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridGraph:
    """Free-boundary w x h rectangle: vertices row-major, horizontal edges
    then vertical edges, each listed row-major."""

    width: int
    height: int
    edges: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self):
        edges = []
        for y in range(self.height):
            for x in range(self.width):
                v = y * self.width + x
                if x + 1 < self.width:
                    edges.append((v, v + 1))
                if y + 1 < self.height:
                    edges.append((v, v + self.width))
        object.__setattr__(self, "edges", tuple(edges))

    @property
    def n_vertices(self) -> int:
        return self.width * self.height

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def vertex_xy(self, v: int) -> tuple[int, int]:
        return v % self.width, v // self.width


@dataclass(frozen=True)
class FkConfig:
    """Edge occupancies on a rectangle, with the dual view omega*_e = 1 -
    omega_e on the half-integer dual lattice."""

    graph: GridGraph
    open_edges: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.open_edges, dtype=np.int8)
        if o.shape != (self.graph.n_edges,):
            raise ValueError("one occupancy bit per edge required")
        if not np.all((o == 0) | (o == 1)):
            raise ValueError("occupancies must be 0/1")
        object.__setattr__(self, "open_edges", o)

    @classmethod
    def from_bitmask(cls, graph: GridGraph, mask: int) -> "FkConfig":
        bits = np.array(
            [(mask >> e) & 1 for e in range(graph.n_edges)], dtype=np.int8
        )
        return cls(graph, bits)

    def dual(self) -> "FkConfig":
        return FkConfig(self.graph, 1 - self.open_edges)

    def cluster_count(self) -> int:
        parent = list(range(self.graph.n_vertices))

        def find(v):
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        for e, (a, b) in enumerate(self.graph.edges):
            if self.open_edges[e]:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[ra] = rb
        return len({find(v) for v in range(self.graph.n_vertices)})


def _dual_edge_endpoints(graph: GridGraph, e: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Dual edge of primal edge e, as doubled half-integer coordinates
    (2a+1, 2b+1) so everything stays integral."""
    a, b = graph.edges[e]
    ax, ay = graph.vertex_xy(a)
    bx, by = graph.vertex_xy(b)
    if ay == by:  # horizontal edge -> vertical dual edge
        x2 = ax + bx  # = 2*ax + 1
        return (x2, 2 * ay - 1), (x2, 2 * ay + 1)
    y2 = ay + by
    return (2 * ax - 1, y2), (2 * ax + 1, y2)


def _dual_structure(graph: GridGraph):
    """Dual vertex set (faces, incl. rim faces), incidence lists, and the
    inner-boundary seed set (dual vertices with a neighbour outside)."""
    verts: dict[tuple[int, int], list[tuple[int, tuple[int, int]]]] = {}
    for e in range(graph.n_edges):
        p, q = _dual_edge_endpoints(graph, e)
        verts.setdefault(p, []).append((e, q))
        verts.setdefault(q, []).append((e, p))
    boundary = set()
    for v, inc in verts.items():
        x, y = v
        for nb in ((x + 2, y), (x - 2, y), (x, y + 2), (x, y - 2)):
            if nb not in verts:
                boundary.add(v)
                break
    return verts, boundary


def penetrating_dual_edges(config: FkConfig) -> set[int]:
    """Primal indices of dual-open edges connected to the dual inner
    boundary by dual-open paths ("penetrating from the outside")."""
    graph = config.graph
    verts, boundary = _dual_structure(graph)
    dual_open = 1 - config.open_edges
    seen_v = set(boundary)
    seen_e: set[int] = set()
    queue = deque(boundary)
    while queue:
        v = queue.popleft()
        for e, w in verts[v]:
            if dual_open[e]:
                seen_e.add(e)
                if w not in seen_v:
                    seen_v.add(w)
                    queue.append(w)
    return seen_e


def inner_box_dual_targets(graph: GridGraph, frame: BoxFrame) -> set[int]:
    """Primal edges whose dual endpoints lie among the faces incident to
    the inner box (the integerized stand-in for the inner dual edge set,
    nondegenerate down to inner boxes of a single site)."""
    if graph.width != frame.size or graph.height != frame.size:
        raise ValueError("frame must match the rectangle")
    m = frame.margin
    lo, hi = m, frame.size - m
    faces = set()
    for x in range(lo - 1, hi):
        for y in range(lo - 1, hi):
            faces.add((2 * x + 1, 2 * y + 1))
    targets = set()
    for e in range(graph.n_edges):
        p, q = _dual_edge_endpoints(graph, e)
        if p in faces or q in faces:
            targets.add(e)
    return targets


def dual_circuit_absent(config: FkConfig, frame: BoxFrame) -> bool:
    """True iff no circuit of open edges surrounds the inner box, decided
    by whether the penetrating dual-open edges reach the inner dual zone."""
    targets = inner_box_dual_targets(config.graph, frame)
    return len(penetrating_dual_edges(config) & targets) > 0


def no_circuit_event(graph: GridGraph, frame: BoxFrame):
    """Bitmask predicate for `domination_test`: the (decreasing) event that
    no open circuit surrounds the frame's inner box."""
    targets = inner_box_dual_targets(graph, frame)

    def event(mask: int) -> bool:
        cfg = FkConfig.from_bitmask(graph, mask)
        return len(penetrating_dual_edges(cfg) & targets) > 0

    return event


# ---------------------------------------------------------------------------
# stochastic domination
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DominationReport:
    beta: float
    rho: float
    fk_probability: float
    bernoulli_probability: float
    standard_error: float  # 0 for exact enumeration

    @property
    def dominated(self) -> bool:
        # 1e-12 absorbs float dust when the two probabilities coincide
        return (
            self.fk_probability
            <= self.bernoulli_probability + 3 * self.standard_error + 1e-12
        )


def domination_test(
    beta: float,
    graph: GridGraph,
    event,
    mc_samples: int = 0,
    seed: int = 0,
) -> DominationReport:
    """Compare a decreasing event under the random-cluster measure and
    under Bernoulli(rho): exact enumeration up to the edge cap, otherwise
    Monte Carlo via the Edwards-Sokal bond draw on cluster samples.

    The caller asserts the event is decreasing (circuit absence qualifies).
    """
    from .exact import MAX_FK_EDGES, enumerate_fk

    p = 1.0 - math.exp(-2.0 * beta)
    rho = bernoulli_rho(beta)
    if graph.n_edges <= MAX_FK_EDGES and mc_samples == 0:
        table = enumerate_fk(graph.n_vertices, graph.edges, p)
        fk_prob = table.event_probability(event)
        bern = 0.0
        for mask in range(1 << graph.n_edges):
            if event(mask):
                o = bin(mask).count("1")
                bern += rho**o * (1 - rho) ** (graph.n_edges - o)
        return DominationReport(beta, rho, fk_prob, float(bern), 0.0)

    # MC branch: spins by cluster updates, bonds by the conditional draw
    from .energy import EnergyState, ModelParams
    from .lattice import SpinConfig, TorusLattice
    from .rng import philox_stream
    from .sampler import sw_sweep

    if graph.width != graph.height:
        raise ValueError("MC branch assumes a square rectangle")
    lat = TorusLattice(2, graph.width)
    params = ModelParams(beta=beta, lattice=lat, boundary="free")
    rng = philox_stream(seed, 1)
    state = EnergyState.create(params, SpinConfig.random(lat, rng))
    for _ in range(100):
        sw_sweep(state, rng)
    ea = np.array([e[0] for e in graph.edges])
    eb = np.array([e[1] for e in graph.edges])
    powers = 1 << np.arange(graph.n_edges, dtype=np.int64)
    hits_fk = 0
    hits_b = 0
    for _ in range(mc_samples):
        sw_sweep(state, rng)
        aligned = state.spins[ea] == state.spins[eb]
        bonds = aligned & (rng.random(graph.n_edges) < p)
        if event(int(np.dot(bonds.astype(np.int64), powers))):
            hits_fk += 1
        bern_mask = rng.random(graph.n_edges) < rho
        if event(int(np.dot(bern_mask.astype(np.int64), powers))):
            hits_b += 1
    fk_prob = hits_fk / mc_samples
    b_prob = hits_b / mc_samples
    se = math.sqrt(
        fk_prob * (1 - fk_prob) / mc_samples + b_prob * (1 - b_prob) / mc_samples
    )
    return DominationReport(beta, rho, fk_prob, b_prob, se)
