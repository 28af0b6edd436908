"""Tukey depth, bagplots, inflation calibration, and p-value detection.

The halfspace depth of a query point is the smallest number of data points in
any closed halfplane whose boundary passes through the query.  A bagplot ranks
the points by depth, hulls the deepest half into the bag, inflates the bag
about the Tukey median into the (undrawn) fence, and flags points beyond the
fence as outliers.  Detection scores the points of an observed diagram
against the fences of many replicate bagplots and reports the flag rate of
each point as one minus its p-value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diagram import PersistenceDiagram, strip_infinite, to_ppd


def _cross2(a, b):
    """z-component of the cross product for planar vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def tukey_depth(x, points) -> int:
    """Exact halfspace depth of x in the cloud, by angular sweep.

    The count, as a function of the halfplane normal's angle, only changes at
    the critical angles perpendicular to some data direction, and its minimum
    is attained strictly between consecutive critical angles.  Sorting the
    data angles once and counting each candidate arc with binary searches
    keeps one query at O(n log n).
    """
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) == 0:
        raise ValueError("depth needs a nonempty point cloud")
    v = pts - x
    coincident = np.all(v == 0.0, axis=1)
    base = int(np.sum(coincident))
    v = v[~coincident]
    if len(v) == 0:
        return base
    ang = np.sort(np.mod(np.arctan2(v[:, 1], v[:, 0]), 2.0 * np.pi))
    critical = np.unique(np.mod(np.concatenate([ang - 0.5 * np.pi, ang + 0.5 * np.pi]), 2.0 * np.pi))
    # Merge critical angles that differ only by rounding; otherwise a
    # "midpoint" can land on a boundary direction and miscount by one.
    if len(critical) > 1:
        keep = np.concatenate([[True], np.diff(critical) > 1e-12])
        critical = critical[keep]
        if len(critical) > 1 and (2.0 * np.pi - critical[-1]) + critical[0] <= 1e-12:
            critical = critical[:-1]
    mids = 0.5 * (critical + np.roll(critical, -1))
    mids[-1] = np.mod(0.5 * (critical[-1] + critical[0] + 2.0 * np.pi), 2.0 * np.pi)
    doubled = np.concatenate([ang, ang + 2.0 * np.pi])
    lo = np.mod(mids - 0.5 * np.pi, 2.0 * np.pi)
    counts = np.searchsorted(doubled, lo + np.pi, side="right") - np.searchsorted(
        doubled, lo, side="left"
    )
    return base + int(counts.min())


def point_depths(points) -> np.ndarray:
    """Depth of every data point within its own cloud."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.array([tukey_depth(p, pts) for p in pts], dtype=int)


def convex_hull(points) -> np.ndarray:
    """Counterclockwise hull vertices by monotone chain.

    Collinear inputs come back as the two extreme points (or a single
    point); interior collinear vertices are dropped.
    """
    pts = np.unique(np.atleast_2d(np.asarray(points, dtype=float)), axis=0)
    if len(pts) <= 2:
        return pts
    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross2(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out
    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        return pts[[0, -1]]
    return hull


@dataclass(frozen=True)
class Bagplot:
    """Depth ranking plus the bag / fence / loop geometry at one inflation."""

    depths: np.ndarray
    median: np.ndarray
    bag: np.ndarray
    fence: np.ndarray
    loop: np.ndarray
    outlier_indices: np.ndarray
    inflation: float


def fence_factors(bag: np.ndarray, median: np.ndarray, points) -> np.ndarray:
    """Smallest inflation that puts each point inside the inflated bag.

    A point is outside the fence at inflation c exactly when its factor
    exceeds c, which makes outlier sets automatically monotone in c.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m = np.asarray(median, dtype=float)
    verts = np.atleast_2d(bag)
    if len(verts) == 1:
        same = np.all(pts == verts[0], axis=1)
        return np.where(same, 0.0, np.inf)
    if len(verts) == 2:
        # Degenerate bag: a segment through the median.
        a, b = verts
        u = b - a
        norm = np.hypot(*u)
        u = u / norm
        off = np.abs(_cross2(np.broadcast_to(u, pts.shape), pts - m))
        t = (pts - m) @ u
        t_lo = float((a - m) @ u)
        t_hi = float((b - m) @ u)
        scale = max(norm, 1.0)
        factors = np.zeros(len(pts))
        pos = t > 0
        neg = t < 0
        if t_hi > 0:
            factors[pos] = t[pos] / t_hi
        else:
            factors[pos] = np.inf
        if t_lo < 0:
            factors[neg] = t[neg] / t_lo
        else:
            factors[neg] = np.inf
        return np.where(off > 1e-9 * scale, np.inf, factors)
    edges_a = verts
    edges_b = np.roll(verts, -1, axis=0)
    edge_vec = edges_b - edges_a
    a_term = _cross2(edge_vec, m - edges_a)  # >= 0 with the median inside
    b_term = _cross2(edge_vec[None, :, :], pts[:, None, :] - m)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(b_term < 0, -b_term / a_term, 0.0)
        ratio = np.where((a_term <= 0) & (b_term < 0), np.inf, ratio)
    return ratio.max(axis=1)


def bagplot(points, c: float = 3.0, rng: np.random.Generator | None = None) -> Bagplot:
    """Depth-rank the cloud and build bag, fence, and loop.

    Ties in the depth ranking are broken at random from ``rng`` so that the
    bag membership is well defined; pass a seeded generator to make the
    construction reproducible.  Points exactly on the fence count as inside.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    if n < 4:
        raise ValueError("a bagplot needs at least four points")
    if len(convex_hull(pts)) < 3:
        raise ValueError("degenerate geometry: all points are collinear")
    if rng is None:
        rng = np.random.default_rng()
    depths = point_depths(pts)
    tiebreak = rng.random(n)
    order = np.lexsort((tiebreak, -depths))
    bag_members = order[: math.ceil(n / 2)]
    bag = convex_hull(pts[bag_members])
    median = pts[depths == depths.max()].mean(axis=0)
    factors = fence_factors(bag, median, pts)
    fence = median + c * (bag - median)
    outliers = np.nonzero(factors > c * (1.0 + 1e-12))[0]
    keep = np.setdiff1d(np.arange(n), outliers)
    loop = convex_hull(pts[keep]) if len(keep) else np.empty((0, 2))
    return Bagplot(
        depths=depths,
        median=median,
        bag=bag,
        fence=fence,
        loop=loop,
        outlier_indices=outliers,
        inflation=float(c),
    )


@dataclass(frozen=True)
class InflationCalibration:
    c: float
    qualified: bool
    fractions: np.ndarray


def calibrate_inflation(
    outlier_counts: np.ndarray, c_grid: np.ndarray, A: int, p_star: float
) -> InflationCalibration:
    """Smallest grid inflation keeping many-outlier bagplots rare.

    Picks the first c in the ascending grid for which the fraction of
    calibration bagplots showing at least A outliers is at most p_star.  If
    no grid value qualifies the grid maximum is returned flagged.
    """
    counts = np.atleast_2d(np.asarray(outlier_counts))
    c_grid = np.asarray(c_grid, dtype=float)
    if c_grid.size == 0:
        raise ValueError("inflation grid is empty")
    if np.any(np.diff(c_grid) <= 0):
        raise ValueError("inflation grid must be strictly ascending")
    fractions = (counts >= A).mean(axis=0)
    hits = np.nonzero(fractions <= p_star)[0]
    if hits.size:
        return InflationCalibration(float(c_grid[hits[0]]), True, fractions)
    return InflationCalibration(float(c_grid[-1]), False, fractions)


@dataclass(frozen=True)
class DetectionConfig:
    """Knobs of the detection pipeline; defaults follow desk-scale practice."""

    n1: int
    n2: int
    p_star: float = 0.05
    A: int = 2
    epsilon: float = 0.001
    c_lo: float = 1.0
    c_hi: float = 5.0
    c_step: float = 0.02

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("both calibration and scoring counts must be >= 1")
        if not 0.0 <= self.p_star <= 1.0:
            raise ValueError("p_star must lie in [0, 1]")
        if self.A < 1:
            raise ValueError("A must be a positive integer")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.c_step <= 0 or self.c_hi < self.c_lo:
            raise ValueError("inflation grid is empty or backwards")

    @property
    def c_grid(self) -> np.ndarray:
        return np.arange(self.c_lo, self.c_hi + 0.5 * self.c_step, self.c_step)


@dataclass
class DetectionReport:
    calibrated_c: float
    calibration_qualified: bool
    f: np.ndarray
    p_values: np.ndarray
    flagged: np.ndarray
    threshold: float
    epsilon: float
    n1: int
    n2: int

    def to_dict(self) -> dict:
        return {
            "calibrated_c": self.calibrated_c,
            "calibration_qualified": self.calibration_qualified,
            "f": [float(v) for v in self.f],
            "p_values": [float(v) for v in self.p_values],
            "flagged": [int(i) for i in self.flagged],
            "threshold": self.threshold,
            "epsilon": self.epsilon,
            "n1": self.n1,
            "n2": self.n2,
        }


def _ppd_points(diagram: PersistenceDiagram) -> np.ndarray:
    finite, _ = strip_infinite(diagram)
    return to_ppd(finite).points


def replicate_bag_geometry(diagrams, rng: np.random.Generator):
    """Bag and median of each replicate diagram, in projected coordinates."""
    geometries = []
    for d in diagrams:
        pts = _ppd_points(d)
        bp = bagplot(pts, c=1.0, rng=rng)
        geometries.append((bp.bag, bp.median, pts))
    return geometries


def outlier_count_matrix(geometries, c_grid: np.ndarray) -> np.ndarray:
    """Rows: replicate bagplots; columns: own-point outlier counts per c."""
    counts = np.empty((len(geometries), len(c_grid)), dtype=int)
    for i, (bag, median, pts) in enumerate(geometries):
        factors = fence_factors(bag, median, pts)
        counts[i] = np.sum(factors[:, None] > c_grid[None, :] * (1.0 + 1e-12), axis=0)
    return counts


def score_points(points: np.ndarray, geometries, c: float, epsilon: float) -> np.ndarray:
    """Fraction of bagplots flagging each point beyond the fence at inflation c.

    Points with lifetime (second projected coordinate) at most epsilon never
    count as outliers.
    """
    points = np.atleast_2d(points)
    eligible = points[:, 1] > epsilon
    flags = np.zeros(len(points))
    for bag, median, _ in geometries:
        factors = fence_factors(bag, median, points)
        flags += (factors > c * (1.0 + 1e-12)) & eligible
    return flags / len(geometries)


def detect(
    original: PersistenceDiagram,
    replicates,
    config: DetectionConfig,
    rng: np.random.Generator | None = None,
    threshold: float = 0.05,
) -> DetectionReport:
    """Calibrate on the first n1 replicates, score the original on the next n2.

    Step 1-2 derive the inflation factor from the calibration bagplots' own
    outlier counts; step 3 tests every finite point of the original against
    each scoring fence, skipping points within epsilon of the diagonal; step
    4 turns the flag frequency f into the p-value 1 - f.
    """
    replicates = list(replicates)
    if config.n1 + config.n2 > len(replicates):
        raise ValueError(
            f"need n1 + n2 = {config.n1 + config.n2} replicates, got {len(replicates)}"
        )
    if rng is None:
        rng = np.random.default_rng()
    pts = _ppd_points(original)
    calib = replicate_bag_geometry(replicates[: config.n1], rng)
    counts = outlier_count_matrix(calib, config.c_grid)
    calibration = calibrate_inflation(counts, config.c_grid, config.A, config.p_star)
    scoring = replicate_bag_geometry(replicates[config.n1 : config.n1 + config.n2], rng)
    f = score_points(pts, scoring, calibration.c, config.epsilon)
    p_values = 1.0 - f
    return DetectionReport(
        calibrated_c=calibration.c,
        calibration_qualified=calibration.qualified,
        f=f,
        p_values=p_values,
        flagged=np.nonzero(p_values <= threshold)[0],
        threshold=threshold,
        epsilon=config.epsilon,
        n1=config.n1,
        n2=config.n2,
    )


# ---------------------------------------------------------------------------
# Lifetime clustering diagnostics.

@dataclass
class ClusterResult:
    labels: np.ndarray
    n_clusters: int
    seed_indices: np.ndarray
    threshold: float


def _cosine_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    xn = np.linalg.norm(x, axis=1, keepdims=True)
    cn = np.linalg.norm(centers, axis=1, keepdims=True)
    xn = np.maximum(xn, 1e-300)
    cn = np.maximum(cn, 1e-300)
    return 1.0 - (x / xn) @ (centers / cn).T


def _kmeans(x: np.ndarray, centers: np.ndarray, metric: str, max_iter: int = 100):
    """Lloyd iterations; ties go to the lower center index, empty clusters
    are dropped at the end rather than reseeded."""
    labels = np.full(len(x), -1, dtype=int)
    for _ in range(max_iter):
        if metric == "cosine":
            dist = _cosine_distances(x, centers)
        else:
            dist = np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=2)
        new_labels = np.argmin(dist, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(len(centers)):
            members = x[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return labels


def cluster_diagram(
    diagram: PersistenceDiagram,
    root_percentile: float = 75.0,
    min_fraction: float = 0.05,
    rng: np.random.Generator | None = None,
    features: str = "death-lifetime",
) -> ClusterResult:
    """Group diagram points by lifetime scale.

    Seeds are the points whose lifetime strictly exceeds the given percentile
    of all lifetimes; k-means runs with the cosine distance on projected
    (death, lifetime) vectors, one cluster per seed, initialized at the
    seeds.  Clusters holding fewer than min_fraction of the points are
    discarded (label -1).  With ``features="lifetime"`` the clustering runs
    on the lifetimes alone with the Euclidean distance, since the cosine
    distance degenerates in one dimension.  ``rng`` is accepted for interface
    uniformity; the procedure itself is deterministic.
    """
    if diagram.n < 4:
        raise ValueError("clustering needs at least four finite points")
    pts = _ppd_points(diagram)
    life = pts[:, 1]
    threshold = float(np.percentile(life, root_percentile))
    seeds = np.nonzero(life > threshold)[0]
    labels = np.full(len(pts), -1, dtype=int)
    if seeds.size == 0:
        if np.all(life == life[0]):
            # Degenerate percentile: one cluster holding everything.
            return ClusterResult(np.zeros(len(pts), int), 1, seeds, threshold)
        return ClusterResult(labels, 0, seeds, threshold)
    if features == "lifetime":
        x = life[:, None].astype(float)
        metric = "euclidean"
    elif features == "death-lifetime":
        x = pts.astype(float)
        metric = "cosine"
    else:
        raise ValueError("features must be 'death-lifetime' or 'lifetime'")
    raw = _kmeans(x, x[seeds].copy(), metric)
    min_size = min_fraction * len(pts)
    survivors = [j for j in np.unique(raw) if np.sum(raw == j) >= min_size]
    for new, j in enumerate(survivors):
        labels[raw == j] = new
    return ClusterResult(labels, len(survivors), seeds, threshold)
