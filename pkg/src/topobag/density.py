"""Gaussian kernel density estimation restricted to the upper half-plane.

The shape prior used throughout the package is a kernel density estimate of
the projected diagram, truncated to the half-plane and renormalized on a
rectangular evaluation grid.  Sampling from the prior goes through a tabulated
rectangle partition and the inverse transform method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

from .diagram import PointSet

_CHUNK = 4096


@dataclass(frozen=True)
class Bandwidth:
    """Symmetric positive-definite scaling matrix of a Gaussian kernel."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("bandwidth matrix must be square")
        if not np.allclose(m, m.T, rtol=1e-10, atol=0.0):
            raise ValueError("bandwidth matrix must be symmetric")
        m = 0.5 * (m + m.T)
        if np.min(np.linalg.eigvalsh(m)) <= 0.0:
            raise ValueError("bandwidth matrix must be positive definite")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def isotropic(cls, eta: float, dim: int = 2) -> "Bandwidth":
        """Scalar bandwidth eta, meaning the matrix eta^2 * I."""
        if eta <= 0:
            raise ValueError("bandwidth eta must be positive")
        return cls(eta * eta * np.eye(dim))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_diagonal(self) -> bool:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return bool(np.max(np.abs(off)) <= 1e-14 * max(np.max(np.diag(self.matrix)), 1e-300))


@dataclass(frozen=True)
class KernelDensity:
    """Equal-weight Gaussian mixture centered at the data points.

    Evaluates

        f(x) = 1 / (n sqrt(det S) (2 pi)^{D/2}) * sum_i exp(-(x - x_i)' S^{-1} (x - x_i) / 2)

    for bandwidth matrix S.
    """

    centers: np.ndarray
    bandwidth: Bandwidth
    _inv: np.ndarray = field(init=False, repr=False)
    _log_const: float = field(init=False, repr=False)

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        if centers.ndim != 2 or len(centers) < 1:
            raise ValueError("need at least one center, shaped (n, D)")
        if centers.shape[1] != self.bandwidth.dim:
            raise ValueError("center dimension does not match the bandwidth")
        if not np.all(np.isfinite(centers)):
            raise ValueError("centers must be finite")
        sign, logdet = np.linalg.slogdet(self.bandwidth.matrix)
        d = centers.shape[1]
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "_inv", np.linalg.inv(self.bandwidth.matrix))
        object.__setattr__(
            self,
            "_log_const",
            -(np.log(len(centers)) + 0.5 * logdet + 0.5 * d * np.log(2.0 * np.pi)),
        )

    @property
    def n(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def _half_quadforms(self, block: np.ndarray) -> np.ndarray:
        diff = block[:, None, :] - self.centers[None, :, :]
        return 0.5 * np.einsum("mnd,de,mne->mn", diff, self._inv, diff)

    def log_evaluate(self, x) -> np.ndarray:
        """Log density at each query row, computed stably with log-sum-exp."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(len(x))
        for start in range(0, len(x), _CHUNK):
            block = x[start : start + _CHUNK]
            out[start : start + len(block)] = logsumexp(-self._half_quadforms(block), axis=1)
        return out + self._log_const

    def evaluate(self, x) -> np.ndarray:
        return np.exp(self.log_evaluate(x))


def kde_eval(kd: KernelDensity, x) -> float:
    """Density of the mixture at a single point."""
    return float(kd.evaluate(np.asarray(x, dtype=float).reshape(1, -1))[0])


def rule_of_thumb_bandwidth(ps: PointSet) -> float:
    """Scalar bandwidth max(sigma_1, sigma_2) * n^(-1/6).

    The sigmas are per-coordinate standard deviations with divisor n - 1.
    """
    pts = ps.points
    if len(pts) < 2:
        raise ValueError("bandwidth rule needs at least two points")
    sigma = np.std(pts, axis=0, ddof=1)
    top = float(np.max(sigma))
    if top <= 0.0:
        raise ValueError("all points identical: no usable spread for a bandwidth")
    return top * len(pts) ** (-1.0 / 6.0)


def normal_reference_bandwidth(ps: PointSet) -> Bandwidth:
    """Full-matrix normal-reference rule n^(-1/3) * S for planar data."""
    pts = ps.points
    if len(pts) < 3:
        raise ValueError("full-matrix rule needs at least three points")
    s = np.cov(pts, rowvar=False, ddof=1)
    matrix = len(pts) ** (-1.0 / 3.0) * s
    return Bandwidth(matrix)


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned evaluation rectangle with node counts per axis."""

    x1_lo: float
    x1_hi: float
    x2_lo: float
    x2_hi: float
    nx1: int = 101
    nx2: int = 101

    def __post_init__(self):
        if not (self.x1_hi > self.x1_lo and self.x2_hi > self.x2_lo):
            raise ValueError("degenerate grid rectangle")
        if self.x2_lo < 0:
            raise ValueError("grid must lie in the half-plane x2 >= 0")
        if self.nx1 < 2 or self.nx2 < 2:
            raise ValueError("need at least two nodes per axis")

    @property
    def x1(self) -> np.ndarray:
        return np.linspace(self.x1_lo, self.x1_hi, self.nx1)

    @property
    def x2(self) -> np.ndarray:
        return np.linspace(self.x2_lo, self.x2_hi, self.nx2)

    @property
    def cell_area(self) -> float:
        return ((self.x1_hi - self.x1_lo) / (self.nx1 - 1)) * (
            (self.x2_hi - self.x2_lo) / (self.nx2 - 1)
        )

    @property
    def area(self) -> float:
        return (self.x1_hi - self.x1_lo) * (self.x2_hi - self.x2_lo)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return (
            (pts[:, 0] >= self.x1_lo)
            & (pts[:, 0] <= self.x1_hi)
            & (pts[:, 1] >= self.x2_lo)
            & (pts[:, 1] <= self.x2_hi)
        )

    def refine(self, factor: int = 2) -> "GridSpec":
        return GridSpec(
            self.x1_lo,
            self.x1_hi,
            self.x2_lo,
            self.x2_hi,
            (self.nx1 - 1) * factor + 1,
            (self.nx2 - 1) * factor + 1,
        )


def default_grid_spec(ps: PointSet, nx1: int = 101, nx2: int = 101) -> GridSpec:
    """Fitting rectangle for a projected diagram.

    x1 spans at least the mean plus/minus four standard deviations, x2 runs
    from zero to at least the mean plus four standard deviations; both ranges
    are widened if needed so that every data point lies strictly inside.
    """
    pts = ps.points
    if len(pts) < 2:
        raise ValueError("need at least two points to derive a grid")
    mean = pts.mean(axis=0)
    sd = np.std(pts, axis=0, ddof=1)
    pad = 0.05 * np.where(sd > 0, sd, 1.0)
    x1_lo = min(mean[0] - 4.0 * sd[0], pts[:, 0].min() - pad[0])
    x1_hi = max(mean[0] + 4.0 * sd[0], pts[:, 0].max() + pad[0])
    x2_hi = max(mean[1] + 4.0 * sd[1], pts[:, 1].max() + pad[1])
    return GridSpec(x1_lo, x1_hi, 0.0, x2_hi, nx1, nx2)


def trapezoid2d(values: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> float:
    """Trapezoid-rule integral of values tabulated on the x1 x x2 grid."""
    return float(np.trapezoid(np.trapezoid(values, x2, axis=-1), x1, axis=-1))


def normalized_grid(raw: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> tuple[np.ndarray, float]:
    """Divide tabulated values by their trapezoid mass; returns (values, mass)."""
    mass = trapezoid2d(raw, x1, x2)
    if not np.isfinite(mass) or mass <= 0.0:
        raise ValueError("grid mass is not positive; the grid misses the density")
    return raw / mass, mass


@dataclass(frozen=True)
class GridDensity:
    """Half-plane restricted shape prior tabulated on a rectangle.

    ``values`` integrate to one by the trapezoid rule over the rectangle;
    off-grid evaluation divides the source mixture by the same mass.
    """

    spec: GridSpec
    values: np.ndarray
    kde: KernelDensity
    mass: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.spec.nx1, self.spec.nx2):
            raise ValueError("grid values do not match the grid spec")
        if np.any(vals < 0):
            raise ValueError("grid density values must be nonnegative")
        object.__setattr__(self, "values", vals)

    @property
    def x1(self) -> np.ndarray:
        return self.spec.x1

    @property
    def x2(self) -> np.ndarray:
        return self.spec.x2

    @property
    def log_mass(self) -> float:
        return float(np.log(self.mass))

    def log_density(self, pts) -> np.ndarray:
        """Log of the normalized prior at arbitrary half-plane points."""
        return self.kde.log_evaluate(pts) - self.log_mass

    def density(self, pts) -> np.ndarray:
        return np.exp(self.log_density(pts))

    def log_values(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.values)


def restrict_halfplane(kd: KernelDensity, spec: GridSpec | None = None) -> GridDensity:
    """Tabulate the mixture on the grid and renormalize by its trapezoid mass.

    When no spec is given the default fitting rectangle of the centers is
    used.  The rectangle itself lives in the half-plane, so restriction is a
    matter of normalization only.
    """
    if kd.dim != 2:
        raise ValueError("half-plane restriction is for planar densities")
    if spec is None:
        spec = default_grid_spec(PointSet(kd.centers))
    mesh1, mesh2 = np.meshgrid(spec.x1, spec.x2, indexing="ij")
    nodes = np.column_stack([mesh1.ravel(), mesh2.ravel()])
    raw = kd.evaluate(nodes).reshape(spec.nx1, spec.nx2)
    values, mass = normalized_grid(raw, spec.x1, spec.x2)
    return GridDensity(spec=spec, values=values, kde=kd, mass=mass)


@dataclass(frozen=True)
class RectangleSampler:
    """Cell partition of the prior's support with tabulated probabilities.

    Cells are enumerated row-major (x1-major) for the cumulative table.
    """

    x1_edges: np.ndarray
    x2_edges: np.ndarray
    probs: np.ndarray
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0):
            raise ValueError("cell probabilities must be nonnegative")
        total = p.sum()
        if not np.isfinite(total) or abs(total - 1.0) > 1e-12:
            raise ValueError("cell probabilities must sum to one")
        cum = np.cumsum(p.ravel(order="C"))
        cum[-1] = 1.0
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "cumulative", cum)

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    def cell_index(self, u: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.cumulative, u, side="right")
        return np.minimum(idx, self.cumulative.size - 1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw points: cells by inverse transform, then uniform within cell.

        Consumes size cell uniforms followed by a (size, 2) block of
        position uniforms, so a fixed seed reproduces the sequence.
        """
        flat = self.cell_index(rng.random(size))
        i1, i2 = np.divmod(flat, self.shape[1])
        offs = rng.random((size, 2))
        w1 = np.diff(self.x1_edges)
        w2 = np.diff(self.x2_edges)
        out = np.empty((size, 2))
        out[:, 0] = self.x1_edges[i1] + offs[:, 0] * w1[i1]
        out[:, 1] = self.x2_edges[i2] + offs[:, 1] * w2[i2]
        return out

    def locate(self, pts: np.ndarray) -> np.ndarray:
        """Flat cell index of each point, -1 when outside the support."""
        pts = np.atleast_2d(pts)
        i1 = np.searchsorted(self.x1_edges, pts[:, 0], side="right") - 1
        i2 = np.searchsorted(self.x2_edges, pts[:, 1], side="right") - 1
        ok = (i1 >= 0) & (i1 < self.shape[0]) & (i2 >= 0) & (i2 < self.shape[1])
        flat = np.where(ok, i1 * self.shape[1] + i2, -1)
        return flat


def _gaussian_cell_masses(
    kd: KernelDensity, x1_edges: np.ndarray, x2_edges: np.ndarray
) -> np.ndarray:
    """Mixture measure of every cell of the partition.

    Diagonal bandwidths factor into products of one-dimensional Gaussian CDF
    differences; anything else goes through a 32x32 per-cell trapezoid rule.
    """
    if kd.bandwidth.is_diagonal:
        s1, s2 = np.sqrt(np.diag(kd.bandwidth.matrix))
        z1 = (x1_edges[None, :] - kd.centers[:, 0:1]) / s1
        z2 = (x2_edges[None, :] - kd.centers[:, 1:2]) / s2
        d1 = np.diff(ndtr(z1), axis=1)
        d2 = np.diff(ndtr(z2), axis=1)
        return np.einsum("ni,nj->ij", d1, d2) / kd.n

    sub = 32
    masses = np.empty((len(x1_edges) - 1, len(x2_edges) - 1))
    for i in range(masses.shape[0]):
        g1 = np.linspace(x1_edges[i], x1_edges[i + 1], sub + 1)
        for j in range(masses.shape[1]):
            g2 = np.linspace(x2_edges[j], x2_edges[j + 1], sub + 1)
            mesh1, mesh2 = np.meshgrid(g1, g2, indexing="ij")
            vals = kd.evaluate(np.column_stack([mesh1.ravel(), mesh2.ravel()]))
            masses[i, j] = trapezoid2d(vals.reshape(sub + 1, sub + 1), g1, g2)
    return masses


def build_sampler(
    gd: GridDensity, i1: int = 100, i2: int = 100, eps: float | None = None
) -> RectangleSampler:
    """Partition the prior's superlevel support and tabulate cell masses.

    The support rectangle is the smallest one containing the grid cells where
    the normalized prior exceeds eps (default 1e-6 of its maximum).
    """
    if eps is None:
        eps = 1e-6 * float(gd.values.max())
    if eps <= 0:
        raise ValueError("eps must be positive")
    mask = gd.values > eps
    if not mask.any():
        raise ValueError("support threshold eps is above the whole density")
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    x1 = gd.x1
    x2 = gd.x2
    x1_edges = np.linspace(x1[rows[0]], x1[rows[-1]], i1 + 1)
    x2_edges = np.linspace(x2[cols[0]], x2[cols[-1]], i2 + 1)
    if x1_edges[0] >= x1_edges[-1] or x2_edges[0] >= x2_edges[-1]:
        raise ValueError("superlevel support collapses to a degenerate rectangle")
    masses = _gaussian_cell_masses(gd.kde, x1_edges, x2_edges)
    masses = np.clip(masses, 0.0, None)
    probs = masses / masses.sum()
    return RectangleSampler(x1_edges=x1_edges, x2_edges=x2_edges, probs=probs)


def sample_point(sampler: RectangleSampler, rng: np.random.Generator) -> np.ndarray:
    """One draw from the tabulated prior (cell uniform, then two offsets)."""
    return sampler.sample(rng, 1)[0]


def save_grid_csv(gd: GridDensity, path) -> None:
    """Write the tabulated prior as x1,x2,value rows for external plotting."""
    x1 = gd.x1
    x2 = gd.x2
    with open(path, "w") as fh:
        fh.write("x1,x2,value\n")
        for i in range(gd.spec.nx1):
            for j in range(gd.spec.nx2):
                fh.write(f"{float(x1[i])!r},{float(x2[j])!r},{float(gd.values[i, j])!r}\n")
