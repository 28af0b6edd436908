"""Interaction energies and pseudo-likelihood evaluation.

The model combines a local energy built from nearest-neighbor distances with
a global shape prior.  For a configuration point x with neighbor prefixes
N_1 subset N_2 subset ... subset N_K (the k nearest other points), the local
energy of a position y is

    L(y | N(x)) = sum_k theta_k * sum_{z in N_k} ||z - y||,

so the nearest neighbor is counted in every active term.  The conditional
density of one point given the rest is proportional to

    exp(-L(y | N(x)) + alpha * log fbar(y)),

normalized by a trapezoid integral over the prior's evaluation grid with the
neighbor set held fixed at the conditioning point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .density import Bandwidth, GridDensity, GridSpec, trapezoid2d
from .diagram import PointSet

MAX_NEIGHBOR_TERMS = 3
ALPHA_RANGE = (0.0, 3.0)


@dataclass(frozen=True)
class ModelParams:
    """Global weight alpha plus local interaction weights theta_1..theta_K.

    Inactive entries are pinned to zero.  ``shells`` switches the local
    energy to count only the k-th neighbor in term k instead of the nested
    prefix sets; it is experimental and off by default.
    """

    alpha: float
    theta: np.ndarray
    active: np.ndarray | None = None
    shells: bool = False

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if not 1 <= len(theta) <= MAX_NEIGHBOR_TERMS:
            raise ValueError(f"need between 1 and {MAX_NEIGHBOR_TERMS} theta entries")
        active = self.active
        if active is None:
            active = np.ones(len(theta), dtype=bool)
        active = np.asarray(active, dtype=bool).reshape(-1)
        if active.shape != theta.shape:
            raise ValueError("active mask must match theta in length")
        if np.any(theta[~active] != 0.0):
            raise ValueError("inactive theta entries must be zero")
        if not ALPHA_RANGE[0] <= self.alpha <= ALPHA_RANGE[1]:
            raise ValueError(f"alpha must lie in [{ALPHA_RANGE[0]}, {ALPHA_RANGE[1]}]")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "active", active)

    @property
    def K(self) -> int:
        return len(self.theta)

    def interaction_weights(self) -> np.ndarray:
        """Weight of the j-th nearest neighbor in the local energy.

        With nested prefixes the j-th neighbor appears in terms j..K, so its
        weight is the suffix sum of theta; in shell mode it is theta_j itself.
        """
        if self.shells:
            return self.theta.copy()
        return np.cumsum(self.theta[::-1])[::-1]


def neighborhoods(ps: PointSet, i: int, K: int) -> np.ndarray:
    """Indices of the K nearest other points, nearest first.

    The prefix of length k is the neighbor set N_k.  Distance ties are broken
    toward the lower point index; the point itself is excluded.
    """
    pts = ps.points
    n = len(pts)
    if n <= K:
        raise ValueError(f"need more than K={K} points, got {n}")
    if not 0 <= i < n:
        raise IndexError(f"point index {i} out of range")
    d2 = np.sum((pts - pts[i]) ** 2, axis=1)
    d2[i] = np.inf
    order = np.argsort(d2, kind="stable")
    return order[:K]


def local_energy(y, neighbor_pts, theta, shells: bool = False) -> float:
    """Local energy of position y against an ordered neighbor prefix.

    ``neighbor_pts`` must be ordered nearest-first, matching the output of
    :func:`neighborhoods`.
    """
    nb = np.atleast_2d(np.asarray(neighbor_pts, dtype=float))
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if len(nb) != len(theta):
        raise ValueError("one theta entry per neighbor prefix is required")
    if shells:
        weights = theta
    else:
        weights = np.cumsum(theta[::-1])[::-1]
    dists = np.hypot(nb[:, 0] - y[0], nb[:, 1] - y[1])
    return float(weights @ dists)


@dataclass(frozen=True)
class ConditionalEvaluation:
    """Log numerator and log trapezoid normalizer of one conditional."""

    log_numerator: float
    log_normalizer: float

    def __post_init__(self):
        if not np.isfinite(self.log_normalizer):
            raise ValueError("conditional normalizer must be finite")

    @property
    def log_density(self) -> float:
        return self.log_numerator - self.log_normalizer


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    """Node weights that make a dot product equal the trapezoid integral."""
    w = np.zeros(len(x))
    gaps = np.diff(x)
    w[:-1] += 0.5 * gaps
    w[1:] += 0.5 * gaps
    return w


def _log_trapezoid_exp(energy: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """log of the trapezoid integral of exp(energy), stable under shifting.

    ``energy`` may carry leading batch axes; the last two axes are the grid.
    """
    e = np.asarray(energy, dtype=float)
    m = e.max(axis=(-2, -1), keepdims=True)
    shifted = np.exp(e - m)
    inner = np.trapezoid(shifted, x2, axis=-1)
    integral = np.trapezoid(inner, x1, axis=-1)
    return np.squeeze(m, axis=(-2, -1)) + np.log(integral)


class PseudolikelihoodGrids:
    """Precomputed distance fields for fast repeated pseudo-likelihood evals.

    Holds, for every point, the distances from its K nearest neighbors to
    each grid node, plus the log prior on the grid and at the points.  One
    instance serves every (alpha, theta) evaluation on the same data.  The
    evaluation reuses an internal scratch buffer, so share instances across
    threads only with external locking.
    """

    def __init__(self, ps: PointSet, gd: GridDensity, K: int = MAX_NEIGHBOR_TERMS):
        pts = ps.points
        n = len(pts)
        if n <= K:
            raise ValueError(f"need more than K={K} points to build neighborhoods")
        inside = gd.spec.contains(pts)
        if not inside.all():
            bad = int(np.nonzero(~inside)[0][0])
            raise ValueError(f"grid does not cover point {bad} at {tuple(pts[bad])}")
        log_f_pts = gd.log_density(pts)
        if not np.all(np.isfinite(log_f_pts)):
            bad = int(np.nonzero(~np.isfinite(log_f_pts))[0][0])
            raise ValueError(f"shape prior vanishes at point {bad} ({tuple(pts[bad])})")
        x1 = gd.x1
        x2 = gd.x2
        mesh1, mesh2 = np.meshgrid(x1, x2, indexing="ij")
        grid_size = gd.spec.nx1 * gd.spec.nx2
        nbrs = np.empty((n, K), dtype=int)
        point_dists = np.empty((n, K))
        # Distance fields stored as one (K, n * grid) matrix so that any
        # weight vector reduces to a single matrix-vector product.
        fields = np.empty((K, n * grid_size))
        for i in range(n):
            nbrs[i] = neighborhoods(ps, i, K)
            for k, j in enumerate(nbrs[i]):
                point_dists[i, k] = np.hypot(*(pts[j] - pts[i]))
                fields[k, i * grid_size : (i + 1) * grid_size] = np.hypot(
                    mesh1 - pts[j, 0], mesh2 - pts[j, 1]
                ).ravel()
        self.ps = ps
        self.gd = gd
        self.K = K
        self.neighbors = nbrs
        self.point_dists = point_dists
        self.log_f_points = log_f_pts
        self.log_f_grid = gd.log_values()
        self._x1 = x1
        self._x2 = x2
        # Flattened trapezoid quadrature weights let the integral collapse to
        # one matrix-vector product in the hot path.
        self._quad = np.outer(_trapezoid_weights(x1), _trapezoid_weights(x2)).ravel()
        self._fields_mat = fields
        self._flat_logf = self.log_f_grid.ravel()
        self._grid_size = grid_size
        self._scratch = np.empty(n * grid_size)
        self._prior_cache: tuple[float, np.ndarray] | None = None

    def _prior_term(self, alpha: float) -> np.ndarray | float:
        # alpha == 0 must kill the prior term even where log f underflowed.
        if alpha == 0.0:
            return 0.0
        return alpha * self.log_f_grid

    def log_normalizers(self, params: ModelParams) -> np.ndarray:
        w = params.interaction_weights()[: self.K]
        flat = self._scratch
        if np.any(w):
            np.dot(-w, self._fields_mat, out=flat)
        else:
            flat.fill(0.0)
        n = len(self.point_dists)
        energy = flat.reshape(n, self._grid_size)
        if params.alpha != 0.0:
            if self._prior_cache is None or self._prior_cache[0] != params.alpha:
                self._prior_cache = (
                    params.alpha,
                    (params.alpha * self._flat_logf).reshape(1, -1),
                )
            energy += self._prior_cache[1]
        shift = energy.max(axis=1)
        energy -= shift[:, None]
        np.exp(energy, out=energy)
        return shift + np.log(energy @ self._quad)

    def log_numerators(self, params: ModelParams) -> np.ndarray:
        w = params.interaction_weights()[: self.K]
        out = -(self.point_dists @ w)
        if params.alpha != 0.0:
            out = out + params.alpha * self.log_f_points
        return out

    def log_pl(self, params: ModelParams) -> float:
        return float(np.sum(self.log_numerators(params) - self.log_normalizers(params)))


def conditional_log_density(
    ps: PointSet, i: int, params: ModelParams, gd: GridDensity
) -> ConditionalEvaluation:
    """Numerator and normalizer of the conditional for point i.

    The normalizer integrates exp(-L(z | N(x_i)) + alpha log fbar(z)) over the
    grid by the trapezoid rule, the neighbor set staying anchored at x_i.
    """
    pts = ps.points
    nbrs = neighborhoods(ps, i, params.K)
    log_f_i = float(gd.log_density(pts[i : i + 1])[0])
    if not np.isfinite(log_f_i):
        raise ValueError(f"shape prior vanishes at point {i} ({tuple(pts[i])})")
    energy_i = local_energy(pts[i], pts[nbrs], params.theta, shells=params.shells)
    numerator = -energy_i + (params.alpha * log_f_i if params.alpha != 0.0 else 0.0)

    x1, x2 = gd.x1, gd.x2
    mesh1, mesh2 = np.meshgrid(x1, x2, indexing="ij")
    w = params.interaction_weights()
    grid_energy = np.zeros_like(mesh1)
    for k, j in enumerate(nbrs):
        grid_energy -= w[k] * np.hypot(mesh1 - pts[j, 0], mesh2 - pts[j, 1])
    if params.alpha != 0.0:
        grid_energy += params.alpha * gd.log_values()
    normalizer = float(_log_trapezoid_exp(grid_energy, x1, x2))
    return ConditionalEvaluation(log_numerator=numerator, log_normalizer=normalizer)


def log_pseudolikelihood(ps: PointSet, params: ModelParams, gd: GridDensity) -> float:
    """Sum over points of the conditional log densities."""
    grids = PseudolikelihoodGrids(ps, gd, K=params.K)
    return grids.log_pl(params)


# ---------------------------------------------------------------------------
# Legacy second-moment model.

@dataclass(frozen=True)
class LegacyParams:
    """Weights of the legacy Hamiltonian with interaction cutoff delta."""

    theta_h: float
    theta_v: float
    theta: np.ndarray
    delta: float

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if len(theta) < 1:
            raise ValueError("need at least one interaction weight")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        object.__setattr__(self, "theta", theta)

    @property
    def K(self) -> int:
        return len(self.theta)

    def interaction_weights(self) -> np.ndarray:
        return np.cumsum(self.theta[::-1])[::-1]


def legacy_hamiltonian(ps: PointSet, lp: LegacyParams) -> float:
    """Second-moment Hamiltonian with a distance-capped neighbor interaction.

    H = theta_h * sum (x1 - mean x1)^2 + theta_v * sum x2^2
        + delta^-2 * sum_k theta_k sum_i sum_{z in N_k(x_i)} ||z - x_i|| 1{||z - x_i|| <= delta}

    The vertical term is uncentred.
    """
    pts = ps.points
    n = len(pts)
    if n < 2:
        raise ValueError("legacy Hamiltonian needs at least two points")
    sigma_h2 = float(np.sum((pts[:, 0] - pts[:, 0].mean()) ** 2))
    sigma_v2 = float(np.sum(pts[:, 1] ** 2))
    w = lp.interaction_weights()
    K = min(lp.K, n - 1)
    interaction = 0.0
    for i in range(n):
        nbrs = neighborhoods(ps, i, K)
        d = np.hypot(*(pts[nbrs] - pts[i]).T)
        capped = np.where(d <= lp.delta, d, 0.0)
        interaction += float(w[:K] @ capped)
    return lp.theta_h * sigma_h2 + lp.theta_v * sigma_v2 + interaction / lp.delta**2


def legacy_point_energy(y, neighbor_pts, rest_mean_x1: float, lp: LegacyParams) -> float:
    """Energy terms of the legacy Hamiltonian involving one position y.

    The horizontal mean is held at the mean of the other points, and the
    neighbor set is anchored at the conditioning point, mirroring the
    conditional construction of the primary model.
    """
    nb = np.atleast_2d(np.asarray(neighbor_pts, dtype=float))
    w = lp.interaction_weights()[: len(nb)]
    d = np.hypot(nb[:, 0] - y[0], nb[:, 1] - y[1])
    capped = np.where(d <= lp.delta, d, 0.0)
    return (
        lp.theta_h * (y[0] - rest_mean_x1) ** 2
        + lp.theta_v * y[1] ** 2
        + float(w @ capped) / lp.delta**2
    )


# ---------------------------------------------------------------------------
# Fitted model container.

@dataclass(frozen=True)
class FittedModel:
    """Everything replication needs: parameters, bandwidth, and grid."""

    params: ModelParams
    bandwidth: Bandwidth
    grid: GridSpec

    def to_dict(self) -> dict:
        return {
            "alpha": float(self.params.alpha),
            "theta": [float(t) for t in self.params.theta],
            "active": [bool(a) for a in self.params.active],
            "shells": bool(self.params.shells),
            "bandwidth": [[float(v) for v in row] for row in self.bandwidth.matrix],
            "grid": {
                "x1_lo": self.grid.x1_lo,
                "x1_hi": self.grid.x1_hi,
                "x2_lo": self.grid.x2_lo,
                "x2_hi": self.grid.x2_hi,
                "nx1": self.grid.nx1,
                "nx2": self.grid.nx2,
            },
        }

    @classmethod
    def from_dict(cls, record: dict) -> "FittedModel":
        grid = record["grid"]
        return cls(
            params=ModelParams(
                alpha=float(record["alpha"]),
                theta=record["theta"],
                active=record.get("active"),
                shells=bool(record.get("shells", False)),
            ),
            bandwidth=Bandwidth(np.asarray(record["bandwidth"], dtype=float)),
            grid=GridSpec(
                grid["x1_lo"], grid["x1_hi"], grid["x2_lo"], grid["x2_hi"],
                int(grid["nx1"]), int(grid["nx2"]),
            ),
        )


def save_model(model: FittedModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> FittedModel:
    with open(path) as fh:
        return FittedModel.from_dict(json.load(fh))
