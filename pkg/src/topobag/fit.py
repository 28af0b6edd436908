"""Maximum pseudo-likelihood estimation and information-criterion selection.

Estimation is a two-stage profile search: for each candidate alpha the active
interaction weights are maximized with a Nelder-Mead simplex, and alpha itself
is located on [0, 3] by a coarse scan followed by golden-section refinement of
the profile.  Model choice compares AIC/BIC across the seven nonempty masks of
the three interaction terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .density import GridDensity
from .diagram import PointSet
from .model import MAX_NEIGHBOR_TERMS, ModelParams, PseudolikelihoodGrids

ALPHA_LO, ALPHA_HI = 0.0, 3.0
ALPHA_TOL = 1e-3
SIMPLEX_XATOL = 1e-6
SIMPLEX_FATOL = 1e-9
SIMPLEX_MAXITER = 500
COARSE_ALPHAS = 7

# Nonempty masks over three interaction terms, singletons first.
ALL_MASKS: tuple[tuple[bool, bool, bool], ...] = (
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
)


def mask_key(mask) -> str:
    return "".join("1" if m else "0" for m in mask)


def information_criteria(log_pl: float, p: int, n: float) -> tuple[float, float]:
    """AIC and BIC with the pseudo-likelihood standing in for the likelihood."""
    if n < 1:
        raise ValueError("need at least one observation")
    aic = 2.0 * p - 2.0 * log_pl
    bic = p * math.log(n) - 2.0 * log_pl
    return aic, bic


@dataclass
class FitResult:
    params: ModelParams
    log_pl: float
    n: int
    iterations: int
    converged: bool
    criteria: dict[str, tuple[float, float]] = field(default_factory=dict)
    selected_mask: tuple[bool, ...] | None = None

    @property
    def theta_per_point(self) -> np.ndarray:
        return self.params.theta / self.n


def _fill_theta(active_values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    theta = np.zeros(len(mask))
    theta[mask] = active_values
    return theta


def fit_theta(
    ps: PointSet,
    gd: GridDensity,
    alpha: float,
    mask,
    theta0: np.ndarray | None = None,
    grids: PseudolikelihoodGrids | None = None,
    shells: bool = False,
) -> tuple[np.ndarray, float, int, bool]:
    """Maximize the pseudo-likelihood over the active thetas at fixed alpha.

    Starts the simplex at the zero vector unless a warm start is given, and
    stops when the simplex has collapsed below 1e-6 or after 500 iterations.
    Returns (theta, log_pl, iterations, converged) with inactive entries zero.
    """
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.sum() < 1:
        raise ValueError("at least one theta entry must be active")
    if len(mask) > MAX_NEIGHBOR_TERMS:
        raise ValueError(f"at most {MAX_NEIGHBOR_TERMS} interaction terms are supported")
    if grids is None:
        grids = PseudolikelihoodGrids(ps, gd, K=len(mask))

    def objective(active_values: np.ndarray) -> float:
        params = ModelParams(alpha=alpha, theta=_fill_theta(active_values, mask), shells=shells)
        return -grids.log_pl(params)

    x0 = np.zeros(int(mask.sum())) if theta0 is None else np.asarray(theta0, float)[mask]
    if not np.isfinite(objective(x0)):
        raise ValueError("pseudo-likelihood is not finite at the start: grid/prior mismatch")
    # Fitted weights scale with the point count; an initial simplex of that
    # order saves the solver a long expansion phase out of the corner.
    edge = max(1.0, 0.25 * ps.n) if theta0 is None else max(0.25, 0.02 * ps.n)
    simplex = np.vstack([x0, x0 + edge * np.eye(len(x0))])
    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={
            "xatol": SIMPLEX_XATOL,
            "fatol": SIMPLEX_FATOL,
            "maxiter": SIMPLEX_MAXITER,
            "initial_simplex": simplex,
        },
    )
    theta = _fill_theta(res.x, mask)
    return theta, -float(res.fun), int(res.nit), bool(res.success)


def fit_alpha_theta(
    ps: PointSet,
    gd: GridDensity,
    mask=(True, False, False),
    grids: PseudolikelihoodGrids | None = None,
    shells: bool = False,
    theta_init: np.ndarray | None = None,
) -> FitResult:
    """Profile the pseudo-likelihood over alpha on [0, 3].

    A seven-point scan brackets the maximum and a golden-section search
    refines it to 1e-3; the interval endpoints remain admissible estimates.
    Successive profile points warm-start each other; ``theta_init`` seeds the
    first one.  Deterministic: no randomized restarts are involved.
    """
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if grids is None:
        grids = PseudolikelihoodGrids(ps, gd, K=len(mask))

    profile: dict[float, tuple[float, np.ndarray, int, bool]] = {}
    state = {"theta": theta_init}

    def evaluate(alpha: float) -> float:
        if alpha not in profile:
            theta, lp, nit, ok = fit_theta(
                ps, gd, alpha, mask, theta0=state["theta"], grids=grids, shells=shells
            )
            profile[alpha] = (lp, theta, nit, ok)
            state["theta"] = theta
        return profile[alpha][0]

    coarse = np.linspace(ALPHA_LO, ALPHA_HI, COARSE_ALPHAS)
    values = [evaluate(a) for a in coarse]
    best_idx = int(np.argmax(values))
    lo = coarse[max(best_idx - 1, 0)]
    hi = coarse[min(best_idx + 1, len(coarse) - 1)]

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = evaluate(c), evaluate(d)
    while b - a > ALPHA_TOL:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = evaluate(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = evaluate(d)

    best_alpha = max(profile, key=lambda al: profile[al][0])
    log_pl, theta, _, ok = profile[best_alpha]
    params = ModelParams(alpha=best_alpha, theta=theta, active=mask, shells=shells)
    p = int(mask.sum()) + 1  # alpha is free and counted
    aic, bic = information_criteria(log_pl, p, ps.n)
    return FitResult(
        params=params,
        log_pl=log_pl,
        n=ps.n,
        iterations=len(profile),
        converged=ok and (b - a) <= ALPHA_TOL,
        criteria={mask_key(mask): (aic, bic)},
    )


def select_model(
    ps: PointSet, gd: GridDensity, criterion: str = "aic", shells: bool = False
) -> FitResult:
    """Fit all seven interaction masks and keep the criterion minimizer."""
    if criterion not in ("aic", "bic"):
        raise ValueError("criterion must be 'aic' or 'bic'")
    if ps.n <= MAX_NEIGHBOR_TERMS:
        raise ValueError("model selection needs more points than interaction terms")
    grids = PseudolikelihoodGrids(ps, gd, K=MAX_NEIGHBOR_TERMS)
    column = 0 if criterion == "aic" else 1
    criteria: dict[str, tuple[float, float]] = {}
    singleton_thetas: list[np.ndarray] = []
    best: FitResult | None = None
    best_mask: tuple[bool, ...] | None = None
    for mask in ALL_MASKS:
        arr = np.asarray(mask, dtype=bool)
        init = None
        if arr.sum() > 1 and singleton_thetas:
            # seed richer masks with the separately fitted single weights
            init = np.where(arr, np.sum(singleton_thetas, axis=0), 0.0)
        result = fit_alpha_theta(ps, gd, mask, grids=grids, shells=shells, theta_init=init)
        if arr.sum() == 1:
            singleton_thetas.append(result.params.theta)
        criteria[mask_key(mask)] = result.criteria[mask_key(mask)]
        if best is None or criteria[mask_key(mask)][column] < criteria[mask_key(best_mask)][column]:
            best = result
            best_mask = mask
    best.criteria = criteria
    best.selected_mask = best_mask
    return best


def param_correlations(results: list[FitResult]) -> np.ndarray:
    """Correlation matrix of (alpha, theta_1, theta_2, theta_3) estimates.

    Intended for repeated fits of the full mask to replicated diagrams; the
    values are diagnostics, not test statistics.
    """
    if len(results) < 3:
        raise ValueError("need at least three fits for a correlation estimate")
    rows = np.array(
        [[r.params.alpha, *np.resize(r.params.theta, MAX_NEIGHBOR_TERMS)] for r in results]
    )
    with np.errstate(invalid="ignore"):
        return np.corrcoef(rows, rowvar=False)
