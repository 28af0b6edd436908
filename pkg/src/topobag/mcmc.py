"""Metropolis-within-Gibbs replication of projected diagrams.

One sweep updates every point once, in index order.  Proposals come from the
tabulated shape prior of the initial diagram, which stays frozen for the
chain's lifetime (refreshing it each block is available but off by default).
For current point x and proposal x*, the move is accepted with probability

    rho(x, x*) = min{1, exp(-L(x*|N_x) + L(x|N_x)) * (fbar(x) / fbar(x*))^(1 - alpha)}

where N_x holds the nearest neighbors of x among the other points.  Blocks of
sweeps are recorded as approximately independent replicate diagrams.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .density import KernelDensity, RectangleSampler, build_sampler, restrict_halfplane
from .diagram import PersistenceDiagram, PointSet, from_ppd, to_ppd
from .model import FittedModel, LegacyParams, ModelParams, legacy_point_energy, local_energy


@dataclass(frozen=True)
class ReplicationSchedule:
    """Burn-in plus block structure: n_r blocks of n_b sweeps, n_R runs.

    The total number of replicate diagrams is n_r * n_R.
    """

    burn_in: int = 100
    n_b: int = 100
    n_r: int = 1
    n_R: int = 1

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError("burn-in must be nonnegative")
        if min(self.n_b, self.n_r, self.n_R) < 1:
            raise ValueError("n_b, n_r and n_R must all be at least 1")

    @property
    def total(self) -> int:
        return self.n_r * self.n_R


@dataclass
class ChainState:
    """Evolving configuration with its rng stream and move counters."""

    config: np.ndarray
    rng: np.random.Generator
    log_prior: np.ndarray
    sweep_count: int = 0
    accept_count: int = 0
    propose_count: int = 0
    zero_prior_count: int = 0

    @property
    def n(self) -> int:
        return len(self.config)

    @property
    def acceptance_rate(self) -> float:
        if self.propose_count == 0:
            return 0.0
        return self.accept_count / self.propose_count


def _neighbor_block(rest: np.ndarray, x: np.ndarray, K: int) -> np.ndarray:
    """Positions of the K nearest rest-points to x, nearest first.

    Ties go to the lower index, matching the fitting-side convention.
    Squared distances may overflow to inf for pathological coordinates,
    which simply keeps those points out of the neighbor block.
    """
    with np.errstate(over="ignore"):
        d2 = np.sum((rest - x) ** 2, axis=1)
    order = np.argsort(d2, kind="stable")
    return rest[order[:K]]


def log_acceptance_ratio(
    x, x_star, neighbor_pts, params: ModelParams, gd, log_f_x=None, log_f_star=None
) -> float:
    """Unclamped log ratio ln r(x, x*) for a fixed neighbor set.

    For a held neighbor set the formula is algebraically antisymmetric under
    swapping x and x*.  ``log_f_x`` / ``log_f_star`` shortcut the prior
    evaluations when the caller has them cached.
    """
    if log_f_x is None:
        log_f_x = float(gd.log_density(np.asarray(x, float).reshape(1, 2))[0])
    if log_f_star is None:
        log_f_star = float(gd.log_density(np.asarray(x_star, float).reshape(1, 2))[0])
    energy_x = local_energy(x, neighbor_pts, params.theta, shells=params.shells)
    energy_star = local_energy(x_star, neighbor_pts, params.theta, shells=params.shells)
    return (energy_x - energy_star) + (1.0 - params.alpha) * (log_f_x - log_f_star)


def acceptance_probability(x, x_star, config, params: ModelParams, gd) -> float:
    """Probability of replacing x by x* within the given configuration.

    The neighbor set is the K nearest points of the configuration with x
    itself removed.  A vanished prior at either end auto-rejects.
    """
    x = np.asarray(x, dtype=float)
    config = np.atleast_2d(np.asarray(config, dtype=float))
    rest = config[~np.all(config == x, axis=1)]
    if len(rest) < params.K:
        raise ValueError("configuration too small for the neighbor count")
    nbrs = _neighbor_block(rest, x, params.K)
    log_f = gd.log_density(np.vstack([x, np.asarray(x_star, float)]))
    if not np.all(np.isfinite(log_f)):
        return 0.0
    log_r = log_acceptance_ratio(
        x, x_star, nbrs, params, gd, log_f_x=float(log_f[0]), log_f_star=float(log_f[1])
    )
    if log_r >= 0.0:
        return 1.0
    return float(math.exp(log_r))


def sweep(
    state: ChainState,
    params: ModelParams | LegacyParams,
    gd,
    sampler: RectangleSampler,
    order: str = "fixed",
) -> ChainState:
    """One pass over the configuration: exactly N proposals, in place.

    Per sweep the rng is consumed as one batch of N cell draws, an (N, 2)
    block of in-cell offsets, N acceptance uniforms, and (random order only)
    one permutation.  ``params`` may be the legacy parameter set, in which
    case the legacy conditional energy replaces the local energy and the
    prior exponent is fixed at one.
    """
    n = state.n
    rng = state.rng
    config = state.config
    proposals = sampler.sample(rng, n)
    unifs = rng.random(n)
    indices = rng.permutation(n) if order == "random" else range(n)
    log_f_prop = gd.log_density(proposals)
    legacy = isinstance(params, LegacyParams)
    if legacy:
        k_terms = min(params.K, n - 1)
        weights = params.interaction_weights()[:k_terms]
        gamma = 1.0
    else:
        weights = params.interaction_weights()
        # Trailing zero weights contribute nothing; shrink the neighbor count.
        nonzero = np.nonzero(weights)[0]
        k_terms = min(int(nonzero[-1]) + 1 if nonzero.size else 0, n - 1)
        weights = weights[:k_terms]
        gamma = 1.0 - params.alpha
    single = k_terms == 1 and not legacy
    w0 = float(weights[0]) if single else 0.0
    col0 = config[:, 0]
    col1 = config[:, 1]

    # squared distances may overflow to inf for pathological coordinates;
    # inf just means "never a neighbor", so the warning carries no signal
    with np.errstate(over="ignore"):
        return _sweep_loop(
            state, params, gd, sampler, indices, proposals, unifs, log_f_prop,
            legacy, k_terms, weights, gamma, single, w0, col0, col1,
        )


def _sweep_loop(
    state, params, gd, sampler, indices, proposals, unifs, log_f_prop,
    legacy, k_terms, weights, gamma, single, w0, col0, col1,
):
    n = state.n
    config = state.config
    if legacy:
        sum_x1 = float(config[:, 0].sum())

    for k in indices:
        state.propose_count += 1
        lf_x = state.log_prior[k]
        lf_star = log_f_prop[k]
        if not (np.isfinite(lf_x) and np.isfinite(lf_star)):
            state.zero_prior_count += 1
            continue
        x0, x1 = config[k]
        s0, s1 = proposals[k]
        if k_terms == 0:
            log_r = gamma * (lf_x - lf_star)
        elif single:
            d2 = (col0 - x0) ** 2 + (col1 - x1) ** 2
            d2[k] = np.inf
            j = int(np.argmin(d2))
            log_r = w0 * (
                math.sqrt(d2[j]) - math.hypot(col0[j] - s0, col1[j] - s1)
            ) + gamma * (lf_x - lf_star)
        else:
            d2 = (col0 - x0) ** 2 + (col1 - x1) ** 2
            d2[k] = np.inf
            nbr_idx = np.argsort(d2, kind="stable")[:k_terms]
            d_x = np.sqrt(d2[nbr_idx])
            d_star = np.hypot(col0[nbr_idx] - s0, col1[nbr_idx] - s1)
            if legacy:
                rest_mean = (sum_x1 - x0) / (n - 1)
                e_x = (
                    params.theta_h * (x0 - rest_mean) ** 2
                    + params.theta_v * x1 * x1
                    + float(weights @ np.where(d_x <= params.delta, d_x, 0.0))
                    / params.delta**2
                )
                e_star = (
                    params.theta_h * (s0 - rest_mean) ** 2
                    + params.theta_v * s1 * s1
                    + float(weights @ np.where(d_star <= params.delta, d_star, 0.0))
                    / params.delta**2
                )
            else:
                # interaction_weights already reflects nested vs shell mode
                e_x = float(weights @ d_x)
                e_star = float(weights @ d_star)
            log_r = (e_x - e_star) + gamma * (lf_x - lf_star)
        rho = 1.0 if log_r >= 0.0 else math.exp(log_r)
        if unifs[k] < rho:
            if legacy:
                sum_x1 += s0 - x0
            config[k, 0] = s0
            config[k, 1] = s1
            state.log_prior[k] = lf_star
            state.accept_count += 1
    state.sweep_count += 1
    return state


def start_chain(ppd: PointSet, gd, rng: np.random.Generator) -> ChainState:
    config = ppd.points.copy()
    return ChainState(config=config, rng=rng, log_prior=gd.log_density(config))


def run_chain(
    ppd: PointSet,
    params: ModelParams | LegacyParams,
    gd,
    sampler: RectangleSampler,
    schedule: ReplicationSchedule,
    rng: np.random.Generator,
    order: str = "fixed",
    refresh_each_block: bool = False,
    bandwidth=None,
) -> tuple[list[PointSet], ChainState]:
    """Burn in, then emit the configuration after every block of sweeps."""
    state = start_chain(ppd, gd, rng)
    for _ in range(schedule.burn_in):
        sweep(state, params, gd, sampler, order=order)
    outputs = []
    for _ in range(schedule.n_r):
        if refresh_each_block and bandwidth is not None:
            # Experimental: re-estimate the proposal from the current state.
            kde = KernelDensity(state.config.copy(), bandwidth)
            gd = restrict_halfplane(kde, gd.spec)
            sampler = build_sampler(gd, *sampler.shape)
            state.log_prior = gd.log_density(state.config)
        for _ in range(schedule.n_b):
            sweep(state, params, gd, sampler, order=order)
        outputs.append(PointSet(state.config.copy()))
    return outputs, state


def _replicate_run(args):
    (ppd, model, schedule, seed, run, order, refresh, legacy) = args
    kde = KernelDensity(ppd.points, model.bandwidth)
    gd = restrict_halfplane(kde, model.grid)
    sampler = build_sampler(gd)
    params = legacy if legacy is not None else model.params
    rng = np.random.default_rng(seed ^ run)
    outputs, state = run_chain(
        ppd,
        params,
        gd,
        sampler,
        schedule,
        rng,
        order=order,
        refresh_each_block=refresh,
        bandwidth=model.bandwidth,
    )
    return outputs, state.acceptance_rate, state.zero_prior_count


def replicate(
    diagram: PersistenceDiagram,
    model: FittedModel,
    schedule: ReplicationSchedule,
    seed: int,
    legacy: LegacyParams | None = None,
    order: str = "fixed",
    refresh_each_block: bool = False,
    n_jobs: int = 1,
) -> tuple[list[PersistenceDiagram], dict]:
    """Produce n_r * n_R replicate diagrams from one finite diagram.

    Runs n_R independent chains, each starting from the projected original;
    chain r draws from the stream seeded with seed XOR r, so output is fully
    determined by (diagram, model, schedule, seed).  Returns the replicates
    in run-major block order plus a small info dict with acceptance rates.
    """
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ppd = to_ppd(diagram)
    job_args = [
        (ppd, model, schedule, seed, run, order, refresh_each_block, legacy)
        for run in range(schedule.n_R)
    ]
    if n_jobs > 1 and schedule.n_R > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_replicate_run, job_args))
    else:
        results = [_replicate_run(a) for a in job_args]
    diagrams: list[PersistenceDiagram] = []
    rates = []
    zero_prior = 0
    for run, (outputs, rate, zp) in enumerate(results):
        rates.append(rate)
        zero_prior += zp
        for block, ps in enumerate(outputs):
            diagrams.append(
                from_ppd(
                    ps,
                    degree=diagram.degree,
                    metadata={"run": str(run), "block": str(block)},
                )
            )
    info = {"acceptance_rates": rates, "zero_prior_rejections": zero_prior}
    return diagrams, info
