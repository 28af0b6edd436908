"""Shared fixtures: the concentric-circles pipeline at acceptance scale.

Generation, fitting, and replication are expensive, so the session-scoped
fixtures below are built once and shared between the unit tests that need
realistic diagrams and the acceptance suite.  Each fixture records its wall
time so runtime budgets can be accounted for where they apply.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pytest

import topobag as tb

PIPELINE_SEED = 20260808
N_DIAGRAMS = 20
N_REPLICATES = 200
KDE_GRID_RES = 160
CIRCLE_BANDWIDTH = 0.1

# The scalar rule gives a smoothing guide; the pipeline halves it so the
# shape prior stays informative next to the strong nearest-neighbor term.
BANDWIDTH_SCALE = 0.5


def make_concentric_diagram(rng: np.random.Generator) -> tb.PersistenceDiagram:
    """One H0 diagram of the two-ring kernel density, infinite point kept."""
    samples = np.vstack(
        [
            tb.sample_circle(300, radius=1.0, rng=rng),
            tb.sample_circle(500, radius=2.0, rng=rng),
        ]
    )
    gf = tb.grid_kde(samples, eta=CIRCLE_BANDWIDTH, shape=(KDE_GRID_RES, KDE_GRID_RES))
    return tb.h0_persistence(gf)


@dataclass
class Pipeline:
    diagrams: list = field(default_factory=list)
    pointsets: list = field(default_factory=list)
    grid_densities: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    models: list = field(default_factory=list)
    replicates: list = field(default_factory=list)
    elapsed: dict = field(default_factory=dict)


@pytest.fixture(scope="session")
def circle_diagrams() -> Pipeline:
    t0 = time.perf_counter()
    rng = np.random.default_rng(PIPELINE_SEED)
    pipe = Pipeline()
    for _ in range(N_DIAGRAMS):
        d = make_concentric_diagram(rng)
        finite, _ = tb.strip_infinite(d)
        pipe.diagrams.append(finite)
    pipe.elapsed["generate"] = time.perf_counter() - t0
    return pipe


@pytest.fixture(scope="session")
def fitted_pipeline(circle_diagrams) -> Pipeline:
    pipe = circle_diagrams
    t0 = time.perf_counter()
    for d in pipe.diagrams:
        ps = tb.to_ppd(d)
        eta = BANDWIDTH_SCALE * tb.rule_of_thumb_bandwidth(ps)
        bw = tb.Bandwidth.isotropic(eta)
        spec = tb.default_grid_spec(ps)
        gd = tb.restrict_halfplane(tb.KernelDensity(ps.points, bw), spec)
        result = tb.fit_alpha_theta(ps, gd, (True, False, False))
        pipe.pointsets.append(ps)
        pipe.grid_densities.append(gd)
        pipe.fits.append(result)
        pipe.models.append(tb.FittedModel(result.params, bw, spec))
    pipe.elapsed["fit"] = time.perf_counter() - t0
    return pipe


@pytest.fixture(scope="session")
def replicated_pipeline(fitted_pipeline) -> Pipeline:
    pipe = fitted_pipeline
    schedule = tb.ReplicationSchedule(burn_in=100, n_b=100, n_r=N_REPLICATES, n_R=1)
    t0 = time.perf_counter()
    for i, (d, m) in enumerate(zip(pipe.diagrams, pipe.models)):
        reps, _ = tb.replicate(d, m, schedule, seed=1000 + i)
        pipe.replicates.append(reps)
    pipe.elapsed["replicate"] = time.perf_counter() - t0
    return pipe
