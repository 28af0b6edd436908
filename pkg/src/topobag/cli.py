"""Batch command line front-end: generate, fit, replicate, detect, cluster,
superpose.  Every run derives its stage randomness from the one user seed and
writes a manifest naming inputs, flags, and tool version, so outputs are a
pure function of (argv, seed).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import density, depth, diagram, fit, generate, mcmc, model

STAGES = {"generate": 0, "fit": 1, "replicate": 2, "detect": 3, "cluster": 4, "superpose": 5}


def stage_seed(user_seed: int, stage: str) -> int:
    ss = np.random.SeedSequence(entropy=user_seed, spawn_key=(STAGES[stage],))
    return int(ss.generate_state(1, np.uint64)[0])


def write_manifest(path: Path, command: str, args: argparse.Namespace, outputs, extra=None):
    record = {
        "tool": "topobag",
        "version": __version__,
        "command": command,
        "seed": args.seed,
        "stage_seed": stage_seed(args.seed, command),
        "arguments": {
            k: v for k, v in sorted(vars(args).items()) if k not in ("func",) and not callable(v)
        },
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        record.update(extra)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# generate

def _circle_samples(args, rng):
    if args.layout == "concentric":
        small = generate.sample_circle(args.n_small, radius=args.r_small, rng=rng)
        large = generate.sample_circle(args.n_large, radius=args.r_large, rng=rng)
    else:
        small = generate.sample_circle(args.n_small, radius=args.r_small, rng=rng)
        large = generate.sample_circle(
            args.n_large, radius=args.r_large, center=(args.separation, 0.0), rng=rng
        )
    return np.vstack([small, large])


def cmd_generate(args) -> int:
    out = _outdir(args)
    rng = np.random.default_rng(stage_seed(args.seed, "generate"))
    outputs = []
    counts = []
    for rep in range(args.count):
        if args.mode == "circles":
            samples = _circle_samples(args, rng)
            gf = generate.grid_kde(samples, eta=args.bandwidth, shape=(args.grid_res,) * 2)
        elif args.mode == "sphere":
            samples = generate.sample_sphere(args.n, rng=rng)
            gf = generate.grid_kde(samples, eta=args.bandwidth, shape=(args.grid_res,) * 3)
        else:  # grf
            samples = None
            spec = generate.GrfSpec(a=args.a, b=args.b, size=args.grid_res)
            gf = generate.grf_simulate(spec, rng)
        if args.keep_samples and samples is not None:
            sample_path = out / f"samples_{rep:03d}.csv"
            np.savetxt(sample_path, samples, delimiter=",", fmt="%r")
            outputs.append(sample_path)
        if args.keep_grid:
            grid_path = out / f"grid_{rep:03d}.npy"
            np.save(grid_path, gf.values)
            outputs.append(grid_path)
        connectivity = args.connectivity
        if connectivity is None:
            connectivity = 4 if gf.ndim == 2 else 6
        degrees = {"h0": (0,), "h1": (1,), "both": (0, 1)}[args.homology]
        for degree in degrees:
            if degree == 0:
                d = generate.h0_persistence(gf, connectivity=connectivity)
            else:
                if gf.ndim != 2:
                    raise ValueError("first homology is computed for 2D grids only; "
                                     "supply 3D loop diagrams as external CSV input")
                d = generate.h1_persistence_2d(gf, connectivity=4)
            d.metadata["points_with_infinite"] = str(d.n + d.n_infinite)
            d.metadata["points_finite"] = str(d.n)
            path = out / f"diagram_{rep:03d}_h{degree}.csv"
            diagram.save_csv(d, path)
            outputs.append(path)
            counts.append({"replicate": rep, "degree": degree, "finite": d.n,
                           "infinite": d.n_infinite})
    write_manifest(out / "manifest.json", "generate", args, outputs, {"diagrams": counts})
    return 0


# ---------------------------------------------------------------------------
# fit

def _prepare_pointset(path):
    d = diagram.load_csv(path)
    finite, removed = diagram.strip_infinite(d)
    if finite.n < 4:
        raise ValueError(f"{path}: too few finite points to fit ({finite.n})")
    return diagram.to_ppd(finite), removed


def _bandwidth_for(ps, choice: str):
    if choice == "auto":
        return density.Bandwidth.isotropic(density.rule_of_thumb_bandwidth(ps))
    if choice == "matrix":
        return density.normal_reference_bandwidth(ps)
    return density.Bandwidth.isotropic(float(choice))


def cmd_fit(args) -> int:
    out = _outdir(args)
    outputs = []
    full_mask_fits = []
    for path in args.inputs:
        ps, removed = _prepare_pointset(path)
        bw = _bandwidth_for(ps, args.bandwidth)
        spec = density.default_grid_spec(ps, nx1=args.nx1, nx2=args.nx2)
        gd = density.restrict_halfplane(density.KernelDensity(ps.points, bw), spec)
        if args.mask:
            mask = tuple(ch == "1" for ch in args.mask)
            result = fit.fit_alpha_theta(ps, gd, mask)
            result.selected_mask = mask
        else:
            result = fit.select_model(ps, gd, criterion=args.criterion)
        stem = Path(path).stem
        fitted = model.FittedModel(result.params, bw, spec)
        model_path = out / f"{stem}_model.json"
        model.save_model(fitted, model_path)
        fit_path = out / f"{stem}_fit.json"
        with open(fit_path, "w") as fh:
            json.dump(
                {
                    "alpha": result.params.alpha,
                    "theta": [float(t) for t in result.params.theta],
                    "theta_per_point": [float(t) for t in result.theta_per_point],
                    "selected_mask": fit.mask_key(result.selected_mask)
                    if result.selected_mask
                    else None,
                    "log_pl": result.log_pl,
                    "n": result.n,
                    "converged": result.converged,
                    "criteria": {k: list(v) for k, v in result.criteria.items()},
                    "infinite_points_removed": removed,
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
        outputs.extend([model_path, fit_path])
        if args.correlations:
            ps2, _ = _prepare_pointset(path)
            gd2 = density.restrict_halfplane(density.KernelDensity(ps2.points, bw), spec)
            full_mask_fits.append(fit.fit_alpha_theta(ps2, gd2, (True, True, True)))
    if args.correlations and len(full_mask_fits) >= 3:
        corr_path = out / "correlations.json"
        corr = fit.param_correlations(full_mask_fits)
        with open(corr_path, "w") as fh:
            json.dump(
                {
                    "order": ["alpha", "theta1", "theta2", "theta3"],
                    "matrix": [[float(v) for v in row] for row in corr],
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
        outputs.append(corr_path)
    write_manifest(out / "manifest.json", "fit", args, outputs)
    return 0


# ---------------------------------------------------------------------------
# replicate

def cmd_replicate(args) -> int:
    out = _outdir(args)
    d = diagram.load_csv(args.diagram)
    finite, removed = diagram.strip_infinite(d)
    fitted = model.load_model(args.model)
    schedule = mcmc.ReplicationSchedule(
        burn_in=args.burn, n_b=args.nb, n_r=args.nr, n_R=args.nR
    )
    legacy = None
    if args.legacy:
        legacy = model.LegacyParams(
            theta_h=args.theta_h,
            theta_v=args.theta_v,
            theta=[float(t) for t in args.theta.split(",")],
            delta=args.delta,
        )
    replicates, info = mcmc.replicate(
        finite,
        fitted,
        schedule,
        seed=stage_seed(args.seed, "replicate"),
        legacy=legacy,
        n_jobs=args.jobs,
    )
    outputs = []
    for i, rep in enumerate(replicates):
        path = out / f"replicate_{i:04d}.csv"
        diagram.save_csv(rep, path)
        outputs.append(path)
    write_manifest(
        out / "manifest.json",
        "replicate",
        args,
        outputs,
        {
            "replicates": [p.name for p in outputs],
            "n_replicates": len(outputs),
            "infinite_points_removed": removed,
            "acceptance_rates": info["acceptance_rates"],
            "zero_prior_rejections": info["zero_prior_rejections"],
        },
    )
    return 0


# ---------------------------------------------------------------------------
# detect

def _parse_cgrid(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError("cgrid must look like lo:hi:step")
    return float(parts[0]), float(parts[1]), float(parts[2])


def cmd_detect(args) -> int:
    out = _outdir(args)
    original = diagram.load_csv(args.diagram)
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    base = Path(args.manifest).parent
    names = manifest.get("replicates")
    if names is None:
        raise ValueError(f"{args.manifest}: not a replicate manifest")
    replicates = [diagram.load_csv(base / name) for name in names]
    if args.n1 + args.n2 > len(replicates):
        raise ValueError(
            f"n1 + n2 = {args.n1 + args.n2} exceeds the {len(replicates)} "
            "replicates listed in the manifest"
        )
    lo, hi, step = _parse_cgrid(args.cgrid)
    config = depth.DetectionConfig(
        n1=args.n1, n2=args.n2, p_star=args.pstar, A=args.A, epsilon=args.eps,
        c_lo=lo, c_hi=hi, c_step=step,
    )
    rng = np.random.default_rng(stage_seed(args.seed, "detect"))
    report = depth.detect(original, replicates, config, rng=rng, threshold=args.threshold)
    report_path = out / "detection.json"
    with open(report_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    finite, _ = diagram.strip_infinite(original)
    csv_path = out / "detection_points.csv"
    with open(csv_path, "w") as fh:
        fh.write("x,y,lifetime,f,p_value\n")
        for (b, dth), fval, pval in zip(finite.points, report.f, report.p_values):
            fh.write(
                f"{float(b)!r},{float(dth)!r},{float(b - dth)!r},"
                f"{float(fval)!r},{float(pval)!r}\n"
            )
    write_manifest(
        out / "manifest.json", "detect", args, [report_path, csv_path],
        {"calibrated_c": report.calibrated_c},
    )
    return 0


# ---------------------------------------------------------------------------
# cluster

def cmd_cluster(args) -> int:
    out = _outdir(args)
    d = diagram.load_csv(args.diagram)
    finite, _ = diagram.strip_infinite(d)
    rng = np.random.default_rng(stage_seed(args.seed, "cluster"))
    result = depth.cluster_diagram(
        finite,
        root_percentile=args.percentile,
        min_fraction=args.min_fraction,
        rng=rng,
        features=args.features,
    )
    csv_path = out / "clusters.csv"
    with open(csv_path, "w") as fh:
        fh.write("birth,death,lifetime,label\n")
        for (b, dth), label in zip(finite.points, result.labels):
            fh.write(f"{float(b)!r},{float(dth)!r},{float(b - dth)!r},{int(label)}\n")
    summary_path = out / "clusters.json"
    with open(summary_path, "w") as fh:
        json.dump(
            {
                "n_clusters": result.n_clusters,
                "threshold": result.threshold,
                "seed_indices": [int(i) for i in result.seed_indices],
                "sizes": {
                    str(label): int(np.sum(result.labels == label))
                    for label in range(result.n_clusters)
                },
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    write_manifest(out / "manifest.json", "cluster", args, [csv_path, summary_path])
    return 0


# ---------------------------------------------------------------------------
# superpose

def cmd_superpose(args) -> int:
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with open(out_path, "w") as fh:
        fh.write("source,birth,death\n")
        for path in args.inputs:
            d = diagram.load_csv(path)
            label = Path(path).stem
            for b, dth in d.points:
                fh.write(f"{label},{float(b)!r},{float(dth)!r}\n")
                rows += 1
            for b in d.infinite_births:
                fh.write(f"{label},{float(b)!r},inf\n")
                rows += 1
    manifest_path = out_path.with_suffix(".manifest.json")
    write_manifest(manifest_path, "superpose", args, [out_path], {"rows": rows})
    return 0


# ---------------------------------------------------------------------------
# parser plumbing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topobag",
        description="Fit, replicate, and test persistence diagrams as planar point processes.",
    )
    parser.add_argument("--config", help="flat key=value file of defaults; flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="synthesize samples, fields, and diagrams")
    gen.add_argument("mode", choices=["circles", "sphere", "grf"])
    gen.add_argument("--layout", choices=["concentric", "nonconcentric"], default="concentric")
    gen.add_argument("--n-small", type=int, default=300)
    gen.add_argument("--n-large", type=int, default=500)
    gen.add_argument("--r-small", type=float, default=1.0)
    gen.add_argument("--r-large", type=float, default=2.0)
    gen.add_argument("--separation", type=float, default=2.5)
    gen.add_argument("--n", type=int, default=1000, help="sphere sample size")
    gen.add_argument("--bandwidth", type=float, default=0.1)
    gen.add_argument("--grid-res", type=int, default=128)
    gen.add_argument("--a", type=float, default=1.0)
    gen.add_argument("--b", type=float, default=100.0)
    gen.add_argument("--count", type=int, default=1)
    gen.add_argument("--homology", choices=["h0", "h1", "both"], default="h0")
    gen.add_argument("--connectivity", type=int, default=None,
                     help="grid adjacency; defaults to 4 in 2D and 6 in 3D")
    gen.add_argument("--keep-samples", action="store_true")
    gen.add_argument("--keep-grid", action="store_true")
    gen.add_argument("--out", default="out")
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=cmd_generate)

    fit_p = sub.add_parser("fit", help="estimate model parameters from diagram CSVs")
    fit_p.add_argument("inputs", nargs="+")
    fit_p.add_argument("--criterion", choices=["aic", "bic"], default="aic")
    fit_p.add_argument("--mask", help="fixed active-theta bitstring such as 100")
    fit_p.add_argument("--bandwidth", default="auto",
                       help="'auto' (scalar rule), 'matrix' (full matrix rule), or a number")
    fit_p.add_argument("--nx1", type=int, default=101)
    fit_p.add_argument("--nx2", type=int, default=101)
    fit_p.add_argument("--correlations", action="store_true",
                       help="also fit the full mask per input and emit the estimate correlations")
    fit_p.add_argument("--out", default="out")
    fit_p.add_argument("--seed", type=int, default=0)
    fit_p.set_defaults(func=cmd_fit)

    rep = sub.add_parser("replicate", help="MCMC replicate diagrams from a fitted model")
    rep.add_argument("diagram")
    rep.add_argument("model")
    rep.add_argument("--burn", type=int, default=100)
    rep.add_argument("--nb", type=int, default=100)
    rep.add_argument("--nr", type=int, default=1)
    rep.add_argument("--nR", type=int, default=1)
    rep.add_argument("--legacy", action="store_true",
                     help="use the second-moment legacy energy instead of the fitted model")
    rep.add_argument("--theta-h", type=float, default=0.0)
    rep.add_argument("--theta-v", type=float, default=0.0)
    rep.add_argument("--theta", default="0.0", help="comma list of legacy interaction weights")
    rep.add_argument("--delta", type=float, default=1.0)
    rep.add_argument("--jobs", type=int, default=1)
    rep.add_argument("--out", default="out")
    rep.add_argument("--seed", type=int, default=0)
    rep.set_defaults(func=cmd_replicate)

    det = sub.add_parser("detect", help="bagplot p-values for one diagram against replicates")
    det.add_argument("diagram")
    det.add_argument("manifest", help="manifest.json written by the replicate command")
    det.add_argument("--pstar", type=float, default=0.05)
    det.add_argument("--A", type=int, default=2)
    det.add_argument("--eps", type=float, default=0.001)
    det.add_argument("--cgrid", default="1.0:5.0:0.02")
    det.add_argument("--n1", type=int, required=True)
    det.add_argument("--n2", type=int, required=True)
    det.add_argument("--threshold", type=float, default=0.05)
    det.add_argument("--out", default="out")
    det.add_argument("--seed", type=int, default=0)
    det.set_defaults(func=cmd_detect)

    clu = sub.add_parser("cluster", help="lifetime clustering of one diagram")
    clu.add_argument("diagram")
    clu.add_argument("--percentile", type=float, default=75.0)
    clu.add_argument("--min-fraction", type=float, default=0.05)
    clu.add_argument("--features", choices=["death-lifetime", "lifetime"],
                     default="death-lifetime")
    clu.add_argument("--out", default="out")
    clu.add_argument("--seed", type=int, default=0)
    clu.set_defaults(func=cmd_cluster)

    sup = sub.add_parser("superpose", help="concatenate diagrams into one labeled CSV")
    sup.add_argument("inputs", nargs="+")
    sup.add_argument("--out", default="superposed.csv")
    sup.add_argument("--seed", type=int, default=0)
    sup.set_defaults(func=cmd_superpose)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Load key=value defaults from --config; explicit flags still win."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    try:
        path = argv[idx + 1]
    except IndexError:
        raise ValueError("--config needs a file argument") from None
    defaults = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: bad config line {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            defaults[key.replace("-", "_")] = value
    parser.set_defaults(**defaults)
    for action in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
        known = {a.dest for a in action._actions}  # noqa: SLF001
        action.set_defaults(**{k: _coerce(action, k, v) for k, v in defaults.items() if k in known})
    return argv[:idx] + argv[idx + 2 :]


def _coerce(subparser, dest, value):
    for action in subparser._actions:  # noqa: SLF001
        if action.dest == dest and action.type is not None:
            return action.type(value)
        if action.dest == dest and isinstance(action.const, bool):
            return value.lower() in ("1", "true", "yes")
    return value


def run(argv: list[str]) -> int:
    """Dispatch one invocation; exit code 2 for usage, 1 for computation errors."""
    parser = build_parser()
    try:
        argv = _apply_config(parser, list(argv))
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))
