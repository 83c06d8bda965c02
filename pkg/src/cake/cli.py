"""Command-line surface: generate / score / eval / bounds / bench.

Every command is deterministic given its configuration (wall-clock
timings aside): all randomness derives from one --seed through named
substreams. Options may come from a JSON config file (--config) whose
keys mirror the long flags; explicit flags win, unknown keys are
rejected. Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import baseline, bounds, evaluate
from .cluster import (
    EnsembleConfig,
    build_ensemble,
    cluster_once,
    ensemble_manifest,
    export_labels,
    gmm_fit,
    gmm_pmax,
    import_labels,
)
from .data import (
    SyntheticSpec,
    dataset_manifest,
    gaussian_blobs,
    generate_synthetic,
    load_csv,
    save_csv,
    write_manifest,
)
from .evaluate import FilterSpec
from .rng import child_seed
from .score import ScoreTable, compute_scores

__all__ = ["main"]


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in str(text).split(",") if part != ""]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in str(text).split(",") if part != ""]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _out_dir(args) -> str:
    out = args.out or os.environ.get("CAKE_OUT_DIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _merge_config(args: argparse.Namespace, argv: list[str], parser: argparse.ArgumentParser) -> None:
    """Fill args from --config JSON; explicit flags keep priority."""
    if not getattr(args, "config", None):
        return
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    dest_to_opts = {
        action.dest: action.option_strings
        for action in parser._actions
        if action.option_strings
    }
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in dest_to_opts or dest == "config":
            raise UsageError(f"unknown config key {key!r}")
        if any(opt in argv for opt in dest_to_opts[dest]):
            continue  # explicit flag wins
        setattr(args, dest, value)


def _ensemble_config(args) -> EnsembleConfig:
    try:
        return EnsembleConfig(
            algorithm=args.algorithm,
            n_runs=int(args.runs),
            k=int(args.k),
            seed=int(args.seed),
            max_iter=int(args.max_iter),
            tol=float(args.tol),
            batch_size=None if args.batch_size is None else int(args.batch_size),
            covariance=args.covariance,
            reg=None if args.reg is None else float(args.reg),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_dataset(args):
    if args.data is None:
        raise UsageError("--data is required")
    label_col = args.label_column
    data, truth = load_csv(args.data, has_header=not args.no_header, label_column=label_col)
    return data, truth


# --- commands ---------------------------------------------------------------


def cmd_generate(args) -> int:
    out = _out_dir(args)
    spec = SyntheticSpec(args.family, int(args.seed))
    try:
        data, truth = generate_synthetic(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    family = spec.canonical_family()
    data_path = os.path.join(out, f"{family}_data.csv")
    save_csv(data_path, data, labels=truth.labels)
    write_manifest(os.path.join(out, f"{family}_manifest.json"), dataset_manifest(family, args.seed, data, truth))
    print(f"wrote {data_path} ({data.shape[0]} x {data.shape[1]} + label column)")
    return 0


def cmd_score(args) -> int:
    out = _out_dir(args)
    data, _ = _load_dataset(args)

    if args.import_labels:
        ensemble = import_labels(args.import_labels)
        if ensemble.n != data.shape[0]:
            raise UsageError(
                f"label matrix covers {ensemble.n} points but data has {data.shape[0]}"
            )
        manifest = {"imported_from": args.import_labels, "R": ensemble.n_runs, "k": ensemble.k}
    else:
        config = _ensemble_config(args)
        ensemble = build_ensemble(data, config, workers=args.threads)
        manifest = ensemble_manifest(config, ensemble)

    table = compute_scores(data, ensemble, silhouette_mode=args.mode, remap=args.remap)

    if args.baselines != "none":
        cons = baseline.consensus(ensemble)
        table.baselines["consensus_agree"] = cons.per_point_agreement
        table.baselines["entropy_hhat"] = baseline.entropy_agreement(ensemble, cons).h_hat
    if args.baselines == "all":
        if args.import_labels:
            raise UsageError("--baselines all needs ensemble flags (bootstrap recluster), not imported labels")
        config = _ensemble_config(args)
        boot = baseline.bootstrap_stability(
            data, config, baseline.BootstrapConfig(n_boot=config.n_runs, seed=child_seed(config.seed, "boot"))
        )
        table.baselines["boot"] = boot.scores
        model = gmm_fit(data, config.k, seed=child_seed(config.seed, "gmm"), covariance=args.covariance)
        table.baselines["gmm_pmax"] = gmm_pmax(model, data)
        table.baselines["fusion"] = baseline.rank_average_fusion(table.cake_hm, table.baselines["gmm_pmax"])

    scores_csv = os.path.join(out, "scores.csv")
    table.to_csv(scores_csv)
    if args.format == "json":
        table.to_json(os.path.join(out, "scores.json"))
    write_manifest(os.path.join(out, "ensemble_manifest.json"), manifest)
    if args.save_labels:
        export_labels(os.path.join(out, "ensemble_labels.csv"), ensemble)
    print(f"wrote {scores_csv} ({table.n} rows, columns: {','.join(table.column_names)})")
    return 0


def _reference_partition(data, args, k: int):
    seed = child_seed(int(args.seed), "reference")
    config = EnsembleConfig(algorithm=args.ref_algorithm, n_runs=2, k=k, seed=seed)
    return cluster_once(data, config, seed)


def cmd_eval(args) -> int:
    out = _out_dir(args)
    data, truth = _load_dataset(args)
    if truth is None:
        raise UsageError("the chosen protocol needs ground truth; pass --label-column")
    scores = ScoreTable.from_csv(args.scores) if args.scores else None

    report: dict = {
        "dataset": {"path": args.data, "n": int(data.shape[0]), "d": int(data.shape[1])},
        "config": {"protocol": args.protocol, "seed": int(args.seed)},
        "metrics": {},
        "curves": {},
        "intervals": {},
    }

    def need_scores() -> ScoreTable:
        if scores is None:
            raise UsageError("this protocol needs --scores")
        return scores

    if args.protocol == "filter":
        config = _ensemble_config(args)
        table = need_scores()
        criteria = args.criteria.split(",") if args.criteria else ["random", "c", "s_tilde", "cake_pr", "cake_hm"]
        for criterion in ["full", *criteria]:
            keep = 1.0 if criterion == "full" else float(args.keep_fraction)
            crit = "random" if criterion == "full" else criterion
            spec = FilterSpec(crit, keep_fraction=keep, seed=int(args.seed))
            try:
                result = evaluate.filter_and_recluster(data, table, spec, config, truth, trials=int(args.trials))
            except KeyError as exc:
                raise UsageError(f"criterion {criterion!r} not present in score table: {exc}") from None
            report["intervals"][criterion] = {
                name: {"mean": ci.mean, "half_width": ci.half_width, "lo": ci.lo, "hi": ci.hi}
                for name, ci in result.metrics.items()
            }
    elif args.protocol in ("coverage", "aurc", "spearman"):
        table = need_scores()
        column = table.column(args.score_column)
        reference = _reference_partition(data, args, int(args.k))
        if args.protocol == "coverage":
            grid = np.arange(0.1, 1.0001, 0.05)
            curve = evaluate.coverage_accuracy(column, reference, truth, grid)
            curve.to_csv(os.path.join(out, "coverage_accuracy.csv"), names=("coverage", "accuracy"))
            report["curves"]["coverage_accuracy"] = {"x": curve.x.tolist(), "y": curve.y.tolist(), "kind": curve.kind}
            report["metrics"]["accuracy_full"] = float(curve.y[-1])
        elif args.protocol == "aurc":
            report["metrics"]["aurc"] = evaluate.aurc(column, reference, truth)
        else:
            report["metrics"]["spearman"] = evaluate.spearman_percentile(
                column, reference, truth, bins=int(args.bins)
            )
    elif args.protocol == "correctness":
        table = need_scores()
        if not args.labels:
            raise UsageError("the correctness protocol needs --labels (the ensemble label matrix)")
        ensemble = import_labels(args.labels)
        correct = evaluate.consensus_correctness_labels(ensemble, truth)
        mask = np.asarray(truth.labels) >= 0
        for name in table.column_names:
            col = table.column(name)
            report["metrics"][f"auroc_{name}"] = evaluate.auroc(col[mask], correct[mask])
            report["metrics"][f"auprc_{name}"] = evaluate.auprc(col[mask], correct[mask])
    elif args.protocol == "convergence":
        config = _ensemble_config(args)
        r_grid = _parse_int_list(args.r_grid)
        points = evaluate.convergence_study(
            data, config, r_grid, n_subensembles=int(args.subensembles),
            pool_size=None if args.pool_size is None else int(args.pool_size),
        )
        rows = [{"R": p.n_runs, "median_std": p.median_std, "q25": p.q25, "q75": p.q75} for p in points]
        report["metrics"]["convergence"] = rows
        with open(os.path.join(out, "convergence.csv"), "w") as fh:
            fh.write("R,median_std,q25,q75\n")
            for row in rows:
                fh.write(f"{row['R']},{row['median_std']:.17g},{row['q25']:.17g},{row['q75']:.17g}\n")
    else:
        raise UsageError(f"unknown protocol {args.protocol!r}")

    report_path = os.path.join(out, "report.json")
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    print(f"wrote {report_path}")
    return 0


def cmd_bounds(args) -> int:
    out = _out_dir(args)
    r_grid = _parse_int_list(args.r_grid)
    gammas = _parse_float_list(args.gammas)
    taus = _parse_float_list(args.taus)
    ks = _parse_int_list(args.ks)
    if any(g <= 0 for g in gammas):
        raise UsageError("margins gamma must be positive")
    if all(tau <= 1.0 / k for tau in taus for k in ks):
        raise UsageError("no feasible (tau, k) cell: every tau <= 1/k")

    mis = bounds.misranking_sweep(r_grid, gammas, ks, trials=int(args.trials), seed=int(args.seed))
    fp = bounds.false_positive_sweep(r_grid, taus, ks, trials=int(args.trials), seed=int(args.seed))
    bounds.write_sweep_csv(os.path.join(out, "bounds_misranking.csv"), mis)
    bounds.write_sweep_csv(os.path.join(out, "bounds_false_positive.csv"), fp)

    violations = [row for row in mis + fp if not row.holds]
    print(f"misranking cells: {len(mis)}, false-positive cells: {len(fp)}, violations: {len(violations)}")
    for row in violations:
        print(
            f"VIOLATION R={row.R} k={row.k} at {row.gamma_or_tau}: "
            f"empirical {row.empirical:.6f} > bound {row.bound:.6f} + 3*{row.stderr:.6f}",
            file=sys.stderr,
        )
    return 1 if violations else 0


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if a.std() == 0 or b.std() == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def cmd_bench(args) -> int:
    out = _out_dir(args)
    sizes = _parse_int_list(args.sizes)
    r_values = _parse_int_list(args.rs)
    rows = []
    for n in sizes:
        data, _ = gaussian_blobs(n, int(args.d), int(args.k), int(args.seed))
        for R in r_values:
            config = EnsembleConfig("kmeans_random", R, int(args.k), int(args.seed), max_iter=int(args.max_iter))
            t0 = time.perf_counter()
            ensemble = build_ensemble(data, config, workers=args.threads)
            t_build = time.perf_counter() - t0

            t0 = time.perf_counter()
            proxy = compute_scores(data, ensemble, silhouette_mode="centroid")
            t_proxy = time.perf_counter() - t0

            t_exact = float("nan")
            pearson = float("nan")
            mae = float("nan")
            if not args.proxy_only:
                t0 = time.perf_counter()
                exact = compute_scores(data, ensemble, silhouette_mode="exact")
                t_exact = time.perf_counter() - t0
                pearson = _pearson(exact.cake_hm, proxy.cake_hm)
                mae = float(np.abs(exact.cake_hm - proxy.cake_hm).mean())
            rows.append((n, R, t_build, t_exact, t_proxy, pearson, mae))
            print(
                f"n={n} R={R}: build {t_build:.2f}s, exact {t_exact:.2f}s, "
                f"approx {t_proxy:.2f}s, corr {pearson:.3f}, mae {mae:.3f}"
            )

    bench_path = os.path.join(out, "bench.csv")
    with open(bench_path, "w") as fh:
        fh.write("n,R,ensemble_s,cake_exact_s,cake_approx_s,pearson_corr,mae\n")
        for row in rows:
            fh.write(",".join(format(v, ".17g") if isinstance(v, float) else str(v) for v in row) + "\n")
    print(f"wrote {bench_path}")
    return 0


# --- parser -----------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed; all substreams derive from it")
    parser.add_argument("--out", default=None, help="output directory (env CAKE_OUT_DIR overrides the default '.')")
    parser.add_argument("--threads", type=int, default=os.cpu_count(), help="worker cap for independent runs")
    parser.add_argument("--config", default=None, help="JSON file with defaults mirroring the flags")


def _add_data(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=False, help="dataset CSV (numeric features)")
    parser.add_argument("--label-column", type=int, default=None, help="ground-truth column index in the data CSV")
    parser.add_argument("--no-header", action="store_true", help="data CSV has no header row")


def _add_ensemble(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--algorithm", default="kmeans_random",
                        choices=["kmeans_random", "kmeans_plusplus", "minibatch_kmeans", "kmedoids", "gmm"])
    parser.add_argument("--runs", type=int, default=20, help="ensemble size R")
    parser.add_argument("--k", type=int, default=3, help="number of clusters")
    parser.add_argument("--max-iter", type=int, default=300)
    parser.add_argument("--tol", type=float, default=1e-6)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--covariance", default="full", choices=["full", "diagonal"])
    parser.add_argument("--reg", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cake", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset CSV + manifest")
    p.add_argument("--family", required=True, help="s1..s7 or twomoons")
    _add_common(p)
    p.set_defaults(func=cmd_generate, _parser=p)

    p = sub.add_parser("score", help="build/import an ensemble and write the score table")
    _add_data(p)
    _add_ensemble(p)
    p.add_argument("--import-labels", default=None, help="CSV of n x R integer labels instead of running the ensemble")
    p.add_argument("--mode", default="auto", choices=["auto", "exact", "centroid"])
    p.add_argument("--remap", action="store_true", help="affine remap of mu-sigma instead of clamping at 0")
    p.add_argument("--baselines", default="none", choices=["none", "fast", "all"])
    p.add_argument("--save-labels", action="store_true", help="also write the ensemble label matrix CSV")
    p.add_argument("--format", default="csv", choices=["csv", "json"])
    _add_common(p)
    p.set_defaults(func=cmd_score, _parser=p)

    p = sub.add_parser("eval", help="run one evaluation protocol, write report + curves")
    _add_data(p)
    _add_ensemble(p)
    p.add_argument("--protocol", required=True,
                   choices=["filter", "coverage", "aurc", "spearman", "correctness", "convergence"])
    p.add_argument("--scores", default=None, help="score table CSV from `cake score`")
    p.add_argument("--labels", default=None, help="ensemble label matrix CSV (correctness protocol)")
    p.add_argument("--score-column", default="cake_hm")
    p.add_argument("--criteria", default=None, help="comma list of filter criteria")
    p.add_argument("--keep-fraction", type=float, default=0.7)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--r-grid", default="5,10,20,40")
    p.add_argument("--subensembles", type=int, default=10)
    p.add_argument("--pool-size", type=int, default=None)
    p.add_argument("--ref-algorithm", default="kmeans_plusplus",
                   choices=["kmeans_random", "kmeans_plusplus", "minibatch_kmeans", "kmedoids", "gmm"])
    _add_common(p)
    p.set_defaults(func=cmd_eval, _parser=p)

    p = sub.add_parser("bounds", help="Monte-Carlo sweep of the concentration bounds")
    p.add_argument("--r-grid", default="8,16,32,64")
    p.add_argument("--gammas", default="0.2,0.4")
    p.add_argument("--taus", default="0.5,0.7")
    p.add_argument("--ks", default="2,3,5")
    p.add_argument("--trials", type=int, default=100_000)
    _add_common(p)
    p.set_defaults(func=cmd_bounds, _parser=p)

    p = sub.add_parser("bench", help="time ensemble construction and scoring; compare proxy to exact")
    p.add_argument("--sizes", default="10000", help="comma list of n values")
    p.add_argument("--rs", default="20", help="comma list of R values")
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--proxy-only", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_bench, _parser=p)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _merge_config(args, argv, args._parser)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
