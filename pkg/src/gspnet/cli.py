"""Command-line experiment runner.

Subcommands::

    eigs       graph file -> GSPB basis cache
    synth      basis -> planted-band dataset directory
    train      r repetitions of a spectral MLP/ResNet, seeds seed..seed+r-1
    band-scan  accuracy of band-restricted models per offset (CSV)
    prune      SWD pruning + LR-rewinding retrain, kept-set histogram (CSV)
    report     aggregate the run directories under a folder (JSON)

Exit status is 0 on success, 1 on a numerical failure (eigensolver not
converging, training diverging) and 2 for usage and I/O errors.  Errors
are printed to stderr as ``{"error": {"module", "code", "message"}}``.
Artifacts contain no timestamps; wall times go to ``<out>/run.log``.
"""

import argparse
import csv
import io
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .data import load_dataset, save_dataset, synth_planted_band
from .errors import GspError
from .graph import knn_binarize, read_graph
from .model import build_model, param_count, save_checkpoint
from .prune import KeptSet, SwdSchedule, iou, mean_ci95, occurrence_histogram, prune_run
from .spectral import basis_for_graph, load_basis, save_basis
from .train import RunHistory, TrainConfig, load_config, split_dataset, train_model

DEFAULT_WIDTH = {"mlp": 64, "resnet": 16}
DEFAULT_DEPTH = {"mlp": 2, "resnet": 1}


class CliError(GspError):
    module = "cli"
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, "usage")


# ---------------------------------------------------------------------------
# small parsers
# ---------------------------------------------------------------------------

def parse_index_spec(spec):
    """``"start:stop[:step]"`` (stop exclusive) or a comma list of integers."""
    try:
        if ":" in spec:
            parts = [int(p) for p in spec.split(":")]
            if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] < 1):
                raise ValueError(spec)
            values = list(range(*parts))
        else:
            values = [int(p) for p in spec.split(",") if p.strip()]
    except ValueError:
        raise CliError(f"bad index spec {spec!r}: use start:stop[:step] or a comma list", "bad_spec") from None
    if not values:
        raise CliError(f"index spec {spec!r} is empty", "bad_spec")
    return values


def worker_count(jobs):
    raw = os.environ.get("GSPNET_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise CliError(f"GSPNET_THREADS must be an integer, got {raw!r}", "bad_env") from None
    return max(1, min(cap, jobs))


def _map(fn, jobs):
    """Run ``fn`` over ``jobs`` on up to GSPNET_THREADS processes; results in job order."""
    workers = worker_count(len(jobs))
    if workers == 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _log(out, line):
    with open(Path(out) / "run.log", "a", encoding="utf-8") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {line}\n")


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def aggregate_runs(histories, kept_sets=None):
    """Mean and 95% half-width of test accuracy, plus a kept-set histogram if given."""
    if not histories:
        raise CliError("no runs to aggregate", "empty")
    accs = [h.test_acc for h in histories]
    mean, ci = mean_ci95(accs)
    summary = {"runs": len(accs), "test_acc": accs, "mean_acc": mean, "ci95": ci}
    if kept_sets:
        n = kept_sets[0].n
        summary["histogram"] = occurrence_histogram(kept_sets, n).tolist()
        pairs = list(itertools.combinations(kept_sets, 2))
        summary["mean_pairwise_iou"] = float(np.mean([iou(a, b) for a, b in pairs])) if pairs else 1.0
    return summary


# ---------------------------------------------------------------------------
# job bodies (module level so worker processes can import them)
# ---------------------------------------------------------------------------

def _setup(job):
    basis = load_basis(job["basis"])
    ds = load_dataset(job["data"])
    if ds.n_vertices != basis.n:
        raise CliError(f"dataset has {ds.n_vertices} vertices, basis has {basis.n}", "shape_mismatch")
    splits = split_dataset(ds, seed=job["seed"])
    cfg = TrainConfig(**job["cfg"]).replace(seed=job["seed"])
    return basis, splits, cfg


def _model(job, n, n_classes, kept=None):
    return build_model(job["arch"], n, job["width"], job["depth"], n_classes, kept=kept, seed=job["seed"])


def _train_job(job):
    basis, splits, cfg = _setup(job)
    model = _model(job, basis.n, splits.train.n_classes)
    best, history = train_model(model, basis, splits, cfg)
    return best, history


def _band_job(job):
    basis, splits, cfg = _setup(job)
    offset, width = job["offset"], job["bandwidth"]
    if offset < 0 or offset + width > basis.n:
        raise CliError(f"band offset={offset} bandwidth={width} does not fit in {basis.n}", "bad_band")
    model = _model(job, basis.n, splits.train.n_classes, kept=np.arange(offset, offset + width))
    _, history = train_model(model, basis, splits, cfg)
    return history.test_acc


def _prune_job(job):
    basis, splits, cfg = _setup(job)
    model = _model(job, basis.n, splits.train.n_classes)
    sched = SwdSchedule(alpha_min=job["alpha_min"], alpha_max=job["alpha_max"], k_keep=job["keep"])
    best, history, report = prune_run(model, basis, splits, cfg, sched)
    return best, history, report


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_eigs(args):
    g = read_graph(args.graph)
    if args.knn:
        g = knn_binarize(g, args.knn)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    b = basis_for_graph(g)
    save_basis(b, out)
    print(f"basis n={b.n} lambda in [{b.lambdas[0]:.6g}, {b.lambdas[-1]:.6g}] -> {out}")


def cmd_synth(args):
    basis = load_basis(args.basis)
    band = parse_index_spec(args.band)
    ds = synth_planted_band(basis, args.classes, band, args.snr, args.per_class, args.seed)
    save_dataset(ds, args.out, overwrite=True)
    print(f"{ds.n_samples} samples x {ds.n_vertices} vertices, {ds.n_classes} classes -> {args.out}")


def _train_jobs(args, **extra):
    cfg, arch = load_config(args.config)
    kind = args.arch or arch.get("arch", "mlp")
    if args.reps < 1:
        raise CliError("--reps must be >= 1", "usage")
    for p in (args.basis, args.data):
        if not Path(p).exists():
            raise CliError(f"path not found: {p}", "missing_file")
    base = {
        "arch": kind,
        "width": int(arch.get("width", DEFAULT_WIDTH[kind])),
        "depth": int(arch.get("depth", DEFAULT_DEPTH[kind])),
        "cfg": {k: v for k, v in vars(cfg).items() if k != "seed"},
        "basis": str(args.basis),
        "data": str(args.data),
    }
    base.update(extra)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(range(args.seed, args.seed + args.reps))
    return base, seeds, out


def _save_run(out, seed, model, history, kept=None):
    run_dir = out / f"run_seed{seed}"
    run_dir.mkdir(exist_ok=True)
    save_checkpoint(model, run_dir / "checkpoint.gspm")
    record = {"seed": seed, "history": history.to_dict(), "params": list(param_count(model))}
    if kept is not None:
        record["kept"] = list(kept.indices)
        record["n"] = kept.n
    _write_json(run_dir / "run.json", record)


def cmd_train(args):
    base, seeds, out = _train_jobs(args)
    results = _map(_train_job, [dict(base, seed=s) for s in seeds])
    for seed, (model, history) in zip(seeds, results):
        _save_run(out, seed, model, history)
        _log(out, f"train seed={seed} test_acc={history.test_acc:.4f} wall={history.wall_time:.2f}s")
    summary = aggregate_runs([h for _, h in results])
    _write_json(out / "summary.json", dict(summary, arch=base["arch"], seeds=seeds))
    print(f"test accuracy {summary['mean_acc']:.4f} ± {summary['ci95']:.4f} over {len(seeds)} run(s)")


def cmd_band_scan(args):
    offsets = parse_index_spec(args.offsets)
    base, seeds, out = _train_jobs(args, bandwidth=args.bandwidth)
    jobs = [dict(base, seed=s, offset=o) for o in offsets for s in seeds]
    accs = _map(_band_job, jobs)
    rows, detail = [], []
    for i, offset in enumerate(offsets):
        per_seed = accs[i * len(seeds) : (i + 1) * len(seeds)]
        mean, ci = mean_ci95(per_seed)
        rows.append([offset, f"{mean:.6f}", f"{ci:.6f}"])
        detail.append({"offset": offset, "test_acc": per_seed, "mean_acc": mean, "ci95": ci})
    _write_csv(out / "band_scan.csv", ["offset", "mean_acc", "ci95"], rows)
    _write_json(out / "band_scan.json", {"bandwidth": args.bandwidth, "seeds": seeds, "offsets": detail})
    _log(out, f"band-scan bandwidth={args.bandwidth} offsets={len(offsets)} seeds={len(seeds)}")
    print(f"{len(offsets)} offsets -> {out / 'band_scan.csv'}")


def cmd_prune(args):
    base, seeds, out = _train_jobs(args, keep=args.keep, alpha_min=args.alpha_min, alpha_max=args.alpha_max)
    results = _map(_prune_job, [dict(base, seed=s) for s in seeds])
    kept_sets = []
    for seed, (model, history, report) in zip(seeds, results):
        _save_run(out, seed, model, history, kept=report.kept)
        _write_json(out / f"run_seed{seed}" / "prune.json", report.to_dict())
        kept_sets.append(report.kept)
        _log(out, f"prune seed={seed} kept={list(report.kept.indices)} test_acc={history.test_acc:.4f}")
    summary = aggregate_runs([h for _, h, _ in results], kept_sets)
    summary["kept"] = [list(k.indices) for k in kept_sets]
    summary["swd_test_acc"] = [r.swd_test_acc for _, _, r in results]
    _write_json(out / "prune.json", dict(summary, seeds=seeds, keep=args.keep))
    _write_csv(out / "histogram.csv", ["frequency", "count"], list(enumerate(summary["histogram"])))
    print(
        f"retrained accuracy {summary['mean_acc']:.4f} ± {summary['ci95']:.4f}, "
        f"mean pairwise IoU {summary['mean_pairwise_iou']:.3f}"
    )


def cmd_report(args):
    runs = Path(args.runs)
    if not runs.is_dir():
        raise CliError(f"runs directory not found: {runs}", "missing_file")
    records = []
    for path in sorted(runs.rglob("run.json")):
        try:
            records.append(json.loads(path.read_text(encoding="utf-8")))
        except ValueError as exc:
            raise CliError(f"unreadable run record {path}: {exc}", "bad_run") from exc
    if not records:
        raise CliError(f"no run.json files under {runs}", "empty")
    # order-independent: reduce in seed order
    records.sort(key=lambda r: r["seed"])
    histories = [RunHistory.from_dict(r["history"]) for r in records]
    kept = [KeptSet(tuple(r["kept"]), r["n"]) for r in records if "kept" in r]
    if kept and len(kept) != len(records):
        raise CliError("mix of pruned and unpruned runs", "mixed_runs")
    summary = aggregate_runs(histories, kept or None)
    summary["seeds"] = [r["seed"] for r in records]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, summary)
    print(f"{len(records)} run(s): {summary['mean_acc']:.4f} ± {summary['ci95']:.4f} -> {out}")


def build_parser():
    parser = _Parser(prog="gspnet", description="Graph-spectral network experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eigs", help="compute the normalized-Laplacian basis of a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--knn", type=int, default=0, help="kNN-binarize the graph first")
    p.set_defaults(func=cmd_eigs)

    p = sub.add_parser("synth", help="generate a planted-band dataset")
    p.add_argument("--basis", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--band", required=True, help="a:b (b exclusive) or comma list")
    p.add_argument("--snr", type=float, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    def train_flags(p):
        p.add_argument("--arch", choices=("mlp", "resnet"))
        p.add_argument("--config", required=True)
        p.add_argument("--basis", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--reps", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train r repetitions")
    train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("band-scan", help="accuracy of contiguous frequency bands")
    p.add_argument("--bandwidth", type=int, required=True)
    p.add_argument("--offsets", required=True, help="start:stop[:step] or comma list")
    train_flags(p)
    p.set_defaults(func=cmd_band_scan)

    p = sub.add_parser("prune", help="SWD frequency pruning and retraining")
    p.add_argument("--keep", type=int, required=True)
    p.add_argument("--alpha-min", type=float, default=SwdSchedule.alpha_min)
    p.add_argument("--alpha-max", type=float, default=SwdSchedule.alpha_max)
    train_flags(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("report", help="aggregate saved runs")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except GspError as exc:
        print(json.dumps({"error": exc.as_dict()}), file=sys.stderr)
        return 1 if exc.numerical else 2
    except OSError as exc:
        err = {"module": "cli", "code": "io_error", "message": str(exc)}
        print(json.dumps({"error": err}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
