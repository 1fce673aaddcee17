"""Acceptance suite: one check per numbered criterion, at its stated tolerance.

Each ``criterion_*`` function returns ``(passed, detail)``; the pytest
wrappers record a one-line verdict that ``conftest.py`` prints in the
terminal summary.  Run this file directly for the same lines without
pytest's own output.
"""

import itertools
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from gspnet.data import save_dataset, synth_planted_band
from gspnet.graph import from_dense, geometric_knn_graph, is_connected, normalized_laplacian, write_graph
from gspnet.linalg import jacobi_eigh, orthonormality_error, reconstruction_residual
from gspnet.model import build_model, param_count
from gspnet.prune import KeptSet, SwdSchedule, band_scan, iou, mean_ci95, prune_run, swd_alpha, swd_train
from gspnet.spectral import basis_for_graph, build_basis, gft, igft
from gspnet.train import TrainConfig, split_dataset, train_model

sys.path.insert(0, str(Path(__file__).parent))
from gradcheck import max_relative_error  # noqa: E402
from oracles import P3_LAPLACIAN, P3_SPECTRUM  # noqa: E402

VERDICTS = []

# desk-scale planted-band setup shared by criteria 6-8
N_VERTICES = 64
N_CLASSES = 4
PER_CLASS = 200
SNR = 5.0
K_KEEP = 8
ARCH = {"kind": "mlp", "width": 64, "depth": 2}
TRAIN_CFG = TrainConfig(epochs=30)
SWD = SwdSchedule(k_keep=K_KEEP)


def _record(number, title, passed, detail):
    VERDICTS.append(f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
    return passed


def _random_connected_graph(rng):
    n = int(rng.integers(2, 65))
    if n > 4 and rng.uniform() < 0.5:
        return geometric_knn_graph(n, k=int(rng.integers(2, min(n - 1, 10))), seed=int(rng.integers(2**31)))
    p = min(1.0, max(0.15, 2.5 * np.log(n) / n))
    while True:
        w = rng.uniform(0.05, 1.0, size=(n, n)) * (rng.uniform(size=(n, n)) < p)
        g = from_dense(np.triu(w, 1) + np.triu(w, 1).T)
        if is_connected(g):
            return g


def criterion_1():
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    worst = dict(range=0.0, roundtrip=0.0, parseval=0.0)
    single_zero = True
    for _ in range(100):
        g = _random_connected_graph(rng)
        b = build_basis(normalized_laplacian(g))
        lam = b.lambdas
        worst["range"] = max(worst["range"], -lam[0], lam[-1] - 2)
        single_zero &= int(np.sum(lam < 1e-8)) == 1
        x = rng.normal(size=(g.n, 3))
        xhat = gft(b, x)
        worst["roundtrip"] = max(worst["roundtrip"], float(np.max(np.abs(igft(b, xhat) - x))))
        energy = np.sum(x**2, axis=0)
        worst["parseval"] = max(worst["parseval"], float(np.max(np.abs(np.sum(xhat**2, axis=0) - energy) / energy)))
    elapsed = time.perf_counter() - started
    passed = (
        worst["range"] <= 1e-10
        and single_zero
        and worst["roundtrip"] < 1e-10
        and worst["parseval"] < 1e-10
        and elapsed < 10
    )
    detail = (
        f"range excess {worst['range']:.1e}, one zero eigenvalue each: {single_zero}, "
        f"round-trip {worst['roundtrip']:.1e}, Parseval {worst['parseval']:.1e}, {elapsed:.1f} s"
    )
    return passed, detail


def criterion_2():
    rng = np.random.default_rng(7)
    resid = ortho = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 65))
        a = rng.uniform(-1, 1, size=(n, n))
        a = (a + a.T) / 2
        e = jacobi_eigh(a)
        resid = max(resid, reconstruction_residual(a, e))
        ortho = max(ortho, orthonormality_error(e.vectors))
    p3 = float(np.max(np.abs(jacobi_eigh(P3_LAPLACIAN).values - P3_SPECTRUM)))
    passed = resid < 1e-8 and ortho < 1e-10 and p3 < 1e-10
    return passed, f"max residual {resid:.1e}, orthonormality {ortho:.1e}, P3 error {p3:.1e}"


def criterion_3():
    started = time.perf_counter()
    b = basis_for_graph(geometric_knn_graph(8, k=2, seed=0))
    rng = np.random.default_rng(3)
    errors = {}
    for kind, width in (("resnet", 3), ("mlp", 5)):
        m = build_model(kind, 8, width, 1 if kind == "resnet" else 2, 2, seed=1, dtype=np.float64)
        if kind == "mlp":
            m.b0[...] = np.linspace(-0.2, 0.2, width)
        errors[kind] = max_relative_error(m, b, rng.normal(size=(4, 8)), rng.normal(size=(4, 2)))
    elapsed = time.perf_counter() - started
    passed = max(errors.values()) < 1e-4 and elapsed < 60
    return passed, f"ResNet {errors['resnet']:.1e}, MLP {errors['mlp']:.1e} (bound 1e-4), {elapsed:.1f} s"


def criterion_4():
    rng = np.random.default_rng(11)
    mismatches = 0
    for _ in range(20):
        kind = ["resnet", "mlp"][int(rng.integers(2))]
        n = int(rng.integers(3, 40))
        kept = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        m = build_model(kind, n, int(rng.integers(1, 12)), int(rng.integers(1, 4)), int(rng.integers(2, 6)), kept=kept)
        mismatches += param_count(m)[1] != m.flat_parameters().size
    mlp_big = param_count(build_model("mlp", 360, 2**10, 3, 24))[0]
    resnet_dominant = 2 * 4 * (2**7) ** 2 * 360
    passed = mismatches == 0 and mlp_big == 2_490_368 and resnet_dominant == 47_185_920
    return passed, f"{20 - mismatches}/20 enumerations match, MLP 2^10 -> {mlp_big:,}, ResNet 2^7 term -> {resnet_dominant:,}"


def criterion_5():
    sched = SwdSchedule(alpha_min=1e-4, alpha_max=1e3, total_steps=360)
    alphas = np.array([swd_alpha(s, sched) for s in range(361)])
    ends = abs(alphas[0] - 1e-4) <= 1e-16 and abs(alphas[-1] / 1e3 - 1) < 1e-12
    ratios = alphas[1:] / alphas[:-1]
    spread = float(np.max(np.abs(ratios / ratios[0] - 1)))

    b = basis_for_graph(geometric_knn_graph(32, k=6, seed=1))
    splits = split_dataset(synth_planted_band(b, 3, [0, 1, 2], 4.0, 40, seed=0), seed=0)
    cfg = TrainConfig(epochs=4, seed=5)
    identical = True
    for kind in ("mlp", "resnet"):
        plain = build_model(kind, 32, 8, 1, 3, seed=5)
        _, plain_hist = train_model(plain, b, splits, cfg)
        off = SwdSchedule(alpha_min=0.0, alpha_max=0.0, k_keep=4)
        swd, _, _ = swd_train(build_model(kind, 32, 8, 1, 3, seed=5), b, splits, cfg, off)
        identical &= swd.flat_parameters().tobytes() == plain.flat_parameters().tobytes()
    passed = ends and spread < 1e-12 and identical
    return passed, f"endpoints exact: {ends}, ratio spread {spread:.1e}, zero-penalty trajectory bit-identical: {identical}"


def _planted(plant, seed=0):
    b = basis_for_graph(geometric_knn_graph(N_VERTICES, k=8, seed=0))
    ds = synth_planted_band(b, N_CLASSES, plant, SNR, PER_CLASS, seed=seed)
    return b, ds


def _model(b, seed, kept=None):
    return build_model(ARCH["kind"], b.n, ARCH["width"], ARCH["depth"], N_CLASSES, kept=kept, seed=seed)


def criterion_6():
    started = time.perf_counter()
    plant = set(range(8))
    b, ds = _planted(sorted(plant))
    kept_sets = []
    for seed in range(20):
        splits = split_dataset(ds, seed=seed)
        _, kept, _ = swd_train(_model(b, seed), b, splits, TRAIN_CFG.replace(seed=seed), SWD)
        kept_sets.append(kept)
    recovered = [len(plant & set(k.indices)) for k in kept_sets]
    ious = [iou(a, c) for a, c in itertools.combinations(kept_sets, 2)]
    elapsed = time.perf_counter() - started
    passed = np.mean(recovered) >= 6 and min(ious) > 0.5 and elapsed < 900
    detail = (
        f"mean recovered {np.mean(recovered):.2f}/8 (min {min(recovered)}), "
        f"pairwise IoU min {min(ious):.2f} mean {np.mean(ious):.2f}, {elapsed:.0f} s"
    )
    return passed, detail


def criterion_7():
    b, ds = _planted(list(range(8)))
    splits = split_dataset(ds, seed=0)
    top = N_VERTICES - K_KEEP
    curve = band_scan(ARCH, b, splits, TRAIN_CFG, K_KEEP, [0, top], seeds=range(5))
    low, high = curve[0]["mean_acc"], curve[1]["mean_acc"]
    passed = low - high >= 0.10
    return passed, f"offset 0: {low:.3f}, offset {top}: {high:.3f}, gap {100 * (low - high):.1f} points (need 10)"


def criterion_8():
    plant = [0, 1, 2, 3, 20, 21, 22, 23]
    b, ds = _planted(plant)
    splits = split_dataset(ds, seed=0)
    curve = band_scan(ARCH, b, splits, TRAIN_CFG, K_KEEP, range(N_VERTICES - K_KEEP + 1), seeds=range(5))
    best_band = max(curve, key=lambda c: c["mean_acc"])
    pruned = []
    for seed in range(5):
        _, history, _ = prune_run(_model(b, seed), b, splits, TRAIN_CFG.replace(seed=seed), SWD)
        pruned.append(history.test_acc)
    pruned_mean, ci = mean_ci95(pruned)
    gap = pruned_mean - best_band["mean_acc"]
    passed = gap >= 0.05
    detail = (
        f"pruned {pruned_mean:.3f} ± {ci:.3f} vs best band (offset {best_band['offset']}) "
        f"{best_band['mean_acc']:.3f}, gap {100 * gap:.1f} points (need 5)"
    )
    return passed, detail


def criterion_10(workdir):
    workdir = Path(workdir)
    write_graph(geometric_knn_graph(32, k=6, seed=2), workdir / "g.csv")
    env = dict(os.environ, GSPNET_THREADS="1")

    def cli(*args):
        proc = subprocess.run([sys.executable, "-m", "gspnet", *args], capture_output=True, text=True, env=env)
        if proc.returncode != 0:
            raise RuntimeError(proc.stderr)

    cli("eigs", "--graph", str(workdir / "g.csv"), "--out", str(workdir / "b.gspb"))
    basis = basis_for_graph(geometric_knn_graph(32, k=6, seed=2))
    save_dataset(synth_planted_band(basis, 3, [0, 1, 2, 3], 4.0, 30, seed=1), workdir / "data")
    (workdir / "cfg.json").write_text(json.dumps({"arch": "resnet", "width": 8, "depth": 1, "epochs": 5}))
    for run in ("first", "second"):
        cli(
            "train", "--config", str(workdir / "cfg.json"), "--basis", str(workdir / "b.gspb"),
            "--data", str(workdir / "data"), "--out", str(workdir / run), "--reps", "2", "--seed", "0",
        )
    artifacts = sorted(p.relative_to(workdir / "first") for p in (workdir / "first").rglob("*") if p.is_file())
    artifacts = [p for p in artifacts if p.name != "run.log"]
    same = [(workdir / "first" / p).read_bytes() == (workdir / "second" / p).read_bytes() for p in artifacts]
    names = {p.name for p in artifacts}
    passed = all(same) and {"checkpoint.gspm", "run.json"} <= names
    return passed, f"{sum(same)}/{len(same)} artifacts byte-identical (checkpoints, histories, summary)"


# ---------------------------------------------------------------------------
# pytest wrappers
# ---------------------------------------------------------------------------

def _check(number, title, fn, *args):
    passed, detail = fn(*args)
    _record(number, title, passed, detail)
    assert passed, detail


def test_criterion_01_spectral_correctness():
    _check(1, "spectral correctness", criterion_1)


def test_criterion_02_eigensolver():
    _check(2, "eigensolver", criterion_2)


def test_criterion_03_gradient_fidelity():
    _check(3, "gradient fidelity", criterion_3)


def test_criterion_04_parameter_accounting():
    _check(4, "parameter accounting", criterion_4)


def test_criterion_05_swd_behavior():
    _check(5, "SWD schedule and zero-penalty identity", criterion_5)


def test_criterion_06_planted_band_recovery():
    _check(6, "planted-band recovery (20 seeds)", criterion_6)


def test_criterion_07_band_scan_shape():
    _check(7, "band-scan shape (5 seeds)", criterion_7)


def test_criterion_08_pruning_beats_bands():
    _check(8, "pruning beats contiguous bands (5 seeds)", criterion_8)


def test_criterion_09_real_datasets():
    reason = "needs the real fMRI-derived datasets and graphs; not reproducible at desk scale"
    VERDICTS.append(f"criterion  9 [SKIP] absolute accuracies on real data: {reason}")
    pytest.skip(reason)


def test_criterion_10_cli_determinism(tmp_path):
    _check(10, "CLI train determinism", criterion_10, tmp_path)


if __name__ == "__main__":
    import tempfile

    checks = [
        (1, "spectral correctness", criterion_1),
        (2, "eigensolver", criterion_2),
        (3, "gradient fidelity", criterion_3),
        (4, "parameter accounting", criterion_4),
        (5, "SWD schedule and zero-penalty identity", criterion_5),
        (6, "planted-band recovery (20 seeds)", criterion_6),
        (7, "band-scan shape (5 seeds)", criterion_7),
        (8, "pruning beats contiguous bands (5 seeds)", criterion_8),
    ]
    ok = True
    for number, title, fn in checks:
        passed, detail = fn()
        ok &= _record(number, title, passed, detail)
        print(VERDICTS[-1], flush=True)
    print("criterion  9 [SKIP] absolute accuracies on real data: not reproducible at desk scale")
    with tempfile.TemporaryDirectory() as tmp:
        passed, detail = criterion_10(tmp)
        ok &= _record(10, "CLI train determinism", passed, detail)
        print(VERDICTS[-1])
    sys.exit(0 if ok else 1)
