"""Selective weight decay over graph frequencies, truncation and band scans.

A graph frequency ``l`` owns ``theta[l, :, :]`` in every GSPConv layer of
a spectral ResNet, and row ``l`` of the first weight matrix of a spectral
MLP.  Selective weight decay (SWD) ranks frequencies by the l2 norm of
everything they own and pushes the non-selected ones towards zero with a
penalty that grows geometrically over training.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import PruneError
from .model import build_model
from .train import evaluate, fit, steps_per_epoch, train_model

TRACE_EVERY = 10


@dataclass(frozen=True)
class KeptSet:
    indices: tuple
    n: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise PruneError("kept indices must be strictly ascending", "bad_kept")
        if idx and (idx[0] < 0 or idx[-1] >= self.n):
            raise PruneError(f"kept indices must lie in [0, {self.n})", "bad_kept")
        object.__setattr__(self, "indices", idx)

    @property
    def k(self):
        return len(self.indices)

    @classmethod
    def from_iterable(cls, indices, n):
        return cls(tuple(sorted(int(i) for i in indices)), n)


@dataclass(frozen=True)
class SwdSchedule:
    alpha_min: float = 1e-4
    alpha_max: float = 1e3
    k_keep: int = 8
    total_steps: Optional[int] = None

    def __post_init__(self):
        # alpha_min = alpha_max = 0 switches the penalty off entirely
        disabled = self.alpha_min == 0 and self.alpha_max == 0
        if not disabled and not 0 < self.alpha_min <= self.alpha_max:
            raise PruneError(
                f"need 0 < alpha_min <= alpha_max, got {self.alpha_min}, {self.alpha_max}", "bad_schedule"
            )
        if self.k_keep < 1:
            raise PruneError("k_keep must be >= 1", "bad_schedule")

    @property
    def disabled(self):
        return self.alpha_max == 0


@dataclass
class PruneReport:
    kept: KeptSet
    importance_trace: list = field(default_factory=list)
    swd_test_acc: float = float("nan")
    retrain_test_acc: float = float("nan")
    baseline_test_acc: Optional[float] = None

    def to_dict(self):
        return {
            "kept": list(self.kept.indices),
            "n": self.kept.n,
            "k": self.kept.k,
            "importance_trace": [
                {"step": step, "importance": [float(v) for v in imp]} for step, imp in self.importance_trace
            ],
            "swd_test_acc": self.swd_test_acc,
            "retrain_test_acc": self.retrain_test_acc,
            "baseline_test_acc": self.baseline_test_acc,
        }


def _frequency_arrays(model):
    if model.kind == "resnet":
        return [layer.theta for layer in model.conv_layers()]
    return [model.w0]


def frequency_importance(model):
    """l2 norm of all weights attached to each graph frequency."""
    if model.k != model.n:
        raise PruneError("importance is defined on untruncated models only", "truncated_model")
    sq = np.zeros(model.n)
    for a in _frequency_arrays(model):
        sq += np.sum(a.astype(np.float64) ** 2, axis=tuple(range(1, a.ndim)))
    return np.sqrt(sq)


def top_k(scores, k):
    """Indices of the k largest scores, ties to the lower index, ascending."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    return np.sort(order[:k])


def swd_alpha(step, sched, total_steps=None):
    """``alpha_min * (alpha_max / alpha_min) ** (step / total_steps)``."""
    total = sched.total_steps if total_steps is None else total_steps
    if total is None or total < 1:
        raise PruneError("schedule has no total step count", "bad_schedule")
    if not 0 <= step <= total:
        raise PruneError(f"step {step} outside [0, {total}]", "step_out_of_range")
    if sched.disabled:
        return 0.0
    return sched.alpha_min * (sched.alpha_max / sched.alpha_min) ** (step / total)


def swd_train(model, basis, splits, cfg, sched):
    """Train with selective weight decay; return ``(model, KeptSet, PruneReport)``.

    Before every optimizer step the frequencies are ranked, and every
    weight owned by a frequency outside the current top ``k_keep`` gets
    an extra ``alpha(step) * w`` added to its gradient.  The returned
    model is the one at the end of the schedule (where the penalty is
    largest), not the best-validation one.
    """
    if model.k != model.n:
        raise PruneError("SWD needs an untruncated model", "truncated_model")
    if sched.k_keep > model.n:
        raise PruneError(f"k_keep={sched.k_keep} exceeds {model.n} frequencies", "bad_schedule")
    total = sched.total_steps or cfg.epochs * steps_per_epoch(splits.train.n_samples, cfg)
    params = model.parameters()
    owned = [i for i, p in enumerate(params) if any(p is a for a in _frequency_arrays(model))]
    trace = []

    def hook(step, _total, m, grads):
        scores = frequency_importance(m)
        if step % TRACE_EVERY == 0:
            trace.append((step, scores))
        if sched.disabled or sched.k_keep == m.n:
            return
        alpha = swd_alpha(min(step, total), sched, total)
        pruned = np.ones(m.n, dtype=bool)
        pruned[top_k(scores, sched.k_keep)] = False
        a = m.dtype.type(alpha)
        for i in owned:
            grads[i][pruned] += a * params[i][pruned]

    _, last, _ = fit(model, basis, splits, cfg, grad_hook=hook)
    kept = KeptSet.from_iterable(top_k(frequency_importance(last), sched.k_keep), model.n)
    report = PruneReport(kept=kept, importance_trace=trace, swd_test_acc=evaluate(last, basis, splits.test))
    return last, kept, report


def truncate(model, kept):
    """Copy of ``model`` restricted to the frequencies in ``kept``."""
    if kept.k == 0:
        raise PruneError("cannot truncate to an empty frequency set", "empty_kept")
    if kept.n != model.n:
        raise PruneError(f"kept set is over {kept.n} frequencies, model has {model.n}", "bad_kept")
    position = {int(f): i for i, f in enumerate(model.kept)}
    missing = [f for f in kept.indices if f not in position]
    if missing:
        raise PruneError(f"frequencies {missing} are not present in the model", "bad_kept")
    rows = np.array([position[f] for f in kept.indices])
    small = build_model(
        model.kind, model.n, model.width, model.depth, model.n_classes,
        kept=np.array(kept.indices), seed=model.seed or 0, dtype=model.dtype,
    )
    small.seed = model.seed
    if model.kind == "resnet":
        for src, dst in zip(model.conv_layers(), small.conv_layers()):
            dst.theta[...] = src.theta[rows]
            for name in ("bn_scale", "bn_shift", "bn_running_mean", "bn_running_var"):
                getattr(dst, name)[...] = getattr(src, name)
            dst.stats_ready = src.stats_ready
            dst.use_bn = src.use_bn
    else:
        small.w0[...] = model.w0[rows]
        small.b0[...] = model.b0
        for (sw, sb), (dw, db) in zip(model.hidden, small.hidden):
            dw[...] = sw
            db[...] = sb
    small.head_w[...] = model.head_w
    small.head_b[...] = model.head_b
    if model.input_mean is not None:
        small.input_mean = model.input_mean.copy()
        small.input_std = model.input_std.copy()
    return small


def rewind_retrain(truncated_model, basis, splits, cfg, baseline_cfg=None):
    """Retrain a truncated model from its current weights with the schedule restarted."""
    if baseline_cfg is not None and cfg != baseline_cfg:
        raise PruneError("LR rewinding must reuse the baseline training configuration", "config_mismatch")
    return train_model(truncated_model, basis, splits, cfg)


def prune_run(model, basis, splits, cfg, sched):
    """SWD training, truncation to the selected frequencies, LR-rewinding retrain.

    Returns ``(retrained_model, history, report)``.
    """
    swd_model, kept, report = swd_train(model, basis, splits, cfg, sched)
    small = truncate(swd_model, kept)
    best, history = rewind_retrain(small, basis, splits, cfg, baseline_cfg=cfg)
    report.retrain_test_acc = history.test_acc
    return best, history, report


def band_scan(arch, basis, splits, cfg, bandwidth, offsets, seeds=(0,)):
    """Test accuracy of fresh models restricted to contiguous frequency bands.

    ``arch`` is a dict with ``kind``, ``width``, ``depth``.  Returns one
    dict per offset with the per-seed accuracies, their mean and the 95%
    half-width ``1.96 * sd / sqrt(runs)``.
    """
    n = basis.n
    if bandwidth < 1:
        raise PruneError("bandwidth must be >= 1", "bad_band")
    curve = []
    for offset in offsets:
        if offset < 0 or offset + bandwidth > n:
            raise PruneError(f"band offset={offset} bandwidth={bandwidth} does not fit in {n}", "bad_band")
        accs = []
        for seed in seeds:
            model = build_model(
                arch["kind"], n, arch["width"], arch["depth"], splits.train.n_classes,
                kept=np.arange(offset, offset + bandwidth), seed=seed,
            )
            _, history = train_model(model, basis, splits, cfg.replace(seed=seed))
            accs.append(history.test_acc)
        mean, ci = mean_ci95(accs)
        curve.append({"offset": int(offset), "accuracies": accs, "mean_acc": mean, "ci95": ci})
    return curve


def mean_ci95(values):
    """Mean and normal-approximation 95% half-width (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise PruneError("no values to aggregate", "empty")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


def occurrence_histogram(kept_sets, n):
    counts = np.zeros(n, dtype=np.int64)
    for ks in kept_sets:
        if ks.n != n:
            raise PruneError(f"kept set over {ks.n} frequencies, expected {n}", "inconsistent_n")
        counts[list(ks.indices)] += 1
    return counts


def iou(a, b):
    """Intersection over union of two kept sets."""
    if a.n != b.n:
        raise PruneError("kept sets are over different frequency counts", "inconsistent_n")
    sa, sb = set(a.indices), set(b.indices)
    union = sa | sb
    if not union:
        raise PruneError("IoU of two empty sets is undefined", "empty")
    return len(sa & sb) / len(union)
