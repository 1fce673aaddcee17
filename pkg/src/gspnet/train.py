"""Supervised training: standardization, mixup, SGD with momentum, model selection."""

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .data import Dataset
from .errors import DivergenceError, TrainError

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr0: float = 0.01
    # None -> decay at 50% and 75% of the epochs
    lr_milestones: Optional[tuple] = None
    lr_gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    mixup_alpha: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainError(f"epochs must be >= 1, got {self.epochs}", "bad_config")
        if self.batch_size < 1:
            raise TrainError(f"batch_size must be >= 1, got {self.batch_size}", "bad_config")
        if not self.lr0 > 0:
            raise TrainError(f"lr0 must be positive, got {self.lr0}", "bad_config")
        if not 0 <= self.lr_gamma <= 1:
            raise TrainError(f"lr_gamma must be in [0, 1], got {self.lr_gamma}", "bad_config")
        if self.mixup_alpha < 0:
            raise TrainError(f"mixup_alpha must be >= 0, got {self.mixup_alpha}", "bad_config")
        if self.momentum < 0 or self.weight_decay < 0:
            raise TrainError("momentum and weight_decay must be >= 0", "bad_config")
        if self.lr_milestones is not None:
            object.__setattr__(self, "lr_milestones", tuple(int(m) for m in self.lr_milestones))

    def milestones(self):
        if self.lr_milestones is not None:
            return self.lr_milestones
        return (self.epochs // 2, (3 * self.epochs) // 4)

    def lr_at(self, epoch):
        return self.lr0 * self.lr_gamma ** sum(1 for m in self.milestones() if epoch >= m)

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return TrainConfig(**values)


ARCH_KEYS = ("arch", "width", "depth")


def load_config(path):
    """Read a JSON config: TrainConfig fields plus ``arch``, ``width``, ``depth``.

    Returns ``(TrainConfig, arch_dict)``.  Unknown keys are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise TrainError(f"config not found: {path}", "config_not_found")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise TrainError(f"config {path} is not valid JSON: {exc}", "bad_config") from exc
    return parse_config(raw)


def parse_config(raw):
    if not isinstance(raw, dict):
        raise TrainError("config must be a JSON object", "bad_config")
    known = {f.name for f in fields(TrainConfig)} | set(ARCH_KEYS)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise TrainError(f"unknown config keys: {unknown}", "bad_config")
    arch = {k: raw[k] for k in ARCH_KEYS if k in raw}
    if "arch" in arch and arch["arch"] not in ("mlp", "resnet"):
        raise TrainError(f"arch must be 'mlp' or 'resnet', got {arch['arch']!r}", "bad_config")
    try:
        cfg = TrainConfig(**{k: v for k, v in raw.items() if k not in ARCH_KEYS})
    except TypeError as exc:
        raise TrainError(f"bad config values: {exc}", "bad_config") from exc
    return cfg, arch


@dataclass
class RunHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_val_epoch: int = -1
    test_acc: float = float("nan")
    wall_time: float = 0.0

    def to_dict(self):
        """Serializable form; wall time is left out so artifacts stay reproducible."""
        d = asdict(self)
        d.pop("wall_time")
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in {f.name for f in fields(cls)}})


class Splits(NamedTuple):
    train: Dataset
    val: Dataset
    test: Dataset


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------

def standardize_fit(train_signals):
    """Per-vertex mean and std of the training signals (std floored at 1e-8)."""
    x = np.asarray(train_signals, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TrainError("standardization needs at least 2 training samples", "empty_split")
    return x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR)


def mixup(xa, ya, xb, yb, lam):
    """Convex combination of two batches; the loss weights ``ya`` by ``lam``."""
    xa = np.asarray(xa)
    xb = np.asarray(xb)
    if xa.shape != xb.shape or np.shape(ya) != np.shape(yb):
        raise TrainError(f"mixup shape mismatch: {xa.shape} vs {xb.shape}", "shape_mismatch")
    if not 0 <= lam <= 1:
        raise TrainError(f"mixup lambda must be in [0, 1], got {lam}", "bad_lambda")
    x = lam * xa + (1 - lam) * xb
    return x.astype(xa.dtype, copy=False), (np.asarray(ya), np.asarray(yb), float(lam))


def _allocate(class_sizes, split_sizes):
    """Integer per-class split counts.

    Rows sum to the class sizes, columns to the split sizes, and every
    cell is within one of its proportional share.  Leftover units go to
    the split with the largest remaining shortfall, earlier splits first.
    """
    total = sum(class_sizes)
    alloc = np.array([[cs * s // total for s in split_sizes] for cs in class_sizes], dtype=np.int64)
    short = np.array(split_sizes) - alloc.sum(axis=0)
    for c, cs in enumerate(class_sizes):
        rest = cs - alloc[c].sum()
        for _ in range(rest):
            # -short for descending shortfall; stable sort keeps train/val/test order on ties
            order = np.argsort(-short, kind="stable")
            below = [j for j in order if alloc[c, j] * total < cs * split_sizes[j]]
            j = next((j for j in below if short[j] > 0), below[0])
            alloc[c, j] += 1
            short[j] -= 1
    return alloc


def split_dataset(ds, fractions=(0.70, 0.15, 0.15), seed=0):
    """Stratified train/val/test split.

    Split sizes are ``floor(N * f)`` with leftovers handed out train
    first; each class is then divided in proportion, off by at most one
    sample from its exact share.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1) > 1e-9 or min(fractions) < 0:
        raise TrainError(f"fractions must be 3 non-negative values summing to 1, got {fractions}", "bad_fractions")
    counts = ds.class_counts()
    if np.any(counts < 3):
        bad = np.flatnonzero(counts < 3).tolist()
        raise TrainError(f"classes {bad} have fewer than 3 samples", "class_too_small")
    total = ds.n_samples
    sizes = [int(math.floor(total * f + 1e-9)) for f in fractions]
    for j in range(total - sum(sizes)):
        sizes[j % 3] += 1
    alloc = _allocate(counts.tolist(), sizes)
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for c in range(ds.n_classes):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        a, b = alloc[c, 0], alloc[c, 0] + alloc[c, 1]
        parts[0].append(idx[:a])
        parts[1].append(idx[a:b])
        parts[2].append(idx[b:])
    return Splits(*(ds.subset(np.sort(np.concatenate(p))) for p in parts))


# ---------------------------------------------------------------------------
# loss and evaluation
# ---------------------------------------------------------------------------

def cross_entropy(logits, targets):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    ``targets`` is an integer label vector or a mixup triple
    ``(ya, yb, lam)`` giving ``lam * CE(ya) + (1 - lam) * CE(yb)``.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise TrainError(f"logits must be (batch, C>=2), got {logits.shape}", "shape_mismatch")
    if not np.all(np.isfinite(logits)):
        raise TrainError("non-finite logits", "non_finite")
    if isinstance(targets, tuple):
        ya, yb, lam = targets
    else:
        ya, yb, lam = targets, targets, 1.0
    ya = np.asarray(ya)
    yb = np.asarray(yb)
    nb = logits.shape[0]
    rows = np.arange(nb)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -(lam * logp[rows, ya].sum() + (1 - lam) * logp[rows, yb].sum()) / nb
    grad = np.exp(logp)
    grad[rows, ya] -= lam
    grad[rows, yb] -= 1 - lam
    return float(loss), (grad / nb).astype(logits.dtype, copy=False)


EVAL_BATCH = 256


def predict_labels(model, basis, signals):
    signals = np.asarray(signals)
    preds = []
    for start in range(0, signals.shape[0], EVAL_BATCH):
        logits = model.predict(basis, signals[start : start + EVAL_BATCH])
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(model, basis, split):
    """Top-1 accuracy (ties go to the lower class index)."""
    if split.n_samples == 0:
        raise TrainError("cannot evaluate on an empty split", "empty_split")
    return float(np.mean(predict_labels(model, basis, split.signals) == split.labels))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def steps_per_epoch(n_train, cfg):
    return -(-n_train // cfg.batch_size)


def sgd_step(params, grads, velocity, lr, momentum, weight_decay):
    """In-place SGD update: ``v = mu v + (g + wd w)``, ``w -= lr v``."""
    for p, g, v in zip(params, grads, velocity):
        step = g + weight_decay * p if weight_decay else g
        if momentum:
            v *= momentum
            v += step
            step = v
        p -= lr * step


def fit(model, basis, splits, cfg, grad_hook=None):
    """Train ``model`` in place; return ``(best_model, last_model, history)``.

    ``grad_hook(step, total_steps, model, grads)`` runs after backprop and
    before the optimizer update of every step and may modify ``grads``.
    """
    train, val, test = splits
    if train.n_samples < 2 or val.n_samples == 0 or test.n_samples == 0:
        raise TrainError("train split needs >= 2 samples and val/test must be non-empty", "empty_split")
    if train.n_vertices != model.n:
        raise TrainError(f"data has {train.n_vertices} vertices, model expects {model.n}", "shape_mismatch")
    started = time.perf_counter()
    dtype = model.dtype
    mean, std = standardize_fit(train.signals)
    model.input_mean = mean.astype(dtype)
    model.input_std = std.astype(dtype)
    x_train = model.standardize(train.signals)
    y_train = train.labels
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    per_epoch = steps_per_epoch(train.n_samples, cfg)
    total_steps = cfg.epochs * per_epoch
    history = RunHistory()
    best_model, best_acc = None, -1.0
    step = 0
    for epoch in range(cfg.epochs):
        lr = dtype.type(cfg.lr_at(epoch))
        order = rng.permutation(train.n_samples)
        loss_sum = acc_sum = 0.0
        for start in range(0, train.n_samples, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            if cfg.mixup_alpha > 0:
                lam = rng.beta(cfg.mixup_alpha, cfg.mixup_alpha)
                partner = rng.permutation(idx.size)
                xb, targets = mixup(xb, yb, xb[partner], yb[partner], lam)
            else:
                targets = (yb, yb, 1.0)
            logits = model.forward(basis, xb, mode="train")
            if not np.all(np.isfinite(logits)):
                raise DivergenceError(f"non-finite logits at epoch {epoch}", epoch)
            loss, g_logits = cross_entropy(logits, targets)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch)
            grads = model.backward(g_logits)
            if grad_hook is not None:
                grad_hook(step, total_steps, model, grads)
            sgd_step(params, grads, velocity, lr, dtype.type(cfg.momentum), dtype.type(cfg.weight_decay))
            pred = np.argmax(logits, axis=1)
            ya, yb2, lam = targets
            acc_sum += lam * np.sum(pred == ya) + (1 - lam) * np.sum(pred == yb2)
            loss_sum += loss * idx.size
            step += 1
        history.train_loss.append(loss_sum / train.n_samples)
        history.train_acc.append(float(acc_sum / train.n_samples))
        val_acc = evaluate(model, basis, val)
        history.val_acc.append(val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            best_model = copy.deepcopy(model)
            history.best_val_epoch = epoch
    history.test_acc = evaluate(best_model, basis, test)
    history.wall_time = time.perf_counter() - started
    return best_model, model, history


def train_model(model, basis, splits, cfg):
    """SGD training with best-validation model selection.

    Returns ``(best_model, history)``; the input model is trained in place
    and ends at the last epoch.
    """
    best, _, history = fit(model, basis, splits, cfg)
    return best, history
