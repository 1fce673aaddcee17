import json
import math

import numpy as np
import pytest

from gspnet.data import Dataset, synth_planted_band
from gspnet.errors import DivergenceError, TrainError
from gspnet.model import build_model
from gspnet.train import (
    RunHistory,
    Splits,
    TrainConfig,
    _allocate,
    cross_entropy,
    evaluate,
    fit,
    load_config,
    mixup,
    parse_config,
    sgd_step,
    split_dataset,
    standardize_fit,
    train_model,
)


# --- config -----------------------------------------------------------------

def test_default_schedule():
    cfg = TrainConfig(epochs=100)
    assert cfg.milestones() == (50, 75)
    assert cfg.lr_at(0) == 0.01
    assert cfg.lr_at(50) == pytest.approx(1e-3)
    assert cfg.lr_at(99) == pytest.approx(1e-4)


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(batch_size=0), dict(lr0=0), dict(lr_gamma=1.5), dict(mixup_alpha=-1)])
def test_config_invariants(bad):
    with pytest.raises(TrainError):
        TrainConfig(**bad)


def test_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epochs": 5, "arch": "resnet", "width": 8, "lr_milestones": [2, 4]}))
    cfg, arch = load_config(path)
    assert cfg.epochs == 5 and cfg.lr_milestones == (2, 4)
    assert arch == {"arch": "resnet", "width": 8}


def test_config_errors(tmp_path):
    with pytest.raises(TrainError) as info:
        load_config(tmp_path / "none.json")
    assert info.value.code == "config_not_found" and "config not found" in str(info.value)
    with pytest.raises(TrainError):
        parse_config({"epochs": 3, "dropout": 0.5})
    with pytest.raises(TrainError):
        parse_config({"arch": "cnn"})


# --- standardization and mixup --------------------------------------------------

def test_standardize_example():
    mean, std = standardize_fit([[0.0, 2.0], [2.0, 0.0]])
    assert mean.tolist() == [1.0, 1.0] and std.tolist() == [1.0, 1.0]


def test_standardize_constant_vertex_floor():
    mean, std = standardize_fit([[1.0, 3.0], [1.0, 5.0]])
    assert std[0] == 1e-8
    assert (np.array([1.0, 3.0]) - mean)[0] / std[0] == 0


def test_standardize_transform_statistics():
    x = np.random.default_rng(0).normal(3, 5, size=(200, 10))
    mean, std = standardize_fit(x)
    z = (x - mean) / std
    assert np.all(np.abs(z.mean(axis=0)) < 1e-6)
    assert np.all(np.abs(z.std(axis=0) - 1) < 1e-4)


def test_standardize_needs_two_samples():
    with pytest.raises(TrainError):
        standardize_fit(np.zeros((1, 4)))


def test_mixup_examples():
    xa, xb = np.array([[1.0, 2.0]]), np.array([[3.0, 6.0]])
    x, (ya, yb, lam) = mixup(xa, [0], xb, [1], 1.0)
    assert x.tolist() == xa.tolist() and lam == 1.0
    x, _ = mixup(xa, [0], xb, [1], 0.5)
    assert x.tolist() == [[2.0, 4.0]]
    with pytest.raises(TrainError):
        mixup(xa, [0], np.ones((2, 2)), [1, 1], 0.5)


def test_mixup_lambda_draws_are_symmetric():
    lam = np.random.default_rng(0).beta(0.2, 0.2, size=100_000)
    sd = math.sqrt(1 / (4 * (2 * 0.2 + 1)))  # Beta(a, a) variance 1 / (4 (2a + 1))
    assert abs(lam.mean() - 0.5) < 3 * sd / math.sqrt(lam.size)


# --- splits ---------------------------------------------------------------------

def _balanced(n_per_class, classes=2, n=4):
    labels = np.repeat(np.arange(classes), n_per_class)
    return Dataset(np.random.default_rng(0).normal(size=(labels.size, n)), labels, classes)


def test_split_example_counts():
    tr, va, te = split_dataset(_balanced(50), seed=0)
    assert (tr.n_samples, va.n_samples, te.n_samples) == (70, 15, 15)
    assert tr.class_counts().tolist() == [35, 35]
    assert sorted(va.class_counts().tolist()) == [7, 8]
    assert sorted(te.class_counts().tolist()) == [7, 8]


def test_split_deterministic_and_disjoint():
    ds = _balanced(40, classes=3)
    a = split_dataset(ds, seed=4)
    b = split_dataset(ds, seed=4)
    assert all(x == y for x, y in zip(a, b))
    rows = np.concatenate([s.signals for s in a])
    assert np.unique(rows, axis=0).shape[0] == ds.n_samples


@pytest.mark.parametrize("sizes", [[13, 7, 29], [3, 3, 3, 3], [101, 5], [40, 41, 42, 43, 44]])
def test_split_proportion_deviation_at_most_one(sizes):
    labels = np.concatenate([np.full(s, c) for c, s in enumerate(sizes)])
    ds = Dataset(np.zeros((labels.size, 2)), labels, len(sizes))
    splits = split_dataset(ds, seed=1)
    total = ds.n_samples
    for part in splits:
        for c, cs in enumerate(sizes):
            share = cs * part.n_samples / total
            assert abs(part.class_counts()[c] - share) <= 1


def test_allocation_rows_and_columns():
    alloc = _allocate([13, 7, 29], [34, 7, 8])
    assert alloc.sum(axis=1).tolist() == [13, 7, 29]
    assert alloc.sum(axis=0).tolist() == [34, 7, 8]


def test_split_errors():
    with pytest.raises(TrainError):
        split_dataset(_balanced(2), seed=0)
    with pytest.raises(TrainError):
        split_dataset(_balanced(10), fractions=(0.5, 0.5, 0.5))


# --- loss -------------------------------------------------------------------------

def test_cross_entropy_uniform():
    loss, _ = cross_entropy(np.zeros((3, 4)), np.array([0, 1, 2]))
    assert loss == pytest.approx(math.log(4), abs=1e-12)


def test_cross_entropy_margin_limit():
    losses = [cross_entropy(np.array([[m, 0.0]]), np.array([0]))[0] for m in (1, 10, 40)]
    assert losses[0] > losses[1] > losses[2] and losses[2] < 1e-15


def test_cross_entropy_gradient_finite_difference():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(5, 3))
    targets = (np.array([0, 1, 2, 1, 0]), np.array([2, 2, 0, 1, 1]), 0.3)
    _, grad = cross_entropy(logits, targets)
    eps = 1e-6
    numeric = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        up, down = logits.copy(), logits.copy()
        up[idx] += eps
        down[idx] -= eps
        numeric[idx] = (cross_entropy(up, targets)[0] - cross_entropy(down, targets)[0]) / (2 * eps)
    assert np.max(np.abs(grad - numeric)) / np.max(np.abs(numeric)) < 1e-6


def test_cross_entropy_non_finite():
    with pytest.raises(TrainError):
        cross_entropy(np.array([[np.inf, 0.0]]), np.array([0]))


# --- optimizer --------------------------------------------------------------------

def test_plain_sgd_step_is_minus_lr_grad():
    p = np.array([1.0, -2.0, 3.0])
    g = np.array([0.5, 0.25, -1.0])
    before = p.copy()
    sgd_step([p], [g], [np.zeros(3)], 0.1, 0.0, 0.0)
    assert np.allclose(p - before, -0.1 * g, rtol=1e-7, atol=0)


def test_weight_decay_is_geometric():
    p = np.array([2.0])
    v = [np.zeros(1)]
    for _ in range(10):
        sgd_step([p], [np.zeros(1)], v, 0.1, 0.0, 0.05)
    assert p[0] == pytest.approx(2.0 * (1 - 0.1 * 0.05) ** 10, rel=1e-12)


def test_momentum_accumulates():
    p = np.array([0.0])
    v = [np.zeros(1)]
    sgd_step([p], [np.ones(1)], v, 1.0, 0.9, 0.0)
    sgd_step([p], [np.ones(1)], v, 1.0, 0.9, 0.0)
    assert p[0] == pytest.approx(-(1 + 1.9))


# --- evaluation and training -----------------------------------------------------

class _Constant:
    """Stand-in model that always predicts class 0."""

    def predict(self, basis, signals):
        out = np.zeros((len(signals), 2))
        out[:, 0] = 1
        return out


def test_evaluate_constant_model():
    labels = np.array([0] * 3 + [1] * 7)
    split = Dataset(np.zeros((10, 2)), labels, 2)
    assert evaluate(_Constant(), None, split) == pytest.approx(0.3)


def test_evaluate_tie_goes_to_lower_class():
    class Tie:
        def predict(self, basis, signals):
            return np.zeros((len(signals), 3))

    split = Dataset(np.zeros((4, 2)), np.array([0, 0, 1, 2]), 3)
    assert evaluate(Tie(), None, split) == 0.5


@pytest.fixture(scope="module")
def easy_splits(small_basis):
    ds = synth_planted_band(small_basis, 2, [0, 1, 2], snr=8.0, samples_per_class=60, seed=2)
    return split_dataset(ds, seed=0)


def test_tiny_mlp_fits_separable_data(small_basis, easy_splits):
    m = build_model("mlp", small_basis.n, 16, 1, 2, seed=0)
    best, history = train_model(m, small_basis, easy_splits, TrainConfig(epochs=30, mixup_alpha=0))
    assert max(history.train_acc) >= 0.99
    assert evaluate(best, small_basis, easy_splits.train) >= 0.99
    assert history.test_acc >= 0.9


def test_history_selection_and_determinism(small_basis, easy_splits):
    cfg = TrainConfig(epochs=8, seed=3)
    runs = []
    for _ in range(2):
        m = build_model("resnet", small_basis.n, 4, 1, 2, seed=3)
        best, h = train_model(m, small_basis, easy_splits, cfg)
        runs.append((best, h, m))
    (b1, h1, m1), (b2, h2, m2) = runs
    assert h1.to_dict() == h2.to_dict()
    assert m1.flat_parameters().tobytes() == m2.flat_parameters().tobytes()
    assert h1.best_val_epoch == int(np.argmax(h1.val_acc))
    assert evaluate(b1, small_basis, easy_splits.val) == max(h1.val_acc)
    assert len(h1.train_loss) == len(h1.train_acc) == len(h1.val_acc) == 8


def test_history_serialization_omits_wall_time():
    h = RunHistory(train_loss=[1.0], train_acc=[0.5], val_acc=[0.5], best_val_epoch=0, test_acc=0.5, wall_time=3.2)
    d = h.to_dict()
    assert "wall_time" not in d
    assert RunHistory.from_dict(d).to_dict() == d


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch(small_basis, easy_splits):
    m = build_model("mlp", small_basis.n, 8, 1, 2, seed=0)
    with pytest.raises(DivergenceError) as info:
        train_model(m, small_basis, easy_splits, TrainConfig(epochs=5, lr0=1e12, momentum=0.0))
    assert info.value.numerical and info.value.epoch >= 0


def test_grad_hook_sees_every_step(small_basis, easy_splits):
    seen = []
    m = build_model("mlp", small_basis.n, 4, 1, 2)
    fit(m, small_basis, easy_splits, TrainConfig(epochs=2, batch_size=16), grad_hook=lambda s, t, *_: seen.append((s, t)))
    per_epoch = -(-easy_splits.train.n_samples // 16)
    assert [s for s, _ in seen] == list(range(2 * per_epoch))
    assert all(t == 2 * per_epoch for _, t in seen)


def test_empty_split_rejected(small_basis, easy_splits):
    empty = easy_splits.val.subset(np.array([], dtype=np.int64))
    m = build_model("mlp", small_basis.n, 4, 1, 2)
    with pytest.raises(TrainError):
        train_model(m, small_basis, Splits(easy_splits.train, empty, easy_splits.test), TrainConfig(epochs=1))
