"""GSPConv layer, spectral ResNet and spectral MLP with hand-written backprop.

Internally graph signals are stored vertex-major, ``(n, batch, channels)``,
and spectra frequency-major, ``(K, batch, channels)``, so a batched graph
Fourier transform is a single matrix product and every per-frequency
weight slice ``theta[l]`` is contiguous.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModelError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
GSPM_MAGIC = b"GSPM"


# ---------------------------------------------------------------------------
# GSPConv
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class GspConvLayer:
    theta: np.ndarray
    bn_scale: np.ndarray
    bn_shift: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    activation: str = "relu"
    use_bn: bool = True
    # set by the first train-mode forward (or a checkpoint load)
    stats_ready: bool = False

    @classmethod
    def create(cls, n_freq, c_in, c_out, activation="relu", use_bn=True, dtype=np.float32):
        if activation not in ("relu", "none"):
            raise ModelError(f"unknown activation {activation!r}", "bad_activation")
        return cls(
            theta=np.zeros((n_freq, c_in, c_out), dtype=dtype),
            bn_scale=np.ones(c_out, dtype=dtype),
            bn_shift=np.zeros(c_out, dtype=dtype),
            bn_running_mean=np.zeros(c_out, dtype=dtype),
            bn_running_var=np.ones(c_out, dtype=dtype),
            activation=activation,
            use_bn=use_bn,
        )

    @property
    def n_freq(self):
        return self.theta.shape[0]

    @property
    def c_in(self):
        return self.theta.shape[1]

    @property
    def c_out(self):
        return self.theta.shape[2]

    def parameters(self):
        if self.use_bn:
            return [self.theta, self.bn_scale, self.bn_shift]
        return [self.theta]


@dataclass(eq=False)
class ConvCache:
    uk: np.ndarray
    xhat: np.ndarray
    yhat: np.ndarray = None
    inv_std: np.ndarray = None
    active: np.ndarray = None
    train: bool = True


def _check_mode(mode):
    if mode not in ("train", "eval"):
        raise ModelError(f"mode must be 'train' or 'eval', got {mode!r}", "bad_mode")
    return mode == "train"


def _conv_forward(layer, uk, x, train):
    n, nb, ci = x.shape
    if ci != layer.c_in or uk.shape != (n, layer.n_freq):
        raise ModelError(
            f"shape mismatch: input {x.shape}, basis columns {uk.shape}, theta {layer.theta.shape}",
            "shape_mismatch",
        )
    co = layer.c_out
    k = layer.n_freq
    xhat = (uk.T @ x.reshape(n, nb * ci)).reshape(k, nb, ci)
    mixed = np.matmul(xhat, layer.theta)
    y = (uk @ mixed.reshape(k, nb * co)).reshape(n, nb, co)
    cache = ConvCache(uk=uk, xhat=xhat, train=train)
    if layer.use_bn:
        if train:
            mean = y.mean(axis=(0, 1))
            var = y.var(axis=(0, 1))
            count = n * nb
            unbiased = var * count / (count - 1) if count > 1 else var
            layer.bn_running_mean *= 1 - BN_MOMENTUM
            layer.bn_running_mean += BN_MOMENTUM * mean
            layer.bn_running_var *= 1 - BN_MOMENTUM
            layer.bn_running_var += BN_MOMENTUM * unbiased
            layer.stats_ready = True
        else:
            if not layer.stats_ready:
                raise ModelError("eval-mode forward before any training step: batch-norm statistics are unset", "bn_uninitialized")
            mean, var = layer.bn_running_mean, layer.bn_running_var
        inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(y.dtype)
        yhat = (y - mean) * inv_std
        z = yhat * layer.bn_scale + layer.bn_shift
        cache.yhat = yhat
        cache.inv_std = inv_std
    else:
        z = y
    if layer.activation == "relu":
        cache.active = z > 0
        z = z * cache.active
    return z, cache


def _conv_backward(layer, cache, grad_out):
    g = grad_out * cache.active if cache.active is not None else grad_out
    n, nb, co = g.shape
    grad_bn = None
    if layer.use_bn:
        g_scale = np.sum(g * cache.yhat, axis=(0, 1))
        g_shift = np.sum(g, axis=(0, 1))
        g_yhat = g * layer.bn_scale
        if cache.train:
            m = n * nb
            g = (cache.inv_std / m) * (
                m * g_yhat - g_yhat.sum(axis=(0, 1)) - cache.yhat * np.sum(g_yhat * cache.yhat, axis=(0, 1))
            )
        else:
            g = g_yhat * cache.inv_std
        grad_bn = (g_scale, g_shift)
    k = layer.n_freq
    uk = cache.uk
    g_mixed = (uk.T @ g.reshape(n, nb * co)).reshape(k, nb, co)
    g_xhat = np.matmul(g_mixed, layer.theta.transpose(0, 2, 1))
    g_theta = np.matmul(cache.xhat.transpose(0, 2, 1), g_mixed)
    ci = layer.c_in
    g_x = (uk @ g_xhat.reshape(k, nb * ci)).reshape(n, nb, ci)
    return g_x, g_theta, grad_bn


def _basis_columns(b, kept, dtype):
    u = b.u if kept is None else b.u[:, np.asarray(kept)]
    return np.ascontiguousarray(u, dtype=dtype)


def spectral_mix(xhat, theta):
    """Per-frequency channel mixing: ``out[l, c] = sum_c' xhat[l, c'] theta[l, c', c]``."""
    xhat = np.asarray(xhat)
    theta = np.asarray(theta)
    if theta.ndim != 3 or xhat.shape != theta.shape[:2]:
        raise ModelError(f"shape mismatch: xhat {xhat.shape}, theta {theta.shape}", "shape_mismatch")
    dtype = np.result_type(xhat, theta)
    return np.matmul(xhat.astype(dtype)[:, None, :], theta.astype(dtype))[:, 0, :]


def gspconv_forward(layer, b, x, mode="train", kept=None):
    """Apply a GSPConv layer to a batch ``x`` of shape (batch, n, c_in).

    ``kept`` lists the frequency indices the layer's ``theta`` rows refer
    to (all frequencies when omitted).  Returns ``(out, cache)`` with
    ``out`` of shape (batch, n, c_out).
    """
    train = _check_mode(mode)
    x = np.asarray(x, dtype=layer.theta.dtype)
    if x.ndim != 3 or x.shape[1] != b.n:
        raise ModelError(f"expected (batch, {b.n}, c_in) input, got {x.shape}", "shape_mismatch")
    uk = _basis_columns(b, kept, layer.theta.dtype)
    out, cache = _conv_forward(layer, uk, np.ascontiguousarray(x.transpose(1, 0, 2)), train)
    return out.transpose(1, 0, 2), cache


def gspconv_backward(layer, cache, grad_out):
    """Gradients for ``gspconv_forward``; ``grad_out`` is (batch, n, c_out).

    Returns ``(grad_x, grad_theta, grad_bn)`` where ``grad_bn`` is
    ``(grad_scale, grad_shift)`` or None when batch norm is disabled.
    """
    g = np.ascontiguousarray(np.asarray(grad_out, dtype=layer.theta.dtype).transpose(1, 0, 2))
    if g.shape[0] != cache.uk.shape[0] or g.shape[1] != cache.xhat.shape[1]:
        raise ModelError("grad_out does not match the cached forward pass", "cache_mismatch")
    g_x, g_theta, grad_bn = _conv_backward(layer, cache, g)
    return g_x.transpose(1, 0, 2), g_theta, grad_bn


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

class _SpectralModel:
    kind = None

    def __init__(self, n, kept, n_classes, dtype):
        kept = np.arange(n) if kept is None else np.asarray(kept, dtype=np.int64)
        if kept.ndim != 1 or kept.size == 0:
            raise ModelError("kept frequency set must be a non-empty 1-d list", "bad_kept")
        if np.any(np.diff(kept) <= 0) or kept[0] < 0 or kept[-1] >= n:
            raise ModelError(f"kept frequencies must be strictly ascending in [0, {n})", "bad_kept")
        if n_classes < 2:
            raise ModelError("need at least 2 classes", "bad_classes")
        self.n = int(n)
        self.kept = kept
        self.n_classes = int(n_classes)
        self.dtype = np.dtype(dtype)
        self.seed = None
        self.input_mean = None
        self.input_std = None
        self._uk_cache = (None, None)

    @property
    def k(self):
        return self.kept.size

    def basis_columns(self, b):
        if b.n != self.n:
            raise ModelError(f"model expects a basis over {self.n} vertices, got {b.n}", "basis_mismatch")
        cached_basis, uk = self._uk_cache
        if cached_basis is not b:
            uk = _basis_columns(b, self.kept, self.dtype)
            self._uk_cache = (b, uk)
        return uk

    def flat_parameters(self):
        return np.concatenate([p.ravel() for p in self.parameters()])

    def standardize(self, signals):
        x = np.asarray(signals, dtype=self.dtype)
        if self.input_mean is None:
            return x
        return ((x - self.input_mean) / self.input_std).astype(self.dtype)

    def predict(self, b, signals):
        """Eval-mode logits on raw signals, applying the fitted standardization."""
        return self.forward(b, self.standardize(signals), mode="eval")


class SpectralResNet(_SpectralModel):
    """GSPConv embedding (1 -> width), ``depth`` residual blocks, mean pool, affine head."""

    kind = "resnet"

    def __init__(self, n, width, depth, n_classes, kept=None, dtype=np.float32):
        super().__init__(n, kept, n_classes, dtype)
        if width < 1 or depth < 0:
            raise ModelError("width must be >= 1 and depth >= 0", "bad_architecture")
        self.width = int(width)
        self.depth = int(depth)
        k = self.k
        self.embed = GspConvLayer.create(k, 1, width, "relu", dtype=dtype)
        self.blocks = [
            (
                GspConvLayer.create(k, width, width, "relu", dtype=dtype),
                GspConvLayer.create(k, width, width, "none", dtype=dtype),
            )
            for _ in range(depth)
        ]
        self.head_w = np.zeros((width, n_classes), dtype=dtype)
        self.head_b = np.zeros(n_classes, dtype=dtype)
        self._cache = None

    def conv_layers(self):
        layers = [self.embed]
        for c1, c2 in self.blocks:
            layers += [c1, c2]
        return layers

    def parameters(self):
        params = []
        for layer in self.conv_layers():
            params += layer.parameters()
        return params + [self.head_w, self.head_b]

    def forward(self, b, x, mode="eval"):
        return resnet_forward(self, b, x, mode)

    def backward(self, grad_logits):
        if self._cache is None:
            raise ModelError("backward called without a train-mode forward", "cache_mismatch")
        pooled, convs, sums = self._cache
        g = np.asarray(grad_logits, dtype=self.dtype)
        g_head_w = pooled.T @ g
        g_head_b = g.sum(axis=0)
        g_pool = g @ self.head_w.T
        n = convs[0][1].uk.shape[0]
        g_z = np.broadcast_to(g_pool / self.dtype.type(n), (n,) + g_pool.shape).copy()
        grads = {}
        for i in range(self.depth - 1, -1, -1):
            c1, c2 = self.blocks[i]
            g_s = g_z * (sums[i] > 0)
            g_h, g_t2, bn2 = _conv_backward(c2, convs[2 * i + 2][1], g_s)
            g_in, g_t1, bn1 = _conv_backward(c1, convs[2 * i + 1][1], g_h)
            grads[id(c1)] = (g_t1, bn1)
            grads[id(c2)] = (g_t2, bn2)
            g_z = g_s + g_in
        _, g_t0, bn0 = _conv_backward(self.embed, convs[0][1], g_z)
        grads[id(self.embed)] = (g_t0, bn0)
        out = []
        for layer in self.conv_layers():
            g_theta, bn = grads[id(layer)]
            out.append(g_theta)
            if layer.use_bn:
                out += list(bn)
        return out + [g_head_w, g_head_b]


def resnet_forward(m, b, x, mode="eval"):
    """Logits (batch, C) for signals ``x`` of shape (batch, n) or (batch, n, 1)."""
    train = _check_mode(mode)
    x = np.asarray(x, dtype=m.dtype)
    if x.ndim == 3:
        if x.shape[2] != 1:
            raise ModelError("spectral ResNet takes single-channel signals", "shape_mismatch")
        x = x[:, :, 0]
    if x.ndim != 2 or x.shape[1] != m.n:
        raise ModelError(f"expected (batch, {m.n}) input, got {x.shape}", "shape_mismatch")
    uk = m.basis_columns(b)
    z = np.ascontiguousarray(x.T)[:, :, None]
    convs = []
    sums = []
    z, cache = _conv_forward(m.embed, uk, z, train)
    convs.append((m.embed, cache))
    for c1, c2 in m.blocks:
        h, cache1 = _conv_forward(c1, uk, z, train)
        h, cache2 = _conv_forward(c2, uk, h, train)
        s = z + h
        z = np.maximum(s, 0)
        convs += [(c1, cache1), (c2, cache2)]
        sums.append(s)
    pooled = z.mean(axis=0)
    logits = pooled @ m.head_w + m.head_b
    m._cache = (pooled, convs, sums) if train else None
    return logits


class SpectralMlp(_SpectralModel):
    """MLP on the kept graph-frequency coefficients of the input.

    One K -> h layer, ``depth - 1`` h -> h layers (all ReLU), then an
    h -> C head.
    """

    kind = "mlp"

    def __init__(self, n, width, depth, n_classes, kept=None, dtype=np.float32):
        super().__init__(n, kept, n_classes, dtype)
        if width < 1 or depth < 1:
            raise ModelError("width and depth must be >= 1", "bad_architecture")
        self.width = int(width)
        self.depth = int(depth)
        self.w0 = np.zeros((self.k, width), dtype=dtype)
        self.b0 = np.zeros(width, dtype=dtype)
        self.hidden = [
            (np.zeros((width, width), dtype=dtype), np.zeros(width, dtype=dtype)) for _ in range(depth - 1)
        ]
        self.head_w = np.zeros((width, n_classes), dtype=dtype)
        self.head_b = np.zeros(n_classes, dtype=dtype)
        self._cache = None

    def parameters(self):
        params = [self.w0, self.b0]
        for w, bias in self.hidden:
            params += [w, bias]
        return params + [self.head_w, self.head_b]

    def forward(self, b, x, mode="eval"):
        return mlp_forward(self, b, x, mode)

    def backward(self, grad_logits):
        if self._cache is None:
            raise ModelError("backward called without a train-mode forward", "cache_mismatch")
        acts = self._cache
        g = np.asarray(grad_logits, dtype=self.dtype)
        grads = [acts[-1].T @ g, g.sum(axis=0)]
        g = (g @ self.head_w.T) * (acts[-1] > 0)
        for i in range(self.depth - 2, -1, -1):
            w, _ = self.hidden[i]
            grads = [acts[i + 1].T @ g, g.sum(axis=0)] + grads
            g = (g @ w.T) * (acts[i + 1] > 0)
        return [acts[0].T @ g, g.sum(axis=0)] + grads


def mlp_forward(m, b, x, mode="eval"):
    """Logits (batch, C) for signals ``x`` of shape (batch, n)."""
    train = _check_mode(mode)
    x = np.asarray(x, dtype=m.dtype)
    if x.ndim != 2 or x.shape[1] != m.n:
        raise ModelError(f"expected (batch, {m.n}) input, got {x.shape}", "shape_mismatch")
    uk = m.basis_columns(b)
    xhat = x @ uk
    acts = [xhat]
    a = np.maximum(xhat @ m.w0 + m.b0, 0)
    acts.append(a)
    for w, bias in m.hidden:
        a = np.maximum(a @ w + bias, 0)
        acts.append(a)
    logits = a @ m.head_w + m.head_b
    m._cache = acts if train else None
    return logits


def build_model(kind, n, width, depth, n_classes, kept=None, seed=0, dtype=np.float32):
    if kind == "resnet":
        m = SpectralResNet(n, width, depth, n_classes, kept=kept, dtype=dtype)
    elif kind == "mlp":
        m = SpectralMlp(n, width, depth, n_classes, kept=kept, dtype=dtype)
    else:
        raise ModelError(f"unknown architecture {kind!r}", "bad_architecture")
    return init_params(m, seed)


# ---------------------------------------------------------------------------
# parameter accounting and initialization
# ---------------------------------------------------------------------------

def param_count(m):
    """``(formula_count, full_count)``.

    ``formula_count`` is the closed form ``γK + 2dγ²K + γC`` (ResNet) or
    ``hK + (d-1)h² + hC`` (MLP), with K the number of kept frequencies.
    ``full_count`` adds biases and batch-norm scale/shift and equals the
    number of stored trainable values.
    """
    k, c, w, d = m.k, m.n_classes, m.width, m.depth
    if m.kind == "resnet":
        formula = w * k + 2 * d * w * w * k + w * c
        bn = sum(2 * layer.c_out for layer in m.conv_layers() if layer.use_bn)
        return formula, formula + bn + c
    formula = w * k + (d - 1) * w * w + w * c
    return formula, formula + d * w + c


def init_params(m, seed):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(m.dtype)

    if m.kind == "resnet":
        for layer in m.conv_layers():
            layer.theta[...] = uniform(layer.theta.shape, layer.c_in)
            layer.bn_scale[...] = 1
            layer.bn_shift[...] = 0
        m.head_w[...] = uniform(m.head_w.shape, m.width)
    else:
        m.w0[...] = uniform(m.w0.shape, m.k)
        m.b0[...] = 0
        for w, bias in m.hidden:
            w[...] = uniform(w.shape, m.width)
            bias[...] = 0
        m.head_w[...] = uniform(m.head_w.shape, m.width)
    m.head_b[...] = 0
    m.seed = seed
    return m


# ---------------------------------------------------------------------------
# GSPM checkpoints
# ---------------------------------------------------------------------------

def _checkpoint_arrays(m):
    """Stored arrays in file order.

    ResNet: for embed, then conv1/conv2 of each block: theta, bn_scale,
    bn_shift, bn_running_mean, bn_running_var; then head_w, head_b.
    MLP: w0, b0, hidden (w, b) pairs, head_w, head_b.  Both end with the
    input standardization mean and std (n values each) when fitted.
    """
    arrays = []
    if m.kind == "resnet":
        for layer in m.conv_layers():
            arrays += [layer.theta, layer.bn_scale, layer.bn_shift, layer.bn_running_mean, layer.bn_running_var]
        arrays += [m.head_w, m.head_b]
    else:
        arrays += m.parameters()
    if m.input_mean is not None:
        arrays += [m.input_mean, m.input_std]
    return arrays


def save_checkpoint(m, path):
    header = {
        "kind": m.kind,
        "n": m.n,
        "K": m.k,
        "kept": m.kept.tolist(),
        "width": m.width,
        "depth": m.depth,
        "classes": m.n_classes,
        "seed": m.seed,
        "standardized": m.input_mean is not None,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.asarray(a, dtype="<f4").tobytes() for a in _checkpoint_arrays(m))
    Path(path).write_bytes(GSPM_MAGIC + struct.pack("<I", len(head)) + head + body)


def load_checkpoint(path, dtype=np.float32):
    raw = Path(path).read_bytes()
    if raw[:4] != GSPM_MAGIC:
        raise ModelError(f"{path} is not a GSPM checkpoint", "bad_magic")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    m = build_model(
        header["kind"], header["n"], header["width"], header["depth"], header["classes"],
        kept=header["kept"], seed=header["seed"] if header["seed"] is not None else 0, dtype=dtype,
    )
    m.seed = header["seed"]
    if header["standardized"]:
        m.input_mean = np.zeros(m.n, dtype=dtype)
        m.input_std = np.ones(m.n, dtype=dtype)
    arrays = _checkpoint_arrays(m)
    body = np.frombuffer(raw, dtype="<f4", offset=8 + hlen)
    if body.size != sum(a.size for a in arrays):
        raise ModelError(f"{path}: payload size mismatch", "payload_size")
    pos = 0
    for a in arrays:
        a[...] = body[pos : pos + a.size].reshape(a.shape)
        pos += a.size
    if m.kind == "resnet":
        for layer in m.conv_layers():
            layer.stats_ready = True
    return m
