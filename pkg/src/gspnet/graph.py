"""Weighted undirected graphs, kNN binarization and the normalized Laplacian."""

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GraphError
from .linalg import SymMatrix


@dataclass(frozen=True, eq=False)
class Graph:
    """Symmetric non-negative weights with an empty diagonal."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GraphError(f"weights must be square, got shape {w.shape}", "not_square")
        if w.shape[0] < 2:
            raise GraphError("a graph needs at least 2 vertices", "too_small")
        if not np.all(np.isfinite(w)):
            raise GraphError("weights contain non-finite values", "non_finite")
        if np.any(w < 0):
            raise GraphError("weights contain negative entries", "negative_weight")
        if not np.array_equal(w, w.T) or np.any(np.diag(w) != 0):
            raise GraphError("weights must be symmetric with zero diagonal; use from_dense", "not_symmetric")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.weights.shape[0]

    def degrees(self):
        return self.weights.sum(axis=1)


def from_dense(weights):
    """Build a Graph from a square matrix.

    The matrix is symmetrized as ``(W + Wᵀ) / 2`` and its diagonal is
    zeroed.  Negative entries are refused: rectify correlation matrices
    before calling this.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise GraphError(f"weights must be square, got shape {w.shape}", "not_square")
    if np.any(w < 0):
        raise GraphError("negative weight found; rectify the matrix before building a graph", "negative_weight")
    w = (w + w.T) / 2.0
    np.fill_diagonal(w, 0.0)
    return Graph(w)


def knn_binarize(g, k):
    """Keep, for each vertex, unit edges to its ``k`` strongest neighbours.

    An edge {i, j} survives if j is in i's top-k or i is in j's top-k.
    Neighbours tied with the k-th strongest are all kept, which makes the
    operation idempotent on its own (binary) output.  Zero-weight pairs
    never become edges.
    """
    n = g.n
    if not 1 <= k < n:
        raise GraphError(f"k must satisfy 1 <= k < n={n}, got {k}", "bad_k")
    w = g.weights
    mask = np.zeros((n, n), dtype=bool)
    for i in range(n):
        row = np.delete(w[i], i)
        cutoff = np.sort(row)[::-1][k - 1]
        mask[i] = (w[i] >= cutoff) & (w[i] > 0)
        mask[i, i] = False
    mask |= mask.T
    return Graph(mask.astype(np.float64))


def normalized_laplacian(g):
    """``L = I - D^{-1/2} W D^{-1/2}`` as a SymMatrix."""
    deg = g.degrees()
    if np.any(deg <= 0):
        isolated = np.flatnonzero(deg <= 0).tolist()
        raise GraphError(f"isolated vertices have zero degree: {isolated}", "isolated_vertex")
    inv = 1.0 / np.sqrt(deg)
    lap = np.eye(g.n) - inv[:, None] * g.weights * inv[None, :]
    return SymMatrix((lap + lap.T) / 2.0)


def is_connected(g):
    n = g.n
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    adj = g.weights != 0
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(adj[i] & ~seen):
            seen[j] = True
            queue.append(j)
    return bool(seen.all())


def geometric_knn_graph(n, k=8, seed=0, bandwidth=0.1, max_tries=100):
    """Connected kNN-binarized graph on ``n`` random points in the unit square.

    Pairwise weights are ``exp(-d² / bandwidth)``.  Point sets are redrawn
    from the same generator until the binarized graph is connected.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        pts = rng.uniform(size=(n, 2))
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        g = knn_binarize(from_dense(np.exp(-d2 / bandwidth)), k)
        if is_connected(g):
            return g
    raise GraphError(f"no connected {k}-NN graph on {n} points after {max_tries} draws", "disconnected")


# ---------------------------------------------------------------------------
# text formats
# ---------------------------------------------------------------------------

def _parse_rows(text):
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if line:
            rows.append([float(v) for v in line.split(",")])
    return rows


def read_graph(path, fmt="auto"):
    """Read a dense CSV matrix or an ``i,j,w`` edge list.

    With ``fmt="auto"`` a first line of exactly three columns means an
    edge list, unless the file also has exactly three lines (a 3x3 dense
    matrix).  Pass ``fmt="edges"`` or ``fmt="dense"`` to override.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise GraphError(f"cannot read graph file {path}: {exc}", "io_error") from exc
    try:
        rows = _parse_rows(text)
    except ValueError as exc:
        raise GraphError(f"malformed graph file {path}: {exc}", "parse_error") from exc
    if not rows:
        raise GraphError(f"graph file {path} is empty", "parse_error")
    if fmt == "auto":
        fmt = "edges" if len(rows[0]) == 3 and len(rows) != 3 else "dense"
    if fmt == "dense":
        if any(len(r) != len(rows) for r in rows):
            raise GraphError(f"dense graph file {path} is not square", "parse_error")
        return from_dense(np.array(rows))
    if fmt != "edges":
        raise GraphError(f"unknown graph format {fmt!r}", "bad_format")
    if any(len(r) != 3 for r in rows):
        raise GraphError(f"edge list {path} must have 3 columns per line", "parse_error")
    edges = np.array(rows)
    ij = edges[:, :2]
    if np.any(ij < 0) or np.any(ij != np.floor(ij)):
        raise GraphError("edge list indices must be non-negative integers", "parse_error")
    ij = ij.astype(np.int64)
    n = int(ij.max()) + 1
    w = np.zeros((n, n))
    for (i, j), weight in zip(ij, edges[:, 2]):
        w[i, j] = weight
        w[j, i] = weight
    return from_dense(w)


def write_graph(g, path):
    """Write dense CSV with 17 significant digits (round-trips doubles)."""
    lines = [",".join(f"{v:.17g}" for v in row) for row in g.weights]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
