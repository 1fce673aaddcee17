"""Jacobi rotation kernel.

The sweep loop exists twice: a numba ``@njit`` version with explicit
loops and a pure-numpy version that applies each round of disjoint
rotations as vectorized column/row updates.  Set
``GSPNET_DISABLE_NUMBA=1`` (or run without numba installed) to use the
numpy path.  Both perform the same floating point operations in the same
order and return bit-identical results.

Per-frequency channel mixing is deliberately not here: batched
``np.matmul`` beats a hand-written loop by an order of magnitude.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("GSPNET_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def round_robin_pairs(n):
    """Tournament ordering: n-1 (or n) rounds of disjoint index pairs.

    Every unordered pair {p, q} with p < q appears exactly once per sweep.
    For odd ``n`` a dummy player ``n`` is added; pairs touching it are
    dropped, so rounds can have different lengths.  Returned as an
    int64 array (rounds, m // 2, 2) padded with -1.
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                pairs.append((min(a, b), max(a, b)))
        rounds.append(pairs)
        players = [players[0], players[-1]] + players[1:-1]
    out = np.full((len(rounds), max(m // 2, 1), 2), -1, dtype=np.int64)
    for r, pairs in enumerate(rounds):
        if pairs:
            out[r, : len(pairs)] = pairs
    return out


def _offdiag_norm(a):
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


# ---------------------------------------------------------------------------
# Jacobi sweeps
# ---------------------------------------------------------------------------

def _jacobi_numpy(a, v, pairs, tol_abs, max_sweeps):
    off = _offdiag_norm(a)
    sweeps = 0
    while off > tol_abs and sweeps < max_sweeps:
        for r in range(pairs.shape[0]):
            rp = pairs[r]
            rp = rp[rp[:, 0] >= 0]
            if rp.size == 0:
                continue
            p, q = rp[:, 0], rp[:, 1]
            apq = a[p, q]
            live = apq != 0.0
            if not live.any():
                continue
            p, q, apq = p[live], q[live], apq[live]
            app, aqq = a[p, p], a[q, q]
            tau = (aqq - app) / (2.0 * apq)
            root = np.sqrt(1.0 + tau * tau)
            t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + root)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            ap, aq = a[:, p], a[:, q]
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :], a[q, :]
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        sweeps += 1
        off = _offdiag_norm(a)
    return off, sweeps


if numba is not None:

    @numba.njit(cache=True)
    def _offdiag_norm_numba(a):
        n = a.shape[0]
        tot = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    tot += a[i, j] * a[i, j]
        return np.sqrt(tot)

    @numba.njit(cache=True)
    def _jacobi_numba(a, vt, pairs, tol_abs, max_sweeps):
        # eigenvectors are accumulated as rows of vt so updates stay contiguous
        n = a.shape[0]
        width = pairs.shape[1]
        cs = np.empty(width)
        ss = np.empty(width)
        live = np.zeros(width, dtype=np.bool_)
        off = _offdiag_norm_numba(a)
        sweeps = 0
        while off > tol_abs and sweeps < max_sweeps:
            for r in range(pairs.shape[0]):
                # rotation parameters come from the matrix as it stands
                # before the round; disjoint pairs do not interact
                for k in range(width):
                    p = pairs[r, k, 0]
                    q = pairs[r, k, 1]
                    live[k] = False
                    if p < 0:
                        continue
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                    root = np.sqrt(1.0 + tau * tau)
                    if tau >= 0.0:
                        t = 1.0 / (tau + root)
                    else:
                        t = -1.0 / (-tau + root)
                    c = 1.0 / np.sqrt(1.0 + t * t)
                    cs[k] = c
                    ss[k] = t * c
                    live[k] = True
                for k in range(width):
                    if not live[k]:
                        continue
                    p = pairs[r, k, 0]
                    q = pairs[r, k, 1]
                    c = cs[k]
                    s = ss[k]
                    for i in range(n):
                        x = a[i, p]
                        y = a[i, q]
                        a[i, p] = c * x - s * y
                        a[i, q] = s * x + c * y
                for k in range(width):
                    if not live[k]:
                        continue
                    p = pairs[r, k, 0]
                    q = pairs[r, k, 1]
                    c = cs[k]
                    s = ss[k]
                    for j in range(n):
                        x = a[p, j]
                        y = a[q, j]
                        a[p, j] = c * x - s * y
                        a[q, j] = s * x + c * y
                for k in range(width):
                    if not live[k]:
                        continue
                    p = pairs[r, k, 0]
                    q = pairs[r, k, 1]
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    c = cs[k]
                    s = ss[k]
                    for i in range(n):
                        x = vt[p, i]
                        y = vt[q, i]
                        vt[p, i] = c * x - s * y
                        vt[q, i] = s * x + c * y
            sweeps += 1
            off = _offdiag_norm_numba(a)
        return off, sweeps


def jacobi_sweeps(a, v, tol_abs, max_sweeps, use_numba=None):
    """Run cyclic Jacobi sweeps in place on ``a`` (symmetric) and ``v``.

    Stops once the off-diagonal Frobenius norm is at most ``tol_abs`` or
    after ``max_sweeps``.  Returns ``(offdiag_norm, sweeps)``.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    pairs = round_robin_pairs(a.shape[0])
    if use_numba and numba is not None:
        vt = np.ascontiguousarray(v.T)
        off, sweeps = _jacobi_numba(a, vt, pairs, float(tol_abs), int(max_sweeps))
        v[...] = vt.T
    else:
        off, sweeps = _jacobi_numpy(a, v, pairs, float(tol_abs), int(max_sweeps))
    return float(off), int(sweeps)
