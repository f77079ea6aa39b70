"""Hot inner loops, each with a numba path and a pure-numpy path.

The public functions dispatch on :data:`hierpart._accel.HAVE_NUMBA`. Both
paths are exposed through :data:`NUMPY` and :data:`NUMBA` so the benchmark and
the tests can compare them directly.
"""
import numpy as np

from ._accel import HAVE_NUMBA, jit

# --------------------------------------------------------------------------
# k nearest neighbours (exact, O(m^2))


def _knn_numpy(points, k):
    m = points.shape[0]
    diff = points[:, None, :] - points[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    d2[np.arange(m), np.arange(m)] = -1.0
    order = np.argsort(d2, axis=1, kind="stable")
    return np.ascontiguousarray(order[:, : k + 1]).astype(np.int64)


def _knn_loop(points, k):
    m = points.shape[0]
    out = np.empty((m, k + 1), dtype=np.int64)
    d2 = np.empty(m)
    for i in range(m):
        for j in range(m):
            s = 0.0
            for a in range(3):
                t = points[i, a] - points[j, a]
                s += t * t
            d2[j] = s
        d2[i] = -1.0
        order = np.argsort(d2, kind="mergesort")
        for t in range(k + 1):
            out[i, t] = order[t]
    return out


_knn_numba = jit(_knn_loop)

# --------------------------------------------------------------------------
# weighted neighbourhood aggregation: out[i] = sum_k w[i, k] * h[idx[i, k]]


def _gather_numpy(h, idx, w):
    return np.einsum("nk,nkf->nf", w, h[idx])


def _scatter_numpy(g, idx, w, n):
    out = np.zeros((n, g.shape[1]))
    np.add.at(out, idx.ravel(), (w[:, :, None] * g[:, None, :]).reshape(-1, g.shape[1]))
    return out


def _gather_loop(h, idx, w):
    n, kk = idx.shape
    f = h.shape[1]
    out = np.zeros((n, f))
    for i in range(n):
        for t in range(kk):
            j = idx[i, t]
            c = w[i, t]
            for a in range(f):
                out[i, a] += c * h[j, a]
    return out


def _scatter_loop(g, idx, w, n):
    rows, kk = idx.shape
    f = g.shape[1]
    out = np.zeros((n, f))
    for i in range(rows):
        for t in range(kk):
            j = idx[i, t]
            c = w[i, t]
            for a in range(f):
                out[j, a] += c * g[i, a]
    return out


_gather_numba = jit(_gather_loop)
_scatter_numba = jit(_scatter_loop)

# --------------------------------------------------------------------------
# categorical draws by inverse CDF


def _draw_numpy(cdf, u):
    c = cdf.shape[1]
    out = (u[..., None] >= cdf[None, :, :]).sum(axis=-1)
    return np.minimum(out, c - 1).astype(np.int64)


def _draw_loop(cdf, u):
    n_draws, m = u.shape
    c = cdf.shape[1]
    out = np.empty((n_draws, m), dtype=np.int64)
    for l in range(n_draws):
        for i in range(m):
            x = u[l, i]
            k = 0
            while k < c - 1 and x >= cdf[i, k]:
                k += 1
            out[l, i] = k
    return out


_draw_numba = jit(_draw_loop)

# --------------------------------------------------------------------------
# min-cost assignment on a square matrix (shortest augmenting path with
# potentials, O(n^3)); returns the column assigned to each row


def _assign_loop(cost):
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    cols = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        cols[p[j] - 1] = j - 1
    return cols


_assign_numba = jit(_assign_loop)

# --------------------------------------------------------------------------

NUMPY = {
    "knn": _knn_numpy,
    "gather": _gather_numpy,
    "scatter": _scatter_numpy,
    "draw": _draw_numpy,
    "assign": _assign_loop,
}

NUMBA = (
    {
        "knn": _knn_numba,
        "gather": _gather_numba,
        "scatter": _scatter_numba,
        "draw": _draw_numba,
        "assign": _assign_numba,
    }
    if HAVE_NUMBA
    else None
)

_ACTIVE = NUMBA if HAVE_NUMBA else NUMPY


def knn_indices(points, k):
    """Row ``i``: ``i`` itself, then its ``k`` nearest other points (ties by index)."""
    return _ACTIVE["knn"](np.ascontiguousarray(points, dtype=np.float64), int(k))


def neighbor_gather(h, idx, w):
    return _ACTIVE["gather"](np.ascontiguousarray(h), idx, w)


def neighbor_scatter(g, idx, w, n):
    """Adjoint of :func:`neighbor_gather` with respect to ``h``."""
    return _ACTIVE["scatter"](np.ascontiguousarray(g), idx, w, int(n))


def categorical_draw(cdf, u):
    """Index of the first CDF entry strictly above each uniform in ``u`` (L x m)."""
    return _ACTIVE["draw"](np.ascontiguousarray(cdf), np.ascontiguousarray(u))


def assign_min_cost(cost):
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if cost.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return _ACTIVE["assign"](cost)
