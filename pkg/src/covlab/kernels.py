"""Batched numeric kernels over dense coordinate arrays.

Everything hot lives here: row-wise evaluation of the inf-convolution norm
``|x|_M^2 = min_t [t^2 + M * sum((|x_i|-t)_+^2)]`` (exact piecewise-quadratic
minimization over the sorted breakpoints), gauges of norm-ball bodies,
certified distance lower bounds, and greedy net selection.

Each kernel has two implementations: a numba-compiled loop and a pure-numpy
vectorized twin.  The backend is chosen at import time from the environment
variable ``COVLAB_BACKEND``:

    auto   (default) use numba when importable, else numpy
    numba  force numba, raise if unavailable
    numpy  force the pure-numpy path

``COVLAB_THREADS`` caps the numba thread pool (kernels are written as
sequential loops, so results are identical either way).

Body encoding used by the multi-body kernels: per body a ``kind`` code
(0 = sup-norm ball, 1 = scaled M-norm ball), a dense ``center`` row, the
``radius``, the M parameter, the scale ``q`` and a 0/1 ``mask`` row marking
the scaled coordinate set.  A plain M-norm ball is kind 1 with q = 1 and an
all-zero mask.
"""

import os

import numpy as np

_BACKEND_ENV = os.environ.get("COVLAB_BACKEND", "auto").strip().lower()
if _BACKEND_ENV not in ("auto", "numba", "numpy"):
    raise ValueError(
        "COVLAB_BACKEND must be one of auto|numba|numpy, got %r" % _BACKEND_ENV
    )

USING_NUMBA = False
if _BACKEND_ENV in ("auto", "numba"):
    try:
        import numba
        from numba import njit

        USING_NUMBA = True
        _threads = os.environ.get("COVLAB_THREADS")
        if _threads:
            numba.set_num_threads(max(1, int(_threads)))
    except ImportError:
        if _BACKEND_ENV == "numba":
            raise
        USING_NUMBA = False


KIND_SUP = 0
KIND_MSCALED = 1

QUERY_SUP = 0
QUERY_MNORM = 1


# ---------------------------------------------------------------------------
# numpy twins
# ---------------------------------------------------------------------------

def _mnorm_sq_np(X, M):
    """Squared M-norm of each row of X, by the exact breakpoint scan."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    if d == 0:
        return np.zeros(n)
    A = np.sort(np.abs(X), axis=1)[:, ::-1]  # descending
    L = np.cumsum(A, axis=1)
    Q = np.cumsum(A * A, axis=1)
    k = np.arange(1, d + 1, dtype=np.float64)
    t = M * L / (1.0 + M * k)
    hi = A
    lo = np.concatenate([A[:, 1:], np.zeros((n, 1))], axis=1)
    t = np.minimum(np.maximum(t, lo), hi)
    vals = t * t + M * (Q - 2.0 * t * L + k * (t * t))
    return vals.min(axis=1)


def _mnorm_sq_t_np(X, M):
    """As _mnorm_sq_np but also returns the minimizing threshold per row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    if d == 0:
        return np.zeros(n), np.zeros(n)
    A = np.sort(np.abs(X), axis=1)[:, ::-1]
    L = np.cumsum(A, axis=1)
    Q = np.cumsum(A * A, axis=1)
    k = np.arange(1, d + 1, dtype=np.float64)
    t = M * L / (1.0 + M * k)
    hi = A
    lo = np.concatenate([A[:, 1:], np.zeros((n, 1))], axis=1)
    t = np.minimum(np.maximum(t, lo), hi)
    vals = t * t + M * (Q - 2.0 * t * L + k * (t * t))
    j = vals.argmin(axis=1)
    rows = np.arange(n)
    return vals[rows, j], t[rows, j]


def _scale_rows(X, center, q, mask):
    U = X - center[None, :]
    if mask.any():
        U = U.copy()
        U[:, mask] /= q
    return U


def _gauge_one_np(X, kind, center, radius, M, q, mask):
    if kind == KIND_SUP:
        return np.abs(X - center[None, :]).max(axis=1) / radius
    U = _scale_rows(X, center, q, mask)
    return np.sqrt(_mnorm_sq_np(U, M)) / radius


def _distlb_one_np(X, kind, center, radius, M, q, mask, query_kind, query_M):
    """Certified lower bound on the query-norm distance from rows to a body.

    The bound comes from the norm's supporting functional g at x - center:
    dist_Q(x, B) >= (N(x - c) - r) / Q*(g), which is sound for any g and
    exact when g is tight for the query direction.
    """
    n = X.shape[0]
    out = np.zeros(n)
    if kind == KIND_SUP:
        nm = np.abs(X - center[None, :]).max(axis=1)
        outside = nm > radius
        denom = 1.0 if query_kind == QUERY_SUP else np.sqrt(1.0 + 1.0 / query_M)
        out[outside] = (nm[outside] - radius) / denom
        return out
    U = _scale_rows(X, center, q, mask)
    nsq, t = _mnorm_sq_t_np(U, M)
    nm = np.sqrt(nsq)
    outside = nm > radius
    if not outside.any():
        return out
    Uo = U[outside]
    to = t[outside]
    W = M * np.sign(Uo) * np.maximum(np.abs(Uo) - to[:, None], 0.0)
    W /= nm[outside][:, None]
    G = W.copy()
    if mask.any():
        G[:, mask] /= q
    l1 = np.abs(G).sum(axis=1)
    if query_kind == QUERY_SUP:
        denom = l1
    else:
        denom = np.sqrt(l1 * l1 + (G * G).sum(axis=1) / query_M)
    out[outside] = (nm[outside] - radius) / denom
    return out


def _best_gauge_np(X, kinds, centers, radii, Ms, qs, masks, lo, hi):
    n = X.shape[0]
    best = np.full(n, np.inf)
    for b in range(kinds.shape[0]):
        inbox = np.all((X >= lo[b][None, :]) & (X <= hi[b][None, :]), axis=1)
        if not inbox.any():
            continue
        g = _gauge_one_np(X[inbox], kinds[b], centers[b], radii[b], Ms[b],
                          qs[b], masks[b])
        sub = best[inbox]
        np.minimum(sub, g, out=sub)
        best[inbox] = sub
    return best


def _min_distlb_np(X, kinds, centers, radii, Ms, qs, masks, query_kind, query_M):
    n = X.shape[0]
    dlb = np.full(n, np.inf)
    inside = np.zeros(n, dtype=np.bool_)
    for b in range(kinds.shape[0]):
        g = _gauge_one_np(X, kinds[b], centers[b], radii[b], Ms[b], qs[b],
                          masks[b])
        inside |= g <= 1.0 + 1e-12
        d = _distlb_one_np(X, kinds[b], centers[b], radii[b], Ms[b], qs[b],
                           masks[b], query_kind, query_M)
        np.minimum(dlb, d, out=dlb)
    if kinds.shape[0] == 0:
        return dlb, inside  # dist to the empty set is +inf
    dlb[inside] = 0.0
    return dlb, inside


def _row_norms_np(X, kind, M):
    if kind == QUERY_SUP:
        if X.shape[1] == 0:
            return np.zeros(X.shape[0])
        return np.abs(X).max(axis=1)
    return np.sqrt(_mnorm_sq_np(X, M))


def _greedy_select_np(points, delta, kind, M):
    n = points.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    chosen = [0]
    dmin = _row_norms_np(points - points[0][None, :], kind, M)
    while True:
        i = int(dmin.argmax())
        if dmin[i] <= delta:
            break
        chosen.append(i)
        d = _row_norms_np(points - points[i][None, :], kind, M)
        np.minimum(dmin, d, out=dmin)
    return np.asarray(chosen, dtype=np.int64)


def _pairwise_norm_np(XA, XB, kind, M):
    a, d = XA.shape
    b = XB.shape[0]
    out = np.empty((a, b))
    for i in range(a):
        out[i] = _row_norms_np(XA[i][None, :] - XB, kind, M)
    return out


# ---------------------------------------------------------------------------
# numba twins
# ---------------------------------------------------------------------------

if USING_NUMBA:

    @njit(cache=True)
    def _mnorm_sq_t_row(row, M):
        d = row.shape[0]
        if d == 0:
            return 0.0, 0.0
        a = np.sort(np.abs(row))  # ascending
        best = np.inf
        best_t = 0.0
        L = 0.0
        Q = 0.0
        for k in range(1, d + 1):
            v = a[d - k]
            L += v
            Q += v * v
            hi_ = v
            lo_ = a[d - k - 1] if k < d else 0.0
            t = M * L / (1.0 + M * k)
            if t < lo_:
                t = lo_
            elif t > hi_:
                t = hi_
            val = t * t + M * (Q - 2.0 * t * L + k * (t * t))
            if val < best:
                best = val
                best_t = t
        return best, best_t

    @njit(cache=True)
    def _mnorm_sq_nb(X, M):
        n = X.shape[0]
        out = np.empty(n)
        for i in range(n):
            v, _ = _mnorm_sq_t_row(X[i], M)
            out[i] = v
        return out

    @njit(cache=True)
    def _mnorm_sq_t_nb(X, M):
        n = X.shape[0]
        out = np.empty(n)
        ts = np.empty(n)
        for i in range(n):
            v, t = _mnorm_sq_t_row(X[i], M)
            out[i] = v
            ts[i] = t
        return out, ts

    @njit(cache=True)
    def _gauge_row(x, kind, center, radius, M, q, mask):
        d = x.shape[0]
        if kind == 0:
            m = 0.0
            for j in range(d):
                v = abs(x[j] - center[j])
                if v > m:
                    m = v
            return m / radius
        u = np.empty(d)
        for j in range(d):
            u[j] = x[j] - center[j]
            if mask[j]:
                u[j] /= q
        nsq, _ = _mnorm_sq_t_row(u, M)
        return np.sqrt(nsq) / radius

    @njit(cache=True)
    def _gauge_one_nb(X, kind, center, radius, M, q, mask):
        n = X.shape[0]
        out = np.empty(n)
        for i in range(n):
            out[i] = _gauge_row(X[i], kind, center, radius, M, q, mask)
        return out

    @njit(cache=True)
    def _distlb_row(x, kind, center, radius, M, q, mask, query_kind, query_M):
        d = x.shape[0]
        if kind == 0:
            nm = 0.0
            for j in range(d):
                v = abs(x[j] - center[j])
                if v > nm:
                    nm = v
            if nm <= radius:
                return 0.0
            denom = 1.0 if query_kind == 0 else np.sqrt(1.0 + 1.0 / query_M)
            return (nm - radius) / denom
        u = np.empty(d)
        for j in range(d):
            u[j] = x[j] - center[j]
            if mask[j]:
                u[j] /= q
        nsq, t = _mnorm_sq_t_row(u, M)
        nm = np.sqrt(nsq)
        if nm <= radius:
            return 0.0
        l1 = 0.0
        l2sq = 0.0
        for j in range(d):
            r = abs(u[j]) - t
            if r <= 0.0:
                continue
            g = M * r / nm
            if mask[j]:
                g /= q
            l1 += g
            l2sq += g * g
        if query_kind == 0:
            denom = l1
        else:
            denom = np.sqrt(l1 * l1 + l2sq / query_M)
        if denom <= 0.0:
            return 0.0
        return (nm - radius) / denom

    @njit(cache=True)
    def _distlb_one_nb(X, kind, center, radius, M, q, mask, query_kind, query_M):
        n = X.shape[0]
        out = np.empty(n)
        for i in range(n):
            out[i] = _distlb_row(X[i], kind, center, radius, M, q, mask,
                                 query_kind, query_M)
        return out

    @njit(cache=True)
    def _best_gauge_nb(X, kinds, centers, radii, Ms, qs, masks, lo, hi):
        n = X.shape[0]
        B = kinds.shape[0]
        d = X.shape[1]
        out = np.full(n, np.inf)
        for i in range(n):
            best = np.inf
            for b in range(B):
                skip = False
                for j in range(d):
                    if X[i, j] < lo[b, j] or X[i, j] > hi[b, j]:
                        skip = True
                        break
                if skip:
                    continue
                g = _gauge_row(X[i], kinds[b], centers[b], radii[b], Ms[b],
                               qs[b], masks[b])
                if g < best:
                    best = g
            out[i] = best
        return out

    @njit(cache=True)
    def _min_distlb_nb(X, kinds, centers, radii, Ms, qs, masks, query_kind,
                       query_M):
        n = X.shape[0]
        B = kinds.shape[0]
        dlb = np.full(n, np.inf)
        inside = np.zeros(n, dtype=np.bool_)
        for i in range(n):
            for b in range(B):
                g = _gauge_row(X[i], kinds[b], centers[b], radii[b], Ms[b],
                               qs[b], masks[b])
                if g <= 1.0 + 1e-12:
                    inside[i] = True
                    dlb[i] = 0.0
                    break
                dv = _distlb_row(X[i], kinds[b], centers[b], radii[b], Ms[b],
                                 qs[b], masks[b], query_kind, query_M)
                if dv < dlb[i]:
                    dlb[i] = dv
        return dlb, inside

    @njit(cache=True)
    def _row_norms_nb(X, kind, M):
        n = X.shape[0]
        d = X.shape[1]
        out = np.empty(n)
        for i in range(n):
            if kind == 0:
                m = 0.0
                for j in range(d):
                    v = abs(X[i, j])
                    if v > m:
                        m = v
                out[i] = m
            else:
                nsq, _ = _mnorm_sq_t_row(X[i], M)
                out[i] = np.sqrt(nsq)
        return out

    @njit(cache=True)
    def _greedy_select_nb(points, delta, kind, M):
        n = points.shape[0]
        if n == 0:
            return np.empty(0, dtype=np.int64)
        d = points.shape[1]
        chosen = np.empty(n, dtype=np.int64)
        chosen[0] = 0
        cnt = 1
        dmin = np.empty(n)
        diff = np.empty(d)
        for i in range(n):
            for j in range(d):
                diff[j] = points[i, j] - points[0, j]
            if kind == 0:
                m = 0.0
                for j in range(d):
                    v = abs(diff[j])
                    if v > m:
                        m = v
                dmin[i] = m
            else:
                nsq, _ = _mnorm_sq_t_row(diff, M)
                dmin[i] = np.sqrt(nsq)
        while True:
            best = -1.0
            bi = -1
            for i in range(n):
                if dmin[i] > best:
                    best = dmin[i]
                    bi = i
            if best <= delta:
                break
            chosen[cnt] = bi
            cnt += 1
            for i in range(n):
                for j in range(d):
                    diff[j] = points[i, j] - points[bi, j]
                if kind == 0:
                    m = 0.0
                    for j in range(d):
                        v = abs(diff[j])
                        if v > m:
                            m = v
                    dv = m
                else:
                    nsq, _ = _mnorm_sq_t_row(diff, M)
                    dv = np.sqrt(nsq)
                if dv < dmin[i]:
                    dmin[i] = dv
        return chosen[:cnt].copy()

    @njit(cache=True)
    def _pairwise_norm_nb(XA, XB, kind, M):
        a = XA.shape[0]
        b = XB.shape[0]
        d = XA.shape[1]
        out = np.empty((a, b))
        diff = np.empty(d)
        for i in range(a):
            for k in range(b):
                for j in range(d):
                    diff[j] = XA[i, j] - XB[k, j]
                if kind == 0:
                    m = 0.0
                    for j in range(d):
                        v = abs(diff[j])
                        if v > m:
                            m = v
                    out[i, k] = m
                else:
                    nsq, _ = _mnorm_sq_t_row(diff, M)
                    out[i, k] = np.sqrt(nsq)
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _as_f2(X):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return X


def mnorm_sq_batch(X, M):
    """Row-wise squared M-norm (exact)."""
    X = _as_f2(X)
    if USING_NUMBA:
        return _mnorm_sq_nb(X, float(M))
    return _mnorm_sq_np(X, float(M))


def mnorm_sq_t_batch(X, M):
    """Row-wise (squared M-norm, optimal clipping threshold)."""
    X = _as_f2(X)
    if USING_NUMBA:
        return _mnorm_sq_t_nb(X, float(M))
    return _mnorm_sq_t_np(X, float(M))


def gauge_batch(X, kind, center, radius, M, q, mask):
    """Gauge of one body evaluated at each row of X."""
    X = _as_f2(X)
    center = np.ascontiguousarray(center, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if USING_NUMBA:
        return _gauge_one_nb(X, int(kind), center, float(radius), float(M),
                             float(q), mask)
    return _gauge_one_np(X, int(kind), center, float(radius), float(M),
                         float(q), mask)


def distlb_batch(X, kind, center, radius, M, q, mask, query_kind, query_M=1.0):
    """Certified query-norm distance lower bound to one body, per row."""
    X = _as_f2(X)
    center = np.ascontiguousarray(center, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if USING_NUMBA:
        return _distlb_one_nb(X, int(kind), center, float(radius), float(M),
                              float(q), mask, int(query_kind), float(query_M))
    return _distlb_one_np(X, int(kind), center, float(radius), float(M),
                          float(q), mask, int(query_kind), float(query_M))


def best_gauge_batch(X, packed):
    """Min gauge over a packed body family per row (AABB-pruned).

    Bodies whose bounding box misses a point contribute +inf there, which is
    sound for membership tests since box miss implies gauge > 1.
    """
    X = _as_f2(X)
    if USING_NUMBA:
        return _best_gauge_nb(X, packed.kinds, packed.centers, packed.radii,
                              packed.Ms, packed.qs, packed.masks,
                              packed.box_lo, packed.box_hi)
    return _best_gauge_np(X, packed.kinds, packed.centers, packed.radii,
                          packed.Ms, packed.qs, packed.masks,
                          packed.box_lo, packed.box_hi)


def min_distlb_batch(X, packed, query_kind, query_M=1.0):
    """(min over bodies of dist lower bound, inside-any flag) per row."""
    X = _as_f2(X)
    if USING_NUMBA:
        return _min_distlb_nb(X, packed.kinds, packed.centers, packed.radii,
                              packed.Ms, packed.qs, packed.masks,
                              int(query_kind), float(query_M))
    return _min_distlb_np(X, packed.kinds, packed.centers, packed.radii,
                          packed.Ms, packed.qs, packed.masks,
                          int(query_kind), float(query_M))


def row_norms(X, kind, M=1.0):
    """Row norms under the sup norm (kind 0) or M-norm (kind 1)."""
    X = _as_f2(X)
    if USING_NUMBA:
        return _row_norms_nb(X, int(kind), float(M))
    return _row_norms_np(X, int(kind), float(M))


def greedy_select(points, delta, kind, M=1.0):
    """Greedy farthest-point net over the given candidate points.

    Starts from index 0, repeatedly inserts the point farthest from the
    current net until every candidate is within delta.  Returns indices in
    insertion order; inserted points are pairwise more than delta apart.
    """
    points = _as_f2(points)
    if USING_NUMBA:
        return _greedy_select_nb(points, float(delta), int(kind), float(M))
    return _greedy_select_np(points, float(delta), int(kind), float(M))


def pairwise_norm(XA, XB, kind, M=1.0):
    """Matrix of norms of row differences between two point sets."""
    XA = _as_f2(XA)
    XB = _as_f2(XB)
    if USING_NUMBA:
        return _pairwise_norm_nb(XA, XB, int(kind), float(M))
    return _pairwise_norm_np(XA, XB, int(kind), float(M))


class PackedBodies:
    """Dense array view of a body family over a fixed coordinate tuple."""

    def __init__(self, kinds, centers, radii, Ms, qs, masks, box_lo, box_hi):
        self.kinds = np.ascontiguousarray(kinds, dtype=np.int64)
        self.centers = np.ascontiguousarray(centers, dtype=np.float64)
        self.radii = np.ascontiguousarray(radii, dtype=np.float64)
        self.Ms = np.ascontiguousarray(Ms, dtype=np.float64)
        self.qs = np.ascontiguousarray(qs, dtype=np.float64)
        self.masks = np.ascontiguousarray(masks, dtype=np.bool_)
        self.box_lo = np.ascontiguousarray(box_lo, dtype=np.float64)
        self.box_hi = np.ascontiguousarray(box_hi, dtype=np.float64)

    def __len__(self):
        return int(self.kinds.shape[0])
