"""Norm engine: finitely supported vectors, norm descriptors, exact norm and
dual-norm evaluation, norming functionals, and a discrete Legendre transform.

The central object is the inf-convolution norm

    |x|_M^2 = inf { |x1|_inf^2 + M |x2|_2^2 : x = x1 + x2 },   M > 2,

evaluated exactly through the threshold reduction: for a fixed sup-bound t
the optimal x1 clips x coordinatewise to [-t, t], so

    |x|_M^2 = min_{t >= 0} [ t^2 + M * sum_i ((|x_i| - t)_+)^2 ],

a convex piecewise-quadratic problem solved by scanning the sorted
breakpoints.  The scaled variant |x|_{M,G,q} = |T x|_M divides coordinates
in a finite set G by q.  The general two-norm inf-convolution (an arbitrary
linear operator mixing a sup or Euclidean norm with a scaled Euclidean one)
is evaluated by convex minimization; the Euclidean/Euclidean instance has a
closed-form ridge solution.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ParameterError(ValueError):
    """A norm/body parameter violates its validity constraints."""


class UndefinedGradientError(ValueError):
    """Gradient requested where the norm is not differentiable (the origin)."""


# ---------------------------------------------------------------------------
# coordinate vectors and functionals
# ---------------------------------------------------------------------------

def _clean_entries(entries):
    out = {}
    for idx, val in entries:
        i = int(idx)
        v = float(val)
        if v != 0.0:
            if i in out:
                v = out[i] + v
                if v == 0.0:
                    del out[i]
                    continue
            out[i] = v
    return out


class SparseVector:
    """Finitely supported real vector: a map from integer index to value.

    Zero coordinates are pruned on construction, so the support is exactly
    the stored key set.  Instances are treated as immutable values.
    """

    __slots__ = ("_e",)

    def __init__(self, entries=()):
        if isinstance(entries, dict):
            entries = entries.items()
        object.__setattr__(self, "_e", _clean_entries(entries))

    @property
    def entries(self):
        return dict(self._e)

    def support(self):
        return frozenset(self._e)

    def items(self):
        return sorted(self._e.items())

    def __getitem__(self, idx):
        return self._e.get(int(idx), 0.0)

    def __len__(self):
        return len(self._e)

    def __bool__(self):
        return bool(self._e)

    def __eq__(self, other):
        return isinstance(other, SparseVector) and self._e == other._e

    def __hash__(self):
        return hash(tuple(self.items()))

    def __repr__(self):
        inner = ", ".join("%d: %g" % kv for kv in self.items())
        return "SparseVector({%s})" % inner

    def __add__(self, other):
        e = dict(self._e)
        for i, v in other._e.items():
            e[i] = e.get(i, 0.0) + v
        return SparseVector(e)

    def __sub__(self, other):
        e = dict(self._e)
        for i, v in other._e.items():
            e[i] = e.get(i, 0.0) - v
        return SparseVector(e)

    def __mul__(self, s):
        s = float(s)
        return SparseVector({i: v * s for i, v in self._e.items()})

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def sup_norm(self):
        return max((abs(v) for v in self._e.values()), default=0.0)

    def to_dense(self, indices):
        out = np.zeros(len(indices))
        for j, idx in enumerate(indices):
            out[j] = self._e.get(idx, 0.0)
        return out

    @classmethod
    def from_dense(cls, indices, values):
        return cls(zip(indices, values))

    @classmethod
    def basis(cls, idx, value=1.0):
        return cls({int(idx): float(value)})


def zero_vector():
    return SparseVector()


class DualFunctional:
    """Finitely supported functional (an l1 element); pairs with vectors."""

    __slots__ = ("_e",)

    def __init__(self, entries=()):
        if isinstance(entries, dict):
            entries = entries.items()
        object.__setattr__(self, "_e", _clean_entries(entries))

    @property
    def entries(self):
        return dict(self._e)

    def support(self):
        return frozenset(self._e)

    def items(self):
        return sorted(self._e.items())

    def __getitem__(self, idx):
        return self._e.get(int(idx), 0.0)

    def __len__(self):
        return len(self._e)

    def __eq__(self, other):
        return isinstance(other, DualFunctional) and self._e == other._e

    def __repr__(self):
        inner = ", ".join("%d: %g" % kv for kv in self.items())
        return "DualFunctional({%s})" % inner

    def __mul__(self, s):
        s = float(s)
        return DualFunctional({i: v * s for i, v in self._e.items()})

    __rmul__ = __mul__

    def __call__(self, x):
        return sum(v * x[i] for i, v in self._e.items())

    def l1(self):
        return sum(abs(v) for v in self._e.values())

    def l2(self):
        return math.sqrt(sum(v * v for v in self._e.values()))

    def to_dense(self, indices):
        out = np.zeros(len(indices))
        for j, idx in enumerate(indices):
            out[j] = self._e.get(idx, 0.0)
        return out

    @classmethod
    def from_dense(cls, indices, values):
        return cls(zip(indices, values))

    @classmethod
    def basis(cls, idx, value=1.0):
        return cls({int(idx): float(value)})


# ---------------------------------------------------------------------------
# norm descriptors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SupNorm:
    """The plain sup norm."""

    def describe(self):
        return "sup"


@dataclass(frozen=True)
class MNorm:
    """Inf-convolution of the sup norm with a scaled Euclidean norm.

    Requires M > 2 so that the unit sphere has flat faces of positive
    sup-norm thickness 1 - sqrt(2/M).
    """

    M: float

    def __post_init__(self):
        if not self.M > 2.0:
            raise ParameterError("M must exceed 2, got %r" % (self.M,))
        object.__setattr__(self, "M", float(self.M))

    def describe(self):
        return "m(M=%g)" % self.M


@dataclass(frozen=True)
class ScaledMNorm:
    """M-norm composed with the coordinate scaling x[g] -> x[g]/q on g in G."""

    M: float
    gamma0: frozenset = field(default_factory=frozenset)
    q: float = 1.0

    def __post_init__(self):
        if not self.M > 2.0:
            raise ParameterError("M must exceed 2, got %r" % (self.M,))
        if not self.q > 0.0:
            raise ParameterError("q must be positive, got %r" % (self.q,))
        object.__setattr__(self, "M", float(self.M))
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "gamma0", frozenset(int(g) for g in self.gamma0))

    def describe(self):
        g = ",".join(str(i) for i in sorted(self.gamma0))
        return "scaled_m(M=%g, gamma0={%s}, q=%g)" % (self.M, g, self.q)


@dataclass(frozen=True)
class InfConvNorm:
    """General inf-convolution |x|^2 = inf { base(u)^2 + M |y|_2^2, x = u+Ty }.

    ``indices`` are the coordinates the operator maps into; ``T`` is a dense
    (len(indices), k) matrix stored as a tuple of row tuples.  ``base`` is
    the norm on the u-part: "sup" or "l2".  Only those two concrete
    instances are shipped.
    """

    indices: tuple
    T: tuple
    M: float
    base: str = "sup"

    def __post_init__(self):
        if not self.M > 0.0:
            raise ParameterError("M must be positive, got %r" % (self.M,))
        if self.base not in ("sup", "l2"):
            raise ParameterError("base norm must be 'sup' or 'l2'")
        idx = tuple(int(i) for i in self.indices)
        rows = tuple(tuple(float(v) for v in row) for row in self.T)
        if len(rows) != len(idx):
            raise ParameterError("T must have one row per operator index")
        if rows and len({len(r) for r in rows}) != 1:
            raise ParameterError("T rows must have equal length")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "M", float(self.M))
        object.__setattr__(self, "T", rows)

    def matrix(self):
        if not self.T:
            return np.zeros((0, 0))
        return np.array(self.T, dtype=float)

    def describe(self):
        return "inf_conv(base=%s, M=%g, k=%d)" % (
            self.base, self.M, self.matrix().shape[1] if self.T else 0)


def apply_scaling(spec, x):
    """T_{G,q} x: divide the coordinates of x in G by q (scaled M-norm)."""
    e = dict(x.entries)
    for g in spec.gamma0:
        if g in e:
            e[g] = e[g] / spec.q
    return SparseVector(e)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def mnorm_sq_threshold(values, M):
    """(squared M-norm, optimal threshold) of a dense value array."""
    v = np.asarray(values, dtype=float).reshape(1, -1)
    nsq, t = kernels.mnorm_sq_t_batch(v, M)
    return float(nsq[0]), float(t[0])


def _infconv_dense(spec, x):
    """Dense layout (indices tuple, x values, T matrix) for an InfConvNorm."""
    support = sorted(set(x.support()) | set(spec.indices))
    xv = x.to_dense(support)
    Tm = spec.matrix()
    k = Tm.shape[1] if Tm.size else 0
    Tfull = np.zeros((len(support), k))
    pos = {idx: j for j, idx in enumerate(support)}
    for r, idx in enumerate(spec.indices):
        Tfull[pos[idx]] = Tm[r]
    return support, xv, Tfull


def _eval_infconv(spec, x):
    support, xv, T = _infconv_dense(spec, x)
    M = spec.M
    k = T.shape[1]
    if k == 0:
        if spec.base == "sup":
            return float(np.abs(xv).max(initial=0.0))
        return float(np.linalg.norm(xv))
    if spec.base == "l2":
        # ridge closed form: minimize |x-Ty|_2^2 + M |y|_2^2
        y = np.linalg.solve(T.T @ T + M * np.eye(k), T.T @ xv)
        u = xv - T @ y
        return math.sqrt(float(u @ u + M * (y @ y)))
    # sup base: minimize s^2 + M|y|^2  s.t.  |x - Ty| <= s  (convex QP)
    from scipy.optimize import minimize

    y0 = np.linalg.solve(T.T @ T + M * np.eye(k), T.T @ xv)
    s0 = float(np.abs(xv - T @ y0).max(initial=0.0))
    z0 = np.concatenate([[s0 + 1e-12], y0])

    def fun(z):
        return z[0] * z[0] + M * float(z[1:] @ z[1:])

    def jac(z):
        g = np.empty_like(z)
        g[0] = 2.0 * z[0]
        g[1:] = 2.0 * M * z[1:]
        return g

    m = len(xv)
    A = np.zeros((2 * m, 1 + k))
    A[:m, 0] = 1.0
    A[:m, 1:] = T
    A[m:, 0] = 1.0
    A[m:, 1:] = -T
    b = np.concatenate([-xv, xv])

    # constraints A z + b >= 0  encode  -s <= (x - Ty)_i <= s
    res = minimize(fun, z0, jac=jac, method="SLSQP",
                   constraints=[{"type": "ineq",
                                 "fun": lambda z: A @ z + b,
                                 "jac": lambda z: A}],
                   options={"maxiter": 400, "ftol": 1e-14})
    z = res.x
    s = max(float(np.abs(xv - T @ z[1:]).max(initial=0.0)), 0.0)
    val = s * s + M * float(z[1:] @ z[1:])
    return math.sqrt(max(min(val, fun(np.concatenate([[s], z[1:]]))), 0.0))


def eval_norm(spec, x):
    """Norm of x under the given descriptor (exact for sup/M/scaled-M)."""
    if isinstance(spec, SupNorm):
        return x.sup_norm()
    if isinstance(spec, MNorm):
        if not x:
            return 0.0
        vals = np.fromiter(x.entries.values(), dtype=float, count=len(x))
        nsq, _ = mnorm_sq_threshold(vals, spec.M)
        return math.sqrt(nsq)
    if isinstance(spec, ScaledMNorm):
        return eval_norm(MNorm(spec.M), apply_scaling(spec, x))
    if isinstance(spec, InfConvNorm):
        if not x:
            return 0.0
        return _eval_infconv(spec, x)
    raise ParameterError("unknown norm descriptor %r" % (spec,))


def eval_dual_norm(spec, f):
    """Dual norm of a finitely supported functional.

    sup:       |f|_1
    M-norm:    sqrt(|f|_1^2 + |f|_2^2 / M)
    scaled:    coordinates in G are first multiplied by q (the inverse
               transpose of the scaling), then the M-norm dual formula
    inf-conv:  sqrt(base_dual(f)^2 + |T' f|_2^2 / M)
    """
    if isinstance(spec, SupNorm):
        return f.l1()
    if isinstance(spec, MNorm):
        l1 = f.l1()
        l2 = f.l2()
        return math.sqrt(l1 * l1 + l2 * l2 / spec.M)
    if isinstance(spec, ScaledMNorm):
        e = dict(f.entries)
        for g in spec.gamma0:
            if g in e:
                e[g] = e[g] * spec.q
        return eval_dual_norm(MNorm(spec.M), DualFunctional(e))
    if isinstance(spec, InfConvNorm):
        if spec.base == "sup":
            base = f.l1()
        else:
            base = f.l2()
        Tm = spec.matrix()
        if Tm.size:
            fr = f.to_dense(spec.indices)
            w = Tm.T @ fr
            extra = float(w @ w) / spec.M
        else:
            extra = 0.0
        return math.sqrt(base * base + extra)
    raise ParameterError("unknown norm descriptor %r" % (spec,))


def gauge(spec, center, radius, x):
    """Minkowski functional of center + radius * Ball(spec) evaluated at x."""
    if not radius > 0.0:
        raise ParameterError("radius must be positive, got %r" % (radius,))
    return eval_norm(spec, x - center) / radius


def norming_functional(spec, x):
    """The functional f with dual norm 1 and f(x) = |x| (the norm gradient).

    For the M-norm this is exact: with the optimal clipping threshold t and
    residual r = x - clip(x, t), the gradient of the squared norm is M*r, so
    f = M*r / |x|_M.  The scaled variant conjugates by the coordinate
    scaling.  Only M-norm and scaled M-norm descriptors are supported (the
    sup norm is not smooth; the general inf-convolution is not needed).
    """
    if not x:
        raise UndefinedGradientError("norm gradient is undefined at 0")
    if isinstance(spec, MNorm):
        idx = sorted(x.support())
        v = x.to_dense(idx)
        nsq, t = mnorm_sq_threshold(v, spec.M)
        nm = math.sqrt(nsq)
        w = spec.M * np.sign(v) * np.maximum(np.abs(v) - t, 0.0) / nm
        f = DualFunctional.from_dense(idx, w)
        dual = eval_dual_norm(spec, f)
        return f * (1.0 / dual)
    if isinstance(spec, ScaledMNorm):
        u = apply_scaling(spec, x)
        w = norming_functional(MNorm(spec.M), u)
        e = dict(w.entries)
        for g in spec.gamma0:
            if g in e:
                e[g] = e[g] / spec.q
        f = DualFunctional(e)
        dual = eval_dual_norm(spec, f)
        return f * (1.0 / dual)
    raise ParameterError(
        "norming_functional needs an M-norm or scaled M-norm descriptor")


# ---------------------------------------------------------------------------
# discrete Legendre transform
# ---------------------------------------------------------------------------

@dataclass
class SampledFunction:
    """Function values on a finite point cloud, with its bounding box."""

    points: np.ndarray
    values: np.ndarray
    box: tuple

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.points.shape[0] != self.values.shape[0]:
            raise ParameterError("points/values length mismatch")


def make_box_grid(bounds, step):
    """Regular grid over a box; bounds is a sequence of (lo, hi) pairs."""
    axes = []
    for lo, hi in bounds:
        n = int(round((hi - lo) / step))
        axes.append(lo + step * np.arange(n + 1))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts


def sample_on_grid(fn, bounds, step):
    pts = make_box_grid(bounds, step)
    vals = fn(pts)
    return SampledFunction(pts, vals, tuple((float(a), float(b)) for a, b in bounds))


def fenchel_conjugate_numeric(f, dual_points, chunk=2048):
    """Pointwise discrete Legendre transform sup_x { <x*, x> - f(x) }.

    The supremum runs over the sampled points only; the result is correct
    whenever the true maximizer for each dual point lies inside the sampled
    box (the caller picks the box; it is reported back as metadata).
    """
    if not isinstance(f, SampledFunction):
        raise ParameterError("expected a SampledFunction")
    if f.points.shape[0] == 0:
        raise ParameterError("empty grid")
    D = np.atleast_2d(np.asarray(dual_points, dtype=float))
    out = np.empty(D.shape[0])
    for a in range(0, D.shape[0], chunk):
        block = D[a:a + chunk]
        scores = block @ f.points.T - f.values[None, :]
        out[a:a + chunk] = scores.max(axis=1)
    lo = f.points.min(axis=0)
    hi = f.points.max(axis=0)
    box = tuple((float(a), float(b)) for a, b in zip(lo, hi))
    return SampledFunction(D, out, box)
