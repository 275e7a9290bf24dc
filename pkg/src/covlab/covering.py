"""Staged star-finite covering constructions on finite coordinate
truncations.

Two builders:

* ``build_c0_covering``: stage 0 is the M-norm unit ball B_{M_0}; stage n
  enumerates the n-element coordinate sets G, builds a truncated ball
  family on the subspace Y_G against everything built so far (in the
  M_n-norm, radii q~_k from the distance bands), and lifts each ball
  x_k + q~_k (B_{M_n} on Y_G) to the full-dimensional smooth body
  x_k + theta_n * Ball(M_n, G, q_k) with q_k = q~_k / theta_n.  The slice of
  the lifted body by Y_G is exactly the generating ball, and the body is
  flat in the transverse directions up to sup-width theta_n (1 - sqrt(2/M_n)).

* ``build_countable_dim_covering``: the ball-only analogue on a nested
  chain of coordinate subspaces Y_1 c Y_2 c ...; stage n covers Y_n minus
  the earlier stages by closed balls of the ambient norm centered in Y_n.

Parameter schedules: theta_0 = 1 and

    theta_n = prod_{i<n} (1 - sqrt(2/M_i)) * prod_{j=1..n} alpha_j / sqrt(1 + 1/M_j)

with the cross-set separation beta_n = theta_{n-1} (1 - sqrt(2/M_{n-1}))
(1 - alpha_n).  The default schedule M_n = 2^(2n+5), alpha_n = 1 - 2^-(n+2)
keeps the full infinite product bounded below by a certified positive
constant.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bodies import Body, BodyLabel, pack_bodies
from .nets import build_lemma_family
from .norms import MNorm, ParameterError, ScaledMNorm, SparseVector, SupNorm


def _flat_width(M):
    return 1.0 - math.sqrt(2.0 / M)


@dataclass(frozen=True)
class ParameterSchedule:
    """Stage parameters M_n > 2, alpha_n in (0,1) with derived products.

    ``theta[n]`` and ``beta[n]`` follow the index split above (beta[0] is a
    placeholder 0; stages start the separation bookkeeping at n = 1).
    ``theta_lower`` is a certified positive lower bound for the infinite
    product, obtained from the stored prefix times an analytic tail bound
    under the default continuation rule.
    """

    M: tuple
    alpha: tuple
    theta: tuple
    beta: tuple
    theta_lower: float

    def collar(self, n):
        """Transverse flat width of stage n: theta_n (1 - sqrt(2/M_n))."""
        return self.theta[n] * _flat_width(self.M[n])

    def n_top(self):
        return len(self.M) - 1


def make_schedule(M_list, alpha_list):
    """Validate raw parameter lists and derive theta, beta, theta_lower."""
    M = tuple(float(m) for m in M_list)
    alpha = tuple(float(a) for a in alpha_list)
    if len(M) != len(alpha) or not M:
        raise ParameterError("schedule needs equal-length nonempty M, alpha")
    for m in M:
        if not m > 2.0:
            raise ParameterError("M must exceed 2, got %g" % m)
    for a in alpha:
        if not 0.0 < a < 1.0:
            raise ParameterError("alpha must lie in (0,1), got %g" % a)
    n_top = len(M) - 1
    theta = [1.0]
    for n in range(1, n_top + 1):
        t = 1.0
        for i in range(n):
            t *= _flat_width(M[i])
        for j in range(1, n + 1):
            t *= alpha[j] / math.sqrt(1.0 + 1.0 / M[j])
        theta.append(t)
    beta = [0.0]
    for n in range(1, n_top + 1):
        beta.append(theta[n - 1] * _flat_width(M[n - 1]) * (1.0 - alpha[n]))
    for n in range(1, n_top + 1):
        if not theta[n] < theta[n - 1]:
            raise ParameterError("theta must decrease strictly at n=%d" % n)
        if not beta[n] > 0.0:
            raise ParameterError("beta must be positive at n=%d" % n)
    for n in range(1, n_top + 1):
        if not theta[n] * _flat_width(M[n]) < theta[n - 1] * _flat_width(M[n - 1]):
            raise ParameterError("flat widths must decrease at n=%d" % n)
    prefix = 1.0
    for i in range(n_top + 1):
        prefix *= _flat_width(M[i]) * alpha[i] / math.sqrt(1.0 + 1.0 / M[i])
    lower = prefix * _default_tail_lower(n_top + 1)
    if not lower > 0.0:
        raise ParameterError("infinite-product lower bound is not positive")
    return ParameterSchedule(M, alpha, tuple(theta), tuple(beta), lower)


def _default_tail_lower(start):
    """Lower bound of prod_{i>=start} (1-x_i)^2 / sqrt(1+y_i) under the
    default rule x_i = 2^-(i+2) = sqrt(2/M_i) = 1 - alpha_i, y_i = 1/M_i.

    Uses ln(1-x) >= -x - x^2 for 0 < x <= 1/2 and ln sqrt(1+y) <= y/2.
    """
    s_x = 2.0 ** (-(start + 1))            # sum of x_i, i >= start
    s_x2 = (4.0 ** (-(start + 2))) * 4.0 / 3.0
    s_y = (2.0 ** (-(2 * start + 5))) * 4.0 / 3.0
    return math.exp(-2.0 * s_x - 2.0 * s_x2 - 0.5 * s_y)


def default_schedule(n_stages):
    """M_n = 2^(2n+5), alpha_n = 1 - 2^-(n+2), for n = 0..n_stages."""
    if n_stages < 0:
        raise ParameterError("n_stages must be nonnegative")
    top = max(int(n_stages), 0)
    M = [2.0 ** (2 * n + 5) for n in range(top + 1)]
    alpha = [1.0 - 2.0 ** (-(n + 2)) for n in range(top + 1)]
    return make_schedule(M, alpha)


# ---------------------------------------------------------------------------
# covering containers
# ---------------------------------------------------------------------------

@dataclass
class FamilyInfo:
    """Per-(stage, gamma0) construction record."""

    stage: int
    gamma0: tuple
    h_max: int
    k_max: int
    grid_step: float
    annuli: list
    n_balls: int
    residue_points: int
    dist_oracle: str


@dataclass
class CoveringStage:
    n: int
    bodies: list
    families: list  # FamilyInfo


@dataclass
class Covering:
    kind: str  # "c0" or "countable"
    gamma: tuple
    n_stages: int
    schedule: ParameterSchedule
    truncation: dict
    stages: list
    ambient: object = None  # countable-dim ambient norm descriptor

    def all_bodies(self):
        out = []
        for st in self.stages:
            out.extend(st.bodies)
        return out

    def bodies_upto(self, n):
        out = []
        for st in self.stages:
            if st.n <= n:
                out.extend(st.bodies)
        return out


DEFAULT_TRUNCATION = {1: {"h_max": 1, "k_max": 6, "grid_step": 0.005},
                      2: {"h_max": 1, "k_max": 6, "grid_step": 0.01},
                      3: {"h_max": 1, "k_max": 4, "grid_step": 0.05}}


def _stage_truncation(truncation, n, dim):
    base = dict(DEFAULT_TRUNCATION.get(min(dim, 3),
                                       {"h_max": 1, "k_max": 4,
                                        "grid_step": 0.05}))
    if truncation and n in truncation:
        base.update(truncation[n])
    elif truncation and str(n) in truncation:
        base.update(truncation[str(n)])
    return base


def build_c0_covering(gamma, n_stages, schedule=None, truncation=None,
                      prune=True):
    """Staged covering of the coordinate truncation by smooth bodies.

    ``gamma`` is an index count or an explicit index tuple.  Stage 0 is the
    single body B_{M_0}; stage n adds one lifted family per n-element
    coordinate set, in lexicographic order, each certified against all
    earlier bodies during placement.  Deterministic for fixed inputs.
    """
    if isinstance(gamma, int):
        gamma = tuple(range(1, gamma + 1))
    else:
        gamma = tuple(int(g) for g in gamma)
    if n_stages > len(gamma):
        raise ParameterError("n_stages cannot exceed the index count")
    if n_stages < 0:
        raise ParameterError("n_stages must be nonnegative")
    if schedule is None:
        schedule = default_schedule(n_stages)
    if schedule.n_top() < n_stages:
        raise ParameterError("schedule too short for n_stages")

    b0 = Body(SparseVector(), 1.0, MNorm(schedule.M[0]),
              BodyLabel(stage=0, gamma0=(), q=1.0, q_tilde=1.0, theta=1.0))
    stages = [CoveringStage(0, [b0], [])]
    trunc_used = {}

    for n in range(1, n_stages + 1):
        prev = []
        for st in stages:
            prev.extend(st.bodies)
        tr = _stage_truncation(truncation, n, n)
        trunc_used[n] = tr
        theta_n = schedule.theta[n]
        M_n = schedule.M[n]
        stage_bodies = []
        fams = []
        for gamma0 in itertools.combinations(gamma, n):
            fam = build_lemma_family(gamma0, prev, MNorm(M_n),
                                     h_max=tr["h_max"], k_max=tr["k_max"],
                                     grid_step=tr["grid_step"], prune=prune)
            for ball in fam.balls:
                q_tilde = ball.radius
                q_k = q_tilde / theta_n
                lbl = BodyLabel(stage=n, gamma0=gamma0, q=q_k,
                                q_tilde=q_tilde, theta=theta_n,
                                annulus=ball.label.annulus,
                                witness=ball.label.witness)
                spec = ScaledMNorm(M_n, frozenset(gamma0), q_k)
                stage_bodies.append(Body(ball.center, theta_n, spec, lbl))
            fams.append(FamilyInfo(n, gamma0, tr["h_max"], tr["k_max"],
                                   tr["grid_step"], list(fam.annuli),
                                   len(fam.balls),
                                   int(fam.residue_mask.sum()),
                                   fam.dist_oracle))
        stages.append(CoveringStage(n, stage_bodies, fams))

    return Covering("c0", gamma, n_stages, schedule, trunc_used, stages)


def build_countable_dim_covering(n_stages, ambient_spec=SupNorm(),
                                 truncation=None):
    """Ball covering along the nested chain of coordinate subspaces.

    Stage 0 is the ambient unit ball; stage n covers the truncated part of
    Y_n = span(e_1..e_n) outside the earlier stages with ambient-norm balls
    centered in Y_n.  All bodies share the ambient descriptor, so every
    pairwise decision in the verification graph is exact.
    """
    if n_stages < 1:
        raise ParameterError("n_stages must be at least 1")
    if not isinstance(ambient_spec, (SupNorm, MNorm)):
        raise ParameterError("ambient norm must be sup or an M-norm")
    b0 = Body(SparseVector(), 1.0, ambient_spec,
              BodyLabel(stage=0, gamma0=()))
    stages = [CoveringStage(0, [b0], [])]
    trunc_used = {}
    for n in range(1, n_stages + 1):
        prev = []
        for st in stages:
            prev.extend(st.bodies)
        tr = _stage_truncation(truncation, n, n)
        trunc_used[n] = tr
        y = tuple(range(1, n + 1))
        fam = build_lemma_family(y, prev, ambient_spec, h_max=tr["h_max"],
                                 k_max=tr["k_max"],
                                 grid_step=tr["grid_step"], prune=False)
        balls = []
        for ball in fam.balls:
            lbl = BodyLabel(stage=n, gamma0=y, q=1.0, q_tilde=ball.radius,
                            theta=1.0, annulus=ball.label.annulus)
            balls.append(Body(ball.center, ball.radius, ball.spec, lbl))
        stages.append(CoveringStage(n, balls, [
            FamilyInfo(n, y, tr["h_max"], tr["k_max"], tr["grid_step"],
                       list(fam.annuli), len(fam.balls),
                       int(fam.residue_mask.sum()), fam.dist_oracle)]))
    return Covering("countable", tuple(range(1, n_stages + 1)), n_stages,
                    None, trunc_used, stages, ambient=ambient_spec)


# ---------------------------------------------------------------------------
# declared covered regions
# ---------------------------------------------------------------------------

def slice_balls(cov, stage_n, gamma0):
    """Generating balls of one family: x_k + q~_k B_{M_n} restricted to Y."""
    out = []
    for b in cov.stages[stage_n].bodies:
        if b.label.gamma0 == tuple(gamma0):
            out.append(Body(b.center, b.label.q_tilde,
                            MNorm(b.spec.M), b.label))
    return out


def region_descriptions(cov):
    """Declared covered regions: one per (stage, gamma0) plus the stage-0
    cube, and one theta-collar region per gamma0 of the top stage."""
    out = []
    if cov.kind == "c0":
        sch = cov.schedule
        out.append({"name": "stage0-cube", "stage": 0, "gamma0": [],
                    "collar": sch.collar(0)})
        for st in cov.stages[1:]:
            tr = cov.truncation[st.n]
            for fam in st.families:
                out.append({"name": "gamma0-box",
                            "stage": st.n,
                            "gamma0": list(fam.gamma0),
                            "h_max": fam.h_max,
                            "k_max": fam.k_max,
                            "grid_step": fam.grid_step,
                            "norm_M": sch.M[st.n],
                            "collar": sch.collar(st.n)})
        theta_lb = sch.theta_lower
        for st in cov.stages[1:]:
            for fam in st.families:
                out.append({"name": "theta-collar",
                            "stage": st.n,
                            "gamma0": list(fam.gamma0),
                            "h_max": fam.h_max,
                            "k_max": fam.k_max,
                            "norm_M": sch.M[st.n],
                            "collar": theta_lb})
    else:
        for st in cov.stages[1:]:
            tr = cov.truncation[st.n]
            out.append({"name": "subspace-grid",
                        "stage": st.n,
                        "gamma0": list(range(1, st.n + 1)),
                        "h_max": tr["h_max"],
                        "k_max": tr["k_max"],
                        "grid_step": tr["grid_step"]})
    return out


def region_membership(cov, region, W, indices):
    """Boolean mask: which rows of W lie in the declared region.

    For a gamma0 region of stage n the projected part must lie in a
    generating slice ball or in an earlier body whose own coordinate set is
    contained in gamma0 (with M-norm below the truncation shell), and the
    transverse part must stay inside the declared collar cube.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    nrows = W.shape[0]
    name = region["name"]
    if name == "stage0-cube":
        return (np.abs(W) <= region["collar"] + 1e-15).all(axis=1)
    gamma0 = tuple(region["gamma0"])
    n = region["stage"]
    collar = region.get("collar", 0.0)
    ycols = [j for j, idx in enumerate(indices) if idx in gamma0]
    zcols = [j for j, idx in enumerate(indices) if idx not in gamma0]
    ok = np.ones(nrows, dtype=bool)
    if zcols:
        ok &= (np.abs(W[:, zcols]) <= collar + 1e-15).all(axis=1)
    if name == "subspace-grid":
        return ok
    Y = W[:, ycols]
    M_n = region["norm_M"]
    norms = kernels.row_norms(Y, kernels.QUERY_MNORM, M_n)
    ok &= norms <= region["h_max"] + 1.0
    sl = slice_balls(cov, n, gamma0)
    inside = np.zeros(nrows, dtype=bool)
    if sl:
        packed = pack_bodies(sl, gamma0)
        inside |= kernels.best_gauge_batch(Y, packed) <= 1.0 + 1e-12
    earlier = [b for b in cov.bodies_upto(n - 1)
               if set(b.label.gamma0) <= set(gamma0)]
    if earlier:
        Wproj = W.copy()
        if zcols:
            Wproj[:, zcols] = 0.0
        packed = pack_bodies(earlier, indices)
        inside |= kernels.best_gauge_batch(Wproj, packed) <= 1.0 + 1e-12
    return ok & inside


def region_sampling_box(cov, region, indices):
    """Axis bounds of the sup-norm box the region samples are drawn from."""
    d = len(indices)
    lo = np.zeros(d)
    hi = np.zeros(d)
    if region["name"] == "stage0-cube":
        lo[:] = -region["collar"]
        hi[:] = region["collar"]
        return lo, hi
    gamma0 = set(region["gamma0"])
    if region["name"] == "subspace-grid":
        tr = cov.truncation[region["stage"]]
        ext = 1.0
        if isinstance(cov.ambient, MNorm):
            ext = math.sqrt(1.0 + 1.0 / cov.ambient.M)
        R = (tr["h_max"] + 1.0) * ext
        for j, idx in enumerate(indices):
            if idx in gamma0:
                lo[j], hi[j] = -R, R
        return lo, hi
    M_n = region["norm_M"]
    R = (region["h_max"] + 1.0) * math.sqrt(1.0 + 1.0 / M_n)
    collar = region["collar"]
    for j, idx in enumerate(indices):
        if idx in gamma0:
            lo[j], hi[j] = -R, R
        else:
            lo[j], hi[j] = -collar, collar
    return lo, hi
