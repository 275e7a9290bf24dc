"""Finite nets and star-finite ball families over a closed obstacle set.

The family builder stratifies a finite-dimensional coordinate subspace Y by
certified distance bands to a union C of bodies:

    band k >= 1:  1/(k+1) < dist_lb(y, C) <= 1/k      (ball radius 1/(2(k+1)))
    band k  = 0:  dist_lb(y, C) > 1                   (ball radius 1/2)

crossed with norm shells h <= |y| < h+1, h <= h_max.  Each nonempty stratum
receives a greedy farthest-point net on a certification grid; balls carry
the stratum radius.  dist_lb is the certified lower bound from supporting
functionals (min over C), and underestimating the true distance only
refines the stratification: it never lets a ball reach C.

Truncation (h_max, k_max) is part of the contract; the uncovered residue is
exactly the band dist_lb <= 1/(k_max+1) plus the outside of the norm shell,
and it is reported, never silently claimed.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bodies import Body, BodyLabel, pack_bodies
from .norms import MNorm, ParameterError, SparseVector, SupNorm


def _spec_code(spec):
    if isinstance(spec, SupNorm):
        return kernels.QUERY_SUP, 1.0, 1.0
    if isinstance(spec, MNorm):
        return kernels.QUERY_MNORM, spec.M, math.sqrt(1.0 + 1.0 / spec.M)
    raise ParameterError("net families use sup or M-norm balls, got %r"
                         % (spec,))


def box_grid(lo, hi, step):
    """Integer-counted regular grid over [lo, hi]^d (arrays allowed)."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    axes = []
    for a, b in zip(lo, hi):
        n = int(round((b - a) / step))
        axes.append(a + step * np.arange(n + 1))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def greedy_net(y_indices, box, delta, membership, spec=SupNorm(),
               grid_step=None):
    """Grid-certified delta-net of a membership region inside a box.

    Every grid point (spacing grid_step, default delta/2) satisfying the
    membership predicate ends up within delta of the returned set, and the
    returned points are pairwise more than delta apart.  membership maps an
    (n, d) array to a boolean mask.  Returns a list of SparseVector.
    """
    if not delta > 0.0:
        raise ParameterError("delta must be positive")
    kind, M, _ = _spec_code(spec)
    if grid_step is None:
        grid_step = delta / 2.0
    lo = [a for a, _ in box]
    hi = [b for _, b in box]
    pts = box_grid(lo, hi, grid_step)
    mask = np.asarray(membership(pts), dtype=bool)
    cand = pts[mask]
    if cand.shape[0] == 0:
        return []
    sel = kernels.greedy_select(cand, delta, kind, M)
    return [SparseVector.from_dense(y_indices, cand[i]) for i in sel]


@dataclass
class Annulus:
    """One stratum of the distance/norm stratification."""

    h: int
    k: int
    radius: float
    dist_lo: float
    dist_hi: float
    n_balls: int = 0


@dataclass
class NetFamily:
    """Star-finite ball family certified against an obstacle union C."""

    y_indices: tuple
    spec: object
    balls: list
    annuli: list
    h_max: int
    k_max: int
    grid_step: float
    dist_oracle: str
    # grid bookkeeping (dense arrays over y_indices)
    grid: np.ndarray = None
    covered_mask: np.ndarray = None
    residue_mask: np.ndarray = None
    inside_c_mask: np.ndarray = None
    placement_margins: list = field(default_factory=list)

    def counts(self):
        return {"balls": len(self.balls),
                "grid": 0 if self.grid is None else int(self.grid.shape[0]),
                "covered": int(self.covered_mask.sum()),
                "residue": int(self.residue_mask.sum()),
                "inside_c": int(self.inside_c_mask.sum())}


def _stratify(dlb, inside, norms, h_max, k_max):
    """Assign (h, k) strata; returns (valid mask, k array, h array).

    Band index: k = floor(1/dlb), which encodes 1/(k+1) < dlb <= 1/k for
    k >= 1 and dlb > 1 for k = 0 (dist to an empty C is +inf, band 0).
    """
    valid = (~inside) & (dlb > 1.0 / (k_max + 1)) & (norms < h_max + 1.0)
    kk = np.zeros(dlb.shape[0], dtype=np.int64)
    sel = valid & np.isfinite(dlb)
    kk[sel] = np.floor(1.0 / dlb[sel]).astype(np.int64)
    hh = np.zeros(dlb.shape[0], dtype=np.int64)
    hh[valid] = np.floor(norms[valid]).astype(np.int64)
    valid &= kk <= k_max
    valid &= hh <= h_max
    return valid, kk, hh


def build_lemma_family(y_indices, C, spec, h_max, k_max, grid_step=0.01,
                       slack=None, prune=False):
    """Build the truncated star-finite ball family covering Y minus C.

    Balls live on the coordinate subspace spanned by ``y_indices`` and use
    the ``spec`` norm both for their shape and for the stratification
    distances.  ``C`` is a list of Body obstacles (full-dimensional; points
    of Y are tested against them directly).  With ``prune`` the family is
    reduced to grid irredundancy: every kept ball privately covers at least
    one stratified grid point, recorded as its witness.
    """
    y_indices = tuple(int(i) for i in y_indices)
    kind, M, ext = _spec_code(spec)
    if slack is None:
        slack = grid_step
    d = len(y_indices)
    R = (h_max + 1.0) * ext
    grid = box_grid([-R] * d, [R] * d, grid_step)

    # dense embedding that also carries the obstacle coordinates
    full_idx = sorted(set(y_indices)
                      | {i for b in C for i in b.center.support()}
                      | {g for b in C for g in getattr(b.spec, "gamma0", ())})
    col = {idx: j for j, idx in enumerate(full_idx)}
    grid_full = np.zeros((grid.shape[0], len(full_idx)))
    for j, idx in enumerate(y_indices):
        grid_full[:, col[idx]] = grid[:, j]

    if C:
        packed_c = pack_bodies(C, full_idx)
        dlb, inside = kernels.min_distlb_batch(grid_full, packed_c, kind, M)
    else:
        dlb = np.full(grid.shape[0], np.inf)
        inside = np.zeros(grid.shape[0], dtype=bool)

    norms = kernels.row_norms(grid, kind, M)
    valid, kk, hh = _stratify(dlb, inside, norms, h_max, k_max)

    balls = []
    annuli = []
    margins = []
    for k in range(0, k_max + 1):
        radius = 1.0 / (2.0 * (k + 1))
        lo_band = 1.0 if k == 0 else 1.0 / (k + 1)
        hi_band = math.inf if k == 0 else 1.0 / k
        for h in range(0, h_max + 1):
            sel = valid & (kk == k) & (hh == h)
            n_sel = int(sel.sum())
            if n_sel == 0:
                continue
            pts = grid[sel]
            delta = radius - slack
            if delta <= 0.0:
                raise ParameterError(
                    "grid step too coarse for annulus k=%d (radius %.4g)"
                    % (k, radius))
            chosen = kernels.greedy_select(pts, delta, kind, M)
            dsel = dlb[sel]
            for ci in chosen:
                center = SparseVector.from_dense(y_indices, pts[ci])
                lbl = BodyLabel(stage=0, gamma0=y_indices, q=1.0,
                                q_tilde=radius, theta=1.0, annulus=(h, k))
                balls.append(Body(center, radius, spec, lbl))
                margins.append(float(dsel[ci] - radius))
            annuli.append(Annulus(h, k, radius, lo_band, hi_band,
                                  len(chosen)))

    fam = NetFamily(y_indices, spec, balls, annuli, h_max, k_max, grid_step,
                    dist_oracle="functional-lb(min over C), query=%s"
                                % ("sup" if kind == 0 else "m(M=%g)" % M),
                    grid=grid,
                    covered_mask=valid.copy(),
                    residue_mask=(~inside) & (~valid),
                    inside_c_mask=inside,
                    placement_margins=margins)

    if any(m <= 0.0 for m in margins):
        raise AssertionError("a placed ball is not certified disjoint from C")

    if balls:
        packed = pack_bodies(balls, y_indices)
        g = kernels.best_gauge_batch(grid[valid], packed)
        if not (g <= 1.0 + 1e-12).all():
            raise AssertionError("stratified grid point escaped the net")

    if prune and balls:
        _prune_family(fam)
    return fam


def _prune_family(fam):
    """Reduce to grid irredundancy; record a private witness per ball.

    A ball may be dropped only if every stratified grid point stays covered.
    Kept balls each cover at least one grid point no other ball covers; that
    point witnesses the necessity of the ball (deleting it must produce a
    coverage miss there).
    """
    grid = fam.grid
    valid_idx = np.flatnonzero(fam.covered_mask)
    pts = grid[valid_idx]
    cover_sets = []
    for b in fam.balls:
        g = kernels.gauge_batch(pts, *_body_kernel_args(b, fam.y_indices))
        cover_sets.append(np.flatnonzero(g <= 1.0 + 1e-12))
    counts = np.zeros(len(valid_idx), dtype=np.int64)
    for s in cover_sets:
        counts[s] += 1
    keep = np.ones(len(fam.balls), dtype=bool)
    for bi in range(len(fam.balls) - 1, -1, -1):
        s = cover_sets[bi]
        if (counts[s] >= 2).all():
            keep[bi] = False
            counts[s] -= 1
    new_balls = []
    new_margins = []
    for bi, b in enumerate(fam.balls):
        if not keep[bi]:
            continue
        s = cover_sets[bi]
        uniq = s[counts[s] == 1]
        if uniq.size == 0:
            raise AssertionError("kept ball lost its private grid point")
        w = pts[uniq[0]]
        lbl = b.label
        witness = tuple((int(i), float(v))
                        for i, v in zip(fam.y_indices, w) if v != 0.0)
        new_lbl = BodyLabel(lbl.stage, lbl.gamma0, lbl.q, lbl.q_tilde,
                            lbl.theta, lbl.annulus, witness)
        new_balls.append(Body(b.center, b.radius, b.spec, new_lbl))
        new_margins.append(fam.placement_margins[bi])
    # annulus counts after pruning
    stats = {}
    for b in new_balls:
        stats[b.label.annulus] = stats.get(b.label.annulus, 0) + 1
    for a in fam.annuli:
        a.n_balls = stats.get((a.h, a.k), 0)
    fam.annuli = [a for a in fam.annuli if a.n_balls > 0]
    fam.balls = new_balls
    fam.placement_margins = new_margins


def _body_kernel_args(body, indices):
    """(kind, center, radius, M, q, mask) for a single-body kernel call."""
    spec = body.spec
    center = body.center.to_dense(indices)
    mask = np.zeros(len(indices), dtype=bool)
    if isinstance(spec, SupNorm):
        return kernels.KIND_SUP, center, body.radius, 1.0, 1.0, mask
    if isinstance(spec, MNorm):
        return kernels.KIND_MSCALED, center, body.radius, spec.M, 1.0, mask
    for j, idx in enumerate(indices):
        if idx in spec.gamma0:
            mask[j] = True
    return kernels.KIND_MSCALED, center, body.radius, spec.M, spec.q, mask
