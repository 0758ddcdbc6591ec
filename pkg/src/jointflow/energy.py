"""Evaluation of the joint flow / segmentation energy.

The energy of a motion field ``H``, next-frame label map ``l``, occlusion mask
``o`` and boundary labels ``b`` is::

    E = E_D(H, o) + lambda_L E_L(H, l, o) + lambda_P E_P(H)
        + lambda_C E_C(H, o, b) + lambda_B E_B(b)

``EnergyContext`` precomputes everything that does not depend on the
variables (census signatures of the first frame, pixel lists, representative
labels) and exposes per-superpixel and per-edge pieces.  The solver works on
those pieces; the module-level functions evaluate whole terms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import FundamentalMatrix, sample_bilinear
from .model import (DEGENERATE_W, BoundaryLabel, EnergyConfig, GrayImage, InputError,
                    LabelProbMap, MotionField, OcclusionState, SemanticClassTable,
                    SuperpixelSegmentation, pixel_grid)

# Slack on the in-image test so that identity-like maps stay inside.
_INSIDE_TOL = 1e-9

LESS, EQUAL, GREATER = 0, 1, 2


@dataclass(frozen=True)
class EnergyBreakdown:
    e_D: float
    e_L: float
    e_P: float
    e_C: float
    e_B: float
    total: float

    @classmethod
    def combine(cls, e_D, e_L, e_P, e_C, e_B, cfg: EnergyConfig) -> "EnergyBreakdown":
        total = e_D + cfg.lambda_L * e_L + cfg.lambda_P * e_P + cfg.lambda_C * e_C + cfg.lambda_B * e_B
        return cls(float(e_D), float(e_L), float(e_P), float(e_C), float(e_B), float(total))

    def as_tuple(self) -> tuple:
        return (self.e_D, self.e_L, self.e_P, self.e_C, self.e_B, self.total)


@dataclass(frozen=True)
class Problem:
    """The fixed inputs of one two-frame estimation."""

    it: GrayImage
    it1: GrayImage
    seg: SuperpixelSegmentation
    l_prev: LabelProbMap
    l_hat: LabelProbMap
    table: SemanticClassTable
    F: FundamentalMatrix | None = None

    def __post_init__(self):
        shape = self.it.shape
        if self.it1.shape != shape or self.seg.shape != shape:
            raise InputError("frames and segmentation must have the same size")
        for lm in (self.l_prev, self.l_hat):
            if lm.probs.shape[:2] != shape:
                raise InputError("label maps must match the frame size")
            if lm.classes != len(self.table):
                raise InputError("label maps and class table disagree on the class count")


# ---------------------------------------------------------------------------
# census / ternary transform


def census_offsets(radius: int) -> np.ndarray:
    """Window offsets ``(dx, dy)`` in row-major order, centre excluded."""
    r = int(radius)
    out = [(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if (dx, dy) != (0, 0)]
    return np.array(out, dtype=np.float64)


def _ternary_states(img: np.ndarray, x, y, offsets, eps) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)[..., None]
    y = np.asarray(y, dtype=np.float64)[..., None]
    centre = sample_bilinear(img, x, y)
    around = sample_bilinear(img, x + offsets[:, 0], y + offsets[:, 1])
    d = around - centre
    states = np.full(d.shape, EQUAL, dtype=np.int8)
    states[d < -eps] = LESS
    states[d > eps] = GREATER
    return states


@dataclass(frozen=True)
class TernarySignature:
    """One less/equal/greater state per window offset (row-major, centre skipped)."""

    states: np.ndarray

    @property
    def bits(self) -> np.ndarray:
        """Two bits per neighbour: less=00, equal=01, greater=10."""
        s = self.states.astype(np.uint8)
        return np.stack([(s >> 1) & 1, s & 1], axis=-1).reshape(-1).astype(bool)

    def hamming(self, other: "TernarySignature") -> int:
        return int(np.count_nonzero(self.states != other.states))


def ternary_signature(img, p, radius: int = 3, eps: float = 0.0078) -> TernarySignature:
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    return TernarySignature(_ternary_states(data, p[0], p[1], census_offsets(radius), eps))


def rho_D(it, it1, p, q, cfg: EnergyConfig) -> float:
    """Truncated census distance between pixel ``p`` of ``it`` and point ``q`` of ``it1``."""
    a = ternary_signature(it, p, cfg.census_radius, cfg.census_eps)
    b = ternary_signature(it1, q, cfg.census_radius, cfg.census_eps)
    return float(min(a.hamming(b), cfg.tau_D))


def round_half_up(v):
    return np.floor(np.asarray(v) + 0.5).astype(np.int64)


# ---------------------------------------------------------------------------
# context


class EnergyContext:
    """Precomputed view of a Problem for fast energy evaluation."""

    def __init__(self, problem: Problem, cfg: EnergyConfig):
        self.problem = problem
        self.cfg = cfg
        seg = problem.seg
        self.seg = seg
        self.height, self.width = seg.shape
        self.pts = pixel_grid(self.height, self.width)
        self.offsets = census_offsets(cfg.census_radius)
        self.img0 = problem.it.data
        self.img1 = problem.it1.data
        self.sig0 = _ternary_states(self.img0, self.pts[:, 0], self.pts[:, 1], self.offsets, cfg.census_eps)
        self.sizes = seg.sizes
        self.member_pts = [self.pts[m] for m in seg.members]
        self.labels = np.array([representative_label(m, problem.l_prev) for m in seg.members])
        self.static = problem.table.static_mask[self.labels]
        self.ceiling = cfg.lambda_non_st + cfg.beta * self.static
        self.l_prev = problem.l_prev.probs.reshape(-1, problem.l_prev.classes)
        self.l_hat = problem.l_hat.probs.reshape(-1, problem.l_hat.classes)
        self.F = None if problem.F is None else problem.F.m
        self.union = {e: seg.union(*e) for e in seg.edges}
        self.union_pts = {e: self.pts[u] for e, u in self.union.items()}
        self.boundary_pts = {e: self.pts[seg.boundary[e]] for e in seg.edges}
        # offset of s_j's pixels inside the union list of edge (i, j)
        self.split = {e: len(seg.members[e[0]]) for e in seg.edges}

    # -- geometry helpers ---------------------------------------------------

    def targets(self, h: np.ndarray, pts: np.ndarray):
        """Mapped points ``(..., n, 2)`` and a validity mask (w > 1e-12)."""
        hp = pts @ np.swapaxes(h, -1, -2)
        w = hp[..., 2]
        ok = w > DEGENERATE_W
        with np.errstate(divide="ignore", invalid="ignore"):
            xy = hp[..., :2] / np.where(ok, w, np.nan)[..., None]
        return xy, ok

    def inside(self, xy, ok):
        x, y = xy[..., 0], xy[..., 1]
        with np.errstate(invalid="ignore"):
            return (ok & (x >= -_INSIDE_TOL) & (x <= self.width - 1 + _INSIDE_TOL)
                    & (y >= -_INSIDE_TOL) & (y <= self.height - 1 + _INSIDE_TOL))

    # -- unary pieces ---------------------------------------------------------

    def rho(self, s: int, h: np.ndarray) -> np.ndarray:
        """Per-pixel census cost of superpixel ``s`` under homography ``h``."""
        xy, ok = self.targets(h, self.member_pts[s])
        inside = self.inside(xy, ok)
        cost = np.full(len(xy), self.cfg.tau_D)
        if inside.any():
            sig1 = _ternary_states(self.img1, xy[inside, 0], xy[inside, 1], self.offsets, self.cfg.census_eps)
            ham = np.count_nonzero(sig1 != self.sig0[self.seg.members[s][inside]], axis=1)
            cost[inside] = np.minimum(ham, self.cfg.tau_D)
        return cost

    def data_share(self, s: int, h: np.ndarray, occluded: np.ndarray, rho=None) -> float:
        """``(1/|s|) sum_p (1-o_p) rho_D + o_p lambda_o`` for one superpixel."""
        if rho is None:
            rho = self.rho(s, h)
        vals = np.where(occluded, self.cfg.lambda_o, rho)
        return float(np.sum(vals) / self.sizes[s])

    def label_share(self, s: int, h: np.ndarray, occluded: np.ndarray, l_next: np.ndarray) -> float:
        xy, ok = self.targets(h, self.member_pts[s])
        ix = round_half_up(np.nan_to_num(xy[:, 0], nan=-1e9))
        iy = round_half_up(np.nan_to_num(xy[:, 1], nan=-1e9))
        use = ok & (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height) & ~occluded
        if not use.any():
            return 0.0
        q = iy[use] * self.width + ix[use]
        p = self.seg.members[s][use]
        a = self.cfg.alpha
        target = a * self.l_hat[q] + (1.0 - a) * self.l_prev[p]
        return float(0.5 * np.sum((l_next[q] - target) ** 2) / self.sizes[s])

    def epipolar_mean(self, s: int, h: np.ndarray) -> float:
        xy, ok = self.targets(h, self.member_pts[s])
        if not ok.all():
            return np.inf
        lines = self.member_pts[s] @ self.F.T
        res = np.abs(xy[:, 0] * lines[:, 0] + xy[:, 1] * lines[:, 1] + lines[:, 2])
        return float(np.mean(res))

    def phys_share(self, s: int, h: np.ndarray) -> float:
        if self.F is None:
            return 0.0
        return float(min(self.epipolar_mean(s, h), self.ceiling[s]))

    def unary(self, s: int, h: np.ndarray, occluded: np.ndarray, l_next: np.ndarray) -> float:
        cfg = self.cfg
        u = self.data_share(s, h, occluded)
        if cfg.lambda_L:
            u += cfg.lambda_L * self.label_share(s, h, occluded, l_next)
        if cfg.lambda_P:
            u += cfg.lambda_P * self.phys_share(s, h)
        return u

    # -- pairwise pieces ------------------------------------------------------

    def _keys(self, h: np.ndarray, pts: np.ndarray) -> np.ndarray:
        xy, ok = self.targets(h, pts)
        lim = float(1 << 29)
        ix = round_half_up(np.clip(np.nan_to_num(xy[..., 0], nan=0.0), -lim, lim))
        iy = round_half_up(np.clip(np.nan_to_num(xy[..., 1], nan=0.0), -lim, lim))
        # pack integer positions; degenerate targets get a key that never matches
        keys = (ix + (1 << 30)) * (1 << 31) + (iy + (1 << 30))
        return np.where(ok, keys, -1 - np.arange(keys.shape[-1]))

    def omega(self, front: int, back: int, h_front: np.ndarray, h_back: np.ndarray) -> np.ndarray:
        """Flags over the back superpixel's pixels whose target collides with the front's."""
        kf = self._keys(h_front, self.member_pts[front])
        kb = self._keys(h_back, self.member_pts[back])
        return np.isin(kb, kf[kf >= 0]) & (kb >= 0)

    def motion_gap(self, edge, hi: np.ndarray, hj: np.ndarray, boundary: bool):
        """Mean L1 distance of mapped points; ``hi``/``hj`` may be ``(A,3,3)``/``(B,3,3)`` stacks."""
        pts = self.boundary_pts[edge] if boundary else self.union_pts[edge]
        si, sj = np.ndim(hi) == 3, np.ndim(hj) == 3
        ai, oki = self.targets(hi if si else hi[None], pts)
        aj, okj = self.targets(hj if sj else hj[None], pts)
        good = oki[:, None] & okj[None]
        with np.errstate(invalid="ignore"):
            d = np.abs(ai[:, None] - aj[None]).sum(axis=-1)
        d = np.where(good, d, np.inf).mean(axis=-1)
        if not si:
            d = d[0]
        if not sj:
            d = d[..., 0]
        return d

    def phi_c(self, edge, label: BoundaryLabel, hi: np.ndarray, hj: np.ndarray, owned: np.ndarray) -> float:
        """Connectivity potential of one edge; ``owned`` flags the union pixels the edge sees as occluded."""
        imp = self.cfg.lambda_imp
        if label == BoundaryLabel.COPLANAR or label == BoundaryLabel.HINGE:
            gap = self.motion_gap(edge, hi, hj, boundary=label == BoundaryLabel.HINGE)
            return float(gap + imp * np.count_nonzero(owned))
        k = self.split[edge]
        i, j = edge
        if label == BoundaryLabel.LEFT_OCC:
            front_owned, back_owned = owned[:k], owned[k:]
            om = self.omega(i, j, hi, hj)
        else:
            front_owned, back_owned = owned[k:], owned[:k]
            om = self.omega(j, i, hj, hi)
        return float(imp * (np.count_nonzero(front_owned) + np.count_nonzero(om & ~back_owned)
                            + np.count_nonzero(~om & back_owned)))

    def phi_c_batch(self, edge, label: BoundaryLabel, his: np.ndarray, hjs: np.ndarray,
                    owned: np.ndarray) -> np.ndarray:
        """``phi_c`` for every pair of an ``(A,3,3)`` and a ``(B,3,3)`` stack."""
        if label == BoundaryLabel.COPLANAR or label == BoundaryLabel.HINGE:
            gap = self.motion_gap(edge, his, hjs, boundary=label == BoundaryLabel.HINGE)
            return gap + self.cfg.lambda_imp * np.count_nonzero(owned)
        out = np.empty((len(his), len(hjs)))
        for a in range(len(his)):
            for b in range(len(hjs)):
                out[a, b] = self.phi_c(edge, label, his[a], hjs[b], owned)
        return out

    def prior(self, edge, label: BoundaryLabel) -> float:
        cfg = self.cfg
        if label == BoundaryLabel.COPLANAR:
            i, j = edge
            return cfg.lambda_co * float(self.labels[i] != self.labels[j])
        if label == BoundaryLabel.HINGE:
            return cfg.lambda_h
        return cfg.lambda_occ

    # -- whole terms ----------------------------------------------------------

    def occluded_members(self, mask: np.ndarray, s: int) -> np.ndarray:
        return mask.ravel()[self.seg.members[s]]

    def terms(self, mf: MotionField, occ: OcclusionState, l_next: LabelProbMap) -> EnergyBreakdown:
        occ.check(self.seg)
        ln = l_next.probs.reshape(-1, l_next.classes)
        e_d = e_l = e_p = 0.0
        for s in range(self.seg.count):
            o = self.occluded_members(occ.mask, s)
            e_d += self.data_share(s, mf.mats[s], o)
            e_l += self.label_share(s, mf.mats[s], o, ln)
            e_p += self.phys_share(s, mf.mats[s])
        e_c = e_b = 0.0
        for edge in self.seg.edges:
            label = occ.edge_labels[edge]
            e_c += self.phi_c(edge, label, mf.mats[edge[0]], mf.mats[edge[1]], occ.owned(self.seg, edge))
            e_b += self.prior(edge, label)
        return EnergyBreakdown.combine(e_d, e_l, e_p, e_c, e_b, self.cfg)


# ---------------------------------------------------------------------------
# term-level API


def representative_label(members, l_prev: LabelProbMap) -> int:
    """Class with the largest summed probability over ``members``; ties go to the smaller id."""
    flat = l_prev.probs.reshape(-1, l_prev.classes)
    return int(np.argmax(flat[np.asarray(members)].sum(axis=0)))


def _ctx(problem: Problem, cfg: EnergyConfig) -> EnergyContext:
    return EnergyContext(problem, cfg)


def image_data_term(mf: MotionField, seg: SuperpixelSegmentation, occ: OcclusionState,
                    it: GrayImage, it1: GrayImage, cfg: EnergyConfig) -> float:
    ctx = _bare_context(seg, it, it1, cfg)
    return float(sum(ctx.data_share(s, mf.mats[s], ctx.occluded_members(occ.mask, s))
                     for s in range(seg.count)))


def label_data_term(mf: MotionField, seg: SuperpixelSegmentation, occ: OcclusionState,
                    l_next: LabelProbMap, l_hat: LabelProbMap, l_prev: LabelProbMap,
                    cfg: EnergyConfig) -> float:
    h, w = seg.shape
    ctx = _bare_context(seg, GrayImage(np.zeros((h, w))), GrayImage(np.zeros((h, w))), cfg,
                        l_prev=l_prev, l_hat=l_hat)
    ln = l_next.probs.reshape(-1, l_next.classes)
    return float(sum(ctx.label_share(s, mf.mats[s], ctx.occluded_members(occ.mask, s), ln)
                     for s in range(seg.count)))


def physical_term(mf: MotionField, seg: SuperpixelSegmentation, F: FundamentalMatrix,
                  l_prev: LabelProbMap, table: SemanticClassTable, cfg: EnergyConfig) -> float:
    h, w = seg.shape
    ctx = _bare_context(seg, GrayImage(np.zeros((h, w))), GrayImage(np.zeros((h, w))), cfg,
                        l_prev=l_prev, table=table, F=F)
    return float(sum(ctx.phys_share(s, mf.mats[s]) for s in range(seg.count)))


def occluded_set(front: int, back: int, h_front, h_back, seg: SuperpixelSegmentation) -> np.ndarray:
    """Flat indices of the back superpixel's pixels hidden by the front superpixel."""
    h, w = seg.shape
    ctx = _bare_context(seg, GrayImage(np.zeros((h, w))), GrayImage(np.zeros((h, w))), EnergyConfig())
    hf = getattr(h_front, "m", h_front)
    hb = getattr(h_back, "m", h_back)
    return seg.members[back][ctx.omega(front, back, np.asarray(hf), np.asarray(hb))]


def connectivity_term(mf: MotionField, seg: SuperpixelSegmentation, occ: OcclusionState,
                      cfg: EnergyConfig) -> float:
    h, w = seg.shape
    ctx = _bare_context(seg, GrayImage(np.zeros((h, w))), GrayImage(np.zeros((h, w))), cfg)
    occ.check(seg)
    return float(sum(ctx.phi_c(e, occ.edge_labels[e], mf.mats[e[0]], mf.mats[e[1]], occ.owned(seg, e))
                     for e in seg.edges))


def boundary_prior(occ: OcclusionState, seg: SuperpixelSegmentation, l_prev: LabelProbMap,
                   cfg: EnergyConfig) -> float:
    labels = [representative_label(m, l_prev) for m in seg.members]
    total = 0.0
    for (i, j) in seg.edges:
        b = occ.edge_labels[(i, j)]
        if b == BoundaryLabel.COPLANAR:
            total += cfg.lambda_co * float(labels[i] != labels[j])
        elif b == BoundaryLabel.HINGE:
            total += cfg.lambda_h
        else:
            total += cfg.lambda_occ
    return total


def total_energy(problem: Problem, mf: MotionField, occ: OcclusionState, l_next: LabelProbMap,
                 cfg: EnergyConfig) -> EnergyBreakdown:
    return EnergyContext(problem, cfg).terms(mf, occ, l_next)


def _bare_context(seg, it, it1, cfg, l_prev=None, l_hat=None, table=None, F=None) -> EnergyContext:
    """Context for evaluating a single term when the other inputs are irrelevant."""
    h, w = seg.shape
    if l_prev is None:
        # placeholder labels: the caller's term does not read them
        l_prev = LabelProbMap(np.ones((h, w, 2)) / 2)
        if table is None:
            table = SemanticClassTable.from_static(2, (0,))
    if l_hat is None:
        l_hat = l_prev
    if table is None:
        table = SemanticClassTable.from_static(max(l_prev.classes, 2), cfg.static_classes)
        if l_prev.classes != len(table):
            l_prev = LabelProbMap(np.ones((h, w, len(table))) / len(table))
            l_hat = l_prev
    return EnergyContext(Problem(it, it1, seg, l_prev, l_hat, table, F), cfg)
