"""Block coordinate descent over motion, occlusion and labels.

Each outer iteration runs a few PatchMatch belief propagation sweeps over the
per-superpixel homographies, then re-decides every boundary's occlusion case,
then recomputes the next-frame label map in closed form.

PMBP keeps ``K`` particles per superpixel ranked by min-sum disbelief.  The
homography committed to the motion field is the particle with the lowest
energy given the neighbours' committed homographies, and it only changes on
a strict improvement, so every block step is non-increasing in the energy.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .energy import EnergyBreakdown, EnergyContext, Problem, round_half_up
from .geometry import (DegenerateConfiguration, fit_homography, homography_from_3pts_and_F,
                       homography_from_4pts, lk_refine)
from .model import (DEGENERATE_W, BoundaryLabel, EnergyConfig, FlowField, InputError,
                    LabelProbMap, MotionField, NumericalError, OcclusionState, dense_flow,
                    normalize_homography, renormalize, validate_config)

log = logging.getLogger(__name__)

CASE_ORDER = (BoundaryLabel.COPLANAR, BoundaryLabel.HINGE, BoundaryLabel.LEFT_OCC, BoundaryLabel.RIGHT_OCC)

# stream ids for the per-superpixel random generators
_INIT, _PROPOSE_3PT, _PROPOSE_4PT, _PROPOSE_NEIGHBOR = 0, 1, 2, 3


@dataclass
class ParticleSet:
    mats: np.ndarray  # (n, K, 3, 3)
    unary: np.ndarray  # (n, K)
    best: np.ndarray  # (n,)


@dataclass
class SolverState:
    mf: MotionField
    occ: OcclusionState
    l_next: LabelProbMap
    particles: ParticleSet
    messages: dict  # (src, dst) -> vector over dst's particles
    energy_trace: list = field(default_factory=list)


@dataclass(frozen=True)
class EstimationResult:
    flow: FlowField
    labels: LabelProbMap
    occlusion: OcclusionState
    trace: list
    state: SolverState
    initial: EnergyBreakdown


def _rng(cfg: EnergyConfig, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(cfg.rng_seed) & 0xFFFFFFFF, *keys])


def admissible(h: np.ndarray, height: int, width: int) -> bool:
    """True if ``h`` keeps w > 1e-12 over the whole image (w is affine, so corners suffice)."""
    if not np.all(np.isfinite(h)):
        return False
    corners = np.array([[0, 0, 1], [width - 1, 0, 1], [0, height - 1, 1], [width - 1, height - 1, 1]], float)
    return bool(np.all(corners @ h[2] > DEGENERATE_W)) and abs(np.linalg.det(h)) > 1e-12


def _translate(h: np.ndarray, dx: float, dy: float) -> np.ndarray:
    t = np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])
    return normalize_homography(t @ h)


# ---------------------------------------------------------------------------
# initialization


def fit_initial_homography(pts: np.ndarray, flow: FlowField, members: np.ndarray) -> np.ndarray:
    """Least-squares homography reproducing ``flow`` over a superpixel (identity on failure)."""
    valid = flow.valid.ravel()[members]
    if valid.sum() < 4:
        return np.eye(3) / np.sqrt(3)
    src = pts[members][valid, :2]
    dst = src + np.stack([flow.u.ravel()[members][valid], flow.v.ravel()[members][valid]], axis=1)
    try:
        return fit_homography(src, dst).m
    except (DegenerateConfiguration, NumericalError):
        d = np.mean(dst - src, axis=0)
        return _translate(np.eye(3), d[0], d[1])


def init_state(problem: Problem, cfg: EnergyConfig, init_flow: FlowField | None = None,
               ctx: EnergyContext | None = None) -> SolverState:
    report = validate_config(cfg, problem.table)
    if not report:
        raise InputError("; ".join(report.messages))
    seg = problem.seg
    if init_flow is not None and init_flow.shape != seg.shape:
        raise InputError("initial flow does not match the frame size")
    ctx = ctx or EnergyContext(problem, cfg)
    h, w = seg.shape
    k = cfg.particle_count
    mats = np.empty((seg.count, k, 3, 3))
    for s in range(seg.count):
        h0 = np.eye(3) / np.sqrt(3) if init_flow is None else fit_initial_homography(ctx.pts, init_flow, seg.members[s])
        if not admissible(h0, h, w):
            h0 = np.eye(3) / np.sqrt(3)
        mats[s, 0] = normalize_homography(h0)
        rng = _rng(cfg, s, _INIT)
        for i in range(1, k):
            dx, dy = rng.uniform(-cfg.max_disp, cfg.max_disp, size=2)
            mats[s, i] = _translate(mats[s, 0], dx, dy)
    mf = MotionField(mats[:, 0])
    labels = {}
    for (i, j) in seg.edges:
        same = ctx.labels[i] == ctx.labels[j]
        labels[(i, j)] = BoundaryLabel.COPLANAR if same else BoundaryLabel.HINGE
    occ = OcclusionState(np.zeros(seg.shape, dtype=bool), labels,
                         {e: np.zeros(0, dtype=np.int64) for e in seg.edges})
    particles = ParticleSet(mats, np.zeros((seg.count, k)), np.zeros(seg.count, dtype=np.intp))
    state = SolverState(mf, occ, problem.l_hat, particles, {})
    state.l_next = update_labels(state, ctx)
    return state


# ---------------------------------------------------------------------------
# proposals


def propose_particles(s: int, state: SolverState, ctx: EnergyContext, iteration: int,
                      pass_id: int, cfg: EnergyConfig) -> list:
    """One candidate per strategy: LK refinement, 3 points + F, perturbed corners, neighbour."""
    seg = ctx.seg
    height, width = seg.shape
    cur = state.mf.mats[s]
    members = seg.members[s]
    pts = ctx.member_pts[s]
    out = []

    try:
        out.append(lk_refine(cur, ctx.problem.it, ctx.problem.it1, members, cfg.lk_iters).m)
    except NumericalError:
        pass

    if ctx.F is not None and cfg.lambda_P > 0 and len(members) >= 3:
        rng = _rng(cfg, s, iteration, pass_id, _PROPOSE_3PT)
        pick = rng.choice(len(members), size=3, replace=False)
        src = pts[pick, :2]
        xy, ok = ctx.targets(cur, pts[pick])
        if ok.all():
            try:
                out.append(homography_from_3pts_and_F(ctx.F, np.hstack([src, xy]), gate=cfg.f_gate).m)
            except NumericalError:
                pass

    rng = _rng(cfg, s, iteration, pass_id, _PROPOSE_4PT)
    x0, y0 = pts[:, 0].min(), pts[:, 1].min()
    x1, y1 = pts[:, 0].max(), pts[:, 1].max()
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    xy, ok = ctx.targets(cur, np.hstack([corners, np.ones((4, 1))]))
    sigma = cfg.sigma0 * cfg.gamma ** iteration
    noise = rng.normal(0.0, sigma, size=(4, 2))
    if ok.all():
        try:
            out.append(homography_from_4pts(corners, xy + noise).m)
        except NumericalError:
            pass

    rng = _rng(cfg, s, iteration, pass_id, _PROPOSE_NEIGHBOR)
    nbrs = seg.neighbors(s)
    if nbrs:
        out.append(state.mf.mats[nbrs[rng.integers(len(nbrs))]].copy())
    else:
        out.append(np.eye(3) / np.sqrt(3))
    return [normalize_homography(m) for m in out if admissible(m, height, width)]


# ---------------------------------------------------------------------------
# PMBP


class _SweepCache:
    """Per-outer-iteration quantities held fixed during the motion block."""

    def __init__(self, state: SolverState, ctx: EnergyContext):
        seg = ctx.seg
        self.occluded = [ctx.occluded_members(state.occ.mask, s) for s in range(seg.count)]
        self.l_next = state.l_next.probs.reshape(-1, state.l_next.classes)
        self.owned = {e: state.occ.owned(seg, e) for e in seg.edges}
        self.neighbors = [seg.neighbors(s) for s in range(seg.count)]

    def unary(self, ctx: EnergyContext, s: int, h: np.ndarray) -> float:
        return ctx.unary(s, h, self.occluded[s], self.l_next)


def _pairwise(ctx: EnergyContext, state: SolverState, cache: _SweepCache, s: int, n: int,
              hs: np.ndarray, hn: np.ndarray) -> np.ndarray:
    """``lambda_C phi_C + lambda_B E_B`` for every (row of hs, row of hn) pair; shape (A, B)."""
    cfg = ctx.cfg
    edge = (s, n) if s < n else (n, s)
    label = state.occ.edge_labels[edge]
    if s < n:
        phi = ctx.phi_c_batch(edge, label, hs, hn, cache.owned[edge])
    else:
        phi = ctx.phi_c_batch(edge, label, hn, hs, cache.owned[edge]).T
    return cfg.lambda_C * phi + cfg.lambda_B * ctx.prior(edge, label)


def reset_messages(state: SolverState, ctx: EnergyContext) -> None:
    k = ctx.cfg.particle_count
    state.messages = {}
    for (i, j) in ctx.seg.edges:
        state.messages[(i, j)] = np.zeros(k)
        state.messages[(j, i)] = np.zeros(k)


def refresh_unaries(state: SolverState, ctx: EnergyContext, cache: _SweepCache) -> None:
    p = state.particles
    for s in range(ctx.seg.count):
        p.unary[s] = [cache.unary(ctx, s, h) for h in p.mats[s]]


def _dedupe(cands: np.ndarray) -> np.ndarray:
    keep = []
    for i, c in enumerate(cands):
        if not any(np.allclose(c, cands[j], rtol=0, atol=1e-12) for j in keep):
            keep.append(i)
    return np.asarray(keep, dtype=np.intp)


def _update_node(s: int, state: SolverState, ctx: EnergyContext, cache: _SweepCache,
                 iteration: int, pass_id: int, pool, use_proposals: bool = True) -> None:
    cfg = ctx.cfg
    p = state.particles
    k = cfg.particle_count
    proposals = propose_particles(s, state, ctx, iteration, pass_id, cfg) if use_proposals else []
    cands = np.concatenate([p.mats[s], np.asarray(proposals).reshape(-1, 3, 3)])
    keep_idx = _dedupe(cands)
    cands = cands[keep_idx]
    n_old = int(np.sum(keep_idx < k))
    new = cands[n_old:]
    if len(new):
        if pool is None:
            new_u = [cache.unary(ctx, s, h) for h in new]
        else:
            new_u = list(pool.map(lambda h: cache.unary(ctx, s, h), new))
    else:
        new_u = []
    cand_u = np.concatenate([p.unary[s][keep_idx[:n_old]], np.asarray(new_u, dtype=np.float64)])

    nbrs = cache.neighbors[s]
    pair = {}
    incoming = {}
    for n in nbrs:
        pw = _pairwise(ctx, state, cache, s, n, cands, p.mats[n])
        pair[n] = pw
        h_n = p.unary[n].copy()
        for kk in cache.neighbors[n]:
            if kk != s:
                h_n += state.messages[(kk, n)]
        incoming[n] = np.min(h_n[None, :] + pw, axis=1)
    disbelief = cand_u + sum(incoming.values()) if nbrs else cand_u.copy()

    order = np.lexsort((np.arange(len(cands)), disbelief))
    kept = list(order[:k])

    # commit: lowest conditional energy given the neighbours' committed homographies
    cur_idx = next(i for i, c in enumerate(cands)
                   if np.allclose(c, state.mf.mats[s], rtol=0, atol=1e-12))
    cond = cand_u.copy()
    for n in nbrs:
        cond += _pairwise(ctx, state, cache, s, n, cands, state.mf.mats[n][None])[:, 0]
    top = int(np.lexsort((np.arange(len(cands)), cond))[0])
    slack = 1e-12 * max(1.0, abs(cond[cur_idx]))
    chosen = top if cond[top] < cond[cur_idx] - slack else cur_idx
    if chosen not in kept:
        kept[-1] = chosen
    if len(kept) < k:
        # fewer distinct candidates than particles: pad with the committed one
        kept += [chosen] * (k - len(kept))
    kept = np.asarray(kept, dtype=np.intp)

    for n in nbrs:
        m = incoming[n][kept]
        state.messages[(n, s)] = m - np.min(m)
    for t in nbrs:
        h_s = cand_u[kept].copy()
        for n in nbrs:
            if n != t:
                h_s += state.messages[(n, s)]
        out = np.min(h_s[:, None] + pair[t][kept], axis=0)
        state.messages[(s, t)] = out - np.min(out)

    p.mats[s] = cands[kept]
    p.unary[s] = cand_u[kept]
    p.best[s] = int(np.flatnonzero(kept == chosen)[0])
    if chosen != cur_idx:
        state.mf = state.mf.replace(s, cands[chosen])


def sweep_order(ctx: EnergyContext) -> list:
    c = ctx.seg.centroids()
    return [int(i) for i in np.lexsort((c[:, 0], c[:, 1]))]


def pmbp_sweep(state: SolverState, ctx: EnergyContext, cfg: EnergyConfig, iteration: int = 0,
               sweep: int = 0, threads: int = 1, use_proposals: bool = True,
               cache: _SweepCache | None = None) -> SolverState:
    """One forward and one backward pass over the superpixels in centroid raster order."""
    cache = cache or _SweepCache(state, ctx)
    if not state.messages:
        reset_messages(state, ctx)
    order = sweep_order(ctx)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for direction, seq in enumerate((order, order[::-1])):
            for s in seq:
                _update_node(s, state, ctx, cache, iteration, 2 * sweep + direction, pool, use_proposals)
    finally:
        if pool is not None:
            pool.shutdown()
    return state


# ---------------------------------------------------------------------------
# occlusion


class _OcclusionScratch:
    def __init__(self, state: SolverState, ctx: EnergyContext):
        seg = ctx.seg
        self.rho = [ctx.rho(s, state.mf.mats[s]) for s in range(seg.count)]
        self.count = np.zeros(seg.id_map.size, dtype=np.int64)
        self.sets = {e: np.asarray(state.occ.edge_sets[e]) if state.occ.edge_sets is not None
                     else np.zeros(0, dtype=np.int64) for e in seg.edges}
        for v in self.sets.values():
            self.count[v] += 1
        self.l_next = state.l_next.probs.reshape(-1, state.l_next.classes)


def _case_sets(edge, state: SolverState, ctx: EnergyContext) -> dict:
    i, j = edge
    seg = ctx.seg
    hi, hj = state.mf.mats[i], state.mf.mats[j]
    empty = np.zeros(0, dtype=np.int64)
    return {
        BoundaryLabel.COPLANAR: empty,
        BoundaryLabel.HINGE: empty,
        BoundaryLabel.LEFT_OCC: seg.members[j][ctx.omega(i, j, hi, hj)],
        BoundaryLabel.RIGHT_OCC: seg.members[i][ctx.omega(j, i, hj, hi)],
    }


def update_occlusion(edge, state: SolverState, ctx: EnergyContext, scratch: _OcclusionScratch | None = None):
    """Pick the boundary case of one edge with the lowest energy, other edges held fixed.

    Returns ``(label, occluded flat indices)`` without committing them.
    """
    cfg = ctx.cfg
    scratch = scratch or _OcclusionScratch(state, ctx)
    seg = ctx.seg
    i, j = edge
    others = scratch.count.copy()
    others[scratch.sets[edge]] -= 1
    union = ctx.union[edge]
    best = None
    for label, cand in _case_sets(edge, state, ctx).items():
        mask = others > 0
        mask[cand] = True
        e = 0.0
        for s in (i, j):
            o = mask[seg.members[s]]
            e += ctx.data_share(s, state.mf.mats[s], o, rho=scratch.rho[s])
            if cfg.lambda_L:
                e += cfg.lambda_L * ctx.label_share(s, state.mf.mats[s], o, scratch.l_next)
        owned = np.isin(union, cand)
        e += cfg.lambda_C * ctx.phi_c(edge, label, state.mf.mats[i], state.mf.mats[j], owned)
        e += cfg.lambda_B * ctx.prior(edge, label)
        if best is None or e < best[0]:
            best = (e, label, cand)
    return best[1], best[2]


def resolve_mask(state: SolverState) -> np.ndarray:
    """A pixel is occluded iff some edge's committed case marks it occluded."""
    occ = state.occ
    mask = np.zeros(occ.mask.size, dtype=bool)
    for v in (occ.edge_sets or {}).values():
        mask[v] = True
    return mask.reshape(occ.mask.shape)


def update_all_occlusions(state: SolverState, ctx: EnergyContext) -> SolverState:
    """Visit edges in lexicographic order, committing each edge's best case."""
    scratch = _OcclusionScratch(state, ctx)
    labels = dict(state.occ.edge_labels)
    for edge in ctx.seg.edges:
        label, cand = update_occlusion(edge, state, ctx, scratch)
        scratch.count[scratch.sets[edge]] -= 1
        scratch.sets[edge] = cand
        scratch.count[cand] += 1
        labels[edge] = label
    mask = np.zeros(ctx.seg.id_map.size, dtype=bool)
    for v in scratch.sets.values():
        mask[v] = True
    state.occ = OcclusionState(mask.reshape(ctx.seg.shape), labels, scratch.sets)
    return state


# ---------------------------------------------------------------------------
# labels


def update_labels(state: SolverState, ctx: EnergyContext) -> LabelProbMap:
    """Closed-form minimizer of the label data term given motion and occlusion.

    Each target pixel receives the ``1/|s|``-weighted mean of
    ``alpha * l_hat(q) + (1 - alpha) * l_prev(p)`` over its non-occluded
    sources; pixels nobody maps to take the bottom-up evidence.
    """
    seg = ctx.seg
    height, width = seg.shape
    a = ctx.cfg.alpha
    classes = ctx.l_prev.shape[1]
    num = np.zeros((height * width, classes))
    den = np.zeros(height * width)
    mask = state.occ.mask.ravel()
    for s in range(seg.count):
        members = seg.members[s]
        xy, ok = ctx.targets(state.mf.mats[s], ctx.member_pts[s])
        ix = round_half_up(np.nan_to_num(xy[:, 0], nan=-1e9))
        iy = round_half_up(np.nan_to_num(xy[:, 1], nan=-1e9))
        use = ok & (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height) & ~mask[members]
        q = iy[use] * width + ix[use]
        wgt = 1.0 / ctx.sizes[s]
        np.add.at(num, q, wgt * ctx.l_prev[members[use]])
        np.add.at(den, q, wgt)
    has = den > 0
    out = ctx.l_hat.copy()
    out[has] = a * ctx.l_hat[has] + (1.0 - a) * num[has] / den[has, None]
    return LabelProbMap(renormalize(out.reshape(height, width, classes)))


# ---------------------------------------------------------------------------
# driver


def run_joint_estimation(problem: Problem, cfg: EnergyConfig, init_flow: FlowField | None = None,
                         callback: Callable[[int, EnergyBreakdown], None] | None = None,
                         threads: int = 1) -> EstimationResult:
    """Alternate motion, occlusion and label updates for ``cfg.outer_iters`` rounds."""
    ctx = EnergyContext(problem, cfg)
    state = init_state(problem, cfg, init_flow, ctx)
    initial = ctx.terms(state.mf, state.occ, state.l_next)
    log.info("initial energy %.6f", initial.total)
    for m in range(cfg.outer_iters):
        reset_messages(state, ctx)
        cache = _SweepCache(state, ctx)
        refresh_unaries(state, ctx, cache)
        for n in range(cfg.inner_iters):
            pmbp_sweep(state, ctx, cfg, iteration=m, sweep=n, threads=threads, cache=cache)
        update_all_occlusions(state, ctx)
        state.l_next = update_labels(state, ctx)
        e = ctx.terms(state.mf, state.occ, state.l_next)
        state.energy_trace.append(e)
        log.info("outer iteration %d: energy %.6f", m, e.total)
        if callback is not None:
            callback(m, e)
    return EstimationResult(dense_flow(state.mf, problem.seg), state.l_next, state.occ,
                            list(state.energy_trace), state, initial)
