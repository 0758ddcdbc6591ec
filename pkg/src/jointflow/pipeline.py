"""Preprocessing entry points: initial flow, fundamental matrix, estimation runs."""
from __future__ import annotations

import logging

import numpy as np

from .energy import EnergyContext, Problem, _ternary_states, census_offsets, representative_label
from .geometry import FundamentalMatrix, NoConsensus, DegenerateConfiguration, estimate_fundamental
from .inference import EstimationResult, run_joint_estimation
from .model import EnergyConfig, FlowField, GrayImage, NumericalError, SuperpixelSegmentation

log = logging.getLogger(__name__)


def census_volume(it: GrayImage, it1: GrayImage, cfg: EnergyConfig):
    """Per-pixel ternary census states of both frames, shape ``(h, w, n)``."""
    h, w = it.shape
    ys, xs = np.mgrid[0:h, 0:w]
    off = census_offsets(cfg.census_radius)
    a = _ternary_states(it.data, xs, ys, off, cfg.census_eps)
    b = _ternary_states(it1.data, xs, ys, off, cfg.census_eps)
    return a, b


def translation_costs(it: GrayImage, it1: GrayImage, seg: SuperpixelSegmentation,
                      cfg: EnergyConfig, radius: int | None = None):
    """Mean truncated census cost of every superpixel under every integer shift.

    Returns ``(shifts, costs)`` with ``shifts`` of shape ``(m, 2)`` as ``(dx, dy)``
    and ``costs`` of shape ``(seg.count, m)``.  Targets leaving the image cost
    ``tau_D``.
    """
    r = cfg.max_disp if radius is None else int(radius)
    a, b = census_volume(it, it1, cfg)
    h, w = seg.shape
    ids = seg.id_map.ravel()
    sizes = np.bincount(ids, minlength=seg.count).astype(np.float64)
    shifts = np.array([(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1)])
    costs = np.empty((seg.count, len(shifts)))
    for k, (dx, dy) in enumerate(shifts):
        cost = np.full((h, w), cfg.tau_D)
        y0, y1 = max(0, -dy), min(h, h - dy)
        x0, x1 = max(0, -dx), min(w, w - dx)
        if y1 > y0 and x1 > x0:
            ham = np.count_nonzero(a[y0:y1, x0:x1] != b[y0 + dy:y1 + dy, x0 + dx:x1 + dx], axis=2)
            cost[y0:y1, x0:x1] = np.minimum(ham, cfg.tau_D)
        costs[:, k] = np.bincount(ids, weights=cost.ravel(), minlength=seg.count) / sizes
    return shifts, costs


def initial_flow(it: GrayImage, it1: GrayImage, seg: SuperpixelSegmentation, cfg: EnergyConfig) -> FlowField:
    """Piecewise-constant integer flow from the best census shift per superpixel.

    Ties go to the shift listed first (row-major over ``dy`` then ``dx``).
    """
    shifts, costs = translation_costs(it, it1, seg, cfg)
    best = shifts[np.argmin(costs, axis=1)]
    u = best[seg.id_map, 0].astype(np.float64)
    v = best[seg.id_map, 1].astype(np.float64)
    return FlowField(u, v, np.ones(seg.shape, dtype=bool))


def matches_from_flow(it: GrayImage, it1: GrayImage, seg: SuperpixelSegmentation, flow: FlowField,
                      static_superpixels, cfg: EnergyConfig, per_superpixel: int = 8) -> np.ndarray:
    """Lowest-census-cost correspondences sampled off a flow field.

    Picks up to ``per_superpixel`` pixels from each listed superpixel whose
    rounded target stays inside the image.  Returns ``(n, 4)`` rows
    ``x1 y1 x2 y2`` with sub-pixel targets.
    """
    h, w = seg.shape
    off = census_offsets(cfg.census_radius)
    rows = []
    for s in static_superpixels:
        m = seg.members[s]
        valid = flow.valid.ravel()[m]
        m = m[valid]
        if m.size == 0:
            continue
        x = (m % w).astype(np.float64)
        y = (m // w).astype(np.float64)
        tx = x + flow.u.ravel()[m]
        ty = y + flow.v.ravel()[m]
        inside = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
        x, y, tx, ty = x[inside], y[inside], tx[inside], ty[inside]
        if x.size == 0:
            continue
        sa = _ternary_states(it.data, x, y, off, cfg.census_eps)
        sb = _ternary_states(it1.data, tx, ty, off, cfg.census_eps)
        cost = np.count_nonzero(sa != sb, axis=1)
        order = np.lexsort((np.arange(cost.size), cost))[:per_superpixel]
        rows.append(np.stack([x[order], y[order], tx[order], ty[order]], axis=1))
    if not rows:
        return np.zeros((0, 4))
    return np.concatenate(rows)


def fundamental_from_flow(it: GrayImage, it1: GrayImage, seg: SuperpixelSegmentation, flow: FlowField,
                          l_prev, table, cfg: EnergyConfig) -> FundamentalMatrix | None:
    """Robust F from correspondences on statically labelled superpixels (None when it fails)."""
    static = table.static_mask
    chosen = [s for s in range(seg.count) if static[representative_label(seg.members[s], l_prev)]]
    matches = matches_from_flow(it, it1, seg, flow, chosen, cfg)
    if len(matches) < 8:
        log.warning("only %d correspondences for the fundamental matrix; epipolar term disabled", len(matches))
        return None
    try:
        f, _ = estimate_fundamental(matches, cfg.ransac_iters, cfg.ransac_thresh, cfg.rng_seed)
    except (NoConsensus, DegenerateConfiguration, NumericalError) as exc:
        log.warning("fundamental matrix estimation failed (%s); epipolar term disabled", exc)
        return None
    return f


def estimate(it: GrayImage, it1: GrayImage, seg: SuperpixelSegmentation, l_prev, l_hat, table,
             cfg: EnergyConfig, init: FlowField | None = None, matches=None,
             fundamental: FundamentalMatrix | None = None, threads: int = 1,
             callback=None) -> EstimationResult:
    """Full two-frame run: initial flow, fundamental matrix, then the joint solver.

    The fundamental matrix is taken from ``fundamental`` if given, else fitted
    to ``matches`` (failures propagate), else fitted to correspondences
    sampled off the initial flow (failures disable the epipolar term).
    """
    if init is None:
        init = initial_flow(it, it1, seg, cfg)
    f = fundamental
    if f is None and cfg.lambda_P > 0:
        if matches is not None:
            f, _ = estimate_fundamental(matches, cfg.ransac_iters, cfg.ransac_thresh, cfg.rng_seed)
        else:
            f = fundamental_from_flow(it, it1, seg, init, l_prev, table, cfg)
    problem = Problem(it, it1, seg, l_prev, l_hat, table, f)
    return run_joint_estimation(problem, cfg, init_flow=init, callback=callback, threads=threads)
