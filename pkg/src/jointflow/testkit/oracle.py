"""Straight-line reference evaluation of the energy.

Deliberately written with plain Python loops and floats; it shares nothing
with ``jointflow.energy`` so the two can check each other.
"""
from __future__ import annotations

import math

from ..energy import EnergyBreakdown
from ..model import BoundaryLabel

_TOL = 1e-9


def _apply(m, x, y):
    u = m[0][0] * x + m[0][1] * y + m[0][2]
    v = m[1][0] * x + m[1][1] * y + m[1][2]
    w = m[2][0] * x + m[2][1] * y + m[2][2]
    if w <= 1e-12:
        return None
    return (u / w, v / w)


def _bilinear(img, x, y):
    h, w = len(img), len(img[0])
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = img[y0][x0] * (1 - fx) + img[y0][x1] * fx
    bot = img[y1][x0] * (1 - fx) + img[y1][x1] * fx
    return top * (1 - fy) + bot * fy


def _census(img, x, y, r, eps):
    c = _bilinear(img, x, y)
    out = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dx == 0 and dy == 0:
                continue
            d = _bilinear(img, x + dx, y + dy) - c
            out.append(0 if d < -eps else (2 if d > eps else 1))
    return out


def _rnd(v):
    return int(math.floor(v + 0.5))


def oracle_energy(problem, mf, occ, l_next, cfg) -> EnergyBreakdown:
    ids = problem.seg.id_map.tolist()
    h, w = len(ids), len(ids[0])
    img0 = problem.it.data.tolist()
    img1 = problem.it1.data.tolist()
    lprev = problem.l_prev.probs.tolist()
    lhat = problem.l_hat.probs.tolist()
    lnext = l_next.probs.tolist()
    mask = occ.mask.tolist()
    mats = mf.mats.tolist()
    nclass = len(lprev[0][0])
    static = [c.is_static for c in problem.table.classes]

    members = {}
    for y in range(h):
        for x in range(w):
            members.setdefault(ids[y][x], []).append((x, y))
    count = len(members)

    rep = []
    for s in range(count):
        sums = [0.0] * nclass
        for x, y in members[s]:
            for c in range(nclass):
                sums[c] += lprev[y][x][c]
        best = 0
        for c in range(1, nclass):
            if sums[c] > sums[best]:
                best = c
        rep.append(best)

    # E_D
    e_d = 0.0
    for s in range(count):
        acc = 0.0
        for x, y in members[s]:
            if mask[y][x]:
                acc += cfg.lambda_o
                continue
            t = _apply(mats[s], x, y)
            if t is None or not (-_TOL <= t[0] <= w - 1 + _TOL and -_TOL <= t[1] <= h - 1 + _TOL):
                acc += cfg.tau_D
                continue
            a = _census(img0, x, y, cfg.census_radius, cfg.census_eps)
            b = _census(img1, t[0], t[1], cfg.census_radius, cfg.census_eps)
            ham = sum(1 for u, v in zip(a, b) if u != v)
            acc += min(ham, cfg.tau_D)
        e_d += acc / len(members[s])

    # E_L
    e_l = 0.0
    for s in range(count):
        acc = 0.0
        for x, y in members[s]:
            if mask[y][x]:
                continue
            t = _apply(mats[s], x, y)
            if t is None:
                continue
            qx, qy = _rnd(t[0]), _rnd(t[1])
            if not (0 <= qx < w and 0 <= qy < h):
                continue
            for c in range(nclass):
                target = cfg.alpha * lhat[qy][qx][c] + (1 - cfg.alpha) * lprev[y][x][c]
                acc += 0.5 * (lnext[qy][qx][c] - target) ** 2
        e_l += acc / len(members[s])

    # E_P
    e_p = 0.0
    if problem.F is not None:
        f = problem.F.m.tolist()
        for s in range(count):
            acc = 0.0
            for x, y in members[s]:
                t = _apply(mats[s], x, y)
                if t is None:
                    acc = math.inf
                    break
                line = [f[r][0] * x + f[r][1] * y + f[r][2] for r in range(3)]
                acc += abs(t[0] * line[0] + t[1] * line[1] + line[2])
            phi = acc / len(members[s])
            e_p += min(phi, cfg.lambda_non_st + cfg.beta * (1.0 if static[rep[s]] else 0.0))

    # adjacency and boundary sets straight from the id map
    boundary = {}
    for y in range(h):
        for x in range(w):
            for nx, ny in ((x + 1, y), (x, y + 1)):
                if nx < w and ny < h and ids[ny][nx] != ids[y][x]:
                    a, b = ids[y][x], ids[ny][nx]
                    key = (min(a, b), max(a, b))
                    boundary.setdefault(key, set()).update({(x, y), (nx, ny)})

    def owned(edge, x, y):
        if occ.edge_sets is None:
            return bool(mask[y][x])
        return (y * w + x) in set(occ.edge_sets[edge].tolist())

    def omega(front, back):
        hit = set()
        for x, y in members[front]:
            t = _apply(mats[front], x, y)
            if t is not None:
                hit.add((_rnd(t[0]), _rnd(t[1])))
        out = set()
        for x, y in members[back]:
            t = _apply(mats[back], x, y)
            if t is not None and (_rnd(t[0]), _rnd(t[1])) in hit:
                out.add((x, y))
        return out

    def gap(i, j, pts):
        acc = 0.0
        for x, y in pts:
            a = _apply(mats[i], x, y)
            b = _apply(mats[j], x, y)
            if a is None or b is None:
                return math.inf
            acc += abs(a[0] - b[0]) + abs(a[1] - b[1])
        return acc / len(pts)

    e_c = 0.0
    e_b = 0.0
    for edge in sorted(boundary):
        i, j = edge
        label = occ.edge_labels[edge]
        union = members[i] + members[j]
        if label in (BoundaryLabel.COPLANAR, BoundaryLabel.HINGE):
            pts = union if label == BoundaryLabel.COPLANAR else sorted(boundary[edge])
            e_c += gap(i, j, pts)
            e_c += sum(cfg.lambda_imp for x, y in union if owned(edge, x, y))
        else:
            f, b = (i, j) if label == BoundaryLabel.LEFT_OCC else (j, i)
            om = omega(f, b)
            for x, y in members[f]:
                if owned(edge, x, y):
                    e_c += cfg.lambda_imp
            for x, y in members[b]:
                o = owned(edge, x, y)
                if (x, y) in om and not o:
                    e_c += cfg.lambda_imp
                if (x, y) not in om and o:
                    e_c += cfg.lambda_imp
        if label == BoundaryLabel.COPLANAR:
            e_b += cfg.lambda_co if rep[i] != rep[j] else 0.0
        elif label == BoundaryLabel.HINGE:
            e_b += cfg.lambda_h
        else:
            e_b += cfg.lambda_occ

    total = (e_d + cfg.lambda_L * e_l + cfg.lambda_P * e_p + cfg.lambda_C * e_c + cfg.lambda_B * e_b)
    return EnergyBreakdown(e_d, e_l, e_p, e_c, e_b, total)
