"""Homography and two-view epipolar algebra.

Points are ``(x, y)`` pixel coordinates; homogeneous vectors append a 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (DEGENERATE_W, DegenerateProjection, GrayImage, Homography, NumericalError,
                    normalize_homography)


class DegenerateConfiguration(NumericalError):
    """Point configuration does not determine the requested model."""


class NoConsensus(NumericalError):
    """RANSAC found no non-degenerate minimal sample."""


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2 fundamental matrix with unit Frobenius norm, ``q^T m p = 0``."""

    m: np.ndarray

    def __post_init__(self):
        m = enforce_rank2(self.m)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def from_translation(cls, t) -> "FundamentalMatrix":
        return cls(cross_matrix(t))


@dataclass(frozen=True)
class Correspondence:
    p: tuple
    q: tuple


def cross_matrix(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def enforce_rank2(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64).reshape(3, 3)
    u, s, vt = np.linalg.svd(m)
    if s[1] <= 0:
        raise DegenerateConfiguration("fundamental matrix has rank below 2")
    s = np.array([s[0], s[1], 0.0]) / np.hypot(s[0], s[1])
    return (u * s) @ vt


def homogeneous(pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if pts.shape[-1] == 3:
        return pts
    return np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1)


def apply_homography(h, p):
    """Map a point (or an ``(n, 2)`` array of points) through ``h``.

    Raises DegenerateProjection if any homogeneous w is <= 1e-12.
    """
    m = h.m if isinstance(h, Homography) else np.asarray(h, dtype=np.float64)
    hp = homogeneous(p) @ m.T
    if np.any(hp[..., 2] <= DEGENERATE_W):
        raise DegenerateProjection("point maps to or behind the line at infinity")
    return hp[..., :2] / hp[..., 2:3]


def hartley_transform(pts) -> np.ndarray:
    """Similarity that moves the centroid to 0 and the mean distance to sqrt(2)."""
    pts = np.asarray(pts, dtype=np.float64)
    c = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - c, axis=1))
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


# ---------------------------------------------------------------------------
# fundamental matrix


def _eight_point(p, q, check_rank: bool = False) -> np.ndarray:
    t1, t2 = hartley_transform(p), hartley_transform(q)
    a = homogeneous(p) @ t1.T
    b = homogeneous(q) @ t2.T
    rows = np.einsum("ni,nj->nij", b, a).reshape(len(p), 9)
    _, s, vt = np.linalg.svd(rows)
    if check_rank and (len(s) < 8 or s[7] <= 1e-10 * s[0]):
        raise DegenerateConfiguration("8-point system is rank deficient")
    f = enforce_rank2(vt[-1].reshape(3, 3))
    return enforce_rank2(t2.T @ f @ t1)


def epipolar_distances(f, p, q):
    """Distances of q to the line F p and of p to the line F^T q."""
    f = f.m if isinstance(f, FundamentalMatrix) else np.asarray(f)
    ph, qh = homogeneous(p), homogeneous(q)
    lq = ph @ f.T
    lp = qh @ f
    alg = np.abs(np.sum(qh * lq, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        dq = alg / np.hypot(lq[..., 0], lq[..., 1])
        dp = alg / np.hypot(lp[..., 0], lp[..., 1])
    return np.nan_to_num(dq, nan=np.inf), np.nan_to_num(dp, nan=np.inf)


def estimate_fundamental(matches, iters: int = 1000, inlier_thresh: float = 1.0, seed: int = 0):
    """Normalized 8-point algorithm inside RANSAC.

    ``matches`` is a sequence of Correspondence or an ``(n, 4)`` array of
    ``x1 y1 x2 y2`` rows.  A match is an inlier when both point-to-epipolar-line
    distances are within ``inlier_thresh`` pixels.  The final matrix is refit
    on all inliers of the best sample.  Returns ``(FundamentalMatrix, mask)``.
    """
    arr = _as_match_array(matches)
    n = len(arr)
    if n < 8:
        raise DegenerateConfiguration(f"need at least 8 matches, got {n}")
    p, q = arr[:, :2], arr[:, 2:]
    rng = np.random.default_rng(seed)
    best_mask, best_cost = None, np.inf
    for _ in range(iters):
        sample = rng.choice(n, size=8, replace=False)
        try:
            f = _eight_point(p[sample], q[sample], check_rank=True)
        except DegenerateConfiguration:
            continue
        dq, dp = epipolar_distances(f, p, q)
        d = np.maximum(dq, dp)
        mask = d <= inlier_thresh
        # ties on the inlier count go to the smaller total inlier distance
        cost = (-int(mask.sum()), float(np.sum(d[mask])))
        if best_mask is None or cost < best_cost:
            best_mask, best_cost = mask, cost
            if mask.all():
                break
    if best_mask is None:
        raise NoConsensus("every RANSAC sample was degenerate")
    f = _eight_point(p[best_mask], q[best_mask])
    return FundamentalMatrix(f), best_mask


def _as_match_array(matches) -> np.ndarray:
    if len(matches) and isinstance(matches[0], Correspondence):
        return np.array([[*m.p, *m.q] for m in matches], dtype=np.float64)
    arr = np.asarray(matches, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        arr = arr.reshape(-1, 4)
    return arr


def epipolar_residual(f, p, q):
    """Algebraic epipolar error ``|q^T F p|`` (vectorized over leading axes)."""
    f = f.m if isinstance(f, FundamentalMatrix) else np.asarray(f)
    return np.abs(np.sum(homogeneous(q) * (homogeneous(p) @ f.T), axis=-1))


def epipole(f) -> np.ndarray:
    """Unit left null vector ``e'`` of F (``e'^T F = 0``): the epipole in the second image."""
    f = f.m if isinstance(f, FundamentalMatrix) else np.asarray(f)
    u, _, _ = np.linalg.svd(f)
    e = u[:, 2]
    return e if e[np.argmax(np.abs(e))] > 0 else -e


# ---------------------------------------------------------------------------
# homography constructors


def _triangle_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def _check_not_collinear(pts, tol: float = 1e-9) -> None:
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                if _triangle_area(pts[i], pts[j], pts[k]) < tol:
                    raise DegenerateConfiguration("three of the points are collinear")


def homography_from_4pts(src, dst) -> Homography:
    """Direct linear transform from four correspondences (Hartley-normalized)."""
    src = np.asarray(src, dtype=np.float64).reshape(4, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(4, 2)
    _check_not_collinear(src)
    return Homography(_dlt(src, dst))


def _dlt(src, dst) -> np.ndarray:
    t1, t2 = hartley_transform(src), hartley_transform(dst)
    a = homogeneous(src) @ t1.T
    b = homogeneous(dst) @ t2.T
    rows = []
    for (x, y, w), (u, v, z) in zip(a, b):
        rows.append([0, 0, 0, -z * x, -z * y, -z * w, v * x, v * y, v * w])
        rows.append([z * x, z * y, z * w, 0, 0, 0, -u * x, -u * y, -u * w])
    _, s, vt = np.linalg.svd(np.asarray(rows))
    if s[min(7, len(s) - 1)] <= 1e-12 * s[0]:
        raise DegenerateConfiguration("DLT system is rank deficient")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(t2) @ hn @ t1
    if abs(np.linalg.det(normalize_homography(m))) <= 1e-12:
        raise DegenerateConfiguration("DLT produced a singular homography")
    return m


def fit_homography(src, dst) -> Homography:
    """Least-squares DLT over any number (>= 4) of correspondences."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) < 4:
        raise DegenerateConfiguration("need at least 4 correspondences")
    return Homography(_dlt(src, dst))


def snap_to_epipolar_lines(f, p, q) -> np.ndarray:
    """Orthogonal projection of each q onto its epipolar line ``F p``."""
    f = f.m if isinstance(f, FundamentalMatrix) else np.asarray(f)
    lines = homogeneous(p) @ f.T
    qh = homogeneous(q)
    n2 = lines[:, 0] ** 2 + lines[:, 1] ** 2
    k = np.sum(lines * qh, axis=1) / n2
    return np.asarray(q, dtype=np.float64) - k[:, None] * lines[:, :2]


def homography_from_3pts_and_F(f, matches, gate: float = np.inf) -> Homography:
    """Plane-induced homography ``[e']_x F + e' v^T`` through three correspondences.

    Targets are first snapped onto their epipolar lines, so the result is
    exactly compatible with F; matches farther than ``gate`` pixels from
    their line are rejected.
    """
    f = f.m if isinstance(f, FundamentalMatrix) else np.asarray(f)
    arr = _as_match_array(matches)
    if len(arr) != 3:
        raise DegenerateConfiguration("need exactly three correspondences")
    p, q = arr[:, :2], arr[:, 2:]
    _check_not_collinear(p)
    dq, _ = epipolar_distances(f, p, q)
    if np.any(dq > gate):
        raise DegenerateConfiguration("correspondences are inconsistent with F")
    q = snap_to_epipolar_lines(f, p, q)

    # work in normalized coordinates for conditioning
    t1, t2 = hartley_transform(p), hartley_transform(q)
    fn = np.linalg.inv(t2).T @ f @ np.linalg.inv(t1)
    x = homogeneous(p) @ t1.T
    xp = homogeneous(q) @ t2.T
    e = epipole(fn)
    a = cross_matrix(e) @ fn
    b = np.empty(3)
    for i in range(3):
        c = np.cross(xp[i], e)
        cc = c @ c
        if cc <= 1e-18:
            raise DegenerateConfiguration("a correspondence coincides with the epipole")
        b[i] = np.cross(xp[i], a @ x[i]) @ c / cc
    try:
        v = np.linalg.solve(x, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateConfiguration("singular system for the plane vector") from exc
    hn = a - np.outer(e, v)
    m = np.linalg.inv(t2) @ hn @ t1
    try:
        return Homography(m)
    except NumericalError as exc:
        raise DegenerateConfiguration(str(exc)) from exc


# ---------------------------------------------------------------------------
# Lucas-Kanade


def sample_bilinear(img: np.ndarray, x, y) -> np.ndarray:
    """Bilinear interpolation with clamp-to-edge."""
    h, w = img.shape
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def _ssd(img1, m, pts, template) -> float:
    hp = pts @ m.T
    w = hp[:, 2]
    if np.any(w <= DEGENERATE_W):
        return np.inf
    vals = sample_bilinear(img1, hp[:, 0] / w, hp[:, 1] / w)
    return float(np.sum((vals - template) ** 2))


def lk_refine(h0, it, it1, pixels, max_iters: int = 20) -> Homography:
    """Inverse-compositional Lucas-Kanade over the 8 homography parameters.

    Minimizes the intensity SSD between ``it`` at ``pixels`` (flat indices)
    and ``it1`` at their warped positions, using only pixels whose target
    under ``h0`` lies inside ``it1``.  A step is kept only if it lowers the
    SSD, so the result is never worse than ``h0``.
    """
    h0 = h0 if isinstance(h0, Homography) else Homography(h0)
    a = it.data if isinstance(it, GrayImage) else np.asarray(it, dtype=np.float64)
    b = it1.data if isinstance(it1, GrayImage) else np.asarray(it1, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.intp)
    if pixels.size == 0:
        raise ValueError("lk_refine needs at least one pixel")
    height, width = a.shape
    # only pixels whose starting target lies in the second frame carry signal
    hp = np.stack([pixels % width, pixels // width, np.ones(pixels.size)], axis=1) @ h0.m.T
    with np.errstate(divide="ignore", invalid="ignore"):
        tx, ty = hp[:, 0] / hp[:, 2], hp[:, 1] / hp[:, 2]
    seen = (hp[:, 2] > DEGENERATE_W) & (tx >= 0) & (tx <= width - 1) & (ty >= 0) & (ty <= height - 1)
    if seen.sum() < 8:
        return h0
    pixels = pixels[seen]
    xs = (pixels % width).astype(np.float64)
    ys = (pixels // width).astype(np.float64)
    template = a.ravel()[pixels]
    gy, gx = np.gradient(a)
    gx = gx.ravel()[pixels]
    gy = gy.ravel()[pixels]

    cx, cy = xs.mean(), ys.mean()
    scale = max(np.sqrt(np.mean((xs - cx) ** 2 + (ys - cy) ** 2)), 1.0)
    norm = np.array([[1 / scale, 0, -cx / scale], [0, 1 / scale, -cy / scale], [0, 0, 1]])
    denorm = np.linalg.inv(norm)
    xn, yn = (xs - cx) / scale, (ys - cy) / scale
    gxn, gyn = gx * scale, gy * scale
    sd = np.stack([gxn * xn, gxn * yn, gxn, gyn * xn, gyn * yn, gyn,
                   -xn * (gxn * xn + gyn * yn), -yn * (gxn * xn + gyn * yn)], axis=1)
    hess = sd.T @ sd
    if not np.isfinite(hess).all() or np.trace(hess) <= 1e-12:
        return h0

    pts = np.stack([xs, ys, np.ones_like(xs)], axis=1)
    warp = norm @ h0.m @ denorm
    best = h0.m
    best_ssd = _ssd(b, best, pts, template)
    if not np.isfinite(best_ssd):
        return h0
    for _ in range(max_iters):
        m = denorm @ warp @ norm
        hp = pts @ m.T
        err = sample_bilinear(b, hp[:, 0] / hp[:, 2], hp[:, 1] / hp[:, 2]) - template
        delta = np.linalg.lstsq(hess, sd.T @ err, rcond=1e-10)[0]
        dw = np.eye(3) + np.array([[delta[0], delta[1], delta[2]],
                                   [delta[3], delta[4], delta[5]],
                                   [delta[6], delta[7], 0.0]])
        try:
            warp = warp @ np.linalg.inv(dw)
        except np.linalg.LinAlgError:
            break
        cand = denorm @ warp @ norm
        ssd = _ssd(b, cand, pts, template)
        if not ssd < best_ssd:
            break
        improvement = (best_ssd - ssd) / best_ssd if best_ssd > 0 else 0.0
        best, best_ssd = cand, ssd
        if improvement < 1e-6:
            break
    try:
        return Homography(best)
    except NumericalError:
        return h0
