import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from jointflow.geometry import (Correspondence, DegenerateConfiguration, FundamentalMatrix,
                                apply_homography, cross_matrix, epipolar_residual, epipole,
                                estimate_fundamental, homography_from_3pts_and_F,
                                homography_from_4pts, lk_refine, sample_bilinear)
from jointflow.model import DegenerateProjection, GrayImage, Homography, InputError


# -- synthetic two-view geometry ---------------------------------------------


def camera_pair(rng):
    """Intrinsics plus a generic relative pose (R, t)."""
    k = np.array([[80.0, 0, 32], [0, 80.0, 32], [0, 0, 1]])
    a = rng.normal(scale=0.05, size=3)
    r, _ = np.linalg.qr(np.eye(3) + cross_matrix(a))
    r *= np.sign(np.diag(r))
    t = rng.normal(size=3)
    t[2] = abs(t[2]) * 0.2
    return k, r, t


def fundamental_of(k, r, t):
    kinv = np.linalg.inv(k)
    return kinv.T @ cross_matrix(t) @ r @ kinv


def project_pts(k, r, t, X):
    x1 = X @ k.T
    x2 = (X @ r.T + t) @ k.T
    return x1[:, :2] / x1[:, 2:], x2[:, :2] / x2[:, 2:]


def scene_matches(rng, n):
    k, r, t = camera_pair(rng)
    X = np.column_stack([rng.uniform(-3, 3, n), rng.uniform(-3, 3, n), rng.uniform(6, 14, n)])
    p, q = project_pts(k, r, t, X)
    return fundamental_of(k, r, t), np.hstack([p, q]), (k, r, t)


def plane_homography(k, r, t, n, d):
    return k @ (r + np.outer(t, n) / d) @ np.linalg.inv(k)


# -- apply_homography --------------------------------------------------------


def test_apply_identity():
    assert np.allclose(apply_homography(np.eye(3), (7, 3)), (7, 3))


def test_apply_translation():
    assert np.allclose(apply_homography(Homography.translation(2, 3), (1, 1)), (3, 4))


def test_apply_projective():
    h = np.array([[1.0, 0, 0], [0, 1.0, 0], [0.001, 0, 1.0]])
    assert np.allclose(apply_homography(h, (100, 0)), (100 / 1.1, 0), atol=1e-12)


def test_apply_degenerate():
    with pytest.raises(DegenerateProjection):
        apply_homography(np.array([[1.0, 0, 0], [0, 1, 0], [-1, 0, 1]]), (1, 0))


# -- fundamental matrix ------------------------------------------------------


def test_fundamental_noise_free():
    rng = np.random.default_rng(0)
    f_true, m, _ = scene_matches(rng, 50)
    f, mask = estimate_fundamental(m, iters=200, seed=1)
    assert mask.all()
    assert np.max(epipolar_residual(f, m[:, :2], m[:, 2:])) < 1e-8
    g = f_true / np.linalg.norm(f_true)
    assert min(np.linalg.norm(f.m - g), np.linalg.norm(f.m + g)) < 1e-6


def test_fundamental_rank_two():
    rng = np.random.default_rng(4)
    _, m, _ = scene_matches(rng, 30)
    f, _ = estimate_fundamental(m, iters=50)
    assert abs(np.linalg.det(f.m)) < 1e-10
    assert np.isclose(np.linalg.norm(f.m), 1.0)


def test_fundamental_pure_translation():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 60, (30, 2))
    q = x + np.column_stack([rng.uniform(1, 9, 30), np.zeros(30)])
    f, _ = estimate_fundamental(np.hstack([x, q]), iters=200)
    ref = cross_matrix([1.0, 0, 0])
    ref /= np.linalg.norm(ref)
    assert min(np.linalg.norm(f.m - ref), np.linalg.norm(f.m + ref)) < 1e-8
    assert np.max(epipolar_residual(f, x, q)) < 1e-10


def test_fundamental_with_outliers():
    rng = np.random.default_rng(5)
    f_true, m, _ = scene_matches(rng, 50)
    bad = m[40:].copy()
    # push targets 10+ px off their epipolar lines
    for row in bad:
        line = f_true @ np.array([row[0], row[1], 1.0])
        nrm = line[:2] / np.linalg.norm(line[:2])
        row[2:] += nrm * rng.uniform(10, 20)
    m = np.vstack([m[:40], bad])
    _, mask = estimate_fundamental(m, iters=500, inlier_thresh=0.5, seed=3)
    assert mask[:40].sum() >= 40
    assert not mask[40:].any()


def test_fundamental_accepts_correspondences():
    rng = np.random.default_rng(6)
    _, m, _ = scene_matches(rng, 12)
    ms = [Correspondence(tuple(r[:2]), tuple(r[2:])) for r in m]
    f, _ = estimate_fundamental(ms, iters=50)
    assert np.max(epipolar_residual(f, m[:, :2], m[:, 2:])) < 1e-8


def test_fundamental_too_few():
    with pytest.raises(DegenerateConfiguration):
        estimate_fundamental(np.zeros((7, 4)))


def test_fundamental_deterministic():
    rng = np.random.default_rng(7)
    _, m, _ = scene_matches(rng, 40)
    m[:5, 2] += 5
    a, ma = estimate_fundamental(m, iters=100, seed=11)
    b, mb = estimate_fundamental(m, iters=100, seed=11)
    assert np.array_equal(a.m, b.m) and np.array_equal(ma, mb)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.floats(0.2, 5.0), st.floats(0, 2 * np.pi))
def test_fundamental_similarity_invariance(seed, scale, angle):
    rng = np.random.default_rng(seed)
    _, m, _ = scene_matches(rng, 20)
    c, s = np.cos(angle), np.sin(angle)
    sim = np.array([[scale * c, -scale * s, 3.0], [scale * s, scale * c, -7.0], [0, 0, 1]])
    p = np.column_stack([m[:, :2], np.ones(20)]) @ sim.T
    q = np.column_stack([m[:, 2:], np.ones(20)]) @ sim.T
    f1, _ = estimate_fundamental(m, iters=30)
    f2, _ = estimate_fundamental(np.hstack([p[:, :2], q[:, :2]]), iters=30)
    back = sim.T @ f2.m @ sim
    back /= np.linalg.norm(back)
    assert min(np.linalg.norm(back - f1.m), np.linalg.norm(back + f1.m)) < 1e-6


# -- epipolar residual / epipole ---------------------------------------------


def test_residual_on_epipolar_line():
    rng = np.random.default_rng(8)
    f_true, m, _ = scene_matches(rng, 5)
    assert np.all(epipolar_residual(f_true, m[:, :2], m[:, 2:]) < 1e-12)


def test_residual_translation_same_point():
    f = FundamentalMatrix.from_translation([1.0, 2.0, 0.5])
    assert epipolar_residual(f, (3.0, 4.0), (3.0, 4.0)) < 1e-12


def test_residual_triple_product():
    rng = np.random.default_rng(9)
    f = rng.normal(size=(3, 3))
    p, q = rng.normal(size=2), rng.normal(size=2)
    ph, qh = np.append(p, 1), np.append(q, 1)
    direct = abs(sum(qh[i] * f[i, j] * ph[j] for i in range(3) for j in range(3)))
    assert np.isclose(epipolar_residual(f, p, q), direct, rtol=1e-12)


def test_epipole_of_translation():
    t = np.array([1.0, -2.0, 0.5])
    e = epipole(FundamentalMatrix.from_translation(t))
    assert np.isclose(abs(e @ t) / np.linalg.norm(t), 1.0)


def test_epipole_is_second_camera_centre_image():
    rng = np.random.default_rng(10)
    k, r, t = camera_pair(rng)
    f = FundamentalMatrix(fundamental_of(k, r, t))
    e = epipole(f)
    # centre of camera 1 seen from camera 2: K (R*0 + t)
    ref = k @ t
    ref /= np.linalg.norm(ref)
    assert min(np.linalg.norm(e - ref), np.linalg.norm(e + ref)) < 1e-10
    assert np.linalg.norm(e @ f.m) < 1e-10


# -- homography constructors -------------------------------------------------


SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)


def test_4pts_identity():
    h = homography_from_4pts(SQUARE, SQUARE)
    assert np.allclose(h.m / h.m[2, 2], np.eye(3), atol=1e-12)


def test_4pts_translation():
    h = homography_from_4pts(SQUARE, SQUARE + [2, -1])
    assert np.allclose(h.m / h.m[2, 2], [[1, 0, 2], [0, 1, -1], [0, 0, 1]], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_4pts_round_trip(seed):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 64, (4, 2))
    dst = src + rng.uniform(-8, 8, (4, 2))
    try:
        h = homography_from_4pts(src, dst)
    except DegenerateConfiguration:
        return
    assume(np.all(np.column_stack([src, np.ones(4)]) @ h.m[2] > 1e-6))  # orientation-preserving quads
    assert np.max(np.abs(apply_homography(h, src) - dst)) < 1e-8


def test_4pts_collinear_rejected():
    with pytest.raises(DegenerateConfiguration):
        homography_from_4pts([[0, 0], [1, 1], [2, 2], [0, 1]], SQUARE)


def test_3pts_plane_recovery():
    rng = np.random.default_rng(12)
    k, r, t = camera_pair(rng)
    n, d = np.array([0.1, -0.2, 1.0]), 10.0
    h_true = plane_homography(k, r, t, n, d)
    f = FundamentalMatrix(fundamental_of(k, r, t))
    src = rng.uniform(0, 64, (23, 2))
    dst = apply_homography(h_true, src)
    h = homography_from_3pts_and_F(f, np.hstack([src[:3], dst[:3]]))
    assert np.max(np.abs(apply_homography(h, src[3:]) - dst[3:])) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_3pts_compatibility(seed):
    rng = np.random.default_rng(seed)
    f_true, m, _ = scene_matches(rng, 3)
    f = FundamentalMatrix(f_true)
    try:
        h = homography_from_3pts_and_F(f, m)
    except DegenerateConfiguration:
        return
    s = h.m.T @ f.m
    assert np.linalg.norm(s + s.T) / np.linalg.norm(h.m) < 1e-8
    p = rng.uniform(0, 64, (10, 2))
    p = p[np.column_stack([p, np.ones(10)]) @ h.m[2] > 1e-6]  # points in front of the induced plane
    q = apply_homography(h, p)
    scale = np.linalg.norm(f.m) * np.linalg.norm(np.column_stack([p, np.ones(len(p))]), axis=1) \
        * np.linalg.norm(np.column_stack([q, np.ones(len(q))]), axis=1)
    assert np.all(epipolar_residual(f, p, q) < 1e-8 * scale)


def test_3pts_pure_translation_fronto_parallel():
    k = np.array([[64.0, 0, 32], [0, 64.0, 32], [0, 0, 1]])
    t = np.array([0.4, 0.1, 0.0])
    h_true = plane_homography(k, np.eye(3), t, np.array([0, 0, 1.0]), 8.0)
    f = FundamentalMatrix(fundamental_of(k, np.eye(3), t))
    src = np.array([[5.0, 5], [50, 10], [20, 40]])
    h = homography_from_3pts_and_F(f, np.hstack([src, apply_homography(h_true, src)]))
    m = h.m / h.m[2, 2]
    assert np.allclose(m[:2, :2], np.eye(2), atol=1e-9) and np.allclose(m[2, :2], 0, atol=1e-12)
    assert np.allclose(m[:2, 2], 64 * t[:2] / 8.0, atol=1e-9)


def test_3pts_collinear_rejected():
    f = FundamentalMatrix.from_translation([1.0, 0, 0])
    with pytest.raises(DegenerateConfiguration):
        homography_from_3pts_and_F(f, [[0, 0, 1, 0], [1, 1, 2, 1], [2, 2, 3, 2]])


def test_3pts_gate():
    f = FundamentalMatrix.from_translation([1.0, 0, 0])
    with pytest.raises(DegenerateConfiguration):
        homography_from_3pts_and_F(f, [[0, 0, 1, 5], [10, 0, 11, 0], [0, 10, 1, 10]], gate=1.0)


# -- Lucas-Kanade ------------------------------------------------------------


def textured(h=40, w=40, seed=0, top=0.35):
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    rng = np.random.default_rng(seed)

    waves = rng.uniform([-top, -top, 0], [top, top, 6], (12, 3))

    def f(x, y):
        return sum(np.cos(a * x + b * y + c) for a, b, c in waves)
    return f, xs, ys


def render(f, h, xs, ys):
    hinv = np.linalg.inv(h)
    p = np.stack([xs, ys, np.ones_like(xs)], -1) @ hinv.T
    return f(p[..., 0] / p[..., 2], p[..., 1] / p[..., 2])


def to_unit(a, b):
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    return GrayImage((a - lo) / (hi - lo)), GrayImage((b - lo) / (hi - lo))


def test_lk_fixed_point():
    f, xs, ys = textured()
    h0 = np.array([[1.0, 0, 2.0], [0, 1, -1.0], [0, 0, 1]])  # integer shift: zero residual
    it, it1 = to_unit(f(xs, ys), render(f, h0, xs, ys))
    pix = np.flatnonzero(((xs > 5) & (xs < 30) & (ys > 5) & (ys < 30)).ravel())
    h = lk_refine(Homography(h0), it, it1, pix)
    assert np.allclose(h.m / h.m[2, 2], h0, atol=1e-6)


def test_lk_recovers_translation():
    f, xs, ys = textured(seed=1, top=0.2)
    h_true = np.array([[1.0, 0, 1.5], [0, 1, 0], [0, 0, 1]])
    it, it1 = to_unit(f(xs, ys), render(f, h_true, xs, ys))
    pix = np.flatnonzero(((xs > 8) & (xs < 30) & (ys > 8) & (ys < 30)).ravel())
    h = lk_refine(Homography.identity(), it, it1, pix, max_iters=50)
    p = np.column_stack([pix % 40, pix // 40]).astype(float)
    shift = (apply_homography(h, p) - p).mean(axis=0)  # translation seen by the patch
    assert np.all(np.abs(shift - [1.5, 0.0]) < 0.05)


def test_lk_flat_patch_unchanged():
    it = GrayImage(np.full((20, 20), 0.5))
    h0 = Homography.translation(0.3, 0.2)
    h = lk_refine(h0, it, it, np.arange(400))
    assert np.array_equal(h.m, h0.m)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_lk_never_increases_ssd(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((24, 24))
    b = rng.random((24, 24))
    h0 = Homography.translation(*rng.uniform(-2, 2, 2))
    pix = rng.choice(576, 100, replace=False)
    h = lk_refine(h0, GrayImage(a), GrayImage(b), pix)

    x, y = pix % 24, pix // 24
    t0 = np.stack([x, y, np.ones(100)], 1) @ h0.m.T
    tx, ty = t0[:, 0] / t0[:, 2], t0[:, 1] / t0[:, 2]
    seen = (tx >= 0) & (tx <= 23) & (ty >= 0) & (ty <= 23)  # LK works on pixels that start in frame

    def ssd(m):
        hp = np.stack([x, y, np.ones(100)], 1)[seen] @ m.T
        vals = sample_bilinear(b, hp[:, 0] / hp[:, 2], hp[:, 1] / hp[:, 2])
        return np.sum((vals - a.ravel()[pix][seen]) ** 2)
    assert ssd(h.m) <= ssd(h0.m) + 1e-9


def test_lk_empty_pixels():
    with pytest.raises(ValueError):
        lk_refine(Homography.identity(), GrayImage(np.zeros((4, 4))), GrayImage(np.zeros((4, 4))), [])


def test_sample_bilinear_clamps():
    img = np.arange(6.0).reshape(2, 3)
    assert sample_bilinear(img, -5, -5) == 0
    assert sample_bilinear(img, 10, 10) == 5
    assert np.isclose(sample_bilinear(img, 0.5, 0.5), 2.0)


def test_input_error_is_value_error():
    assert issubclass(InputError, ValueError)
