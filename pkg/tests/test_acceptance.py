"""Acceptance criteria, each checked at its stated tolerance.

Every test records a verdict that conftest prints as one PASS/FAIL line.
Seeds are fixed in advance; energy weights were tuned on seeds 100 and up.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from jointflow import io as jio
from jointflow.cli import cli_main
from jointflow.energy import EnergyContext, physical_term, total_energy
from jointflow.geometry import (FundamentalMatrix, apply_homography, cross_matrix, epipolar_residual,
                                estimate_fundamental, homography_from_3pts_and_F, homography_from_4pts)
from jointflow.inference import init_state, update_labels
from jointflow.io import FormatError
from jointflow.model import (EnergyConfig, FlowField, GrayImage, Homography, LabelProbMap, MotionField,
                             OcclusionState, SuperpixelSegmentation, normalize_homography)
from jointflow.testkit import (TEMPLATES, SuiteConfig, oracle_energy, random_instance, run_scene,
                               scene_state, template_scene)
from jointflow.energy import Problem
from jointflow.model import SemanticClassTable

SUITE_SEEDS = range(10)
FLOW_SEEDS = range(5)
TERMS = ("e_D", "e_L", "e_P", "e_C", "e_B", "total")


@pytest.fixture(scope="module")
def suite_runs():
    """Default-configuration runs over every template and suite seed."""
    return {(t, s): run_scene(t, s) for t in sorted(TEMPLATES) for s in SUITE_SEEDS}


# -- oracle equivalence -------------------------------------------------------


def test_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(200):
        inst = random_instance(seed)
        args = (inst.problem, inst.mf, inst.occ, inst.l_next, inst.cfg)
        a, b = total_energy(*args), oracle_energy(*args)
        for term in TERMS:
            x, y = getattr(a, term), getattr(b, term)
            # relative error, with an absolute floor for terms that are exactly zero
            worst = max(worst, abs(x - y) / max(abs(y), 1e-300) if y else abs(x))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-9 and secs < 30
    record("oracle equivalence", ok, f"worst rel err {worst:.2e}, {secs:.1f}s for 200 instances")
    assert ok


# -- monotonicity -------------------------------------------------------------


def test_energy_monotonicity(suite_runs):
    gaps = {k: r.monotone_gap for k, r in suite_runs.items()}
    secs = sum(r.seconds for r in suite_runs.values())
    worst = max(gaps.values())
    ok = worst <= 1e-9 and secs < 300
    record("energy monotonicity", ok, f"{len(gaps)} scenes, largest step up {worst:.2e}, solver {secs:.0f}s")
    assert ok


# -- flow recovery ------------------------------------------------------------


def test_flow_recovery(suite_runs):
    rows = [suite_runs[("two-plane", s)] for s in FLOW_SEEDS]
    detail = "; ".join(f"seed {r.seed}: acc {r.acc:.3f} F1 {r.occ_f1:.3f} {r.seconds:.0f}s" for r in rows)
    ok = all(r.acc >= 0.95 and r.occ_f1 >= 0.8 and r.seconds < 120 for r in rows)
    record("flow recovery", ok, detail)
    assert ok


# -- epipolar term ------------------------------------------------------------


def tangential_shift(F, h, members, w, step=5.0):
    """Translate a homography's targets by ``step`` px across the epipolar line at the centroid."""
    ys, xs = np.divmod(members, w)
    c = np.array([xs.mean(), ys.mean(), 1.0])
    line = F @ c
    n = line[:2] / np.linalg.norm(line[:2])
    return normalize_homography(Homography.translation(*(step * n)).m @ h)


def test_epipolar_term(suite_runs):
    cfg = EnergyConfig()
    ceiling = cfg.lambda_non_st + cfg.beta
    zero, exact = [], []
    for seed in SUITE_SEEDS:
        sc = template_scene("static", seed)
        problem, mf, occ, l_next = scene_state(sc, cfg)
        F, seg = sc.F, problem.seg
        zero.append(physical_term(mf, seg, F, problem.l_prev, problem.table, cfg))
        ctx = EnergyContext(problem, cfg)
        for s in range(seg.count):
            bad = tangential_shift(F.m, mf.mats[s], seg.members[s], seg.shape[1])
            exact.append(ctx.phys_share(s, bad) == ceiling)
    # directional: the epipolar term lowers background EPE on the two-plane suite
    off = [run_scene("two-plane", s, EnergyConfig(lambda_P=0.0)).bg_epe for s in FLOW_SEEDS]
    on = [suite_runs[("two-plane", s)].bg_epe for s in FLOW_SEEDS]
    ok = max(zero) < 1e-6 and all(exact) and np.mean(on) < np.mean(off)
    record("epipolar term", ok, f"max gt E_P {max(zero):.1e}, ceiling hit {sum(exact)}/{len(exact)}, "
                                f"bg EPE {np.mean(on):.4f} with vs {np.mean(off):.4f} without")
    assert ok


# -- label update -------------------------------------------------------------


def label_state(alpha, mats, ids, seed=0):
    rng = np.random.default_rng(seed)
    ids = np.asarray(ids)
    h, w = ids.shape
    seg = SuperpixelSegmentation.from_id_map(ids)
    lp = LabelProbMap(rng.dirichlet(np.ones(3), (h, w)))
    lh = LabelProbMap(rng.dirichlet(np.ones(3), (h, w)))
    img = GrayImage(np.zeros((h, w)))
    p = Problem(img, img, seg, lp, lh, SemanticClassTable.from_static(3, (0,)), None)
    cfg = EnergyConfig(alpha=alpha)
    ctx = EnergyContext(p, cfg)
    st = init_state(p, cfg, ctx=ctx)
    st.mf = MotionField(np.stack([normalize_homography(m) for m in mats]))
    st.occ = OcclusionState.empty(seg)
    return p, update_labels(st, ctx).probs


def test_label_update():
    halves = (np.arange(6)[None, :] >= 3).repeat(6, 0).astype(int)
    p, out = label_state(0.0, [np.eye(3)] * 2, halves)
    err0 = np.max(np.abs(out - p.l_prev.probs))
    shifts = [Homography.translation(1, 0).m, Homography.translation(-2, 1).m]
    p, out = label_state(1.0, shifts, halves)
    err1 = np.max(np.abs(out - p.l_hat.probs))
    # pixels 0 and 2 both land on pixel 1; the minimizer is the average of the two targets
    alpha = 0.3
    t = Homography.translation
    p, out = label_state(alpha, [t(1, 0).m, t(1, 0).m, t(-1, 0).m], [[0, 1, 2]])
    lp, lh = p.l_prev.probs[0], p.l_hat.probs[0]
    want = alpha * lh[1] + (1 - alpha) * 0.5 * (lp[0] + lp[2])
    err2 = np.max(np.abs(out[0, 1] - want))
    # directional: the label term does not lower mean IoU on label-noise scenes
    noisy = SuiteConfig(evidence_noise=0.2)
    seeds = range(6)
    with_l = [run_scene("multi", s, EnergyConfig(), noisy).iou for s in seeds]
    without = [run_scene("multi", s, EnergyConfig(lambda_L=0.0), noisy).iou for s in seeds]
    ok = err0 <= 1e-12 and err1 <= 1e-12 and err2 <= 1e-12 and np.mean(with_l) >= np.mean(without)
    record("label update", ok, f"errors {err0:.1e}/{err1:.1e}/{err2:.1e}, "
                               f"mean IoU {np.mean(with_l):.4f} with vs {np.mean(without):.4f} without")
    assert ok


# -- geometry -----------------------------------------------------------------


def camera_pair(rng):
    k = np.array([[80.0, 0, 32], [0, 80.0, 32], [0, 0, 1]])
    r, _ = np.linalg.qr(np.eye(3) + cross_matrix(rng.normal(scale=0.05, size=3)))
    r *= np.sign(np.diag(r))
    t = rng.normal(size=3)
    t[2] = abs(t[2]) * 0.2
    kinv = np.linalg.inv(k)
    return k, r, t, kinv.T @ cross_matrix(t) @ r @ kinv


def views(k, r, t, X):
    a, b = X @ k.T, (X @ r.T + t) @ k.T
    return np.hstack([a[:, :2] / a[:, 2:], b[:, :2] / b[:, 2:]])


def test_geometry():
    rng = np.random.default_rng(7)
    f_res, compat, trip = [], [], []
    for _ in range(20):
        k, r, t, f_true = camera_pair(rng)
        X = np.column_stack([rng.uniform(-3, 3, 50), rng.uniform(-3, 3, 50), rng.uniform(6, 14, 50)])
        m = views(k, r, t, X)
        f, _ = estimate_fundamental(m, iters=200, seed=0)
        f_res.append(np.max(np.abs(epipolar_residual(f, m[:, :2], m[:, 2:]))))
        fm = FundamentalMatrix(f_true)
        h = homography_from_3pts_and_F(fm, m[:3])
        s = h.m.T @ fm.m
        compat.append(np.linalg.norm(s + s.T) / np.linalg.norm(h.m))
        # convex quads under moderate corner motion, as a superpixel's bounding box would be
        src = np.array([[8.0, 8], [56, 8], [56, 56], [8, 56]]) + rng.uniform(-4, 4, (4, 2))
        dst = src + rng.uniform(-6, 6, (4, 2))
        trip.append(np.max(np.abs(apply_homography(homography_from_4pts(src, dst), src) - dst)))
    ok = max(f_res) < 1e-8 and max(compat) < 1e-8 and max(trip) < 1e-8
    record("geometry", ok, f"F residual {max(f_res):.1e}, 3pt compat {max(compat):.1e}, 4pt trip {max(trip):.1e} px")
    assert ok


# -- formats ------------------------------------------------------------------


def test_format_roundtrips(tmp_path):
    rng = np.random.default_rng(11)
    exact = True
    for n in range(100):
        h, w = rng.integers(1, 30, 2)
        f = FlowField(rng.integers(-32768, 32768, (h, w)) / 64.0, rng.integers(-32768, 32768, (h, w)) / 64.0,
                      rng.random((h, w)) < 0.9)
        jio.write_flow_kitti(f, tmp_path / "f.png")
        g = jio.read_flow_kitti(tmp_path / "f.png")
        exact &= np.array_equal(f.u, g.u) and np.array_equal(f.v, g.v) and np.array_equal(f.valid, g.valid)
        c = int(rng.integers(1, 8))
        p = rng.dirichlet(np.ones(c), (h, w)).astype(np.float32).astype(np.float64)
        lm = LabelProbMap(p / p.sum(-1, keepdims=True)) if np.all(np.abs(p.sum(-1) - 1) <= 1e-6) else None
        if lm is None:
            continue
        jio.write_labelprob(lm, tmp_path / "l.lpm")
        back = jio.read_labelprob(tmp_path / "l.lpm")
        exact &= (tmp_path / "l.lpm").read_bytes() == jio.encode_labelprob(back)
    rejected = 0
    (tmp_path / "g.png").write_bytes(b"")
    jio.write_image(tmp_path / "g.png", np.zeros((3, 3)), bits=8)
    bad_inputs = [lambda: jio.read_flow_kitti(tmp_path / "g.png"),
                  lambda: jio.decode_labelprob(b"LPM0" + bytes(12)),
                  lambda: jio.decode_labelprob(jio.encode_labelprob(LabelProbMap.one_hot(np.zeros((2, 2), int), 2))[:-1]),
                  lambda: jio.decode_labelprob(b"LPM1" + np.array([1, 1, 2], "<u4").tobytes()
                                               + np.array([np.inf, 0], "<f4").tobytes()),
                  lambda: jio.decode_labelprob(b"LPM1" + np.array([1, 1, 2], "<u4").tobytes()
                                               + np.array([0.5, 0.4], "<f4").tobytes())]
    for bad in bad_inputs:
        try:
            bad()
        except FormatError:
            rejected += 1
    ok = exact and rejected == len(bad_inputs)
    record("format round-trips", ok, f"exact {exact}, rejected {rejected}/{len(bad_inputs)} invalid inputs")
    assert ok


# -- determinism --------------------------------------------------------------


def run_cli(scene: Path, out: Path, threads: int, matches: bool) -> list:
    out.mkdir()
    args = ["estimate", "--frame0", str(scene / "frame0.png"), "--frame1", str(scene / "frame1.png"),
            "--labels-prev", str(scene / "labels_prev.lpm"), "--labels-evidence", str(scene / "labels_evidence.lpm"),
            "--superpixel-count", "20", "--threads", str(threads),
            "--out-flow", str(out / "flow.png"), "--out-labels", str(out / "labels.lpm"),
            "--out-occlusion", str(out / "occ.png"), "--out-trace", str(out / "trace.txt")]
    if matches:
        args += ["--matches", str(scene / "matches.txt")]
    assert cli_main(args) == 0
    return [(out / n).read_bytes() for n in ("flow.png", "labels.lpm", "occ.png", "trace.txt")]


def test_determinism(tmp_path):
    same = []
    for template, matches in (("static", True), ("two-plane", False)):
        scene = tmp_path / template
        assert cli_main(["synth", "--template", template, "--seed", "3", "--out-dir", str(scene)]) == 0
        a = run_cli(scene, tmp_path / f"{template}-1", 1, matches)
        b = run_cli(scene, tmp_path / f"{template}-4", 4, matches)
        same.append(a == b)
    ok = all(same)
    record("determinism", ok, f"byte-identical outputs for {sum(same)}/{len(same)} scenes (1 vs 4 threads)")
    assert ok
