"""Random small energy instances for the property suites."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..energy import Problem
from ..geometry import FundamentalMatrix
from ..model import (BoundaryLabel, EnergyConfig, GrayImage, LabelProbMap, MotionField,
                     OcclusionState, SemanticClassTable, SuperpixelSegmentation, normalize_homography)


@dataclass(frozen=True)
class RandomInstance:
    problem: Problem
    mf: MotionField
    occ: OcclusionState
    l_next: LabelProbMap
    cfg: EnergyConfig


def random_segmentation(rng, height: int, width: int, count: int) -> SuperpixelSegmentation:
    """Discrete Voronoi cells around ``count`` distinct random sites."""
    sites = rng.choice(height * width, size=count, replace=False)
    sy, sx = np.divmod(sites, width)
    ys, xs = np.mgrid[0:height, 0:width]
    d = (ys[..., None] - sy) ** 2 + (xs[..., None] - sx) ** 2
    ids = np.argmin(d, axis=-1)
    _, ids = np.unique(ids, return_inverse=True)
    return SuperpixelSegmentation.from_id_map(ids.reshape(height, width))


def random_homography(rng, scale: float = 1.0) -> np.ndarray:
    noise = rng.normal(scale=[[0.05, 0.05, 2.0], [0.05, 0.05, 2.0], [0.002, 0.002, 0.0]])
    return normalize_homography(np.eye(3) + scale * noise)


def random_instance(seed: int, max_size: int = 12, max_superpixels: int = 5, max_classes: int = 4,
                    edge_sets: bool | None = None) -> RandomInstance:
    """A random full state: frames, segmentation, labels, motion, occlusion and weights."""
    rng = np.random.default_rng(seed)
    h, w = (int(v) for v in rng.integers(4, max_size + 1, size=2))
    seg = random_segmentation(rng, h, w, int(rng.integers(2, max_superpixels + 1)))
    classes = int(rng.integers(2, max_classes + 1))
    static = tuple(sorted(rng.choice(np.arange(1, classes), size=1))) if rng.random() < 0.5 else (0,)
    table = SemanticClassTable.from_static(classes, static)
    l_prev = LabelProbMap(rng.dirichlet(np.ones(classes), (h, w)))
    l_hat = LabelProbMap(rng.dirichlet(np.ones(classes), (h, w)))
    l_next = LabelProbMap(rng.dirichlet(np.ones(classes), (h, w)))
    F = FundamentalMatrix.from_translation(rng.normal(size=3)) if rng.random() < 0.7 else None
    cfg = EnergyConfig(alpha=float(rng.random()), lambda_imp=float(rng.uniform(50, 100)),
                       lambda_L=float(rng.uniform(0, 2)), lambda_P=float(rng.uniform(0, 2)),
                       lambda_C=float(rng.uniform(0, 1)), lambda_B=float(rng.uniform(0, 2)),
                       census_radius=int(rng.integers(1, 4)), static_classes=static)
    problem = Problem(GrayImage(rng.random((h, w))), GrayImage(rng.random((h, w))), seg,
                      l_prev, l_hat, table, F)
    mf = MotionField(np.stack([random_homography(rng) for _ in range(seg.count)]))
    labels = {e: BoundaryLabel(int(rng.integers(4))) for e in seg.edges}
    if edge_sets is None:
        edge_sets = bool(rng.random() < 0.7)
    if edge_sets:
        sets = {}
        for e in seg.edges:
            u = seg.union(*e)
            sets[e] = np.sort(rng.choice(u, size=int(rng.integers(0, min(4, u.size) + 1)), replace=False))
        mask = np.zeros(h * w, dtype=bool)
        for v in sets.values():
            mask[v] = True
        occ = OcclusionState(mask.reshape(h, w), labels, sets)
    else:
        occ = OcclusionState(rng.random((h, w)) < 0.1, labels)
    return RandomInstance(problem, mf, occ, l_next, cfg)


def scene_state(scene, cfg: EnergyConfig, seg: SuperpixelSegmentation | None = None, label_seed: int = 0):
    """Ground-truth ``(problem, mf, occ, l_next)`` for a synthetic scene.

    Each superpixel takes the homography of its majority region.  Occluded
    pixels are attributed to the edge whose front superpixel hides them, and
    the label map is the closed-form update under that motion.
    """
    from ..energy import EnergyContext, occluded_set
    from ..inference import init_state, update_labels
    from .scenes import scene_label_maps

    seg = seg or SuperpixelSegmentation.from_id_map(scene.regions)
    l_prev, l_hat = scene_label_maps(scene, label_seed)
    problem = Problem(scene.frames[0], scene.frames[1], seg, l_prev, l_hat, scene.table, scene.F)
    flat = scene.regions.ravel()
    mf = MotionField(np.stack([scene.gt_homographies[np.bincount(flat[m]).argmax()] for m in seg.members]))
    occluded = np.flatnonzero(scene.gt_occlusion.ravel())
    labels, sets = {}, {}
    for i, j in seg.edges:
        hide_j = np.intersect1d(occluded, occluded_set(i, j, mf.mats[i], mf.mats[j], seg))
        hide_i = np.intersect1d(occluded, occluded_set(j, i, mf.mats[j], mf.mats[i], seg))
        if hide_i.size >= hide_j.size and hide_i.size:
            labels[(i, j)], sets[(i, j)] = BoundaryLabel.RIGHT_OCC, hide_i
        elif hide_j.size:
            labels[(i, j)], sets[(i, j)] = BoundaryLabel.LEFT_OCC, hide_j
        else:
            same = np.allclose(mf.mats[i], mf.mats[j])
            labels[(i, j)] = BoundaryLabel.COPLANAR if same else BoundaryLabel.HINGE
            sets[(i, j)] = np.zeros(0, np.int64)
    mask = np.zeros(seg.id_map.size, dtype=bool)
    for v in sets.values():
        mask[v] = True
    occ = OcclusionState(mask.reshape(seg.shape), labels, sets)
    ctx = EnergyContext(problem, cfg)
    state = init_state(problem, cfg, ctx=ctx)
    state.mf, state.occ = mf, occ
    return problem, mf, occ, update_labels(state, ctx)
