"""The synthetic evaluation suite: one estimation run per (template, seed) with scores."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..metrics import evaluate_iou, in_frame, occlusion_f1
from ..model import EnergyConfig
from ..pipeline import estimate
from ..superpixels import compute_superpixels
from .scenes import scene_label_maps, template_scene

EPE_GOOD = 0.5  # px


@dataclass(frozen=True)
class SuiteConfig:
    cells: int = 20  # SLIC target count
    compactness: float = 0.3
    max_disp: int = 16  # initial translation search radius
    evidence_noise: float = 0.0  # fraction of relabelled pixels in the frame t+1 evidence
    threads: int = 1


@dataclass
class SceneRun:
    template: str
    seed: int
    acc: float  # fraction of in-frame non-occluded pixels with EPE below EPE_GOOD
    bg_epe: float  # mean EPE over in-frame non-occluded background pixels
    occ_f1: float
    iou: float
    evidence_iou: float
    totals: list = field(default_factory=list)  # initial energy, then one entry per outer iteration
    seconds: float = 0.0
    result: object = None

    @property
    def monotone_gap(self) -> float:
        """Largest increase between consecutive totals (<= 0 when non-increasing)."""
        t = np.asarray(self.totals)
        return float(np.max(np.diff(t))) if t.size > 1 else 0.0


def run_scene(template: str, seed: int, cfg: EnergyConfig | None = None,
              suite: SuiteConfig = SuiteConfig()) -> SceneRun:
    cfg = (cfg or EnergyConfig()).replace(max_disp=suite.max_disp)
    sc = template_scene(template, seed)
    seg = compute_superpixels(sc.color_frames[0], suite.cells, suite.compactness, cfg.rng_seed)
    l_prev, l_hat = scene_label_maps(sc, seed, evidence_noise=suite.evidence_noise)
    t0 = time.perf_counter()
    res = estimate(sc.frames[0], sc.frames[1], seg, l_prev, l_hat, sc.table, cfg,
                   fundamental=sc.F, threads=suite.threads)
    secs = time.perf_counter() - t0
    g = sc.gt_flow
    epe = np.hypot(res.flow.u - g.u, res.flow.v - g.v)
    noc = in_frame(g) & ~sc.gt_occlusion
    bg = noc & ~sc.foreground
    return SceneRun(
        template=template, seed=seed,
        acc=float((epe[noc] < EPE_GOOD).mean()),
        bg_epe=float(epe[bg].mean()),
        occ_f1=occlusion_f1(res.occlusion.mask, sc.gt_occlusion),
        iou=evaluate_iou(res.labels, sc.gt_labels[1]).meanIou,
        evidence_iou=evaluate_iou(l_hat, sc.gt_labels[1]).meanIou,
        totals=[res.initial.total] + [e.total for e in res.trace],
        seconds=secs, result=res,
    )
