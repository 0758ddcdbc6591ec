"""Grid search of energy weights on held-out synthetic two-plane scenes.

Seeds 100 and up are used for tuning so the acceptance seeds stay unseen.

    python3 scripts/tune_defaults.py --seeds 100 101 102 103 104 105
"""
import argparse
import itertools
import time

import numpy as np

from jointflow.metrics import in_frame, occlusion_f1
from jointflow.model import EnergyConfig
from jointflow.pipeline import estimate
from jointflow.superpixels import compute_superpixels
from jointflow.testkit import scene_label_maps, template_scene


def score(cfg, seed, cells=20):
    sc = template_scene("two-plane", seed)
    seg = compute_superpixels(sc.color_frames[0], cells, 0.3)
    l_prev, l_hat = scene_label_maps(sc, seed)
    res = estimate(sc.frames[0], sc.frames[1], seg, l_prev, l_hat, sc.table, cfg, fundamental=sc.F)
    g = sc.gt_flow
    epe = np.hypot(res.flow.u - g.u, res.flow.v - g.v)
    noc = in_frame(g) & ~sc.gt_occlusion
    return float((epe[noc] < 0.5).mean()), occlusion_f1(res.occlusion.mask, sc.gt_occlusion)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(100, 106)))
    ap.add_argument("--lambda-C", type=float, nargs="+", default=[0.1, 0.3])
    ap.add_argument("--lambda-o", type=float, nargs="+", default=[6.0, 12.0])
    ap.add_argument("--lambda-occ", type=float, nargs="+", default=[1.5, 2.0])
    ap.add_argument("--cells", type=int, nargs="+", default=[20])
    args = ap.parse_args()
    for cells, lc, lo, locc in itertools.product(args.cells, args.lambda_C, args.lambda_o, args.lambda_occ):
        cfg = EnergyConfig(lambda_C=lc, lambda_o=lo, lambda_occ=locc, max_disp=16)
        t = time.time()
        rows = [score(cfg, s, cells) for s in args.seeds]
        acc, f1 = np.array(rows).T
        print(f"cells={cells} lambda_C={lc:g} lambda_o={lo:g} lambda_occ={locc:g}  "
              f"acc mean {acc.mean():.3f} min {acc.min():.3f}  f1 mean {f1.mean():.3f} min {f1.min():.3f}  "
              f"({time.time() - t:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
