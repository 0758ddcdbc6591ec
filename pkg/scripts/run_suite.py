"""Run the synthetic suite and print per-scene scores.

    python3 scripts/run_suite.py --templates two-plane static multi --seeds 0 1 2
"""
import argparse

import numpy as np

from jointflow.model import EnergyConfig
from jointflow.testkit import TEMPLATES, SuiteConfig, run_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--templates", nargs="+", choices=sorted(TEMPLATES), default=sorted(TEMPLATES))
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    ap.add_argument("--cells", type=int, default=SuiteConfig.cells)
    ap.add_argument("--evidence-noise", type=float, default=0.0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    suite = SuiteConfig(cells=args.cells, evidence_noise=args.evidence_noise, threads=args.threads)
    print("template   seed    acc  bgEPE  occF1    IoU  evIoU  monotone   secs")
    for t in args.templates:
        rows = []
        for s in args.seeds:
            r = run_scene(t, s, EnergyConfig(), suite)
            rows.append((r.acc, r.bg_epe, r.occ_f1, r.iou, r.evidence_iou))
            print(f"{t:9s} {s:5d} {r.acc:6.3f} {r.bg_epe:6.3f} {r.occ_f1:6.3f} {r.iou:6.3f} {r.evidence_iou:6.3f}"
                  f"  {'yes' if r.monotone_gap <= 1e-9 else 'NO':>8s} {r.seconds:6.1f}", flush=True)
        m = np.mean(rows, axis=0)
        print(f"{t:9s}  mean {m[0]:6.3f} {m[1]:6.3f} {m[2]:6.3f} {m[3]:6.3f} {m[4]:6.3f}")


if __name__ == "__main__":
    main()
