"""Optimize with SCAGP, then run the full turbo chain at that allocation and
compare measured equalizer MI with the semi-analytic prediction."""
import argparse
from pathlib import Path

import numpy as np

from ccpa.xprt import load_config, run_optimize, run_trajectory

ROOT = Path(__file__).resolve().parents[1]

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--config", default=ROOT / "configs" / "verification_qpsk.yaml")
ap.add_argument("--out", default="results/verification")
ap.add_argument("--seed", type=int)
args = ap.parse_args()

cfg = load_config(args.config, out_dir=args.out, seed=args.seed, method="scagp")
opt = run_optimize(cfg)
print(f"SCAGP allocation: {opt['snr_db']:.3f} dB")
tr = run_trajectory(cfg.replace(allocation_file=str(Path(args.out) / "powers.csv")))
rec, pred = tr["record"], tr["prediction"]
for i in range(rec.I_eq.shape[0]):
    cells = "  ".join(f"u{u + 1}: {rec.I_dec[i, u]:.4f}/{rec.I_eq[i, u]:.4f} (pred {pred[i, u, 1]:.4f})"
                      for u in range(rec.I_eq.shape[1]))
    print(f"iter {i + 1:2d}  {cells}")
print(f"min measured - predicted: {np.min(rec.I_eq - pred[:, :, 1]):+.4f}")
