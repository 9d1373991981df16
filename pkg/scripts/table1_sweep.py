"""SNR and predicted iteration counts over the detection-margin sweep, every
method, on the checked-in channel."""
import argparse
from pathlib import Path

from ccpa.errors import InfeasibleError
from ccpa.xprt import load_config, run_sweep

ROOT = Path(__file__).resolve().parents[1]

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--config", default=ROOT / "configs" / "table1.yaml")
ap.add_argument("--out", default="results/table1")
ap.add_argument("--threads", type=int, default=1)
args = ap.parse_args()

cfg = load_config(args.config, out_dir=args.out, threads=args.threads)
try:
    rows = run_sweep(cfg)["rows"]
except InfeasibleError as exc:
    raise SystemExit(f"infeasible: {exc}")
print(f"{'eps':>6} {'method':>7} {'SNR dB':>8}  iterations")
for value, method, _, snr, *_, iters, _, status in rows:
    print(f"{value:>6} {method:>7} {snr:8.3f}  {iters} {'' if status == 'ok' else status}")
print(f"wrote {Path(args.out) / 'sweep.csv'}")
