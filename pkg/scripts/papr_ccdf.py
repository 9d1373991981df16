"""PAPR CCDF of equal-power and optimized 16QAM allocations."""
import argparse
from pathlib import Path

from ccpa.xprt import allocate, build_spec, load_channels, load_config, run_papr

ROOT = Path(__file__).resolve().parents[1]

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--config", default=ROOT / "configs" / "verification_16qam.yaml")
ap.add_argument("--out", default="results/papr")
ap.add_argument("--blocks", type=int, default=100000)
args = ap.parse_args()

base = load_config(args.config, papr_blocks=args.blocks)
chan = load_channels(base)[0]
for label, method, K in (("ep", "ep", base.K), (f"scagp_K{base.K}", "scagp", base.K),
                         ("scagp_K1", "scagp", 1)):
    cfg = base.replace(K=K, out_dir=str(Path(args.out) / label))
    P, _ = allocate(method, chan, build_spec(cfg), cfg)
    res = run_papr(cfg, P=P)
    print(f"{label:>10}: CCDF 0.1 knee {res['knee_db']:.2f} dB")
