"""Train with leaking metadata, evaluate without it, and compare against the image-only twin.

    python scripts/metadata_shortcut.py --out runs/metadata_shortcut
"""
import argparse
import json
import sys
from pathlib import Path

from pasturefuse.config import load_config
from pasturefuse.experiment import run_experiment

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/metadata_shortcut")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    results = {}
    for variant in ("on", "off"):
        cfg = load_config(CONFIGS / f"metadata_{variant}.toml")
        results[variant] = run_experiment(cfg, out / variant, workers=args.workers)
    for variant, res in results.items():
        scores = [round(f["weighted_r2"], 4) for f in res["folds"]]
        print(f"metadata={variant:<3} mean {res['aggregate']['mean']:.4f} folds {scores}")
    on, off = (results[v]["aggregate"]["mean"] for v in ("on", "off"))
    verdict = {"metadata_on_eval_absent": on, "metadata_off": off, "shortcut_hurts": on < off}
    (out / "comparison.json").write_text(json.dumps(verdict, indent=2) + "\n")
    print(json.dumps(verdict))
    return 0


if __name__ == "__main__":
    sys.exit(main())
