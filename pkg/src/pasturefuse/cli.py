"""``pasturefuse`` command-line entry point."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import tomli

from .audit import full_audit, gradient_suite
from .autodiff import ConfigurationError
from .config import OUTPUT_ENV, ExperimentConfig, build, load_config
from .data.manifest import ManifestError, load_manifest
from .data.splits import stratified_group_kfold
from .data.synth import SynthSpec, synth_dataset, write_synth
from .experiment import load_dataset, run_experiment
from .features import correlation_rows, correlations_csv, feature_rows, features_csv
from .fusion import KINDS


def _out_root(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ENV, "runs")) / default_name


def _records(args):
    """Records plus image root, from a positional manifest or a config's dataset."""
    if getattr(args, "manifest", None):
        return load_manifest(args.manifest), Path(args.manifest).parent, None
    if not args.config:
        raise ConfigurationError("give a manifest path or --config")
    cfg = load_config(args.config)
    if cfg.dataset.source == "manifest":
        return load_manifest(cfg.dataset.manifest), Path(cfg.dataset.manifest).parent, cfg
    records, images, _ = load_dataset(cfg)
    return records, images, cfg


def cmd_splits(args) -> int:
    records, _, cfg = _records(args)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 17)
    n_folds = args.folds or (cfg.n_folds if cfg else 5)
    folds = stratified_group_kfold(records, n_folds, seed)
    out = Path(args.out) if args.out else _out_root(args, "splits") / "folds.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(folds.to_csv(), encoding="utf-8")
    hist = folds.bin_histograms(records)
    print(f"seed {seed}, {len(records)} samples, {n_folds} folds -> {out}")
    print("fold  size  " + "  ".join(f"bin{b}" for b in range(hist.shape[1])))
    for k, size in enumerate(folds.fold_sizes(records)):
        print(f"{k:>4}  {size:>4}  " + "  ".join(f"{c:>4}" for c in hist[k]))
    return 0


def cmd_params(args) -> int:
    d_model, depth, hidden, meta = args.d_model, args.depth, args.head_hidden, args.metadata
    kinds = KINDS if args.kind == "all" else (args.kind,)
    primary = "gated_dwconv" if args.kind == "all" else args.kind
    if args.config:
        cfg = load_config(args.config)
        d_model, depth = cfg.fusion.d_model, cfg.fusion.depth
        hidden, meta = cfg.model.head_hidden, cfg.model.metadata
        if args.kind == "all":
            primary = cfg.fusion.kind
    start = time.perf_counter()
    rows = full_audit(kinds, d_model, depth, hidden, meta, primary)
    for r in rows:
        print(r.fmt())
    bad = [r for r in rows if not r.consistent]
    print(f"{len(rows)} rows, {len(bad)} mismatches, {time.perf_counter() - start:.2f}s")
    return 1 if bad else 0


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.precision:
        cfg.precision = args.precision
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    if not args.config:
        raise ConfigurationError("run needs --config")
    cfg = _apply_overrides(load_config(args.config), args)
    out = cfg.resolved_output(args.out)

    def log(msg):
        print(msg, flush=True)

    result = run_experiment(cfg, out, workers=args.workers, log=None if args.quiet else log)
    for f in result["folds"]:
        if f["status"] == "ok":
            print(f"fold {f['fold']}: weighted R2 {f['weighted_r2']:.4f} "
                  f"(median baseline {f['median_baseline']['weighted_r2']:.4f})")
        else:
            print(f"fold {f['fold']}: ABORTED {f['error']}")
    agg = result["aggregate"]
    if agg:
        cv = "n/a" if agg["cv_percent"] is None else f"{agg['cv_percent']:.1f}%"
        print(f"aggregate: mean {agg['mean']:.4f} std {agg['std']:.4f} cv {cv}")
    print(f"status {result['status']}, wrote {out}")
    return 0 if result["status"] == "complete" else 1


def cmd_features(args) -> int:
    records, root, _ = _records(args)
    if isinstance(root, dict):  # in-memory synthetic images
        images = root
        rows = feature_rows(records, ".", loader=lambda p: images[Path(p).stem])
    else:
        rows = feature_rows(records, root)
    corr = correlation_rows(rows, records)
    out = _out_root(args, "features")
    out.mkdir(parents=True, exist_ok=True)
    (out / "features.csv").write_text(features_csv(rows), encoding="utf-8")
    (out / "correlations.csv").write_text(correlations_csv(corr), encoding="utf-8")
    for c in corr:
        val = f"{c['rho']:+.3f}" if c["rho"] is not None else f"error: {c['error']}"
        print(f"{c['feature']:<11} {c['target']:<7} n={c['n']:<5} rho {val}")
    n_bad = sum(bool(r["error"]) for r in rows) + sum(bool(c["error"]) for c in corr)
    print(f"wrote {out} ({n_bad} error rows)")
    return 1 if n_bad else 0


def load_synth_spec(path) -> SynthSpec:
    raw = tomli.loads(Path(path).read_text(encoding="utf-8"))
    raw = raw.get("synth", raw)
    return build(SynthSpec, raw, "synth")


def cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec) if args.spec else SynthSpec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out = _out_root(args, "synth")
    manifest = write_synth(spec, out)
    records = load_manifest(manifest)
    print(f"wrote {len(records)} samples to {out}")
    return 0


def cmd_grad_check(args) -> int:
    start = time.perf_counter()
    results = gradient_suite(seed=args.seed or 0, include_model=not args.no_model)
    failed = 0
    for name, shape, rep in results:
        failed += not rep.passed
        print(f"{'PASS' if rep.passed else 'FAIL'}  {name:<34} {shape:<22} max rel err {rep.max_rel_err:.2e}")
    print(f"{len(results)} cases, {failed} failed, {time.perf_counter() - start:.1f}s")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment TOML")
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument("--out", help=f"output path (default: ${OUTPUT_ENV} or ./runs)")
    common.add_argument("--workers", type=int, default=1, help="parallel fold workers")
    common.add_argument("--precision", choices=("f32", "f64"), default=None)

    p = argparse.ArgumentParser(prog="pasturefuse", description="Dual-view pasture biomass regression toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("splits", parents=[common], help="write stratified group k-fold assignment")
    s.add_argument("manifest", nargs="?")
    s.add_argument("--folds", type=int, default=None)
    s.set_defaults(func=cmd_splits)

    s = sub.add_parser("params", parents=[common], help="audit parameter counts")
    s.add_argument("--kind", choices=("all",) + KINDS, default="all")
    s.add_argument("--d-model", type=int, default=1024)
    s.add_argument("--depth", type=int, default=2)
    s.add_argument("--head-hidden", type=int, default=512)
    s.add_argument("--metadata", action="store_true")
    s.set_defaults(func=cmd_params)

    s = sub.add_parser("run", parents=[common], help="run a cross-validated experiment")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("features", parents=[common], help="colour indices and rank correlations")
    s.add_argument("manifest", nargs="?")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("spec", nargs="?", help="TOML with SynthSpec keys (top level or [synth])")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient suite")
    s.add_argument("--no-model", action="store_true", help="skip end-to-end model cases")
    s.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
