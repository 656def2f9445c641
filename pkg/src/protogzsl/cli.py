"""Command-line entry point.

Commands: synth, train, train-gen, eval, grid, select, inspect. Every
artifact-writing run drops a run.json with the fully resolved settings
(defaults + config file + --set overrides) so it can be reproduced bit for
bit. Exit codes: 0 success, 2 validation/usage error, 1 runtime error.
"""

import argparse
import json
import os
import sys

from . import __version__, kernels
from .data import (BundleFormatError, BundleValidationError, load_bundle,
                   load_generated, preprocess_features, read_manifest,
                   save_bundle, save_generated, synth_benchmark)
from .evaluation import entropy_gap_samples, gzsl_report, spce_values
from .losses import LossConfig, select_generated
from .proto import DistanceSpec, embed_prototypes, target_set
from .train import (TrainConfig, grid_search_lambda1, load_checkpoint,
                    save_checkpoint, train_deterministic,
                    train_with_generated)


class ConfigError(Exception):
    pass


def _merge_config(cfg_dict, updates, path=""):
    """Merge a nested dict of overrides into a TrainConfig dict, rejecting
    keys that name no existing field."""
    for key, value in updates.items():
        where = f"{path}{key}"
        if key not in cfg_dict:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(cfg_dict[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} expects a nested object")
            _merge_config(cfg_dict[key], value, where + ".")
        else:
            cfg_dict[key] = value
    return cfg_dict


def _parse_set(entries):
    """Turn repeated --set dot.path=value flags into a nested dict."""
    out = {}
    for entry in entries or []:
        if "=" not in entry:
            raise ConfigError(f"--set needs key=value, got {entry!r}")
        key, raw = entry.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def resolve_train_config(config_path, set_entries):
    """defaults -> config file -> --set overrides, all validated."""
    cfg_dict = TrainConfig().to_dict()
    if config_path:
        try:
            with open(config_path) as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{config_path}: invalid JSON ({e})")
        _merge_config(cfg_dict, file_cfg)
    _merge_config(cfg_dict, _parse_set(set_entries))
    try:
        return TrainConfig.from_dict(cfg_dict)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}")


def _write_run_json(out_dir, command, payload):
    os.makedirs(out_dir, exist_ok=True)
    doc = {"command": command, "package_version": __version__,
           "kernel_backend": kernels.BACKEND}
    doc.update(payload)
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_bundle_for_training(data_dir, preprocess):
    bundle = load_bundle(data_dir)
    if preprocess != "none":
        bundle = preprocess_features(bundle, preprocess)
    return bundle


def _write_report(report, out_dir):
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _train_command(args, with_generated):
    cfg = resolve_train_config(args.config, args.set)
    bundle = _load_bundle_for_training(args.data, args.preprocess)
    os.makedirs(args.out, exist_ok=True)
    payload = {"data": args.data, "preprocess": args.preprocess,
               "resolved_config": cfg.to_dict()}
    if with_generated:
        gen = load_generated(args.generated, bundle)
        payload["generated"] = args.generated
        net, history = train_with_generated(bundle, gen, cfg)
    else:
        net, history = train_deterministic(bundle, cfg)
    _write_run_json(args.out, "train-gen" if with_generated else "train",
                    payload)
    save_checkpoint(net, cfg, os.path.join(args.out, "checkpoint"),
                    step=len(history))
    history.to_csv(os.path.join(args.out, "history.csv"))
    report = gzsl_report(net, bundle, cfg.distance)
    _write_report(report, args.out)
    print(f"ts={report.ts:.2f} tr={report.tr:.2f} H={report.h:.2f} "
          f"zsl={report.zsl:.2f}")
    return 0


def cmd_synth(args):
    bundle = synth_benchmark(args.seed, S=args.classes_source,
                             T=args.classes_target, Q=args.attr_dim,
                             P=args.feature_dim,
                             n_per_class=args.n_per_class,
                             noise_sigma=args.noise_sigma)
    save_bundle(bundle, args.out)
    _write_run_json(args.out, "synth", {
        "resolved_config": {"seed": args.seed, "S": args.classes_source,
                            "T": args.classes_target, "Q": args.attr_dim,
                            "P": args.feature_dim,
                            "n_per_class": args.n_per_class,
                            "noise_sigma": args.noise_sigma}})
    dims = bundle.dims()
    print(", ".join(f"{k}={dims[k]}" for k in ("N", "P", "Q", "S", "T")))
    return 0


def cmd_train(args):
    return _train_command(args, with_generated=False)


def cmd_train_gen(args):
    return _train_command(args, with_generated=True)


def cmd_eval(args):
    net, cfg, _ = load_checkpoint(args.checkpoint)
    cfg = resolve_train_config(None, args.set) if args.set else cfg
    bundle = _load_bundle_for_training(args.data, args.preprocess)
    os.makedirs(args.out, exist_ok=True)
    report = gzsl_report(net, bundle, cfg.distance)
    _write_run_json(args.out, "eval", {
        "data": args.data, "checkpoint": args.checkpoint,
        "preprocess": args.preprocess, "resolved_config": cfg.to_dict()})
    _write_report(report, args.out)
    gaps = entropy_gap_samples(net, bundle.X[bundle.train_idx], bundle,
                               cfg.distance)
    with open(os.path.join(args.out, "entropy_gaps.csv"), "w") as fh:
        fh.write("gap\n")
        for g in gaps:
            fh.write(f"{g!r}\n")
    vals = spce_values(net, bundle, cfg.distance)
    with open(os.path.join(args.out, "spce_values.csv"), "w") as fh:
        fh.write("class_id,reg_ce\n")
        for c, v in zip(bundle.target_ids, vals):
            fh.write(f"{c},{v!r}\n")
    print(f"ts={report.ts:.2f} tr={report.tr:.2f} H={report.h:.2f} "
          f"zsl={report.zsl:.2f}")
    return 0


def cmd_grid(args):
    cfg = resolve_train_config(args.config, args.set)
    bundle = _load_bundle_for_training(args.data, args.preprocess)
    grid = [float(tok) for tok in args.grid.split(",") if tok]
    best, rows = grid_search_lambda1(bundle, cfg, grid)
    os.makedirs(args.out, exist_ok=True)
    _write_run_json(args.out, "grid", {
        "data": args.data, "grid": grid, "preprocess": args.preprocess,
        "resolved_config": cfg.to_dict()})
    with open(os.path.join(args.out, "lambda1_table.json"), "w") as fh:
        json.dump({"best_lambda1": best, "rows": rows}, fh, indent=2)
        fh.write("\n")
    print(f"best lambda1 = {best}")
    for row in rows:
        print(f"  lambda1={row['lambda1']:<8g} val_H={row['val_h']:.2f}")
    return 0


def cmd_select(args):
    net, cfg, _ = load_checkpoint(args.checkpoint)
    bundle = _load_bundle_for_training(args.data, args.preprocess)
    if args.set:
        merged = _merge_config(cfg.to_dict(), _parse_set(args.set))
        cfg = TrainConfig.from_dict(merged)
    gen = load_generated(args.generated, bundle)
    z = embed_prototypes(net, bundle.V)
    tgt = target_set(bundle.n_source, bundle.n_target)
    kept = select_generated(gen, z, tgt, cfg.distance, cfg.loss)
    os.makedirs(args.out, exist_ok=True)
    _write_run_json(args.out, "select", {
        "data": args.data, "checkpoint": args.checkpoint,
        "generated": args.generated, "preprocess": args.preprocess,
        "resolved_config": cfg.to_dict()})
    counts = {"kept": int(kept.m), "rejected": int(gen.m - kept.m),
              "margin4": cfg.loss.margin4}
    with open(os.path.join(args.out, "selection.json"), "w") as fh:
        json.dump(counts, fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_generated(kept, os.path.join(args.out, "selected"),
                   preprocessing=bundle.preprocessing)
    print(f"kept {counts['kept']} / {gen.m} (margin4={counts['margin4']})")
    return 0


def cmd_inspect(args):
    manifest = read_manifest(args.data)
    dims = manifest["dims"]
    print(", ".join(f"{k}={dims[k]}" for k in ("N", "P", "Q", "S", "T")))
    prep = manifest.get("preprocessing", {})
    print(f"preprocessing: {prep.get('mode', 'none')}")
    if "scale" in prep:
        print(f"scale: {prep['scale']}")
    prov = manifest.get("provenance", {})
    if prov:
        print(f"provenance: {json.dumps(prov, sort_keys=True)}")
    return 0


def _add_train_like(sub, name, helptext, generated=False):
    p = sub.add_parser(name, help=helptext)
    p.add_argument("--data", required=True, help="bundle directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field by dot path")
    p.add_argument("--preprocess", default="none",
                   choices=("none", "max_norm_scale"))
    p.add_argument("--out", required=True, help="output directory")
    if generated:
        p.add_argument("--generated", required=True,
                       help="generated-set directory")
    return p


def build_parser():
    parser = argparse.ArgumentParser(
        prog="protogzsl",
        description="Prototype-based GZSL trainer with "
                    "information-theoretic losses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic benchmark bundle")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes-source", type=int, default=12)
    p.add_argument("--classes-target", type=int, default=4)
    p.add_argument("--attr-dim", type=int, default=16)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--n-per-class", type=int, default=150)
    p.add_argument("--noise-sigma", type=float, default=0.15)
    p.set_defaults(func=cmd_synth)

    _add_train_like(sub, "train", "train on seen data").set_defaults(
        func=cmd_train)
    _add_train_like(sub, "train-gen", "train with generated data",
                    generated=True).set_defaults(func=cmd_train_gen)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--preprocess", default="none",
                   choices=("none", "max_norm_scale"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = _add_train_like(sub, "grid", "lambda1 grid search")
    p.add_argument("--grid", default="0.025,0.05,0.5,1.0",
                   help="comma-separated lambda1 values")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("select", help="filter a generated set")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--preprocess", default="none",
                   choices=("none", "max_norm_scale"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("inspect", help="print a bundle's manifest dims")
    p.add_argument("data", help="bundle directory")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, BundleFormatError, BundleValidationError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - runtime failures exit 1
        print(f"runtime error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
