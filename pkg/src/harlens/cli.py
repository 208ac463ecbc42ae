"""Command-line entry point.

Subcommands: ingest, train, sweep, visualize, occlude, fuse, eval. Every
run writes a manifest.json with the fully resolved configuration so the
run can be reproduced exactly. Defaults come from a config file (--config,
JSON) when given; command-line flags win over the file.

The data root defaults to $HARLENS_DATA_ROOT.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import data, models, metrics, occlusion, fusion, introspect

DATA_ROOT_ENV = "HARLENS_DATA_ROOT"


class CliError(Exception):
    pass


def _base_parser(sub, name, help_text, needs_out=True):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", help="JSON config file with flag defaults")
    p.add_argument("--data-root", default=None,
                   help=f"UCI HAR root directory (default ${DATA_ROOT_ENV})")
    p.add_argument("--synthetic", action="store_true",
                   help="use a generated synthetic dataset instead of UCI HAR")
    p.add_argument("--classes", type=int, default=6,
                   help="synthetic class count (2-6)")
    p.add_argument("--per-class", dest="per_class", type=int, default=10,
                   help="synthetic windows per class / sampled windows per class")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    if needs_out:
        p.add_argument("--out", default="out", help="output directory")
    return p


def _add_net_flags(p):
    p.add_argument("--arch", choices=["cnn", "cnn-lstm"], default="cnn")
    p.add_argument("--depth", type=int, default=3, help="conv depth (1-5)")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--lstm-hidden", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--columns", default=None,
                   help="comma-separated column subset, e.g. 3,4,6,7")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harlens",
        description="HAR workbench: train, inspect, occlude, fuse, evaluate")
    sub = parser.add_subparsers(dest="command", required=True)

    _base_parser(sub, "ingest", "summarize a dataset (counts per split/class)",
                 needs_out=False)

    p = _base_parser(sub, "train", "train one model")
    _add_net_flags(p)

    p = _base_parser(sub, "sweep", "depth sweep: accuracy/F1 per conv depth")
    _add_net_flags(p)
    p.add_argument("--depths", default="1,2,3,4,5",
                   help="comma-separated conv depths")

    p = _base_parser(sub, "visualize", "render feature-map heatmaps")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--layers", default="3", help="layer list, e.g. 1,2,3")
    p.add_argument("--agg", default="meanabs",
                   choices=list(introspect.AGGREGATIONS))
    p.add_argument("--pixel-scale", type=int, default=introspect.DEFAULT_SCALE)

    p = _base_parser(sub, "occlude", "column-occlusion retention report")
    p.add_argument("--model", required=True, help="trained 9-column model file")
    p.add_argument("--threshold", type=float, default=0.60)
    p.add_argument("--max-cols", dest="max_cols", type=int, default=2)

    p = _base_parser(sub, "fuse", "train the three-model voting ensemble")
    _add_net_flags(p)
    p.add_argument("--derived-subsets", action="store_true",
                   help="experimental: derive m1/m2 subsets from an occlusion "
                        "report of Model-M instead of the published sets")

    p = _base_parser(sub, "eval", "evaluate a model or ensemble on the test split")
    p.add_argument("--model", default=None, help="trained model file")
    p.add_argument("--ensemble", default=None, help="ensemble directory")
    p.add_argument("--reference", default=None,
                   help="reference name for the comparison report "
                        "(cnn, cnn-lstm, fusion, ...)")
    return parser


def _resolve_config_file(args: argparse.Namespace, argv: list[str]) -> argparse.Namespace:
    """Apply config-file values for flags not given explicitly on the line."""
    if not getattr(args, "config", None):
        return args
    overrides = json.loads(Path(args.config).read_text())
    explicit = {a.split("=")[0].lstrip("-").replace("-", "_")
                for a in argv if a.startswith("--")}
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if attr in explicit or not hasattr(args, attr):
            continue
        setattr(args, attr, value)
    return args


def _data_root(args) -> Path:
    root = args.data_root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise CliError(
            f"no data root: pass --data-root or set ${DATA_ROOT_ENV} "
            "(or use --synthetic)")
    return Path(root)


def _load_splits(args):
    """(standardized train, standardized test) per the run flags."""
    if args.synthetic:
        train_raw = data.synthesize(args.classes, args.per_class, args.seed)
        test_raw = data.synthesize(args.classes, args.per_class, args.seed + 1)
    else:
        root = _data_root(args)
        train_raw = data.load_uci_har(root, "train")
        test_raw = data.load_uci_har(root, "test")
    train_std, stats = data.standardize(train_raw)
    test_std, _ = data.standardize(test_raw, stats)
    return train_std, test_std


def _network_config(args, columns=None) -> models.NetworkConfig:
    channels = len(columns) if columns else 9
    return models.NetworkConfig(
        input_channels=channels,
        conv_depth=args.depth,
        dropout_prob=args.dropout,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        lstm_hidden=args.lstm_hidden if args.arch == "cnn-lstm" else None,
        arch=args.arch,
        seed=args.seed,
    )


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise CliError(f"expected a comma-separated integer list, got {text!r}")


def _write_manifest(out_dir: Path, args, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items() if k != "config"}
    if extra:
        resolved.update(extra)
    (out_dir / "manifest.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True, default=str) + "\n")


def cmd_ingest(args) -> int:
    if args.synthetic:
        splits = {"synthetic": data.synthesize(args.classes, args.per_class,
                                               args.seed)}
    else:
        root = _data_root(args)
        splits = {s: data.load_uci_har(root, s) for s in ("train", "test")}
    for name, ds in splits.items():
        counts = ds.class_counts()
        print(f"{name}: {len(ds)} windows, {ds.num_channels} channels")
        for label, count in zip(data.ActivityLabel, counts):
            print(f"  {label.display_name:<12} {count}")
    return 0


def _history_csv(history, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "loss", "accuracy"])
        writer.writeheader()
        writer.writerows(history)


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    columns = _parse_int_list(args.columns) if args.columns else None
    train_std, _ = _load_splits(args)
    if columns:
        train_std = data.select_columns_dataset(train_std, columns)
    config = _network_config(args, columns)
    model = models.train_model(train_std, config,
                               column_subset=tuple(columns) if columns else None)
    _write_manifest(out_dir, args, {"resolved_config": asdict(config)})
    models.save_model(model, out_dir / "model.harm")
    _history_csv(model.history, out_dir / "history.csv")
    print(f"saved {out_dir / 'model.harm'} "
          f"({len(model.history)} epochs)")
    return 0


def cmd_sweep(args) -> int:
    out_dir = Path(args.out)
    depths = _parse_int_list(args.depths)
    if any(not 1 <= d <= 5 for d in depths):
        raise CliError(f"depths must be in 1..5: {depths}")
    train_std, test_std = _load_splits(args)
    config = _network_config(args)
    rows = models.run_depth_sweep(train_std, test_std, depths, config)
    _write_manifest(out_dir, args, {"resolved_config": asdict(config)})
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["depth", "accuracy", "macro_f1"])
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"depth {row['depth']}: accuracy {row['accuracy']:.4f} "
              f"macro-F1 {row['macro_f1']:.4f}")
    return 0


def cmd_visualize(args) -> int:
    out_dir = Path(args.out)
    model = models.load_model(args.model)
    _, test_std = _load_splits(args)
    if model.column_subset != tuple(range(9)):
        test_std = data.select_columns_dataset(test_std, model.column_subset)
    layers = _parse_int_list(args.layers)
    _write_manifest(out_dir, args)
    written = introspect.export_feature_maps(
        model, test_std, layers, per_class=args.per_class, seed=args.seed,
        out_dir=out_dir, aggregation=args.agg, scale=args.pixel_scale)
    print(f"wrote {len(written)} files to {out_dir}")
    return 0


def cmd_occlude(args) -> int:
    out_dir = Path(args.out)
    model = models.load_model(args.model)
    _, test_std = _load_splits(args)
    report = occlusion.occlusion_report(model, test_std, model_id=args.model)
    sig = occlusion.derive_significant_columns(report, args.threshold,
                                               args.max_cols)
    _write_manifest(out_dir, args)
    (out_dir / "occlusion.csv").write_text(occlusion.report_csv(report))
    listing = occlusion.format_significant(sig)
    (out_dir / "significant_columns.txt").write_text(listing + "\n")
    print(listing)
    return 0


def cmd_fuse(args) -> int:
    out_dir = Path(args.out)
    train_std, test_std = _load_splits(args)
    args.arch = "cnn-lstm"
    config = _network_config(args)
    subsets = (fusion.SUBSET_M, fusion.SUBSET_M1, fusion.SUBSET_M2)
    if args.derived_subsets:
        model_m = models.train_model(train_std, replace(config, seed=fusion.derive_seed(args.seed, 0)))
        report = occlusion.occlusion_report(model_m, test_std)
        sig = occlusion.derive_significant_columns(report, 0.60, 9)
        merged = sorted({c for cols in sig.columns.values() for c in cols})
        if len(merged) >= 2:
            half = sorted(merged)[:max(2, len(merged) // 2)]
            subsets = (fusion.SUBSET_M, tuple(merged), tuple(half))
    ensemble = fusion.train_fusion(train_std, config, subsets=subsets)
    _write_manifest(out_dir, args, {"resolved_config": asdict(config),
                                    "subsets": [list(s) for s in subsets]})
    fusion.save_ensemble(ensemble, out_dir)
    print(f"saved ensemble to {out_dir} (subsets {subsets})")
    return 0


def cmd_eval(args) -> int:
    if bool(args.model) == bool(args.ensemble):
        raise CliError("pass exactly one of --model or --ensemble")
    out_dir = Path(args.out)
    _, test_std = _load_splits(args)
    if args.model:
        model = models.load_model(args.model)
        if model.column_subset != tuple(range(9)):
            test_std = data.select_columns_dataset(test_std, model.column_subset)
        result = models.evaluate(model, test_std)
        default_ref = {"cnn": "cnn", "cnn-lstm": "cnn-lstm"}[model.config.arch]
    else:
        ensemble = fusion.load_ensemble(args.ensemble)
        result = fusion.evaluate_fusion(ensemble, test_std)
        default_ref = "fusion"
    _write_manifest(out_dir, args)
    cm = result["confusion"]
    (out_dir / "confusion.csv").write_text(metrics.confusion_csv(cm))
    lines = [f"accuracy {result['accuracy']:.4f}",
             f"macro-F1 {result['macro_f1']:.4f}", ""]
    if not args.synthetic:
        ref_name = args.reference or default_ref
        lines.append(metrics.compare_report(
            {ref_name: (result["accuracy"], result["macro_f1"])}))
        lines.append("")
    lines.append(metrics.format_confusion(cm))
    report = "\n".join(lines)
    (out_dir / "report.txt").write_text(report + "\n")
    print(report)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "visualize": cmd_visualize,
    "occlude": cmd_occlude,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _resolve_config_file(args, argv)
    try:
        return COMMANDS[args.command](args)
    except (CliError, data.DatasetError, models.ModelError,
            metrics.MetricsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
