"""Command-line entry point: key=value configs in, CSV/SVG artifacts out.

Subcommands: gen-data, train, mae-curve, ablation, calibrate. Every run
writes a manifest.txt with the fully resolved configuration, and all
randomness derives from the single seed via named streams, so reruns with
the same seed reproduce every CSV byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import plots, seeding
from .bags import load_dataset, save_dataset
from .experiments import (
    DatasetConfig,
    ablation_grid,
    build_dataset,
    calibration_curve,
    confidence_histogram,
    mae_vs_sample_size,
    parse_method,
    write_results_csv,
    write_summary_csv,
)
from .model import save_checkpoint
from .trainer import (
    METHODS,
    TrainConfig,
    evaluate_instance_accuracy,
    evaluate_mdice,
    run_training,
    write_trace_csv,
)


class CliError(Exception):
    """User-facing failure; message goes to stderr, exit status 1."""


# -- config parsing -----------------------------------------------------------


def _int(text):
    return int(text)


def _float(text):
    return float(text)


def _str(text):
    return text


def _int_list(text):
    return [int(v.strip()) for v in text.split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


DATASET_KEYS = {
    "classes": (_int, 10),
    "dim": (_int, 16),
    "instances_per_class": (_int, 400),
    "separation": (_float, 4.0),
    "num_bags": (_int, 100),
    "bag_size": (_int, 200),
    "proportion_sd": (_float, 0.1),
    "heldout_instances": (_int, 2000),
}

TRAIN_KEYS = {
    "method": (_str, "pl"),
    "gaussian_sd": (_float, 0.05),
    "sample_size": (_int, 12),
    "batch_bags": (_int, 8),
    "epochs": (_int, 50),
    "learning_rate": (_float, 1e-4),
    "momentum": (_float, 0.0),
    "hidden_units": (_int, 64),
    "validation_fraction": (_float, 0.2),
}

SEED_KEY = {"seed": (_int, 0)}

SCHEMAS = {
    "gen-data": {**DATASET_KEYS, **SEED_KEY},
    "train": {**DATASET_KEYS, **TRAIN_KEYS, **SEED_KEY, "dataset_dir": (_str, "")},
    "mae-curve": {
        **DATASET_KEYS,
        **SEED_KEY,
        "sample_sizes": (_int_list, [12, 25, 50, 100, 150, 200]),
        "draws_per_point": (_int, 40),
    },
    "ablation": {
        **DATASET_KEYS,
        **{k: v for k, v in TRAIN_KEYS.items() if k not in ("method", "sample_size")},
        "methods": (_str_list, ["pl", "perturb", "perturb_lw"]),
        "sample_sizes": (_int_list, [12, 25, 50, 100, 150, 200]),
        "seeds": (_int_list, [0, 1, 2, 3, 4]),
    },
    "calibrate": {**DATASET_KEYS, **TRAIN_KEYS, **SEED_KEY, "histogram_bins": (_int, 20)},
}


def read_config_file(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    raw = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got '{stripped}'")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in raw:
            raise CliError(f"{path}:{lineno}: duplicate config key '{key}'")
        raw[key] = value.strip()
    return raw


def resolve_config(subcommand: str, raw: dict[str, str]) -> dict:
    schema = SCHEMAS[subcommand]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise CliError(f"unknown config key(s) for {subcommand}: {', '.join(unknown)}")
    resolved = {}
    for key, (parse, default) in schema.items():
        if key in raw:
            try:
                resolved[key] = parse(raw[key])
            except ValueError:
                raise CliError(f"invalid config value for key '{key}': '{raw[key]}'")
        else:
            resolved[key] = default
    return resolved


def _fmt_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


def write_manifest(out_dir: Path, subcommand: str, resolved: dict):
    lines = [f"command = {subcommand}"]
    for key in sorted(resolved):
        lines.append(f"{key} = {_fmt_value(resolved[key])}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def prepare_outdir(out, force: bool) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if (out / "manifest.txt").exists() and not force:
        raise CliError(
            f"output directory {out} already holds a run (manifest.txt); pass --force to overwrite"
        )
    return out


def _dataset_config(cfg: dict) -> DatasetConfig:
    return DatasetConfig(
        num_classes=cfg["classes"],
        dim=cfg["dim"],
        instances_per_class=cfg["instances_per_class"],
        separation=cfg["separation"],
        num_bags=cfg["num_bags"],
        bag_size=cfg["bag_size"],
        proportion_sd=cfg["proportion_sd"],
        heldout_instances=cfg["heldout_instances"],
    )


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    if cfg["method"] not in METHODS:
        raise CliError(f"invalid config value for key 'method': '{cfg['method']}'")
    return TrainConfig(
        method=cfg["method"],
        sample_size=cfg["sample_size"],
        gaussian_sd=cfg["gaussian_sd"],
        batch_bags=cfg["batch_bags"],
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        momentum=cfg["momentum"],
        hidden_units=cfg["hidden_units"],
        validation_fraction=cfg["validation_fraction"],
        seed=seed,
    )


def _write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


# -- subcommands --------------------------------------------------------------


def cmd_gen_data(cfg: dict, out: Path):
    seed = cfg["seed"]
    _, bags, heldout = build_dataset(_dataset_config(cfg), seed)
    save_dataset(out, bags, heldout, meta={"seed": seed, "separation": cfg["separation"]})
    print(f"wrote {len(bags)} bags and {len(heldout)} heldout instances to {out}")


def cmd_train(cfg: dict, out: Path):
    seed = cfg["seed"]
    if cfg["dataset_dir"]:
        bags, heldout, _ = load_dataset(cfg["dataset_dir"])
    else:
        _, bags, heldout = build_dataset(_dataset_config(cfg), seed)
    if cfg["sample_size"] > min(bag.size for bag in bags):
        raise CliError(
            f"invalid config value for key 'sample_size': {cfg['sample_size']} exceeds bag size"
        )
    params, trace = run_training(bags, heldout, _train_config(cfg, seed))
    write_trace_csv(trace, out / "trace.csv")
    save_checkpoint(params, out / "checkpoint.txt", seed=seed, epoch=trace.best_epoch)
    best = trace.records[trace.best_epoch]
    _write_csv(
        out / "metrics.csv",
        ["test_acc", "test_mdice", "best_epoch", "best_val_loss"],
        [
            [
                repr(evaluate_instance_accuracy(params, heldout)),
                repr(evaluate_mdice(params, heldout)),
                trace.best_epoch,
                repr(best.val_prop_loss),
            ]
        ],
    )
    plots.trace_svg(trace, out / "trace.svg", title=cfg["method"])
    print(f"best epoch {trace.best_epoch}, outputs in {out}")


def cmd_mae_curve(cfg: dict, out: Path):
    seed = cfg["seed"]
    if max(cfg["sample_sizes"]) > cfg["bag_size"]:
        raise CliError(
            f"invalid config value for key 'sample_sizes': "
            f"{max(cfg['sample_sizes'])} exceeds bag_size {cfg['bag_size']}"
        )
    _, bags, _ = build_dataset(_dataset_config(cfg), seed)
    curve = mae_vs_sample_size(
        bags, cfg["sample_sizes"], cfg["draws_per_point"], seeding.stream(seed, "mae")
    )
    _write_csv(
        out / "mae_curve.csv",
        ["sample_size", "mae", "sd"],
        [[n, repr(m), repr(s)] for n, m, s in zip(curve.sample_sizes, curve.mae, curve.sd)],
    )
    plots.mae_curve_svg(curve, out / "mae_curve.svg")
    print(f"wrote MAE curve over {len(curve.sample_sizes)} sample sizes to {out}")


def cmd_ablation(cfg: dict, out: Path):
    if max(cfg["sample_sizes"]) > cfg["bag_size"]:
        raise CliError(
            f"invalid config value for key 'sample_sizes': "
            f"{max(cfg['sample_sizes'])} exceeds bag_size {cfg['bag_size']}"
        )
    for label in cfg["methods"]:
        method, _ = parse_method(label)
        if method not in METHODS:
            raise CliError(f"invalid config value for key 'methods': '{label}'")
    base = TrainConfig(
        batch_bags=cfg["batch_bags"],
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        momentum=cfg["momentum"],
        hidden_units=cfg["hidden_units"],
        validation_fraction=cfg["validation_fraction"],
        gaussian_sd=cfg["gaussian_sd"],
    )
    results = ablation_grid(
        _dataset_config(cfg), base, cfg["methods"], cfg["sample_sizes"], cfg["seeds"]
    )
    write_results_csv(results, out / "results.csv")
    write_summary_csv(results, out / "summary.csv")
    for r in results:
        label = r.method.replace(":", "-")
        plots.trace_svg(
            r.trace,
            out / f"trace_{label}_n{r.sample_size}_s{r.seed}.svg",
            title=f"{r.method} n={r.sample_size} seed={r.seed}",
        )
    print(f"wrote {len(results)} grid cells to {out}")


def cmd_calibrate(cfg: dict, out: Path):
    seed = cfg["seed"]
    _, bags, heldout = build_dataset(_dataset_config(cfg), seed)
    params, trace = run_training(bags, heldout, _train_config(cfg, seed))
    table = calibration_curve(params, heldout)
    _write_csv(
        out / "calibration.csv",
        ["bin_lo", "bin_hi", "mean_confidence", "accuracy", "count"],
        [
            [repr(float(lo)), repr(float(hi)), repr(float(mc)), repr(float(acc)), int(ct)]
            for lo, hi, mc, acc, ct in zip(
                table.edges[:-1], table.edges[1:], table.mean_confidence, table.accuracy, table.count
            )
        ],
    )
    counts, edges = confidence_histogram(params, heldout, cfg["histogram_bins"])
    _write_csv(
        out / "confidence_hist.csv",
        ["bin_lo", "bin_hi", "count"],
        [
            [repr(float(lo)), repr(float(hi)), int(ct)]
            for lo, hi, ct in zip(edges[:-1], edges[1:], counts)
        ],
    )
    write_trace_csv(trace, out / "trace.csv")
    plots.reliability_svg(table, out / "reliability.svg")
    plots.confidence_hist_svg(counts, edges, out / "confidence_hist.svg")
    print(f"wrote calibration outputs for method {cfg['method']} to {out}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "mae-curve": cmd_mae_curve,
    "ablation": cmd_ablation,
    "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bagprop",
        description="Train instance classifiers from bag-level label proportions "
        "via mini-bag sampling, and run the companion experiments.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    return parser


def parse_and_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        raw = read_config_file(Path(args.config))
        resolved = resolve_config(args.subcommand, raw)
        if args.seed is not None:
            if "seed" in SCHEMAS[args.subcommand]:
                resolved["seed"] = args.seed
            else:
                resolved["seeds"] = [args.seed]
        out = prepare_outdir(args.out, args.force)
        write_manifest(out, args.subcommand, resolved)
        COMMANDS[args.subcommand](resolved, out)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
