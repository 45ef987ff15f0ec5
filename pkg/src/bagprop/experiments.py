"""Statistical and learning experiments on synthetic bag data.

Covers the proportion-error curve over sample sizes, ablation grids across
training methods, confidence histograms, and calibration tables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import seeding
from .bags import (
    Bag,
    LabeledInstances,
    SyntheticDataset,
    generate_synthetic_dataset,
    make_bags,
    sample_minibag,
    true_minibag_proportion,
)
from .hypergeom import MultivariateHypergeometric
from .model import ClassifierParams, forward
from .trainer import (
    GAUSSIAN,
    PERTURB,
    PERTURB_LW,
    TrainConfig,
    TrainTrace,
    evaluate_instance_accuracy,
    evaluate_mdice,
    run_training,
)

CALIBRATION_BIN_WIDTH = 0.05


@dataclass
class DatasetConfig:
    num_classes: int = 10
    dim: int = 16
    instances_per_class: int = 400
    separation: float = 4.0
    num_bags: int = 100
    bag_size: int = 200
    proportion_sd: float = 0.1
    heldout_instances: int = 2000


def build_dataset(cfg: DatasetConfig, seed: int):
    """Pool, bags, and heldout instances, all derived from one seed."""
    dataset = generate_synthetic_dataset(
        cfg.num_classes,
        cfg.dim,
        cfg.instances_per_class,
        cfg.separation,
        seeding.stream(seed, "dataset"),
    )
    bags = make_bags(
        dataset, cfg.num_bags, cfg.bag_size, cfg.proportion_sd, seeding.stream(seed, "bags")
    )
    heldout = dataset.sample_heldout(cfg.heldout_instances, seeding.stream(seed, "heldout"))
    return dataset, bags, heldout


# -- proportion error vs sample size ----------------------------------------


@dataclass
class MaeCurve:
    sample_sizes: list[int]
    mae: list[float]
    sd: list[float]


def mae_vs_sample_size(
    bags: list[Bag],
    sample_sizes: list[int],
    draws_per_point: int,
    rng: np.random.Generator,
) -> MaeCurve:
    """Gap between mini-bag truth and the parent proportion, per sample size.

    For each size, every bag is sampled ``draws_per_point`` times; each draw
    contributes the mean over classes of the absolute proportion gap. No
    training is involved.
    """
    min_size = min(bag.size for bag in bags)
    maes, sds = [], []
    for n in sample_sizes:
        if n > min_size:
            raise ValueError(f"sample size {n} exceeds smallest bag size {min_size}")
        errors = np.empty(len(bags) * draws_per_point)
        i = 0
        for bag in bags:
            for _ in range(draws_per_point):
                minibag = sample_minibag(bag, n, rng)
                gap = true_minibag_proportion(bag, minibag) - bag.proportion
                errors[i] = np.abs(gap).mean()
                i += 1
        maes.append(float(errors.mean()))
        sds.append(float(errors.std()))
    return MaeCurve(sample_sizes=list(sample_sizes), mae=maes, sd=sds)


def exact_expected_mae(bag: Bag, n: int) -> float:
    """Expected proportion gap by full enumeration of the composition law."""
    dist = MultivariateHypergeometric(bag.class_counts, n)
    total = 0.0
    for k, prob in dist.enumerate_support():
        total += prob * float(np.abs(k / n - bag.proportion).mean())
    return total


# -- confidence diagnostics ---------------------------------------------------


def confidence_histogram(params: ClassifierParams, instances, num_bins: int = 20):
    """Histogram of per-instance maximum confidences over [0, 1].

    Returns (counts, bin edges); counts sum to the number of instances.
    """
    if num_bins < 1:
        raise ValueError("num_bins must be at least 1")
    features = instances.features if isinstance(instances, LabeledInstances) else instances
    top = forward(params, features).max(axis=1)
    counts, edges = np.histogram(top, bins=num_bins, range=(0.0, 1.0))
    return counts, edges


@dataclass
class CalibrationTable:
    """Per-bin mean confidence and accuracy of max-confidence predictions."""

    edges: np.ndarray
    mean_confidence: np.ndarray
    accuracy: np.ndarray
    count: np.ndarray

    def occupied_gap(self) -> float:
        """Mean |confidence - accuracy| over occupied bins."""
        mask = self.count > 0
        return float(np.abs(self.mean_confidence[mask] - self.accuracy[mask]).mean())


def calibration_curve(params: ClassifierParams, instances: LabeledInstances) -> CalibrationTable:
    """Reliability table with fixed-width confidence bins of 0.05.

    Each instance contributes its maximum confidence and whether the argmax
    prediction was correct; empty bins report NaN statistics.
    """
    if len(instances) == 0:
        raise ValueError("empty evaluation set")
    probs = forward(params, instances.features)
    preds = np.argmax(probs, axis=1)
    top = probs[np.arange(len(instances)), preds]
    correct = preds == instances.labels

    num_bins = int(round(1.0 / CALIBRATION_BIN_WIDTH))
    edges = np.linspace(0.0, 1.0, num_bins + 1)
    bin_idx = np.minimum((top / CALIBRATION_BIN_WIDTH).astype(int), num_bins - 1)
    mean_conf = np.full(num_bins, np.nan)
    accuracy = np.full(num_bins, np.nan)
    count = np.zeros(num_bins, dtype=np.int64)
    for b in range(num_bins):
        mask = bin_idx == b
        count[b] = int(mask.sum())
        if count[b]:
            mean_conf[b] = float(top[mask].mean())
            accuracy[b] = float(correct[mask].mean())
    return CalibrationTable(edges=edges, mean_confidence=mean_conf, accuracy=accuracy, count=count)


# -- ablation grid ------------------------------------------------------------


@dataclass
class CellResult:
    method: str
    sample_size: int
    seed: int
    test_acc: float
    test_mdice: float
    final_val_loss: float
    trace: TrainTrace = field(repr=False, default=None)
    params: ClassifierParams = field(repr=False, default=None)


def parse_method(label: str) -> tuple[str, float | None]:
    """Split a grid method label like ``gaussian:0.15`` into (method, sd)."""
    if label.startswith(GAUSSIAN + ":"):
        return GAUSSIAN, float(label.split(":", 1)[1])
    if label == GAUSSIAN:
        return GAUSSIAN, None
    return label, None


def ablation_grid(
    data_cfg: DatasetConfig,
    base_cfg: TrainConfig,
    methods: list[str],
    sample_sizes: list[int],
    seeds: list[int],
    skip_degenerate: bool = True,
) -> list[CellResult]:
    """Train every (method, sample size, seed) cell and collect metrics.

    Cells sharing a seed share the dataset, so method comparisons are
    paired. With ``skip_degenerate``, perturbation methods are skipped at
    the full bag size, where the drawn supervision is the parent proportion
    by construction.
    """
    results = []
    for seed in seeds:
        _, bags, heldout = build_dataset(data_cfg, seed)
        for n in sample_sizes:
            for label in methods:
                method, sd = parse_method(label)
                if skip_degenerate and n == data_cfg.bag_size and method in (PERTURB, PERTURB_LW):
                    continue
                cfg = replace(base_cfg, method=method, sample_size=n, seed=seed)
                if sd is not None:
                    cfg = replace(cfg, gaussian_sd=sd)
                params, trace = run_training(bags, heldout, cfg)
                results.append(
                    CellResult(
                        method=label,
                        sample_size=n,
                        seed=seed,
                        test_acc=evaluate_instance_accuracy(params, heldout),
                        test_mdice=evaluate_mdice(params, heldout),
                        final_val_loss=trace.records[trace.best_epoch].val_prop_loss,
                        trace=trace,
                        params=params,
                    )
                )
    return results


RESULTS_HEADER = ["method", "sample_size", "seed", "test_acc", "test_mdice", "final_val_loss"]


def write_results_csv(results: list[CellResult], path):
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in results:
            writer.writerow(
                [r.method, r.sample_size, r.seed]
                + [repr(v) for v in (r.test_acc, r.test_mdice, r.final_val_loss)]
            )


def summarize_results(results: list[CellResult]) -> list[tuple[str, int, float, float]]:
    """Mean test accuracy and mDice per (method, sample size), seeds pooled."""
    grouped: dict[tuple[str, int], list[CellResult]] = {}
    for r in results:
        grouped.setdefault((r.method, r.sample_size), []).append(r)
    summary = []
    for (method, n), cells in sorted(grouped.items()):
        summary.append(
            (
                method,
                n,
                float(np.mean([c.test_acc for c in cells])),
                float(np.mean([c.test_mdice for c in cells])),
            )
        )
    return summary


def write_summary_csv(results: list[CellResult], path):
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "sample_size", "mean_test_acc", "mean_test_mdice"])
        for method, n, acc, mdice in summarize_results(results):
            writer.writerow([method, n, repr(acc), repr(mdice)])
