"""Mini-bag training loop with per-iteration resampling and perturbation.

Each iteration draws a batch of bags, samples a fresh mini-bag from every
bag, assigns supervision according to the configured method, and takes one
gradient step on the (optionally weighted) proportion loss. The returned
parameters are the epoch snapshot with the lowest validation proportion
loss.

Methods:
  ``pl``          parent-bag proportion as a fixed target, unit weights
  ``perturb``     supervision drawn from the mini-bag composition law
  ``perturb_lw``  drawn supervision plus median-normalized PMF weights
  ``gaussian``    Gaussian-noised parent proportion, unit weights
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .bags import Bag, LabeledInstances, concat_instances, label_audit, sample_minibag
from .losses import (
    gaussian_perturb_supervision,
    normalize_weights,
    perturb_supervision,
    proportion_loss,
)
from .model import AdamOptimizer, SgdOptimizer, batch_gradient, forward, init_classifier

PL = "pl"
PERTURB = "perturb"
PERTURB_LW = "perturb_lw"
GAUSSIAN = "gaussian"
METHODS = (PL, PERTURB, PERTURB_LW, GAUSSIAN)


@dataclass
class TrainConfig:
    method: str = PL
    sample_size: int = 12
    gaussian_sd: float = 0.05
    batch_bags: int = 8
    epochs: int = 50
    learning_rate: float = 1e-4
    optimizer: str = "sgd"
    momentum: float = 0.0
    hidden_units: int = 64
    validation_fraction: float = 0.2
    seed: int = 0
    # trace evaluation reads at most this many training instances per epoch
    # (fixed seeded subsample); 0 means no cap
    train_eval_cap: int = 4000
    # fixed validation mini-bags drawn once per run; averaging several draws
    # per bag keeps epoch-to-epoch selection from tracking draw luck
    val_draws_per_bag: int = 4

    def validate(self, bags: list[Bag]):
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}'")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer '{self.optimizer}'")
        if self.batch_bags < 1:
            raise ValueError("batch_bags must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not bags:
            raise ValueError("no bags to train on")
        min_size = min(bag.size for bag in bags)
        if not (1 <= self.sample_size <= min_size):
            raise ValueError(
                f"sample_size {self.sample_size} exceeds smallest bag size {min_size}"
            )
        if not (0.0 < self.validation_fraction < 1.0):
            raise ValueError("validation_fraction must lie in (0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_prop_loss: float
    val_prop_loss: float
    train_acc: float
    test_acc: float
    test_mdice: float


@dataclass
class TrainTrace:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.records)


TRACE_HEADER = ["epoch", "train_prop_loss", "val_prop_loss", "train_acc", "test_acc", "test_mdice"]


def write_trace_csv(trace: TrainTrace, path):
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for r in trace.records:
            writer.writerow(
                [r.epoch]
                + [repr(v) for v in (r.train_prop_loss, r.val_prop_loss, r.train_acc, r.test_acc, r.test_mdice)]
            )


def _eval_probs32(params, x32: np.ndarray) -> np.ndarray:
    if params.w1 is None:
        act = x32
    else:
        act = np.maximum(x32 @ params.w1.astype(np.float32) + params.b1.astype(np.float32), 0)
    z = act @ params.w2.astype(np.float32) + params.b2.astype(np.float32)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _mdice_from_preds(preds, truth, num_classes) -> float:
    dices = []
    for c in range(num_classes):
        tp = int(np.sum((preds == c) & (truth == c)))
        fp = int(np.sum((preds == c) & (truth != c)))
        fn = int(np.sum((preds != c) & (truth == c)))
        if tp + fp + fn == 0:
            dices.append(1.0)
        else:
            dices.append(2 * tp / (2 * tp + fp + fn))
    return float(np.mean(dices))


def evaluate_instance_accuracy(params, instances: LabeledInstances) -> float:
    """Fraction of argmax predictions matching the true labels.

    Argmax ties resolve to the lowest class index.
    """
    if len(instances) == 0:
        raise ValueError("empty evaluation set")
    preds = np.argmax(forward(params, instances.features), axis=1)
    return float(np.mean(preds == instances.labels))


def evaluate_mdice(params, instances: LabeledInstances) -> float:
    """Mean per-class Dice coefficient 2TP / (2TP + FP + FN).

    A class absent from both predictions and truth counts as Dice 1.
    """
    if len(instances) == 0:
        raise ValueError("empty evaluation set")
    preds = np.argmax(forward(params, instances.features), axis=1)
    return _mdice_from_preds(preds, instances.labels, params.num_classes)


def _batch_supervision(bag, config, sup_rng):
    """Supervision target and raw weight for one bag per the method."""
    if config.method == PL:
        return bag.proportion, None
    if config.method == PERTURB:
        q, _ = perturb_supervision(bag, config.sample_size, sup_rng)
        return q, None
    if config.method == PERTURB_LW:
        q, raw_pmf = perturb_supervision(bag, config.sample_size, sup_rng)
        return q, raw_pmf
    if config.method == GAUSSIAN:
        return gaussian_perturb_supervision(bag, config.gaussian_sd, sup_rng), None
    raise ValueError(f"unknown method '{config.method}'")


def run_training(
    bags: list[Bag],
    heldout: LabeledInstances,
    config: TrainConfig,
):
    """Train a classifier from bags; returns (best params, trace).

    Bags are shuffled once and split 4:1 (per ``validation_fraction``) into
    train and validation. Every epoch visits each training bag once in a
    fresh shuffled order, in batches of ``batch_bags``. Validation loss is
    the proportion loss of unperturbed parent proportions on fresh
    validation mini-bags capped at the training sample size; the epoch with
    the lowest validation loss wins, earliest on ties.
    """
    config.validate(bags)
    n = config.sample_size

    split_rng = seeding.stream(config.seed, "split")
    order = split_rng.permutation(len(bags))
    num_val = max(1, round(len(bags) * config.validation_fraction))
    if num_val >= len(bags):
        raise ValueError("validation split leaves no training bags")
    val_bags = [bags[i] for i in order[:num_val]]
    train_bags = [bags[i] for i in order[num_val:]]

    params = init_classifier(
        heldout.dim, config.hidden_units, bags[0].num_classes, seeding.stream(config.seed, "init")
    )
    if config.optimizer == "adam":
        optimizer = AdamOptimizer(config.learning_rate)
    else:
        optimizer = SgdOptimizer(config.learning_rate, config.momentum)
    epoch_rng = seeding.stream(config.seed, "order")
    minibag_rng = seeding.stream(config.seed, "minibags")
    sup_rng = seeding.stream(config.seed, "supervision")
    val_rng = seeding.stream(config.seed, "validation")
    val_size = min(n, min(bag.size for bag in val_bags))
    val_minibags = [
        (bag, sample_minibag(bag, val_size, val_rng))
        for bag in val_bags
        for _ in range(max(1, config.val_draws_per_bag))
    ]
    val_flat = np.concatenate([bag.features[mb.indices] for bag, mb in val_minibags])
    val_targets = np.stack([bag.proportion for bag, _ in val_minibags])

    train_eval = concat_instances(train_bags)
    if config.train_eval_cap and len(train_eval) > config.train_eval_cap:
        pick = seeding.stream(config.seed, "train-eval").choice(
            len(train_eval), size=config.train_eval_cap, replace=False
        )
        train_eval = LabeledInstances(train_eval.features[pick], train_eval._labels[pick])
    # trace metrics are argmax- or 1e-3-scale quantities; float32 evaluation
    # halves the per-epoch cost without touching the float64 training path
    train_eval32 = train_eval.features.astype(np.float32)
    heldout32 = heldout.features.astype(np.float32)
    val_flat32 = val_flat.astype(np.float32)
    train_truth = train_eval.labels
    test_truth = heldout.labels
    trace = TrainTrace()
    best_loss = np.inf
    best_params = params.copy()

    for epoch in range(config.epochs):
        epoch_loss = 0.0
        # update path: ground-truth labels must stay unread here
        with label_audit.forbidden():
            epoch_order = epoch_rng.permutation(len(train_bags))
            for start in range(0, len(train_bags), config.batch_bags):
                batch_ids = epoch_order[start : start + config.batch_bags]
                entries = []
                raw_pmfs = []
                for i in batch_ids:
                    bag = train_bags[i]
                    minibag = sample_minibag(bag, n, minibag_rng)
                    target, raw = _batch_supervision(bag, config, sup_rng)
                    entries.append([bag.features[minibag.indices], target, 1.0])
                    raw_pmfs.append(raw)
                if config.method == PERTURB_LW:
                    weights = normalize_weights(raw_pmfs)
                    assert abs(float(np.median(weights)) - 1.0) <= 1e-12
                    for entry, w in zip(entries, weights):
                        entry[2] = float(w)
                loss, grads = batch_gradient(params, entries)
                params = optimizer.step(params, grads)
                epoch_loss += loss

            val_probs = _eval_probs32(params, val_flat32).reshape(len(val_minibags), val_size, -1)
            val_pred = np.clip(val_probs.mean(axis=1, dtype=np.float64), 1e-12, 1.0)
            val_loss = float(-(val_targets * np.log(val_pred)).sum(axis=1).mean())

        train_preds = np.argmax(_eval_probs32(params, train_eval32), axis=1)
        test_preds = np.argmax(_eval_probs32(params, heldout32), axis=1)
        record = EpochRecord(
            epoch=epoch,
            train_prop_loss=epoch_loss / len(train_bags),
            val_prop_loss=val_loss,
            train_acc=float(np.mean(train_preds == train_truth)),
            test_acc=float(np.mean(test_preds == test_truth)),
            test_mdice=_mdice_from_preds(test_preds, test_truth, params.num_classes),
        )
        trace.records.append(record)
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = params.copy()
            trace.best_epoch = epoch

    return best_params, trace
