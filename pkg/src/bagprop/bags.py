"""Synthetic instance pools, bag construction, and mini-bag sampling.

Bags carry a proportion label and per-class counts as legitimate
supervision; the instance labels they also hold exist only for evaluation.
Label access is gated by a process-wide audit so a training path that
touches them fails loudly (see :data:`label_audit`).
"""

from __future__ import annotations

import csv
import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class LabelAccessError(RuntimeError):
    """Instance labels were read while the label audit forbids it."""


class _LabelAudit:
    """Process-wide gate over ground-truth instance labels.

    Inside :meth:`forbidden`, any access to hidden labels raises. Training
    loops run their update path under the gate; evaluation happens outside
    it. This is a discipline aid against accidental leakage, not a security
    boundary.
    """

    def __init__(self):
        self._forbid_depth = 0

    def check(self):
        if self._forbid_depth > 0:
            raise LabelAccessError(
                "ground-truth instance labels were read inside a training path"
            )

    @contextmanager
    def forbidden(self):
        self._forbid_depth += 1
        try:
            yield
        finally:
            self._forbid_depth -= 1


label_audit = _LabelAudit()


class LabeledInstances:
    """Feature matrix plus instance labels gated behind the label audit."""

    def __init__(self, features, labels):
        self.features = np.asarray(features, dtype=np.float64)
        self._labels = np.asarray(labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if self._labels.shape != (self.features.shape[0],):
            raise ValueError("labels must align one-to-one with feature rows")
        self.features.setflags(write=False)
        self._labels.setflags(write=False)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labels(self) -> np.ndarray:
        """Ground-truth labels; evaluation only."""
        label_audit.check()
        return self._labels


class Bag:
    """A set of instances with an exact proportion label.

    ``class_counts`` and ``proportion`` are derived once from the labels at
    construction and are legitimate training inputs; ``hidden_labels`` is
    audit-gated and exists only for evaluation.
    """

    def __init__(self, bag_id, features, labels, num_classes, instance_ids=None):
        self.bag_id = int(bag_id)
        self.features = np.asarray(features, dtype=np.float64)
        self._labels = np.asarray(labels, dtype=np.int64)
        self.num_classes = int(num_classes)
        if self.features.ndim != 2 or self.features.shape[0] != self._labels.size:
            raise ValueError("features and labels must align")
        if self._labels.size == 0:
            raise ValueError("a bag must contain at least one instance")
        if np.any(self._labels < 0) or np.any(self._labels >= num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        if instance_ids is None:
            instance_ids = np.arange(self._labels.size)
        self.instance_ids = np.asarray(instance_ids, dtype=np.int64)
        self.size = int(self._labels.size)
        self.class_counts = np.bincount(self._labels, minlength=num_classes).astype(np.int64)
        self.proportion = self.class_counts / self.size
        for arr in (self.features, self._labels, self.instance_ids, self.class_counts, self.proportion):
            arr.setflags(write=False)

    @property
    def hidden_labels(self) -> np.ndarray:
        """Ground-truth labels; evaluation only."""
        label_audit.check()
        return self._labels


@dataclass
class MiniBag:
    """Index subset of a parent bag with an assigned supervision target."""

    parent_bag_id: int
    indices: np.ndarray
    sample_size: int
    supervision: np.ndarray | None = None


class SyntheticDataset:
    """Class-conditional Gaussian clusters with a labeled instance pool."""

    def __init__(self, class_means: np.ndarray, pool: LabeledInstances):
        self.class_means = np.asarray(class_means, dtype=np.float64)
        self.pool = pool
        self.num_classes = self.class_means.shape[0]
        self.dim = self.class_means.shape[1]
        self.indices_by_class = [
            np.flatnonzero(pool._labels == c) for c in range(self.num_classes)
        ]

    def sample_heldout(self, num_instances: int, rng: np.random.Generator) -> LabeledInstances:
        """Fresh class-balanced instances from the same clusters."""
        per_class = np.full(self.num_classes, num_instances // self.num_classes)
        per_class[: num_instances % self.num_classes] += 1
        feats, labels = [], []
        for c, m in enumerate(per_class):
            feats.append(self.class_means[c] + rng.standard_normal((m, self.dim)))
            labels.append(np.full(m, c))
        return LabeledInstances(np.concatenate(feats), np.concatenate(labels))


def generate_synthetic_dataset(
    num_classes: int,
    dim: int,
    instances_per_class: int,
    separation: float,
    rng: np.random.Generator,
) -> SyntheticDataset:
    """Gaussian clusters with unit covariance and means on a sphere.

    Class means are random directions scaled to radius ``separation``;
    separation 0 makes every class identically distributed.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if dim < 2:
        raise ValueError("need at least two feature dimensions")
    if separation < 0:
        raise ValueError("separation must be nonnegative")
    directions = rng.standard_normal((num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = separation * directions
    feats, labels = [], []
    for c in range(num_classes):
        feats.append(means[c] + rng.standard_normal((instances_per_class, dim)))
        labels.append(np.full(instances_per_class, c))
    pool = LabeledInstances(np.concatenate(feats), np.concatenate(labels))
    return SyntheticDataset(means, pool)


def _largest_remainder_counts(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total`` proportional to ``weights``.

    Floors the scaled targets, then hands the leftover units to the largest
    fractional remainders, lowest index first on ties.
    """
    target = weights / weights.sum() * total
    counts = np.floor(target).astype(np.int64)
    leftover = total - int(counts.sum())
    if leftover > 0:
        order = np.argsort(-(target - counts), kind="stable")
        counts[order[:leftover]] += 1
    return counts


def _draw_bag_counts(num_classes, bag_size, proportion_sd, rng, max_retries=100):
    for _ in range(max_retries):
        raw = rng.normal(1.0 / num_classes, proportion_sd, size=num_classes)
        raw = np.clip(raw, 0.0, None)
        if raw.sum() > 0:
            return _largest_remainder_counts(raw, bag_size)
    # all-zero draws are vanishingly rare at sane sd; fall back to uniform
    return _largest_remainder_counts(np.ones(num_classes), bag_size)


def make_bags(
    dataset: SyntheticDataset,
    num_bags: int,
    bag_size: int,
    proportion_sd: float,
    rng: np.random.Generator,
) -> list[Bag]:
    """Build bags by per-class sampling to Gaussian-drawn proportions.

    Per bag, raw per-class values come from N(1/C, proportion_sd^2), are
    clipped at zero, renormalized, and rounded to integer counts by largest
    remainder; each class then contributes that many distinct pool
    instances. Instances may repeat across bags but not within one.
    """
    pool = dataset.pool
    bags = []
    for b in range(num_bags):
        counts = _draw_bag_counts(dataset.num_classes, bag_size, proportion_sd, rng)
        picked = []
        for c, kc in enumerate(counts.tolist()):
            if kc == 0:
                continue
            available = dataset.indices_by_class[c]
            if available.size < kc:
                raise ValueError(
                    f"bag {b} needs {kc} instances of class {c}, pool has {available.size}"
                )
            picked.append(rng.choice(available, size=kc, replace=False))
        idx = np.concatenate(picked)
        bags.append(
            Bag(
                bag_id=b,
                features=pool.features[idx],
                labels=pool._labels[idx],
                num_classes=dataset.num_classes,
                instance_ids=idx,
            )
        )
    return bags


def sample_minibag(bag: Bag, n: int, rng: np.random.Generator) -> MiniBag:
    """Uniform without-replacement index subset of size ``n``."""
    if not (1 <= n <= bag.size):
        raise ValueError(f"sample size {n} must lie in [1, {bag.size}]")
    indices = rng.choice(bag.size, size=n, replace=False)
    return MiniBag(parent_bag_id=bag.bag_id, indices=indices, sample_size=n)


def true_minibag_proportion(bag: Bag, minibag: MiniBag) -> np.ndarray:
    """Exact proportion of the sampled instances; evaluation only."""
    if minibag.parent_bag_id != bag.bag_id:
        raise ValueError("mini-bag does not belong to this bag")
    if np.any(minibag.indices >= bag.size) or np.any(minibag.indices < 0):
        raise ValueError("mini-bag indices out of range for bag")
    labels = bag.hidden_labels[minibag.indices]
    counts = np.bincount(labels, minlength=bag.num_classes)
    return counts / minibag.sample_size


# -- dataset snapshot -------------------------------------------------------
#
# Flat CSV with columns bag_id, instance_id, class_label, f0..f{D-1}; the
# heldout file uses bag_id -1 throughout. Floats are written with repr so
# the round trip is bit exact.

DATASET_CSV = "dataset.csv"
HELDOUT_CSV = "heldout.csv"
DATASET_MANIFEST = "dataset_manifest.json"


def _write_rows(path: Path, dim: int, rows):
    header = ["bag_id", "instance_id", "class_label"] + [f"f{d}" for d in range(dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for bag_id, instance_id, label, features in rows:
            writer.writerow(
                [bag_id, instance_id, label] + [repr(float(v)) for v in features]
            )


def save_dataset(
    out_dir,
    bags: list[Bag],
    heldout: LabeledInstances,
    meta: dict,
):
    """Write dataset.csv, heldout.csv and the JSON manifest into a directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dim = bags[0].features.shape[1]

    def bag_rows():
        for bag in bags:
            for j in range(bag.size):
                yield bag.bag_id, int(bag.instance_ids[j]), int(bag._labels[j]), bag.features[j]

    def heldout_rows():
        for j in range(len(heldout)):
            yield -1, j, int(heldout._labels[j]), heldout.features[j]

    _write_rows(out_dir / DATASET_CSV, dim, bag_rows())
    _write_rows(out_dir / HELDOUT_CSV, dim, heldout_rows())
    manifest = dict(meta)
    manifest.update(
        {
            "num_classes": bags[0].num_classes,
            "dim": dim,
            "bag_size": bags[0].size,
            "num_bags": len(bags),
            "heldout_instances": len(heldout),
        }
    )
    with open(out_dir / DATASET_MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_rows(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 3
        for row in reader:
            yield int(row[0]), int(row[1]), int(row[2]), np.array(
                [float(v) for v in row[3:]], dtype=np.float64
            )
        _ = dim


def load_dataset(in_dir) -> tuple[list[Bag], LabeledInstances, dict]:
    """Inverse of :func:`save_dataset`."""
    in_dir = Path(in_dir)
    with open(in_dir / DATASET_MANIFEST) as fh:
        meta = json.load(fh)
    num_classes = meta["num_classes"]

    grouped: dict[int, list] = {}
    for bag_id, instance_id, label, features in _read_rows(in_dir / DATASET_CSV):
        grouped.setdefault(bag_id, []).append((instance_id, label, features))
    bags = []
    for bag_id in sorted(grouped):
        rows = grouped[bag_id]
        bags.append(
            Bag(
                bag_id=bag_id,
                features=np.stack([r[2] for r in rows]),
                labels=[r[1] for r in rows],
                num_classes=num_classes,
                instance_ids=[r[0] for r in rows],
            )
        )
    held_rows = list(_read_rows(in_dir / HELDOUT_CSV))
    heldout = LabeledInstances(
        np.stack([r[3] for r in held_rows]), [r[2] for r in held_rows]
    )
    return bags, heldout, meta


def concat_instances(bags: list[Bag]) -> LabeledInstances:
    """Stack the instances of several bags into one evaluation set.

    Instances shared between bags appear once per occurrence.
    """
    return LabeledInstances(
        np.concatenate([bag.features for bag in bags]),
        np.concatenate([bag._labels for bag in bags]),
    )
