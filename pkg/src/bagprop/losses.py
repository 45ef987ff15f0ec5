"""Bag-level proportion loss, supervision perturbation, and loss weights.

The proportion loss is the cross-entropy between a target proportion and
the mean of per-instance class confidences. Perturbed supervision replaces
the parent bag's proportion with a fresh draw of mini-bag composition from
the exact without-replacement law, and the weight of each bag in a batch is
the PMF value of its drawn supervision normalized by the batch median.
"""

from __future__ import annotations

import numpy as np

from .bags import Bag
from .hypergeom import MultivariateHypergeometric

LOG_CLAMP = 1e-12


def proportion_loss(predicted, target, eps: float = LOG_CLAMP) -> float:
    """Cross-entropy -sum(target * log(predicted)) with clamped logs.

    Predicted entries are clamped to [eps, 1] before the log; zero target
    entries contribute nothing.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ValueError(
            f"predicted has shape {predicted.shape}, target {target.shape}"
        )
    return float(-(target * np.log(np.clip(predicted, eps, 1.0))).sum())


def predict_bag_proportion(confidences) -> np.ndarray:
    """Column mean of an (instances x classes) confidence matrix."""
    confidences = np.asarray(confidences, dtype=np.float64)
    if confidences.ndim != 2 or confidences.shape[0] == 0:
        raise ValueError("confidences must be a nonempty 2-d matrix")
    return confidences.mean(axis=0)


def perturb_supervision(
    bag: Bag, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Draw a supervision proportion from the mini-bag composition law.

    Returns the drawn proportion (counts / n) and the raw PMF value at the
    drawn counts, which downstream weighting consumes.
    """
    dist = MultivariateHypergeometric(bag.class_counts, n)
    k = dist.sample(rng)
    return k / n, dist.pmf(k)


def normalize_weights(raw_pmfs) -> np.ndarray:
    """Divide a batch of raw weights by their median.

    The even-length median is the mean of the two central order statistics.
    A non-positive median (in particular an all-zero batch) is degenerate
    and raises.
    """
    raw = np.asarray(raw_pmfs, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("weight batch is empty")
    med = float(np.median(raw))
    if med <= 0.0:
        raise ValueError("degenerate weight batch: median is not positive")
    return raw / med


def weighted_batch_loss(entries) -> float:
    """sum_i w_i * proportion_loss(predicted_i, target_i).

    ``entries`` is an iterable of (predicted, target, weight) with weights
    already normalized.
    """
    return float(
        sum(w * proportion_loss(pred, target) for pred, target, w in entries)
    )


def gaussian_perturb_supervision(
    bag: Bag, sd: float, rng: np.random.Generator, max_retries: int = 10
) -> np.ndarray:
    """Additive Gaussian proportion noise, clipped and renormalized.

    Draws where every entry clips to zero are retried; after
    ``max_retries`` the unperturbed proportion is returned.
    """
    if sd < 0:
        raise ValueError("sd must be nonnegative")
    p = bag.proportion
    for _ in range(max_retries):
        q = np.clip(p + rng.normal(0.0, sd, size=p.size), 0.0, 1.0)
        total = q.sum()
        if total > 0:
            return q / total
    return p.copy()
