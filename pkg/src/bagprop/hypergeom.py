"""Exact multivariate hypergeometric distribution over class counts.

Models the per-class composition of ``n`` items drawn without replacement
from a finite population with known per-class counts. All probability
arithmetic is done in log space via log-gamma, so nothing overflows for
populations up to at least 1e5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Guard for full support enumeration; the upper bound on the support size
# is the product of (min(K_c, n) + 1) over classes.
SUPPORT_CAP = 10**6


def log_binom(a: int, b: int) -> float:
    """ln C(a, b); -inf when b is outside [0, a]."""
    if b < 0 or b > a:
        return -math.inf
    return math.lgamma(a + 1) - math.lgamma(b + 1) - math.lgamma(a - b + 1)


def univariate_log_pmf(population: int, successes: int, draws: int, k: int) -> float:
    """ln P[X = k] for the univariate hypergeometric law.

    X counts the successes in ``draws`` items taken without replacement
    from ``population`` items of which ``successes`` are marked.
    """
    return (
        log_binom(successes, k)
        + log_binom(population - successes, draws - k)
        - log_binom(population, draws)
    )


def _univariate_mode(population: int, successes: int, draws: int) -> int:
    return ((draws + 1) * (successes + 1)) // (population + 2)


def sample_univariate(rng: np.random.Generator, population: int, successes: int, draws: int) -> int:
    """Draw one univariate hypergeometric variate.

    Inverse-CDF by chop-down: one uniform is spent against PMF values
    generated by the two-sided recurrence starting at the mode, which keeps
    every term well scaled. Exact for all valid parameters.
    """
    lo = max(0, draws - (population - successes))
    hi = min(draws, successes)
    if lo >= hi:
        return lo
    mode = _univariate_mode(population, successes, draws)
    mode = min(max(mode, lo), hi)

    u = rng.random()
    p_mode = math.exp(univariate_log_pmf(population, successes, draws, mode))
    u -= p_mode
    if u < 0.0:
        return mode

    fail = population - successes
    p_down = p_up = p_mode
    k_down = k_up = mode
    while k_down > lo or k_up < hi:
        if k_down > lo:
            # P(k-1) = P(k) * k (fail - draws + k) / ((successes - k + 1)(draws - k + 1))
            p_down *= (
                k_down * (fail - draws + k_down)
                / ((successes - k_down + 1) * (draws - k_down + 1))
            )
            k_down -= 1
            u -= p_down
            if u < 0.0:
                return k_down
        if k_up < hi:
            # P(k+1) = P(k) * (successes - k)(draws - k) / ((k + 1)(fail - draws + k + 1))
            p_up *= (
                (successes - k_up) * (draws - k_up)
                / ((k_up + 1) * (fail - draws + k_up + 1))
            )
            k_up += 1
            u -= p_up
            if u < 0.0:
                return k_up
    # Float residue of order 1e-15 can survive the sweep; the mode is the
    # safest representative.
    return mode


@dataclass(frozen=True, eq=False)
class Marginal:
    """Parameters of the exact univariate law of one class count."""

    population: int
    successes: int
    draws: int

    def log_pmf(self, k: int) -> float:
        return univariate_log_pmf(self.population, self.successes, self.draws, k)

    def pmf(self, k: int) -> float:
        return math.exp(self.log_pmf(k))

    def mean(self) -> float:
        return self.draws * self.successes / self.population


@dataclass(frozen=True, eq=False)
class MultivariateHypergeometric:
    """Joint law of per-class counts in a without-replacement draw.

    ``population_counts`` holds the per-class item counts of the
    population; ``draws`` is the sample size. Instances are immutable and
    safe to share across threads; all randomness comes from generators
    passed to :meth:`sample`.
    """

    population_counts: np.ndarray
    draws: int
    population: int = field(init=False)

    def __post_init__(self):
        counts = np.asarray(self.population_counts, dtype=np.int64).copy()
        if counts.ndim != 1 or counts.size < 1:
            raise ValueError("population_counts must be a nonempty 1-d vector")
        if np.any(counts < 0):
            raise ValueError("population_counts must be nonnegative")
        total = int(counts.sum())
        if total < 1:
            raise ValueError("population must contain at least one item")
        if not (0 <= self.draws <= total):
            raise ValueError(f"draws must lie in [0, {total}], got {self.draws}")
        counts.setflags(write=False)
        object.__setattr__(self, "population_counts", counts)
        object.__setattr__(self, "draws", int(self.draws))
        object.__setattr__(self, "population", total)

    @property
    def num_classes(self) -> int:
        return int(self.population_counts.size)

    @property
    def proportions(self) -> np.ndarray:
        return self.population_counts / self.population

    def _check_counts(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64)
        if k.ndim != 1 or k.size != self.num_classes:
            raise ValueError(
                f"count vector has length {k.size}, expected {self.num_classes}"
            )
        return k

    def log_pmf(self, k) -> float:
        """Natural-log probability of the count vector ``k``.

        Returns -inf outside the support (sum != draws, any count above
        its class population, or any negative count).
        """
        k = self._check_counts(k)
        if int(k.sum()) != self.draws:
            return -math.inf
        total = 0.0
        for kc, pop_c in zip(k.tolist(), self.population_counts.tolist()):
            term = log_binom(pop_c, kc)
            if term == -math.inf:
                return -math.inf
            total += term
        return total - log_binom(self.population, self.draws)

    def pmf(self, k) -> float:
        """Probability of ``k``; exactly 0 outside the support."""
        return math.exp(self.log_pmf(k))

    def support_size_bound(self) -> int:
        bound = 1
        for pop_c in self.population_counts.tolist():
            bound *= min(pop_c, self.draws) + 1
        return bound

    def enumerate_support(self, cap: int = SUPPORT_CAP) -> list[tuple[np.ndarray, float]]:
        """All count vectors in the support, paired with their probability.

        Raises ValueError when the support-size bound exceeds ``cap``.
        """
        if self.support_size_bound() > cap:
            raise ValueError(
                f"support bound {self.support_size_bound()} exceeds cap {cap}"
            )
        counts = self.population_counts.tolist()
        suffix = np.concatenate([np.cumsum(counts[::-1])[::-1], [0]])
        out: list[tuple[np.ndarray, float]] = []
        k = np.zeros(self.num_classes, dtype=np.int64)

        def rec(c: int, remaining: int):
            if c == self.num_classes - 1:
                if remaining <= counts[c]:
                    k[c] = remaining
                    out.append((k.copy(), self.pmf(k)))
                return
            lo = max(0, remaining - int(suffix[c + 1]))
            hi = min(counts[c], remaining)
            for v in range(lo, hi + 1):
                k[c] = v
                rec(c + 1, remaining - v)

        rec(0, self.draws)
        return out

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw count vectors, one class at a time conditionally.

        Class c is drawn from the univariate law of the population still in
        play, and the last class takes the remainder, which is exact and
        O(C * walk) per draw. Deterministic given the generator state.
        """
        if size is not None:
            return np.stack([self.sample(rng) for _ in range(size)])
        counts = self.population_counts.tolist()
        k = np.zeros(self.num_classes, dtype=np.int64)
        remaining_pop = self.population
        remaining_draws = self.draws
        for c in range(self.num_classes - 1):
            succ = counts[c]
            kc = sample_univariate(rng, remaining_pop, succ, remaining_draws)
            k[c] = kc
            remaining_pop -= succ
            remaining_draws -= kc
        k[-1] = remaining_draws
        return k

    def marginal(self, class_index: int) -> Marginal:
        """Exact univariate law of the count of one class."""
        if not (0 <= class_index < self.num_classes):
            raise IndexError(
                f"class_index {class_index} out of range for {self.num_classes} classes"
            )
        return Marginal(
            population=self.population,
            successes=int(self.population_counts[class_index]),
            draws=self.draws,
        )
