"""The bare updating loop: sample M nodes, weighted winner, overwrite one node."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from ..consensus import NoSamples, weighted_winner
from .rng import derive_rng


@dataclass(frozen=True)
class MarkovSetup:
    weights: tuple[int, ...]
    views: tuple[bytes, ...]
    M: int

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.views):
            raise ValueError("weights and views must have equal length")
        if not 1 <= self.M <= len(self.weights):
            raise ValueError("M must be between 1 and the node count")

    @classmethod
    def split(cls, k: int, m: int, fractions: Sequence[int], labels: Sequence[bytes] | None = None) -> MarkovSetup:
        """``k`` unit-weight nodes divided among views in the given proportions."""
        labels = labels or [bytes([i]) * 32 for i in range(len(fractions))]
        counts = [k * f // sum(fractions) for f in fractions]
        counts[0] += k - sum(counts)
        views = tuple(label for label, c in zip(labels, counts) for _ in range(c))
        return cls((1,) * k, views, m)


def markov_step(views: list[bytes], weights: Sequence[int], m: int, rng: random.Random) -> None:
    chosen = rng.sample(range(len(views)), m)
    try:
        winner, _ = weighted_winner((views[i], 0, weights[i]) for i in chosen)
    except NoSamples:
        return
    views[rng.randrange(len(views))] = winner


def run_markov_mode(setup: MarkovSetup, n_steps: int, seed: int = 0, trial: int = 0) -> list[Counter]:
    """Trajectory of view-hash multisets, including the initial state."""
    rng = derive_rng(seed, "markov", trial)
    views = list(setup.views)
    trajectory = [Counter(views)]
    for _ in range(n_steps):
        markov_step(views, setup.weights, setup.M, rng)
        trajectory.append(Counter(views))
    return trajectory


def absorption_step(setup: MarkovSetup, max_steps: int, seed: int = 0, trial: int = 0) -> int | None:
    """First step at which every node holds one view, or ``None``."""
    rng = derive_rng(seed, "markov", trial)
    views = list(setup.views)
    distinct = len(set(views))
    for step in range(max_steps + 1):
        if distinct == 1:
            return step
        if step == max_steps:
            break
        markov_step(views, setup.weights, setup.M, rng)
        distinct = len(set(views))
    return None


def estimate_absorption_probability(
    setup: MarkovSetup, grid: Sequence[int], trials: int, seed: int = 0
) -> list[tuple[int, float]]:
    """Monte Carlo ``P(absorbed by n)`` for each ``n`` in ``grid``; trial ``i`` uses stream ``(seed, i)``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = sorted(grid)
    times = [absorption_step(setup, grid[-1], seed, trial) for trial in range(trials)]
    return [(n, sum(1 for t in times if t is not None and t <= n) / trials) for n in grid]
