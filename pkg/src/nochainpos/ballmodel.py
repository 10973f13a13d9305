"""Urn experiments: majority-conversion absorption and the all-red streak test.

The scalar functions follow one urn with a ``random.Random``; the batch
functions advance many independent urns at once with numpy.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class TooFewBalls(ValueError):
    pass


@dataclass(frozen=True)
class UrnState:
    red: int
    black: int
    sample_size: int = 5

    def __post_init__(self) -> None:
        if self.red < 0 or self.black < 0 or self.sample_size < 1:
            raise ValueError("counts must be non-negative and sample_size positive")

    @property
    def total(self) -> int:
        return self.red + self.black

    @property
    def absorbed(self) -> bool:
        return self.red == 0 or self.black == 0

    def mirrored(self) -> UrnState:
        return UrnState(self.black, self.red, self.sample_size)


def draw_reds(state: UrnState, rng: random.Random) -> int:
    """Number of red balls in a draw of ``sample_size`` without replacement."""
    red, total = state.red, state.total
    reds = 0
    for _ in range(state.sample_size):
        if rng.random() * total < red:
            reds += 1
            red -= 1
        total -= 1
    return reds


def urn_transition(state: UrnState, reds_in_sample: int) -> UrnState:
    """Convert one ball toward the strict sample majority; a tie changes nothing."""
    blacks = state.sample_size - reds_in_sample
    if reds_in_sample > blacks and state.black > 0:
        return UrnState(state.red + 1, state.black - 1, state.sample_size)
    if blacks > reds_in_sample and state.red > 0:
        return UrnState(state.red - 1, state.black + 1, state.sample_size)
    return state


def urn_step(state: UrnState, rng: random.Random) -> UrnState:
    if state.total < state.sample_size:
        raise TooFewBalls(f"{state.total} balls, sample of {state.sample_size}")
    return urn_transition(state, draw_reds(state, rng))


def run_to_absorption(state: UrnState, max_steps: int, seed: int = 0) -> int | None:
    """Steps until the urn is monochrome, or ``None`` if ``max_steps`` ran out."""
    if max_steps < 0:
        raise ValueError("max_steps must be >= 0")
    rng = random.Random(seed)
    for step in range(max_steps + 1):
        if state.absorbed:
            return step
        if step == max_steps:
            break
        state = urn_step(state, rng)
    return None


@dataclass(frozen=True)
class AbsorptionRun:
    steps: np.ndarray  # -1 where the cap was hit
    red_won: np.ndarray

    @property
    def all_absorbed(self) -> bool:
        return bool((self.steps >= 0).all())

    def fraction_absorbed_by(self, n: int) -> float:
        return float(((self.steps >= 0) & (self.steps <= n)).mean())


def absorption_times(
    red: int, black: int, sample_size: int, trials: int, max_steps: int, seed: int = 0
) -> AbsorptionRun:
    """Absorption step for ``trials`` independent urns advanced in lockstep."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    total = red + black
    if total < sample_size:
        raise TooFewBalls(f"{total} balls, sample of {sample_size}")
    rng = np.random.default_rng(seed)
    reds = np.full(trials, red, dtype=np.int64)
    steps = np.full(trials, -1, dtype=np.int64)
    done = (reds == 0) | (reds == total)
    steps[done] = 0
    active = np.flatnonzero(~done)
    step = 0
    while active.size and step < max_steps:
        step += 1
        r = reds[active]
        drawn = rng.hypergeometric(r, total - r, sample_size)
        delta = np.sign(2 * drawn - sample_size)
        reds[active] = r + delta
        r = reds[active]
        finished = (r == 0) | (r == total)
        steps[active[finished]] = step
        active = active[~finished]
    return AbsorptionRun(steps, reds == total)


def absorption_curve(
    red: int,
    black: int,
    sample_size: int,
    grid: Sequence[int],
    trials: int,
    seed: int = 0,
) -> list[tuple[int, float]]:
    """Fraction of trials absorbed by each ``n`` in ``grid``; non-decreasing by construction."""
    grid = sorted(grid)
    run = absorption_times(red, black, sample_size, trials, max_steps=grid[-1], seed=seed)
    return [(n, run.fraction_absorbed_by(n)) for n in grid]


def streak_posterior_demo(
    total: int = 200,
    sample_size: int = 5,
    streak_length: int = 20,
    n_urns: int = 200_000,
    seed: int = 0,
    prior: Sequence[float] | None = None,
) -> tuple[float, int]:
    """Frequency of majority-red urns among those yielding an all-red streak.

    Urn red counts come from ``prior`` over ``0..total`` (uniform by default);
    each urn is drawn ``streak_length`` times, balls returned after each draw.
    Returns ``(frequency, number_of_urns_with_streak)``; frequency is NaN when
    no urn produced the streak.
    """
    if streak_length < 0:
        raise ValueError("streak_length must be >= 0")
    rng = np.random.default_rng(seed)
    support = np.arange(total + 1)
    p = None if prior is None else np.asarray(prior, dtype=float) / np.sum(prior)
    reds = rng.choice(support, size=n_urns, p=p)
    keep = np.ones(n_urns, dtype=bool)
    for _ in range(streak_length):
        idx = np.flatnonzero(keep)
        if not idx.size:
            break
        r = reds[idx]
        drawn = rng.hypergeometric(r, total - r, sample_size)
        keep[idx[drawn != sample_size]] = False
    kept = int(keep.sum())
    if kept == 0:
        return float("nan"), 0
    return float((2 * reds[keep] > total).mean()), kept
