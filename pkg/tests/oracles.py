"""Independent exact oracles, written without the package under test.

Both the urn and the Markov-mode loop with equal weights reduce to a
birth-death chain on the count of one colour; the absorption-time tail is
propagated exactly with numpy over the transient states.  Frozen values
below were produced by these functions and are re-derived in
``test_oracles.py``.
"""

from __future__ import annotations

from fractions import Fraction
from math import comb

import numpy as np


def hypergeom_pmf(k: int, good: int, total: int, draws: int) -> Fraction:
    if k < 0 or k > draws or k > good or draws - k > total - good:
        return Fraction(0)
    return Fraction(comb(good, k) * comb(total - good, draws - k), comb(total, draws))


def majority_up_prob(good: int, total: int, draws: int) -> Fraction:
    """P(strict majority of an unreplaced sample is 'good')."""
    return sum((hypergeom_pmf(k, good, total, draws) for k in range(draws // 2 + 1, draws + 1)), Fraction(0))


def urn_chain(total: int, sample: int) -> tuple[np.ndarray, np.ndarray]:
    """(p_up, p_down) per red count for the majority-conversion urn."""
    up = np.zeros(total + 1)
    down = np.zeros(total + 1)
    for r in range(1, total):
        p_red = majority_up_prob(r, total, sample)
        p_black = majority_up_prob(total - r, total, sample)
        up[r], down[r] = float(p_red), float(p_black)
    return up, down


def markov_chain(k: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """(p_up, p_down) per A-count when the sample-majority overwrites one random node."""
    up = np.zeros(k + 1)
    down = np.zeros(k + 1)
    for a in range(1, k):
        win_a = float(majority_up_prob(a, k, m))
        win_b = float(majority_up_prob(k - a, k, m))
        up[a] = win_a * (k - a) / k
        down[a] = win_b * a / k
    return up, down


def survival(up: np.ndarray, down: np.ndarray, start: int, n_max: int) -> np.ndarray:
    """P(not yet absorbed after n steps) for n = 0..n_max."""
    size = len(up)
    dist = np.zeros(size)
    dist[start] = 1.0
    out = np.empty(n_max + 1)
    for n in range(n_max + 1):
        out[n] = dist[1:-1].sum()
        nxt = np.zeros(size)
        nxt[2:] += (dist * up)[1:-1]
        nxt[:-2] += (dist * down)[1:-1]
        nxt[1:-1] += (dist * (1 - up - down))[1:-1]
        dist = nxt
        dist[0] = dist[-1] = 0.0
    return out


def step_cap(up, down, start, trials: int, miss_budget: float = 1e-6, n_max: int = 20_000) -> int:
    """Smallest n with trials * P(T > n) below ``miss_budget`` (union bound)."""
    tail = survival(up, down, start, n_max)
    below = np.flatnonzero(trials * tail < miss_budget)
    if not below.size:
        raise ValueError("n_max too small")
    return int(below[0])


def streak_posterior(total: int = 200, sample: int = 5, streak: int = 20) -> Fraction:
    """P(red majority | ``streak`` all-red samples), uniform prior on the red count."""
    like = [Fraction(comb(r, sample), comb(total, sample)) ** streak for r in range(total + 1)]
    return sum(like[total // 2 + 1:], Fraction(0)) / sum(like, Fraction(0))


# frozen outputs of the functions above
URN_100_100_5_CAP = 1376  # step_cap(*urn_chain(200, 5), 100, trials=10_000)
URN_100_100_5_MEAN = 211.441  # survival(...).sum(), rounded
MARKOV_20_9_CAP = 460  # step_cap(*markov_chain(20, 9), 10, trials=1_000)
MARKOV_20_9_BY_200 = 0.999408  # 1 - survival(...)[200], rounded
STREAK_20_DEFICIT = 1.760876962613134e-31  # float(1 - streak_posterior())
STREAK_0_POSTERIOR = Fraction(100, 201)
TABLE_1 = [  # (A, B, M, N), both ends of each published band
    (100, 3, 9, 9), (999, 3, 9, 9),
    (1000, 4, 16, 16), (9999, 4, 16, 16),
    (10000, 5, 25, 25), (99999, 5, 25, 25),
    (100000, 6, 36, 36), (999999, 6, 36, 36),
    (1000000, 7, 49, 49), (9999999, 7, 49, 49),
    (10000000, 8, 64, 64), (99999999, 8, 64, 64),
    (100000000, 9, 81, 81), (999999999, 9, 81, 81),
    (1000000000, 10, 100, 100), (9999999999, 10, 100, 100),
]
