"""Statistics behind Converged Consensus: parameters, weighted winners, stability."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple

from .core import ProtocolError
from .ledger import DEFAULT_THRESHOLD


class InvalidA(ProtocolError, ValueError):
    pass


class NoSamples(ProtocolError):
    pass


@dataclass(frozen=True)
class ConsensusParams:
    A: int
    B: int
    M: int
    N: int
    threshold_fraction: Fraction = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        if self.A < 1 or self.M < 1 or self.N < 1:
            raise ValueError("A, M and N must be positive")


def digit_count(n: int) -> int:
    return len(str(n))


def derive_params(A: int, threshold_fraction: Fraction = DEFAULT_THRESHOLD) -> ConsensusParams:
    """B is the decimal digit count of A; M = N = B * B.

    The digit count (floor(log10 A) + 1) reproduces every row of the published
    band table, whereas ceil(log10 A) + 1 overshoots on non-powers of ten.
    """
    if A < 1:
        raise InvalidA(f"A must be >= 1, got {A}")
    B = digit_count(A)
    return ConsensusParams(A, B, B * B, B * B, threshold_fraction)


class Sample(NamedTuple):
    view_hash: bytes
    view_sn: int
    weight: int


def weighted_winner(samples: Iterable[tuple[bytes, int, int]]) -> tuple[bytes, int]:
    """Hash with the largest total weight, and the highest sn seen for it.

    Ties go to the lexicographically smallest digest.  Zero-weight samples
    carry no vote; an input without positive weight raises ``NoSamples``.
    """
    totals: dict[bytes, int] = defaultdict(int)
    top_sn: dict[bytes, int] = {}
    for view_hash, view_sn, weight in samples:
        if weight < 0:
            raise ValueError("sample weights must be non-negative")
        if weight == 0:
            continue
        totals[view_hash] += weight
        top_sn[view_hash] = max(top_sn.get(view_hash, view_sn), view_sn)
    if not totals:
        raise NoSamples("no sample carries positive weight")
    winner = min(totals, key=lambda h: (-totals[h], h))
    return winner, top_sn[winner]


def stability_step(counter: int, previous_winner: bytes, new_winner: bytes, N: int) -> tuple[int, bool]:
    """Advance the no-change counter; ``promoted`` once it reaches ``N``."""
    counter = counter + 1 if new_winner == previous_winner else 1
    return counter, counter >= N


def accept_winner(current_baseview_sn: int, winner_sn: int) -> bool:
    return winner_sn > current_baseview_sn
