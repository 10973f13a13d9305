"""Client-load arithmetic for packages, vester lists and verification rate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

VESTER_ITEM_BYTES = 32 + 64
TX_BYTES = 8 + 20 + 32 + 32 + 8 + 8 + 8 + 20
RECORD_BYTES = 32 + 8 + 8

PAPER_TOTAL = 10_000_000_000
PAPER_THRESHOLD = 5_100_000_000
PAPER_RESERVE = 3_000_000_000
PAPER_ACCOUNTS = 50_000


@dataclass(frozen=True)
class LoadEstimate:
    vester_list_len: int
    package_bytes: int
    verifications_per_sec: int


def vester_list_length(
    threshold: int = PAPER_THRESHOLD,
    reserve: int = PAPER_RESERVE,
    total: int = PAPER_TOTAL,
    accounts: int = PAPER_ACCOUNTS,
) -> int:
    """Vesters needed when the reserve holder vests first and the rest hold equal shares."""
    per_account = Fraction(total - reserve, accounts)
    return 1 + math.ceil(Fraction(threshold - reserve) / per_account)


def package_bytes(n_vesters: int, n_txs: int) -> int:
    return n_vesters * VESTER_ITEM_BYTES + n_txs * TX_BYTES


def verifications_per_sec(n_vesters: int, n_txs: int, package_period: int) -> int:
    # round half up, matching how the published figures are rounded
    q = Fraction(n_vesters + n_txs, package_period)
    return math.floor(q + Fraction(1, 2))


def load_model(
    n_vesters: int | None = None,
    n_txs: int = 480,
    tx_rate: float | None = None,
    package_period: int = 600,
) -> LoadEstimate:
    """Sizes and verification load for one package per ``package_period`` seconds.

    ``n_vesters`` defaults to the transparent-distribution vester count; if
    ``tx_rate`` is given, ``n_txs`` becomes ``round(tx_rate * package_period)``.
    """
    if n_vesters is None:
        n_vesters = vester_list_length()
    if tx_rate is not None:
        n_txs = round(Fraction(str(tx_rate)) * package_period)
    if n_vesters < 1 or n_txs < 0 or package_period < 1:
        raise ValueError("inputs must be positive")
    return LoadEstimate(
        n_vesters,
        package_bytes(n_vesters, n_txs),
        verifications_per_sec(n_vesters, n_txs, package_period),
    )


def balance_view_bytes(accounts: int) -> int:
    return accounts * RECORD_BYTES
