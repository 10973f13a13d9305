"""Pure state transitions from a baseview to its successor balance view."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .core import (
    DEFAULT_SCHEME,
    KEY_SIZE,
    RECYCLED_KEY,
    ZERO_DIGEST,
    BalanceRecord,
    BalanceView,
    ProtocolError,
    SignatureScheme,
    Transaction,
    TxPackage,
    ViolationReport,
    ViolationType,
    package_digest,
    verify_vester_chain,
)

DEFAULT_THRESHOLD = Fraction(51, 100)


class PreconditionViolated(ProtocolError):
    pass


class InvalidProofs(ProtocolError):
    pass


class NothingToRedistribute(ProtocolError):
    pass


class ConservationError(AssertionError):
    pass


class Rejection(enum.Enum):
    BASEVIEW_MISMATCH = "BaseviewMismatch"
    UNKNOWN_SENDER = "UnknownSender"
    BAD_SIGNATURE = "BadSignature"
    INSUFFICIENT_FUNDS = "InsufficientFunds"
    BAD_RECEIVER = "BadReceiver"


# Incremented by every conservation check; the acceptance suite reads it.
conservation_checks = 0


def check_conservation(view: BalanceView, total_supply: int) -> None:
    global conservation_checks
    conservation_checks += 1
    if view.total_supply != total_supply:
        raise ConservationError(
            f"view sn={view.sn} sums to {view.total_supply}, expected {total_supply}"
        )


def stake_exceeds(stake: int, total_supply: int, threshold: Fraction = DEFAULT_THRESHOLD) -> bool:
    """Strict comparison ``stake > threshold * total_supply`` in exact arithmetic."""
    return stake * threshold.denominator > threshold.numerator * total_supply


def vester_stake(view: BalanceView, pkg: TxPackage) -> int:
    """Sum of distinct vesters' balances in ``view``."""
    return sum(view.balance_of(k) for k in dict.fromkeys(pkg.vesters))


# -- validation ------------------------------------------------------------------


def _check_tx(
    ref: tuple[int, bytes],
    balance_of,
    tx: Transaction,
    scheme: SignatureScheme,
) -> Rejection | None:
    if (tx.base_view_sn, tx.base_view_hash) != ref:
        return Rejection.BASEVIEW_MISMATCH
    balance = balance_of(tx.sender)
    if balance is None:
        return Rejection.UNKNOWN_SENDER
    if len(tx.receiver) != KEY_SIZE or tx.receiver == RECYCLED_KEY:
        return Rejection.BAD_RECEIVER
    if not tx.verify(scheme):
        return Rejection.BAD_SIGNATURE
    if balance < tx.volume + tx.tx_fee:
        return Rejection.INSUFFICIENT_FUNDS
    return None


def validate_transaction(
    view: BalanceView, tx: Transaction, scheme: SignatureScheme = DEFAULT_SCHEME
) -> Rejection | None:
    """``None`` if ``tx`` is acceptable on ``view``, otherwise the rejection reason."""
    return _check_tx(view.ref, view.balances.get, tx, scheme)


# -- proportional division ---------------------------------------------------------


def largest_remainder(total: int, weights: Sequence[tuple[bytes, int]]) -> list[tuple[bytes, int]]:
    """Split ``total`` proportionally to integer weights, exactly.

    Floor shares first; leftover units go one each to the largest fractional
    remainders, ties broken by key bytes.  All-zero weights get nothing.
    """
    weight_sum = sum(w for _, w in weights)
    if weight_sum == 0 or total == 0:
        return [(k, 0) for k, _ in weights]
    shares = []
    for key, w in weights:
        q, rem = divmod(total * w, weight_sum)
        shares.append([key, q, rem])
    leftover = total - sum(s[1] for s in shares)
    for s in sorted(shares, key=lambda s: (-s[2], s[0]))[:leftover]:
        s[1] += 1
    return [(k, q) for k, q, _ in shares]


@dataclass(frozen=True)
class FeeSplit:
    agent_share: int
    vester_shares: tuple[tuple[bytes, int], ...]
    dust: int

    @property
    def total(self) -> int:
        return self.agent_share + sum(v for _, v in self.vester_shares) + self.dust


def split_fees(total_fees: int, agent: bytes, vesters: Sequence[tuple[bytes, int]]) -> FeeSplit:
    """Half (floored) to the agent, the rest to vesters by stake; dust is recycled."""
    if total_fees < 0:
        raise ValueError("total_fees must be non-negative")
    agent_share = total_fees // 2
    pool = total_fees - agent_share
    shares = tuple(largest_remainder(pool, vesters))
    dust = pool - sum(v for _, v in shares)
    return FeeSplit(agent_share, shares, dust)


# -- transitions -------------------------------------------------------------------


class _Draft:
    """Mutable scratch state used while building a successor view."""

    def __init__(self, view: BalanceView) -> None:
        self.records = {r.pubkey: [r.balance, r.time_last_activity] for r in view.records}
        self.recycled = view.recycled.balance
        self.recycled_time = view.recycled.time_last_activity

    def balance_of(self, key: bytes) -> int | None:
        rec = self.records.get(key)
        return None if rec is None else rec[0]

    def credit(self, key: bytes, amount: int, now: int | None) -> None:
        if key == RECYCLED_KEY:
            self.recycled += amount
            return
        rec = self.records.setdefault(key, [0, 0 if now is None else now])
        rec[0] += amount
        if now is not None:
            rec[1] = now

    def debit(self, key: bytes, amount: int, now: int | None) -> None:
        rec = self.records[key]
        if rec[0] < amount:
            raise PreconditionViolated("debit below zero")
        rec[0] -= amount
        if now is not None:
            rec[1] = now

    def to_recycled(self, key: bytes, amount: int, now: int) -> None:
        self.records[key][0] -= amount
        self.recycled += amount
        self.recycled_time = max(self.recycled_time, now)

    def build(self, sn: int, base_sn: int, base_hash: bytes, pkg_hash: bytes) -> BalanceView:
        records = (BalanceRecord(k, b, t) for k, (b, t) in self.records.items())
        return BalanceView.create(
            sn, base_sn, base_hash, pkg_hash, records,
            BalanceRecord(RECYCLED_KEY, self.recycled, self.recycled_time),
        )


def apply_tx_package_51(
    base: BalanceView,
    pkg: TxPackage,
    now: int | None = None,
    threshold: Fraction = DEFAULT_THRESHOLD,
    scheme: SignatureScheme = DEFAULT_SCHEME,
) -> BalanceView:
    """Successor of ``base`` after executing ``pkg`` in order.

    Transactions that fail against the evolving state are skipped.  Violation
    reports are applied if their proofs verify (each offense at most once per
    package).  Fees are split between agent and vesters with stakes read from
    ``base``.  ``now`` defaults to the package's last-item timestamp so every
    node derives the same successor.
    """
    if not pkg.flag_51:
        raise PreconditionViolated("flag_51 not set")
    if pkg.ref != base.ref:
        raise PreconditionViolated("package baseview does not match")
    if not pkg.verify_header(scheme) or not verify_vester_chain(pkg, scheme):
        raise PreconditionViolated("bad agent signature or vester chain")
    if not stake_exceeds(vester_stake(base, pkg), base.total_supply, threshold):
        raise PreconditionViolated("vesting stake does not exceed threshold")
    if now is None:
        now = pkg.last_item_timestamp

    draft = _Draft(base)
    fees = 0
    punished: set = set()
    for item in pkg.transactions:
        if isinstance(item, ViolationReport):
            if item.offense in punished or not verify_violation(item, scheme):
                continue
            punished.add(item.offense)
            if item.accused in draft.records:
                draft.to_recycled(item.accused, draft.records[item.accused][0] // 2, now)
            continue
        if _check_tx(base.ref, draft.balance_of, item, scheme) is not None:
            continue
        draft.debit(item.sender, item.volume + item.tx_fee, now)
        draft.credit(item.receiver, item.volume, now)
        fees += item.tx_fee

    vesters = [(k, base.balance_of(k)) for k in dict.fromkeys(pkg.vesters)]
    split = split_fees(fees, pkg.agent_pubkey, vesters)
    draft.credit(pkg.agent_pubkey, split.agent_share, now)
    for key, share in split.vester_shares:
        draft.credit(key, share, now)
    draft.recycled += split.dust

    view = draft.build(base.sn + 1, base.sn, base.hash, package_digest(pkg))
    check_conservation(view, base.total_supply)
    return view


def verify_violation(report: ViolationReport, scheme: SignatureScheme = DEFAULT_SCHEME) -> bool:
    """True iff the report proves a rule-2 or rule-3 breach by ``report.accused``."""
    try:
        if not scheme.verify(report.reporter, report.signing_bytes(), report.signature):
            return False
        a, b = report.proofs
        if a == b or a.header.base_view_sn != b.header.base_view_sn:
            return False
        if not (a.verify(scheme) and b.verify(scheme)):
            return False
        if report.violation_type == ViolationType.DOUBLE_PACKAGE:
            return (
                not a.vester_items and not b.vester_items
                and a.header.agent_pubkey == b.header.agent_pubkey == report.accused
                and a.header != b.header
            )
        if report.violation_type == ViolationType.DOUBLE_VEST:
            return bool(a.vester_items and b.vester_items) and a.signer == b.signer == report.accused
    except Exception:
        return False
    return False


def apply_violation(
    view: BalanceView,
    report: ViolationReport,
    now: int = 0,
    scheme: SignatureScheme = DEFAULT_SCHEME,
) -> BalanceView:
    """Move half (floored) of the accused balance into the recycled record.

    Standalone governance transition: sn and chain links are left as they are.
    """
    if not verify_violation(report, scheme):
        raise InvalidProofs(report.accused.hex())
    draft = _Draft(view)
    if report.accused in draft.records:
        draft.to_recycled(report.accused, draft.records[report.accused][0] // 2, now)
    out = draft.build(view.sn, view.base_view_sn, view.base_view_hash, view.tx_package_51_hash)
    check_conservation(out, view.total_supply)
    return out


@dataclass(frozen=True)
class DeflationPolicy:
    decade_length: int = 10 * 365 * 24 * 3600
    base_rate: Fraction = Fraction(1, 100)

    def rate(self, decade: int) -> Fraction:
        if decade < 1:
            return Fraction(0)
        return min(Fraction(1), self.base_rate * 2 ** (decade - 1))


def apply_deflation(
    view: BalanceView,
    now: int,
    policy: DeflationPolicy = DeflationPolicy(),
    previous: int | None = None,
) -> BalanceView:
    """Tax inactive accounts once for every decade boundary crossed since ``previous``.

    ``previous`` is the time of the last application; ``None`` means no
    boundary has been taxed yet.  Activity times are left untouched.
    """
    draft = _Draft(view)
    for key, (balance, last) in list(draft.records.items()):
        idle_now = max(0, now - last) // policy.decade_length
        idle_before = 0 if previous is None else max(0, previous - last) // policy.decade_length
        for decade in range(idle_before + 1, idle_now + 1):
            tax = draft.records[key][0] * policy.rate(decade)
            draft.to_recycled(key, tax.numerator // tax.denominator, now)
    out = draft.build(view.sn, view.base_view_sn, view.base_view_hash, view.tx_package_51_hash)
    check_conservation(out, view.total_supply)
    return out


def redistribute_recycled(view: BalanceView) -> BalanceView:
    """Return recycled money to every account in proportion to its balance."""
    if view.recycled.balance == 0:
        raise NothingToRedistribute("recycled balance is zero")
    weights = [(r.pubkey, r.balance) for r in view.records]
    if not any(w for _, w in weights):
        raise NothingToRedistribute("no account holds a positive balance")
    draft = _Draft(view)
    for key, share in largest_remainder(view.recycled.balance, weights):
        draft.records[key][0] += share
        draft.recycled -= share
    out = draft.build(view.sn, view.base_view_sn, view.base_view_hash, view.tx_package_51_hash)
    check_conservation(out, view.total_supply)
    return out


def make_view(balances: Iterable[tuple[bytes, int]], recycled: int = 0, sn: int = 0) -> BalanceView:
    """Convenience constructor for a root view with zeroed chain links."""
    records = [BalanceRecord(k, b, 0) for k, b in balances]
    return BalanceView.create(sn, 0, ZERO_DIGEST, ZERO_DIGEST, records, recycled)
