"""Initial balance views: transparent registration and legacy snapshot import."""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Sequence

from .core import (
    DEFAULT_SCHEME,
    KEY_SIZE,
    RECYCLED_KEY,
    ZERO_DIGEST,
    BalanceRecord,
    BalanceView,
    KeyPair,
    ProtocolError,
    SignatureScheme,
    canonical_serialize,
    deserialize,
    digest,
)
from .ledger import check_conservation

DEFAULT_TOTAL_SUPPLY = 10_000_000_000


class NoRegistrants(ProtocolError):
    pass


class ParseError(ProtocolError, ValueError):
    pass


class EmptySnapshot(ProtocolError):
    pass


class AllZero(ProtocolError):
    pass


class RegistrationRejection(enum.Enum):
    BAD_SIGNATURE = "BadSignature"
    NOT_ELIGIBLE = "NotEligible"
    ALREADY_REGISTERED = "AlreadyRegistered"
    CAPACITY_FULL = "CapacityFull"
    EXPIRED = "Expired"


@dataclass(frozen=True)
class RegistrationMessage:
    old_pubkey: bytes
    new_pubkey: bytes
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return b"register:" + self.old_pubkey + self.new_pubkey

    @classmethod
    def create(cls, old: KeyPair, new_pubkey: bytes, scheme: SignatureScheme = DEFAULT_SCHEME) -> RegistrationMessage:
        unsigned = cls(old.public, new_pubkey)
        return replace(unsigned, signature=scheme.sign(old, unsigned.signing_bytes()))


@dataclass(frozen=True)
class DistributionPolicy:
    sponsor_pubkey: bytes
    total_supply: int = DEFAULT_TOTAL_SUPPLY
    sponsor_fraction: Fraction = Fraction(3, 10)
    max_registrants: int = 50_000
    deadline: int = 6 * 30 * 24 * 3600
    # "equal": the whole remainder is shared by whoever registered.
    # "quota": each registrant gets remainder / max_registrants; the unclaimed
    # part goes to ``unclaimed_to``.
    split: str = "equal"
    unclaimed_to: str = "recycled"

    def __post_init__(self) -> None:
        if not 0 <= self.sponsor_fraction <= 1:
            raise ValueError("sponsor_fraction must lie in [0, 1]")
        if self.max_registrants < 1:
            raise ValueError("max_registrants must be >= 1")
        if self.split not in ("equal", "quota") or self.unclaimed_to not in ("recycled", "sponsor"):
            raise ValueError("unknown split or unclaimed_to option")


@dataclass
class Registrar:
    """The sponsor's side of the registration window."""

    policy: DistributionPolicy
    eligible: frozenset[bytes]
    scheme: SignatureScheme = DEFAULT_SCHEME
    accepted: list[RegistrationMessage] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._claimed = {m.old_pubkey for m in self.accepted}

    def verify_registration(self, msg: RegistrationMessage, now: int = 0) -> RegistrationRejection | None:
        if not self.scheme.verify(msg.old_pubkey, msg.signing_bytes(), msg.signature):
            return RegistrationRejection.BAD_SIGNATURE
        if msg.old_pubkey not in self.eligible:
            return RegistrationRejection.NOT_ELIGIBLE
        if msg.old_pubkey in self._claimed:
            return RegistrationRejection.ALREADY_REGISTERED
        if now > self.policy.deadline:
            return RegistrationRejection.EXPIRED
        if len(self.accepted) >= self.policy.max_registrants:
            return RegistrationRejection.CAPACITY_FULL
        return None

    def register(self, msg: RegistrationMessage, now: int = 0) -> RegistrationRejection | None:
        reason = self.verify_registration(msg, now)
        if reason is None:
            self.accepted.append(msg)
            self._claimed.add(msg.old_pubkey)
        return reason


def _root_view(balances: dict[bytes, int], recycled: int) -> BalanceView:
    records = (BalanceRecord(k, b, 0) for k, b in balances.items())
    return BalanceView.create(0, 0, ZERO_DIGEST, ZERO_DIGEST, records, recycled)


def build_initial_view(policy: DistributionPolicy, registrations: Sequence[RegistrationMessage]) -> BalanceView:
    """Sponsor share plus an equal split of the remainder; dust is recycled."""
    if not registrations:
        raise NoRegistrants("at least one registration is required")
    total = policy.total_supply
    sponsor = total * policy.sponsor_fraction.numerator // policy.sponsor_fraction.denominator
    rest = total - sponsor
    n = len(registrations)
    divisor = n if policy.split == "equal" else policy.max_registrants
    each = rest // divisor
    leftover = rest - each * n
    balances: dict[bytes, int] = {}
    for msg in registrations:
        if msg.new_pubkey in balances or msg.new_pubkey in (policy.sponsor_pubkey, RECYCLED_KEY):
            raise ValueError("registrations must carry distinct new keys")
        balances[msg.new_pubkey] = each
    recycled = leftover
    if policy.split == "quota" and policy.unclaimed_to == "sponsor":
        unclaimed = each * (policy.max_registrants - n)
        sponsor += unclaimed
        recycled -= unclaimed
    balances[policy.sponsor_pubkey] = sponsor
    view = _root_view(balances, recycled)
    check_conservation(view, total)
    return view


def _account_key(token: str) -> bytes:
    try:
        raw = bytes.fromhex(token)
    except ValueError as exc:
        raise ParseError(f"bad hex pubkey {token!r}") from exc
    # legacy keys of other widths (e.g. 33-byte compressed) are hashed to 32 bytes
    return raw if len(raw) == KEY_SIZE else digest(raw)


def parse_snapshot(text: str) -> list[tuple[bytes, int]]:
    """``hex_pubkey balance`` per line; ``#`` starts a comment."""
    entries: dict[bytes, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"line {lineno}: expected 'pubkey balance'")
        key = _account_key(parts[0])
        try:
            balance = int(parts[1])
        except ValueError as exc:
            raise ParseError(f"line {lineno}: bad balance {parts[1]!r}") from exc
        if balance < 0:
            raise ParseError(f"line {lineno}: negative balance")
        if key in entries or key == RECYCLED_KEY:
            raise ParseError(f"line {lineno}: duplicate or reserved pubkey")
        entries[key] = balance
    return list(entries.items())


def import_snapshot(source: str | os.PathLike | Iterable[tuple[bytes, int]], new_total: int) -> BalanceView:
    """Divide ``new_total`` over the snapshot in proportion to legacy balances."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            entries = parse_snapshot(fh.read())
    else:
        entries = list(source)
    if not entries:
        raise EmptySnapshot("snapshot has no accounts")
    legacy_sum = sum(b for _, b in entries)
    if legacy_sum == 0:
        raise AllZero("every legacy balance is zero")
    balances = {k: new_total * b // legacy_sum for k, b in entries}
    view = _root_view(balances, new_total - sum(balances.values()))
    check_conservation(view, new_total)
    return view


def write_view(view: BalanceView, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(canonical_serialize(view))


def read_view(path: str | os.PathLike) -> BalanceView:
    with open(path, "rb") as fh:
        return deserialize(BalanceView, fh.read())
