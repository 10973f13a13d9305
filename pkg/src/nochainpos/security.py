"""Bootstrapping a clean balance view under sybil attack: TILP and SSS."""

from __future__ import annotations

import hashlib
import hmac
import random
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .consensus import NoSamples, weighted_winner
from .core import BalanceView, KeyPair, ProtocolError


class InsufficientSeeds(ProtocolError):
    pass


class NotEnoughQualified(ProtocolError):
    pass


@dataclass(frozen=True)
class PeerDescriptor:
    node_id: int
    ip_label: str
    reachable: bool = True

    def __post_init__(self) -> None:
        if not self.ip_label:
            raise ValueError("ip_label must be non-empty")


@dataclass(frozen=True)
class Advert:
    """A peer's answer: the hash (and sn) of its current balance view."""

    peer: PeerDescriptor
    view_hash: bytes
    view_sn: int = 0


@dataclass(frozen=True)
class SybilAlert:
    reason: str


# -- TILP ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TILP:
    """A private set of trusted location labels.  Build it with a classmethod."""

    trusted: frozenset[str]

    def matches(self, peer: PeerDescriptor) -> bool:
        return peer.ip_label in self.trusted

    @classmethod
    def explicit(cls, labels: Iterable[str]) -> TILP:
        return cls(frozenset(labels))

    @classmethod
    def random_locations(cls, k: int, universe: Sequence[str], seed: int) -> TILP:
        """``k`` distinct locations drawn from ``universe``."""
        pool = sorted(set(universe))
        if k > len(pool):
            raise ValueError(f"cannot pick {k} locations from {len(pool)}")
        return cls(frozenset(random.Random(seed).sample(pool, k)))

    @classmethod
    def random_subset(cls, ratio: float, universe: Sequence[str], seed: int) -> TILP:
        """Each label of ``universe`` kept independently with probability ``ratio``."""
        rng = random.Random(seed)
        return cls(frozenset(label for label in sorted(set(universe)) if rng.random() < ratio))


def tilp_bootstrap(adverts: Sequence[Advert], pattern: TILP) -> bytes | SybilAlert:
    """Winner hash with weight 1 per reachable TILP-matching peer, 0 otherwise.

    When no reachable peer matches the pattern the node is probably
    surrounded by sybils and an alert is returned instead.
    """
    if not adverts:
        raise ValueError("no peers to bootstrap from")
    samples = [
        (a.view_hash, a.view_sn, 1 if pattern.matches(a.peer) else 0)
        for a in adverts
        if a.peer.reachable
    ]
    try:
        winner, _ = weighted_winner(samples)
    except NoSamples:
        return SybilAlert("no reachable peer matches the trusted location pattern")
    return winner


@dataclass(frozen=True)
class MutualConfirmation:
    confirmed: bool
    digest: bytes
    dissenters: tuple[str, ...] = ()


def mutual_confirm(sources: dict[str, bytes] | Sequence[tuple[str, bytes]]) -> MutualConfirmation:
    """Confirmed iff every independent source reports the same view hash.

    On mismatch the reference is the most common hash (ties: first seen) and
    every source disagreeing with it is named.
    """
    pairs = list(sources.items()) if isinstance(sources, dict) else list(sources)
    if len(pairs) < 2:
        raise ValueError("mutual confirmation needs at least two sources")
    counts = Counter(h for _, h in pairs)
    top = max(counts.values())
    reference = next(h for _, h in pairs if counts[h] == top)
    dissenters = tuple(name for name, h in pairs if h != reference)
    return MutualConfirmation(not dissenters, reference, dissenters)


# -- SSS -----------------------------------------------------------------------------


def _seed_keystream(owner: KeyPair, holder: str) -> bytes:
    return hmac.new(owner.secret, b"sss-pad:" + holder.encode(), hashlib.sha256).digest()[:8]


def _seed_mac(owner: KeyPair, holder: str, sealed: bytes) -> bytes:
    return hmac.new(owner.secret, b"sss-mac:" + holder.encode() + sealed, hashlib.sha256).digest()


@dataclass(frozen=True)
class SecuritySeed:
    """An opaque weight token left on a holder's machine.

    ``sealed`` hides the weight; only the owner's secret opens it and checks
    that it was issued for this holder.
    """

    owner: bytes
    holder: str
    sealed: bytes
    mac: bytes

    @classmethod
    def seal(cls, owner: KeyPair, holder: str, weight: int) -> SecuritySeed:
        if weight < 0:
            raise ValueError("weight must be >= 0")
        pad = _seed_keystream(owner, holder)
        sealed = bytes(a ^ b for a, b in zip(weight.to_bytes(8, "little"), pad))
        return cls(owner.public, holder, sealed, _seed_mac(owner, holder, sealed))

    def open(self, owner: KeyPair, holder: str) -> int | None:
        """The weight, or ``None`` if the seed was not issued by ``owner`` for ``holder``."""
        if self.owner != owner.public or self.holder != holder:
            return None
        if not hmac.compare_digest(self.mac, _seed_mac(owner, holder, self.sealed)):
            return None
        pad = _seed_keystream(owner, holder)
        return int.from_bytes(bytes(a ^ b for a, b in zip(self.sealed, pad)), "little")


def sss_deposit(owner: KeyPair, holder: str, holder_balance: int, store: dict[bytes, SecuritySeed]) -> dict[bytes, SecuritySeed]:
    """Leave (or refresh) our seed in ``holder``'s store, weighted by its balance."""
    updated = dict(store)
    updated[owner.public] = SecuritySeed.seal(owner, holder, holder_balance)
    return updated


@dataclass(frozen=True)
class SeedResponse:
    holder: str
    seed: SecuritySeed | None
    view_hash: bytes
    view_sn: int = 0


def sss_weights(owner: KeyPair, responses: Iterable[SeedResponse]) -> list[tuple[bytes, int, int]]:
    out = []
    for resp in responses:
        weight = resp.seed.open(owner, resp.holder) if resp.seed is not None else None
        out.append((resp.view_hash, resp.view_sn, weight or 0))
    return out


def sss_recover(
    owner: KeyPair,
    responses: Iterable[SeedResponse],
    total_supply: int,
    floor_fraction: Fraction = Fraction(1, 100),
) -> bytes:
    """Winner hash among responders weighted by the seeds we left with them.

    Responders without a valid seed weigh nothing.  Raises ``InsufficientSeeds``
    when the total responding weight is below ``floor_fraction`` of supply.
    """
    samples = sss_weights(owner, responses)
    weight = sum(w for _, _, w in samples)
    if weight == 0 or weight * floor_fraction.denominator < floor_fraction.numerator * total_supply:
        raise InsufficientSeeds(f"responding seed weight {weight} below floor")
    return weighted_winner(samples)[0]


# -- short-term anchoring ----------------------------------------------------------------


def short_term_anchor(view: BalanceView, k: int, min_balance: int, seed: int) -> tuple[bytes, ...]:
    """``k`` accounts with at least ``min_balance``, picked reproducibly from ``view``."""
    qualified = [r.pubkey for r in view.records if r.balance >= min_balance]
    if k > len(qualified):
        raise NotEnoughQualified(f"{len(qualified)} qualified accounts, {k} requested")
    return tuple(sorted(random.Random(seed).sample(qualified, k)))


def anchored_winner(
    view: BalanceView, anchors: Sequence[bytes], adverts: Iterable[tuple[bytes, bytes, int]]
) -> tuple[bytes, int]:
    """Weighted winner over ``(account, view_hash, view_sn)`` adverts.

    Only anchor accounts vote, each with its balance in the clean ``view``.
    """
    anchor_set = set(anchors)
    samples = [
        (h, sn, view.balance_of(acct) if acct in anchor_set else 0) for acct, h, sn in adverts
    ]
    return weighted_winner(samples)
