"""Per-participant state machine: agent, vester and updater behaviour.

A :class:`Node` is owned by a single execution context; the simulator feeds
it events one at a time.  Methods mutate the node in place.
"""

from __future__ import annotations

import logging
import random
from collections import Counter, OrderedDict
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, NamedTuple

from .consensus import ConsensusParams, Sample, accept_winner, stability_step, weighted_winner
from .core import (
    DEFAULT_SCHEME,
    BalanceView,
    KeyPair,
    PackageProof,
    ProtocolError,
    SignatureScheme,
    Transaction,
    TxPackage,
    ViolationReport,
    ViolationType,
    _Writer,
    append_vester,
    canonical_serialize,
    package_digest,
    verify_vester_chain,
)
from .ledger import (
    PreconditionViolated,
    apply_tx_package_51,
    stake_exceeds,
    validate_transaction,
    verify_violation,
    vester_stake,
)

log = logging.getLogger(__name__)


class FetchFailed(ProtocolError):
    pass


class SignatureRefused(ProtocolError):
    pass


@dataclass
class Criteria:
    """Local thresholds a node applies as agent and as vester."""

    min_tx_fee: int = 0
    min_fee_per_package: int = 0
    min_agent_balance: int = 0
    min_vester_balance: int = 0
    max_items: int = 10_000
    max_package_bytes: int = 4 * 1024 * 1024
    vester_reserve_bytes: int = 15_001 * 96

    def __post_init__(self) -> None:
        for name in ("min_tx_fee", "min_fee_per_package", "min_agent_balance", "min_vester_balance"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class BaseviewAgreement:
    baseview_sn: int
    baseview_hash: bytes
    sender: bytes
    receiver: bytes
    receiver_signature: bytes = b""

    def signing_bytes(self) -> bytes:
        w = _Writer()
        w.u64(self.baseview_sn)
        w.fixed(self.baseview_hash)
        w.fixed(self.sender)
        return bytes(w.buf)

    def verify(self, scheme: SignatureScheme = DEFAULT_SCHEME) -> bool:
        return scheme.verify(self.receiver, self.signing_bytes(), self.receiver_signature)


class UpdateResult(NamedTuple):
    adopted: bool
    promoted: bool


@dataclass
class Node:
    keys: KeyPair
    baseview: BalanceView
    params: ConsensusParams
    agent: bool = False
    vester: bool = True
    criteria: Criteria = field(default_factory=Criteria)
    audit_ratio: float = 0.001
    audit_cap: int = 4096
    blacklist_decay: int = 10
    scheme: SignatureScheme = DEFAULT_SCHEME

    def __post_init__(self) -> None:
        self.current_view: BalanceView = self.baseview
        self.stability_counter = 0
        self.promotions = 0
        self.pending_txs: list[Transaction] = []
        self.pending_reports: dict[tuple, ViolationReport] = {}
        self.packaged_sns: set[int] = set()
        self.vested_sns: dict[int, bytes] = {}
        self.accepted_51_sns: set[int] = set()
        self.punished_offenses: set[tuple] = set()
        self.reported_offenses: set[tuple] = set()
        # sn -> {"agents": {agent: PackageProof}, "vesters": {vester: PackageProof}}
        self.audit_buffer: OrderedDict[int, dict] = OrderedDict()
        self._audit_size = 0
        self.blacklist: dict[bytes, int] = {}
        self.sss_store: dict[bytes, object] = {}
        self.archive: dict[int, TxPackage] = {}
        self.agreements: list[tuple[BaseviewAgreement, TxPackage, TxPackage]] = []
        self.stats: Counter = Counter()

    @property
    def pubkey(self) -> bytes:
        return self.keys.public

    @property
    def total_supply(self) -> int:
        return self.baseview.total_supply

    @property
    def is_stable(self) -> bool:
        """Actions are allowed only while the current view is the promoted baseview."""
        return self.current_view.hash == self.baseview.hash

    def stake_of(self, pubkey: bytes) -> int:
        return self.baseview.balance_of(pubkey)

    # -- sender ----------------------------------------------------------------

    def make_transaction(self, receiver: bytes, volume: int, tx_fee: int, now: int) -> Transaction:
        return Transaction.create(self.baseview.ref, self.keys, receiver, volume, tx_fee, now, self.scheme)

    # -- agent -------------------------------------------------------------------

    def agent_collect(self, tx: Transaction) -> bool:
        """Queue ``tx`` if it shares our baseview, passes our criteria and validates."""
        if not self.agent:
            return False
        reason = None
        if (tx.base_view_sn, tx.base_view_hash) != self.baseview.ref:
            reason = "stale_baseview"
        elif tx.tx_fee < self.criteria.min_tx_fee:
            reason = "below_fee"
        elif self.is_blacklisted(tx.sender):
            reason = "blacklisted"
        elif validate_transaction(self.baseview, tx, self.scheme) is not None:
            reason = "invalid"
        elif tx in self.pending_txs:
            reason = "duplicate"
        if reason:
            self.stats[f"tx_dropped_{reason}"] += 1
            return False
        self.pending_txs.append(tx)
        return True

    def submit_report(self, report: ViolationReport) -> bool:
        if not self.agent or report.offense in self.punished_offenses:
            return False
        if report.offense in self.pending_reports or not verify_violation(report, self.scheme):
            return False
        self.pending_reports[report.offense] = report
        return True

    def agent_make_package(self, now: int) -> TxPackage | None:
        """At most one package per baseview sn: reports first, then txs by fee."""
        sn = self.baseview.sn
        if not self.agent or sn in self.packaged_sns or not self.is_stable:
            return None
        if self.stake_of(self.pubkey) < self.criteria.min_agent_balance:
            return None
        reports = [r for k, r in self.pending_reports.items() if k not in self.punished_offenses]
        txs = [t for t in self.pending_txs if (t.base_view_sn, t.base_view_hash) == self.baseview.ref]
        if not reports and not txs:
            return None
        txs.sort(key=lambda t: -t.tx_fee)
        budget = self.criteria.max_package_bytes - self.criteria.vester_reserve_bytes
        items: list = []
        used = 256
        for item in reports + txs:
            size = len(canonical_serialize(item)) + 1
            if len(items) >= self.criteria.max_items or used + size > budget:
                break
            items.append(item)
            used += size
        pkg = TxPackage.create(self.baseview.ref, self.keys, items, now, self.scheme)
        self.packaged_sns.add(sn)
        self.stats["packages_made"] += 1
        return pkg

    # -- vester ------------------------------------------------------------------

    def can_vest(self, pkg: TxPackage) -> bool:
        crit = self.criteria
        if not self.vester or not self.is_stable:
            return False
        if pkg.ref != self.baseview.ref or pkg.base_view_sn in self.vested_sns:
            return False
        if pkg.base_view_sn in self.accepted_51_sns or self.pubkey in pkg.vesters:
            return False
        if self.is_blacklisted(pkg.agent_pubkey):
            return False
        if self.stake_of(pkg.agent_pubkey) < crit.min_agent_balance:
            return False
        fees = sum(t.tx_fee for t in pkg.transactions if isinstance(t, Transaction))
        if fees < crit.min_fee_per_package:
            return False
        return pkg.verify_header(self.scheme) and verify_vester_chain(pkg, self.scheme)

    def vester_vest(self, pkg: TxPackage, now: int) -> TxPackage | None:
        """Append our item once per baseview sn; ``None`` if we may not vest."""
        if not self.can_vest(pkg):
            return None
        vested = append_vester(pkg, self.keys, now, self.scheme)
        self.vested_sns[pkg.base_view_sn] = package_digest(pkg)
        self.stats["vests"] += 1
        return vested

    # -- tx_package_51 -------------------------------------------------------------

    def check_and_finalize(self, pkg: TxPackage, now: int | None = None) -> TxPackage | None:
        """Accept ``pkg`` as this sn's tx_package_51 if its vesting exceeds the threshold.

        Sets ``flag_51`` when we are the node that found the majority.  Returns
        the accepted package, or ``None`` (not enough stake, wrong baseview, or
        an earlier acceptance at this sn).
        """
        sn = pkg.base_view_sn
        if pkg.ref != self.baseview.ref or sn in self.accepted_51_sns:
            return None
        stake = vester_stake(self.baseview, pkg)
        if not stake_exceeds(stake, self.total_supply, self.params.threshold_fraction):
            return None
        if not pkg.flag_51:
            pkg = replace(pkg, flag_51=True)
            self.stats["finalized"] += 1
        try:
            view = apply_tx_package_51(
                self.baseview, pkg, threshold=self.params.threshold_fraction, scheme=self.scheme
            )
        except PreconditionViolated:
            self.stats["bad_51"] += 1
            return None
        self.accepted_51_sns.add(sn)
        self.archive[sn] = pkg
        self._learn_offenses(pkg)
        self._set_current(view)
        return pkg

    def _learn_offenses(self, pkg: TxPackage) -> None:
        for item in pkg.transactions:
            if isinstance(item, ViolationReport):
                self.punished_offenses.add(item.offense)
                self.pending_reports.pop(item.offense, None)

    def _set_current(self, view: BalanceView) -> None:
        if view.hash != self.current_view.hash:
            self.current_view = view
            self.stats["view_changes"] += 1

    # -- updating ----------------------------------------------------------------

    def update_step(
        self,
        samples: Iterable[Sample],
        fetch: Callable[[bytes], tuple[BalanceView, TxPackage | None] | None],
        complete: bool = True,
    ) -> UpdateResult:
        """One Converged Consensus update from ``samples`` of peers' current views.

        Zero-weight samples carry no vote.  A sample set with no positive weight
        leaves the counter untouched.  An incomplete sample (some chosen peer
        did not answer) may still move the view but cannot count towards
        stability, so the counter is cleared.
        """
        positive = [s for s in samples if s.weight > 0]
        if not positive:
            self.stats["updates_no_info"] += 1
            if not complete:
                self.stability_counter = 0
            return UpdateResult(False, False)
        previous = self.current_view.hash
        winner, winner_sn = weighted_winner(positive)
        adopted = False
        if accept_winner(self.baseview.sn, winner_sn) and winner != previous:
            got = fetch(winner)
            if got is None or got[0].hash != winner or not self._plausible(got[0]):
                self.stats["fetch_failed"] += 1
                raise FetchFailed(winner.hex())
            view, pkg51 = got
            self._set_current(view)
            self.accepted_51_sns.add(view.sn - 1)
            if pkg51 is not None:
                self._learn_offenses(pkg51)
            adopted = True
        counter, promoted = stability_step(
            self.stability_counter, previous, self.current_view.hash, self.params.N
        )
        if not complete:
            counter, promoted = 0, False
        self.stability_counter = counter
        if promoted:
            self.stability_counter = 0
            promoted = self.promote()
        return UpdateResult(adopted, promoted)

    def _plausible(self, view: BalanceView) -> bool:
        return view.sn > self.baseview.sn and view.total_supply == self.total_supply

    def promote(self) -> bool:
        """Make the current view the baseview; ``False`` if it is not newer."""
        if self.current_view.sn <= self.baseview.sn:
            return False
        self.baseview = self.current_view
        self.promotions += 1
        sn = self.baseview.sn
        self.pending_txs = [t for t in self.pending_txs if t.base_view_sn == sn]
        for old in [k for k in self.audit_buffer if k < sn - 1]:
            self._audit_size -= self._entry_size(self.audit_buffer.pop(old))
        for old in [k for k in self.archive if k < sn - 1]:
            del self.archive[old]
        for old in [k for k in self.vested_sns if k < sn - 1]:
            del self.vested_sns[old]
        self.blacklist = {k: exp for k, exp in self.blacklist.items() if exp > self.promotions}
        self.stats["promotions"] += 1
        return True

    # -- auditing ------------------------------------------------------------------

    @staticmethod
    def _entry_size(entry: dict) -> int:
        return len(entry["agents"]) + sum(len(v) for v in entry["vesters"].values())

    def audit_package(self, pkg: TxPackage, rng: random.Random) -> list[ViolationReport]:
        """Check ``pkg`` against buffered packages; maybe buffer it.

        Returns reports for any newly seen double-packaging or double-vesting
        (including a vester that appears twice in ``pkg`` itself).
        """
        sn = pkg.base_view_sn
        entry = self.audit_buffer.get(sn, {"agents": {}, "vesters": {}})
        found: list[tuple[ViolationType, bytes, PackageProof, PackageProof]] = []

        header_proof = pkg.proof_for(None)
        seen = entry["agents"].get(pkg.agent_pubkey)
        if seen is not None and seen.header != header_proof.header:
            found.append((ViolationType.DOUBLE_PACKAGE, pkg.agent_pubkey, seen, header_proof))

        own: dict[bytes, PackageProof] = {}
        vester_proofs = []
        for i, item in enumerate(pkg.vester_items):
            proof = pkg.proof_for(i)
            key = item.vester_pubkey
            if key in own:
                found.append((ViolationType.DOUBLE_VEST, key, own[key], proof))
                continue
            own[key] = proof
            vester_proofs.append((key, proof))
            for other in entry["vesters"].get(key, ()):
                if other != proof:
                    found.append((ViolationType.DOUBLE_VEST, key, other, proof))
                    break

        if rng.random() < self.audit_ratio:
            entry["agents"].setdefault(pkg.agent_pubkey, header_proof)
            for key, proof in vester_proofs:
                stored = entry["vesters"].setdefault(key, [])
                if proof not in stored and len(stored) < 2:
                    stored.append(proof)
                    self._audit_size += 1
            if sn not in self.audit_buffer:
                self.audit_buffer[sn] = entry
                self._audit_size += 1
            while self._audit_size > self.audit_cap and len(self.audit_buffer) > 1:
                _, evicted = self.audit_buffer.popitem(last=False)
                self._audit_size -= self._entry_size(evicted)

        reports = []
        for vtype, accused, a, b in found:
            report = ViolationReport.create(vtype, self.keys, accused, (a, b), pkg.timestamp, self.scheme)
            if report.offense in self.reported_offenses or report.offense in self.punished_offenses:
                continue
            if not verify_violation(report, self.scheme):
                continue
            self.reported_offenses.add(report.offense)
            self.stats["violations_detected"] += 1
            reports.append(report)
        return reports

    # -- local punishment ------------------------------------------------------------

    def blacklist_check(self, actor: bytes, actor_baseview: tuple[int, bytes]) -> bool:
        """Blacklist ``actor`` if it acted on a different view at our baseview sn."""
        sn, h = actor_baseview
        if sn == self.baseview.sn and h != self.baseview.hash and actor != self.pubkey:
            self.blacklist[actor] = self.promotions + self.blacklist_decay
            self.stats["blacklisted"] += 1
            return True
        return False

    def is_blacklisted(self, actor: bytes) -> bool:
        return actor in self.blacklist

    # -- deny-reception prevention -----------------------------------------------------

    def sign_agreement(self, sender: bytes, baseview: tuple[int, bytes], refuse: bool = False) -> BaseviewAgreement:
        if refuse or baseview != self.baseview.ref:
            raise SignatureRefused(f"receiver will not sign baseview sn={baseview[0]}")
        unsigned = BaseviewAgreement(baseview[0], baseview[1], sender, self.pubkey)
        return replace(unsigned, receiver_signature=self.scheme.sign(self.keys, unsigned.signing_bytes()))

    def make_agreement(self, receiver: "Node", refuse: bool = False) -> BaseviewAgreement:
        agreement = receiver.sign_agreement(self.pubkey, self.baseview.ref, refuse=refuse)
        if not agreement.verify(self.scheme):
            raise SignatureRefused("agreement signature does not verify")
        return agreement

    def archive_proof(self, agreement: BaseviewAgreement, pkg1: TxPackage, pkg2: TxPackage) -> None:
        """Keep the agreement with the effecting tx_package_51 and one on its successor."""
        if not agreement.verify(self.scheme):
            raise SignatureRefused("agreement signature does not verify")
        if pkg1.ref != (agreement.baseview_sn, agreement.baseview_hash):
            raise ValueError("first package is not based on the agreed baseview")
        if pkg2.base_view_sn != pkg1.base_view_sn + 1:
            raise ValueError("second package must sit on the successor baseview")
        self.agreements.append((agreement, pkg1, pkg2))


def verify_reception(
    agreement: BaseviewAgreement,
    agreed_view: BalanceView,
    pkg1: TxPackage,
    pkg2: TxPackage,
    tx: Transaction,
    scheme: SignatureScheme = DEFAULT_SCHEME,
) -> bool:
    """Replay the archived packages over the agreed view and check the credit.

    ``pkg2`` citing the successor's hash shows ``pkg1`` took effect; the
    receiver's signature ties them to the baseview both parties held.
    """
    if not agreement.verify(scheme) or agreed_view.ref != (agreement.baseview_sn, agreement.baseview_hash):
        return False
    if tx.receiver != agreement.receiver or tx.sender != agreement.sender or tx not in pkg1.transactions:
        return False
    try:
        successor = apply_tx_package_51(agreed_view, pkg1, scheme=scheme)
    except PreconditionViolated:
        return False
    if pkg2.ref != successor.ref:
        return False
    return successor.balance_of(tx.receiver) >= agreed_view.balance_of(tx.receiver) + tx.volume
