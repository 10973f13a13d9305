"""Deterministic discrete-event simulation of a network of nodes.

Events are ordered by ``(tick, seq)``.  Messages sent at tick ``t`` arrive no
earlier than ``t + 1``; all deliveries for a tick run before that tick's node
actions.  Every random choice draws from a named stream derived from the
scenario seed (see :mod:`.rng`).

Packages travel one hop at a time: the holder hands its copy to the next
vester in descending stake order and waits for an ack.  Without an ack by the
relay timeout, or right after a refusal, it tries the next candidate; once
every candidate was tried it waits ``relay.retry`` ticks and starts over.  Sending the same copy to many
vesters at once would fork its chain and, because each vester vests only once
per sn, could strand the stake below the threshold for good.  For the same
reason agents announce each package to the other agents before relaying it.
An honest agent that saw a rival package at its sn sits that sn out, and after
waiting out the slowest link it withdraws its own package if a rival's agent
signature sorts lower; only one package per sn then starts relaying unless an
announcement is lost.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..consensus import ConsensusParams, Sample, derive_params
from ..core import (
    RECYCLED_KEY,
    BalanceView,
    HmacScheme,
    TxPackage,
    ViolationReport,
    append_vester,
    canonical_serialize,
    digest,
)
from ..genesis import import_snapshot, parse_snapshot
from ..ledger import ConservationError, apply_tx_package_51, check_conservation, largest_remainder, make_view
from ..node import Criteria, FetchFailed, Node
from .rng import derive_rng
from .scenario import AdversarySpec, ConfigError, Scenario

log = logging.getLogger(__name__)

SAMPLE_REQUEST_BYTES = 8
SAMPLE_RESPONSE_BYTES = 40  # hash + sn
ACK_BYTES = 72


class InvariantViolation(AssertionError):
    def __init__(self, name: str, detail: str) -> None:
        super().__init__(f"{name}: {detail}")
        self.name = name
        self.detail = detail


@dataclass
class MetricsReport:
    rows: list[tuple[int, int, int, int]]  # tick, distinct honest current views, messages, bytes
    summary: dict

    @property
    def ok(self) -> bool:
        return not self.summary["invariant_violations"]

    @property
    def converged(self) -> bool:
        return self.summary["converged"]

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["tick", "distinct_hashes", "messages", "bytes"])
        writer.writerows(self.rows)
        return buf.getvalue()

    def json_text(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str | os.PathLike) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics, summary = out / "metrics.csv", out / "summary.json"
        metrics.write_text(self.csv_text(), encoding="utf-8")
        summary.write_text(self.json_text(), encoding="utf-8")
        return metrics, summary


@dataclass
class _Relay:
    pkg: TxPackage
    tried: set[int]
    deadline: int


@dataclass
class _Sybil:
    key: bytes
    label: str
    fake_hash: bytes
    fake_sn: int


@dataclass
class _Promoted:
    view: BalanceView
    tick: int
    node: int


@dataclass
class _Adversary:
    spec: AdversarySpec
    offenses: int = 0
    seen_51: list[TxPackage] = field(default_factory=list)


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        self.sc = sc = scenario
        self.scheme = HmacScheme()
        self.keys = [self.scheme.keygen(f"node:{sc.seed}:{i}") for i in range(sc.nodes)]
        self.account_node = {k.public: i for i, k in enumerate(self.keys)}
        genesis = self._genesis()
        self.total_supply = genesis.total_supply
        self.params = self._params(genesis)

        self.adversary: dict[int, _Adversary] = {}
        self.sybils: list[_Sybil] = []
        for spec in sc.adversaries:
            if spec.kind == "sybil_swarm":
                for j in range(spec.size):
                    n = len(self.sybils)
                    self.sybils.append(_Sybil(
                        digest(f"sybil:{sc.seed}:{n}".encode()),
                        spec.ip_labels[j % len(spec.ip_labels)],
                        digest(f"sybil-view:{sc.seed}".encode()),
                        spec.fake_sn,
                    ))
            else:
                for n in spec.nodes:
                    if n in self.adversary:
                        raise ConfigError(f"node {n} has two adversary roles")
                    self.adversary[n] = _Adversary(spec)
        self.honest = [i for i in range(sc.nodes) if i not in self.adversary]
        self.honest_set = set(self.honest)
        if not self.honest:
            raise ConfigError("scenario needs at least one honest node")

        agents, vesters = set(sc.agents), set(sc.vester_ids)
        self.nodes: list[Node] = []
        for i in range(sc.nodes):
            adv = self.adversary.get(i)
            self.nodes.append(Node(
                keys=self.keys[i],
                baseview=genesis,
                params=self.params,
                agent=i in agents and (adv is None or adv.spec.kind != "double_package_agent"),
                vester=i in vesters,
                criteria=Criteria(),
                audit_ratio=sc.audit_ratio,
                audit_cap=sc.audit_cap,
                blacklist_decay=sc.blacklist_decay,
                scheme=self.scheme,
            ))
        self.peer_count = sc.nodes + len(self.sybils)

        self.tick = 0
        self._seq = 0
        self._queue: list = []
        self.relays: list[dict[bytes, _Relay]] = [{} for _ in range(sc.nodes)]
        self.p51_for_view: dict[bytes, TxPackage] = {}
        self.promoted: dict[int, _Promoted] = {}
        self.promotion_log: list[tuple[int, int, int]] = []
        self.violations: list[dict] = []
        self.offenses: list[dict] = []
        self.messages = 0
        self.bytes = 0
        self._tick_messages = 0
        self._tick_bytes = 0
        self._view_bytes: dict[bytes, int] = {}
        self._link_rngs: dict[tuple[int, int], object] = {}
        self._node_rngs = [derive_rng(sc.seed, "sample", i) for i in range(sc.nodes)]
        self._audit_rngs = [derive_rng(sc.seed, "audit", i) for i in range(sc.nodes)]
        self._order_rng = derive_rng(sc.seed, "order")
        self._work_rng = derive_rng(sc.seed, "workload")
        self._fresh = 0
        self._backoff_rngs = [derive_rng(sc.seed, "backoff", i) for i in range(sc.nodes)]
        self._ready: list[tuple[int, int]] = [(-1, 0)] * sc.nodes  # (sn, first tick allowed)
        self._rival_seen: list[dict[int, bytes]] = [{} for _ in range(sc.nodes)]  # sn -> lowest rival signature
        self._commit: list[tuple[int, TxPackage] | None] = [None] * sc.nodes
        self._per_link = {}
        if sc.latency["kind"] == "per_link":
            for a, b, t in sc.latency.get("links", []):
                self._per_link[(a, b)] = self._per_link[(b, a)] = int(t)
        self.tracked = {i: {0: genesis.balance_of(self.keys[i].public)} for i in sorted(self.adversary)}
        self.finalized = 0
        if sc.initial_split:
            self._make_initial_split(genesis)

    # -- setup --------------------------------------------------------------------

    def _genesis(self) -> BalanceView:
        sc, keys = self.sc, [k.public for k in self.keys]
        kind = sc.stakes["kind"]
        if kind == "uniform":
            each = sc.total_supply // sc.nodes
            return make_view(((k, each) for k in keys), sc.total_supply - each * sc.nodes)
        if kind == "explicit":
            return make_view(zip(keys, sc.stakes["values"]))
        if kind == "pareto":
            rng = derive_rng(sc.seed, "stakes")
            alpha = float(sc.stakes.get("alpha", 1.5))
            weights = [int(rng.paretovariate(alpha) * 1_000_000) for _ in keys]
            return make_view(largest_remainder(sc.total_supply, list(zip(keys, weights))))
        # snapshot: the file supplies the distribution, node i takes entry i
        path = Path(sc.stakes["path"])
        path = path if path.is_absolute() else sc.base_dir / path
        try:
            entries = parse_snapshot(path.read_text(encoding="utf-8"))
            imported = import_snapshot(entries, sc.total_supply)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot import snapshot {path}: {exc}") from exc
        if len(entries) != sc.nodes:
            raise ConfigError(f"snapshot has {len(entries)} accounts for {sc.nodes} nodes")
        balances = [imported.balance_of(k) for k, _ in entries]
        return make_view(zip(keys, balances), imported.recycled.balance)

    def _params(self, genesis: BalanceView) -> ConsensusParams:
        A = sum(1 for r in genesis.records if r.balance > 0) or 1
        threshold = self.sc.threshold()
        if self.sc.params is None:
            return derive_params(A, threshold)
        derived = derive_params(A, threshold)
        return ConsensusParams(A, derived.B, int(self.sc.params["M"]), int(self.sc.params["N"]), threshold)

    def _make_initial_split(self, genesis: BalanceView) -> None:
        """Fork sn 1: one package, a shared vester prefix and a distinct suffix per group."""
        groups = self.sc.initial_split
        agent = self.sc.agents[0]
        order = self._vester_order(genesis, set())
        threshold = self.params.threshold_fraction
        limit = self.total_supply * threshold

        def stake(ids):
            return sum(genesis.balance_of(self.keys[i].public) for i in ids)

        prefix: list[int] = []
        rest = list(order)
        while rest and stake(prefix + rest[:1]) <= limit:
            prefix.append(rest.pop(0))
        suffixes: list[list[int]] = []
        for _ in groups:
            suffix: list[int] = []
            while stake(prefix + suffix) <= limit and rest:
                suffix.append(rest.pop(0))
            if stake(prefix + suffix) <= limit:
                raise ConfigError("not enough vester stake to build the initial split")
            suffixes.append(suffix)
        base = TxPackage.create(genesis.ref, self.keys[agent], (), 0, self.scheme)
        self.nodes[agent].packaged_sns.add(0)
        for v in prefix:
            base = append_vester(base, self.keys[v], 0, self.scheme)
            self.nodes[v].vested_sns[0] = b"split"
        for group, suffix in zip(groups, suffixes):
            pkg = base
            for v in suffix:
                pkg = append_vester(pkg, self.keys[v], 0, self.scheme)
                self.nodes[v].vested_sns[0] = b"split"
            pkg = replace(pkg, flag_51=True)
            view = apply_tx_package_51(genesis, pkg, threshold=threshold, scheme=self.scheme)
            self.p51_for_view[view.hash] = pkg
            for n in group:
                node = self.nodes[n]
                node.accepted_51_sns.add(0)
                node.archive[0] = pkg
                node._set_current(view)

    # -- plumbing -----------------------------------------------------------------

    def _push(self, tick: int, kind: str, *payload) -> None:
        heapq.heappush(self._queue, (tick, self._seq, kind, payload))
        self._seq += 1

    def _count(self, size: int) -> None:
        self.messages += 1
        self.bytes += size
        self._tick_messages += 1
        self._tick_bytes += size

    def _link_rng(self, a: int, b: int):
        key = (a, b)
        rng = self._link_rngs.get(key)
        if rng is None:
            rng = self._link_rngs[key] = derive_rng(self.sc.seed, "link", a, b)
        return rng

    def _reachable(self, a: int, b: int) -> bool:
        if a >= self.sc.nodes or b >= self.sc.nodes:
            return True
        for part in self.sc.partitions:
            if part.start <= self.tick < part.end:
                return any(a in g and b in g for g in part.groups)
        return True

    def _transmit(self, a: int, b: int) -> int | None:
        """Latency of one message from ``a`` to ``b``, or ``None`` if it is lost."""
        if not self._reachable(a, b):
            return None
        rng = self._link_rng(a, b)
        if self.sc.loss and rng.random() < self.sc.loss:
            return None
        lat = self.sc.latency
        if lat["kind"] == "fixed":
            return max(1, int(lat.get("ticks", 1)))
        if lat["kind"] == "uniform":
            return max(1, rng.randint(int(lat["low"]), int(lat["high"])))
        return max(1, self._per_link.get((a, b), int(lat.get("default", 1))))

    def _send(self, a: int, b: int, kind: str, payload, size: int) -> None:
        self._count(size)
        delay = self._transmit(a, b)
        if delay is not None:
            self._push(self.tick + delay, kind, b, payload, a)

    def _pkg_size(self, pkg: TxPackage) -> int:
        return len(canonical_serialize(pkg))

    def _view_size(self, view: BalanceView) -> int:
        size = self._view_bytes.get(view.hash)
        if size is None:
            size = self._view_bytes[view.hash] = len(canonical_serialize(view))
        return size

    def _kind(self, i: int) -> str | None:
        adv = self.adversary.get(i)
        return adv.spec.kind if adv and adv.spec.active(self.tick) else None

    def _agents(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.agent]

    # -- invariants ---------------------------------------------------------------

    def _violate(self, name: str, detail: str) -> None:
        self.violations.append({"invariant": name, "tick": self.tick, "detail": detail})
        raise InvariantViolation(name, detail)

    def _check_supply(self, i: int, view: BalanceView) -> None:
        try:
            check_conservation(view, self.total_supply)
        except ConservationError as exc:
            self._violate("conservation", f"node {i}: {exc}")

    def _observe_current(self, i: int) -> None:
        """Penultimate check: a view adopted at sn j must be the base of the promoted j+1."""
        view = self.nodes[i].current_view
        self._check_supply(i, view)
        if i not in self.honest_set:
            return
        nxt = self.promoted.get(view.sn + 1)
        if nxt is not None and nxt.view.base_view_hash != view.hash:
            self._violate(
                "penultimate_irreversibility",
                f"node {i} adopted sn={view.sn} {view.hash.hex()[:16]} after sn={view.sn + 1} was promoted on another",
            )

    def _observe_promotion(self, i: int, before_sn: int) -> None:
        node = self.nodes[i]
        view = node.baseview
        self._check_supply(i, view)
        if view.sn < before_sn:
            self._violate("monotone_baseview", f"node {i} went from sn={before_sn} to sn={view.sn}")
        if i not in self.honest_set:
            return
        self.promotion_log.append((self.tick, i, view.sn))
        seen = self.promoted.get(view.sn)
        if seen is not None and seen.view.hash != view.hash:
            self._violate(
                "baseview_safety",
                f"sn={view.sn}: node {seen.node} promoted {seen.view.hash.hex()[:16]}, "
                f"node {i} promoted {view.hash.hex()[:16]}",
            )
        prev = self.promoted.get(view.sn - 1)
        if prev is not None and view.base_view_hash != prev.view.hash:
            self._violate("penultimate_irreversibility", f"node {i} promoted sn={view.sn} off a dropped sn={view.sn - 1}")
        if seen is None:
            self.promoted[view.sn] = _Promoted(view, self.tick, i)
            for n, history in self.tracked.items():
                history[view.sn] = view.balance_of(self.keys[n].public)

    # -- messages -----------------------------------------------------------------

    def _broadcast_reports(self, i: int, reports: list[ViolationReport]) -> None:
        for report in reports:
            size = len(canonical_serialize(report))
            for a in self._agents():
                if a == i:
                    self.nodes[i].submit_report(report)
                else:
                    self._send(i, a, "report", report, size)

    def _audit(self, i: int, pkg: TxPackage) -> None:
        node = self.nodes[i]
        reports = node.audit_package(pkg, self._audit_rngs[i])
        node.blacklist_check(pkg.agent_pubkey, pkg.ref)
        for v in dict.fromkeys(pkg.vesters):
            node.blacklist_check(v, pkg.ref)
        if reports and i in self.honest_set:
            self._broadcast_reports(i, reports)

    def _vester_order(self, view: BalanceView, exclude: set[int]) -> list[int]:
        ids = [v for v in self.sc.vester_ids if v not in exclude]
        return sorted(ids, key=lambda v: (-view.balance_of(self.keys[v].public), v))

    def _start_relay(self, i: int, pkg: TxPackage) -> None:
        key = pkg.agent_signature
        self.relays[i][key] = _Relay(pkg, {i}, self.tick)
        self._forward(i, key)

    def _relay_stale(self, i: int, pkg: TxPackage) -> bool:
        node = self.nodes[i]
        return node.baseview.sn != pkg.base_view_sn or pkg.base_view_sn in node.accepted_51_sns

    def _forward(self, i: int, key: bytes) -> None:
        state = self.relays[i][key]
        node = self.nodes[i]
        if self._relay_stale(i, state.pkg):
            del self.relays[i][key]
            return
        on_chain = set(state.pkg.vesters)
        candidates = [
            v for v in self._vester_order(node.baseview, state.tried)
            if self.keys[v].public not in on_chain and not node.is_blacklisted(self.keys[v].public)
        ]
        if not candidates:
            state.tried = {i}
            state.deadline = self.tick + self.sc.relay_retry
            node.stats["relay_exhausted"] += 1
            return
        size = self._pkg_size(state.pkg)
        for v in candidates[: self.sc.relay_fanout]:
            state.tried.add(v)
            self._send(i, v, "pkg", state.pkg, size)
        state.deadline = self.tick + self.sc.relay_timeout

    def _finalize_or_relay(self, i: int, pkg: TxPackage) -> None:
        node = self.nodes[i]
        final = node.check_and_finalize(pkg)
        if final is None:
            self._start_relay(i, pkg)
            return
        self.finalized += 1
        self.p51_for_view[node.current_view.hash] = final
        self._observe_current(i)
        size = self._pkg_size(final)
        for j in range(self.sc.nodes):
            if j != i:
                self._send(i, j, "p51", final, size)

    def _vest(self, i: int, pkg: TxPackage) -> TxPackage | None:
        node = self.nodes[i]
        if self._kind(i) == "double_vester":
            # ignores rule 3 and the stability gate; still needs a matching baseview
            if pkg.ref != node.baseview.ref or node.pubkey in pkg.vesters or not node.vester:
                return None
            # signs twice so even a lone package carries the conflict
            self.offenses.append({"kind": "double_vest", "node": i, "sn": pkg.base_view_sn, "tick": self.tick})
            node.vested_sns[pkg.base_view_sn] = b"any"
            once = append_vester(pkg, node.keys, self.tick, self.scheme)
            return append_vester(once, node.keys, self.tick, self.scheme, allow_duplicate=True)
        return node.vester_vest(pkg, self.tick)

    def _on_pkg(self, i: int, pkg: TxPackage, sender: int) -> None:
        kind = self._kind(i)
        if kind == "stale_broadcaster":
            return
        self._audit(i, pkg)
        vested = self._vest(i, pkg)
        if vested is None:
            self.nodes[i].stats["relay_refused"] += 1
            if kind != "withholding_vester":
                self._send(i, sender, "nack", pkg.agent_signature, ACK_BYTES)
            return
        if kind == "withholding_vester":
            return
        self._send(i, sender, "ack", pkg.agent_signature, ACK_BYTES)
        self._finalize_or_relay(i, vested)

    def _on_ack(self, i: int, key: bytes, sender: int) -> None:
        self.relays[i].pop(key, None)

    def _on_nack(self, i: int, key: bytes, sender: int) -> None:
        if key in self.relays[i]:
            self._forward(i, key)

    def _on_p51(self, i: int, pkg: TxPackage, sender: int) -> None:
        if self._kind(i) == "stale_broadcaster":
            self.adversary[i].seen_51.append(pkg)
            return
        node = self.nodes[i]
        self._audit(i, pkg)
        if not pkg.flag_51 or pkg.ref != node.baseview.ref:
            return
        if node.check_and_finalize(pkg) is not None:
            self._observe_current(i)

    def _on_announce(self, i: int, pkg: TxPackage, sender: int) -> None:
        self._audit(i, pkg)
        if pkg.agent_pubkey != self.nodes[i].pubkey:
            seen = self._rival_seen[i]
            sn = pkg.base_view_sn
            seen[sn] = min(seen.get(sn, pkg.agent_signature), pkg.agent_signature)
            for old in [k for k in seen if k < sn - 1]:
                del seen[old]

    def _on_tx(self, i: int, tx, sender: int) -> None:
        node = self.nodes[i]
        node.blacklist_check(tx.sender, (tx.base_view_sn, tx.base_view_hash))
        node.agent_collect(tx)

    def _on_report(self, i: int, report: ViolationReport, sender: int) -> None:
        self.nodes[i].submit_report(report)

    # -- node actions -------------------------------------------------------------

    def _submit_tx(self, sender: int, receiver: bytes, volume: int, fee: int) -> None:
        node = self.nodes[sender]
        if not node.is_stable or node.stake_of(node.pubkey) < volume + fee:
            node.stats["tx_skipped"] += 1
            return
        tx = node.make_transaction(receiver, volume, fee, self.tick)
        size = len(canonical_serialize(tx))
        for a in self._agents():
            if a == sender:
                node.agent_collect(tx)
            else:
                self._send(sender, a, "tx", tx, size)

    def _workload(self) -> None:
        for t in self.sc.transactions:
            if int(t["tick"]) == self.tick:
                receiver = t["receiver"]
                key = self.keys[receiver].public if isinstance(receiver, int) else bytes.fromhex(receiver)
                self._submit_tx(int(t["sender"]), key, int(t["volume"]), int(t.get("fee", 0)))
        w = self.sc.workload
        if not w or not int(w.get("start", 0)) <= self.tick < int(w.get("until", self.sc.ticks)):
            return
        rng = self._work_rng
        rate = float(w.get("rate", 0.1))
        count = int(rate) + (1 if rng.random() < rate - int(rate) else 0)
        for _ in range(count):
            sender = rng.choice(self.honest)
            if rng.random() < float(w.get("fresh_receiver", 0.0)):
                self._fresh += 1
                receiver = self.scheme.keygen(f"fresh:{self.sc.seed}:{self._fresh}").public
            else:
                others = [j for j in self.honest if j != sender] or [sender]
                receiver = self.keys[rng.choice(others)].public
            self._submit_tx(sender, receiver, int(w.get("volume", 1000)), int(w.get("fee", 10)))

    def _agent_act(self, i: int) -> None:
        node = self.nodes[i]
        adv = self.adversary.get(i)
        if adv and adv.spec.kind == "double_package_agent":
            node.agent = adv.spec.active(self.tick) and adv.offenses < adv.spec.count
        if not node.agent or self.tick % self.sc.package_period:
            return
        sn = node.baseview.sn
        if self._ready[i][0] != sn:
            low, high = self.sc.package_backoff
            self._ready[i] = (sn, self.tick + self._backoff_rngs[i].randint(low, high))
        if self.tick < self._ready[i][1] or (adv is None and sn in self._rival_seen[i]):
            return
        pkg = node.agent_make_package(self.tick)
        if pkg is None:
            return
        size = self._pkg_size(pkg)
        for a in self._agents():
            if a != i:
                self._send(i, a, "announce", pkg, size)
        if adv and adv.spec.kind == "double_package_agent":
            self._double_package(i, adv, pkg)
        self._commit[i] = (self.tick + self._announce_wait(), pkg)

    def _announce_wait(self) -> int:
        lat = self.sc.latency
        if lat["kind"] == "fixed":
            worst = int(lat.get("ticks", 1))
        elif lat["kind"] == "uniform":
            worst = int(lat["high"])
        else:
            worst = max([int(lat.get("default", 1))] + list(self._per_link.values()))
        return max(1, worst) + 1

    def _commit_package(self, i: int) -> None:
        due, pkg = self._commit[i]
        if self.tick < due:
            return
        self._commit[i] = None
        node = self.nodes[i]
        rival = self._rival_seen[i].get(pkg.base_view_sn)
        if i not in self.adversary and rival is not None and rival < pkg.agent_signature:
            node.stats["packages_withdrawn"] += 1
            return
        if node.baseview.ref != pkg.ref:
            return
        vested = node.vester_vest(pkg, self.tick) if node.vester else None
        if vested is not None:
            self._finalize_or_relay(i, vested)
        else:
            self._start_relay(i, pkg)

    def _double_package(self, i: int, adv: _Adversary, pkg: TxPackage) -> None:
        """Sign a second, conflicting package at this sn.

        Everyone hears of the twin (and audits it); ``targets`` also get it as
        a relay hand-off, so they may vest it.
        """
        node = self.nodes[i]
        twin = TxPackage.create(node.baseview.ref, node.keys, pkg.transactions, pkg.timestamp + 1, self.scheme)
        size = self._pkg_size(twin)
        for j in range(self.sc.nodes):
            if j != i:
                self._send(i, j, "pkg" if j in adv.spec.targets else "announce", twin, size)
        adv.offenses += 1
        self.offenses.append({"kind": "double_package", "node": i, "sn": pkg.base_view_sn, "tick": self.tick})

    def _stale_act(self, i: int) -> None:
        adv = self.adversary[i]
        if self.tick % max(1, adv.spec.replay_every) or not adv.seen_51:
            return
        for pkg in adv.seen_51[-3:]:
            size = self._pkg_size(pkg)
            for j in range(self.sc.nodes):
                if j != i:
                    self._send(i, j, "p51", pkg, size)

    def _sample(self, i: int):
        """Synchronously query M random peers; returns (samples, complete, responders)."""
        node = self.nodes[i]
        rng = self._node_rngs[i]
        M = min(self.params.M, self.peer_count - 1)
        picks = rng.sample(range(self.peer_count - 1), M)
        samples: list[Sample] = []
        responders: dict[bytes, int] = {}
        complete = True
        for p in picks:
            peer = p if p < i else p + 1
            self._count(SAMPLE_REQUEST_BYTES)
            if self._transmit(i, peer) is None:
                complete = False
                continue
            self._count(SAMPLE_RESPONSE_BYTES)
            if peer >= self.sc.nodes:
                sybil = self.sybils[peer - self.sc.nodes]
                samples.append(Sample(sybil.fake_hash, sybil.fake_sn, node.stake_of(sybil.key)))
                continue
            if node.is_blacklisted(self.keys[peer].public):
                continue
            view = self.nodes[peer].current_view
            samples.append(Sample(view.hash, view.sn, node.stake_of(self.keys[peer].public)))
            responders.setdefault(view.hash, peer)
        return samples, complete, responders

    def _update(self, i: int) -> None:
        if self._kind(i) == "stale_broadcaster":
            return
        node = self.nodes[i]
        samples, complete, responders = self._sample(i)

        def fetch(h: bytes):
            peer = responders.get(h)
            if peer is None:
                return None
            view = self.nodes[peer].current_view
            self._count(self._view_size(view))
            return view, self.p51_for_view.get(view.hash)

        before_sn = node.baseview.sn
        try:
            result = node.update_step(samples, fetch, complete)
        except FetchFailed:
            return
        if result.adopted:
            self._observe_current(i)
        if result.promoted:
            self._observe_promotion(i, before_sn)

    def _node_tick(self, i: int) -> None:
        kind = self._kind(i)
        if kind == "stale_broadcaster":
            self._stale_act(i)
            return
        self._agent_act(i)
        if self._commit[i] is not None:
            self._commit_package(i)
        for key in [k for k, s in self.relays[i].items() if s.deadline <= self.tick]:
            if key in self.relays[i]:
                self._forward(i, key)
        if self.tick % self.sc.update_period == 0:
            self._update(i)

    # -- main loop ------------------------------------------------------------------

    _HANDLERS = {"pkg": _on_pkg, "ack": _on_ack, "nack": _on_nack, "announce": _on_announce, "p51": _on_p51, "tx": _on_tx, "report": _on_report}

    def _distinct(self) -> int:
        return len({self.nodes[i].current_view.hash for i in self.honest})

    def run(self) -> MetricsReport:
        rows: list[tuple[int, int, int, int]] = []
        consensus_tick = None
        error: InvariantViolation | None = None
        try:
            for tick in range(self.sc.ticks):
                self.tick = tick
                self._tick_messages = self._tick_bytes = 0
                while self._queue and self._queue[0][0] <= tick:
                    _, _, kind, (dst, payload, src) = heapq.heappop(self._queue)
                    self._HANDLERS[kind](self, dst, payload, src)
                self._workload()
                order = list(range(self.sc.nodes))
                self._order_rng.shuffle(order)
                for i in order:
                    self._node_tick(i)
                distinct = self._distinct()
                rows.append((tick, distinct, self._tick_messages, self._tick_bytes))
                if distinct == 1 and consensus_tick is None:
                    consensus_tick = tick
                elif distinct > 1:
                    consensus_tick = None
        except InvariantViolation as exc:
            error = exc
            log.info("invariant violated: %s", exc)
        return MetricsReport(rows, self._summary(rows, consensus_tick, error))

    def _summary(self, rows, consensus_tick, error) -> dict:
        honest_nodes = [self.nodes[i] for i in self.honest]
        currents = {n.current_view.hash for n in honest_nodes}
        bases = {n.baseview.hash for n in honest_nodes}
        converged = error is None and len(currents) == 1 and len(bases) == 1
        stats = sum((n.stats for n in honest_nodes), start=type(honest_nodes[0].stats)())
        punished = sorted({o for n in honest_nodes for o in n.punished_offenses})
        return {
            "scenario": self.sc.name,
            "seed": self.sc.seed,
            "ticks": self.sc.ticks,
            "nodes": self.sc.nodes,
            "honest_nodes": len(self.honest),
            "sybils": len(self.sybils),
            "params": {"A": self.params.A, "B": self.params.B, "M": self.params.M, "N": self.params.N,
                       "threshold": str(self.params.threshold_fraction)},
            "converged": converged,
            "time_to_consensus": consensus_tick if converged else None,
            "final_distinct_hashes": len(currents),
            "final_view_hash": next(iter(currents)).hex() if len(currents) == 1 else None,
            "final_baseview_sn": min(n.baseview.sn for n in honest_nodes),
            "promoted": [
                {"sn": sn, "hash": p.view.hash.hex(), "tick": p.tick, "node": p.node}
                for sn, p in sorted(self.promoted.items())
            ],
            "promotion_events": len(self.promotion_log),
            "packages_finalized": self.finalized,
            "messages": self.messages,
            "bytes": self.bytes,
            "violations_detected": stats["violations_detected"],
            "violations_punished": [[vt, accused.hex(), sn] for vt, accused, sn in punished],
            "blacklist_sizes": {str(i): len(self.nodes[i].blacklist) for i in self.honest},
            "blacklisted_events": stats["blacklisted"],
            "fetch_failures": stats["fetch_failed"],
            "offenses": self.offenses,
            "tracked_balances": {str(i): {str(sn): b for sn, b in sorted(h.items())} for i, h in self.tracked.items()},
            "invariant_violations": self.violations,
            "error": str(error) if error else None,
        }


def run(scenario: Scenario) -> MetricsReport:
    """Run ``scenario`` to completion; identical scenario and seed give identical reports."""
    return Simulation(scenario).run()


__all__ = ["InvariantViolation", "MetricsReport", "Simulation", "run", "RECYCLED_KEY"]
