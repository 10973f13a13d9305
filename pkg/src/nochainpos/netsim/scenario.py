"""Scenario files: a versioned YAML (or JSON) description of one experiment.

Schema, version 1 (every key except ``nodes`` and ``ticks`` is optional)::

    version: 1
    name: honest-10
    seed: 0
    nodes: 10                  # honest + adversarial stakeholders, ids 0..nodes-1
    ticks: 200                 # run length
    total_supply: 10000000000
    stakes: {kind: uniform}    # | {kind: pareto, alpha: 1.5}
                               # | {kind: explicit, values: [...]}
                               # | {kind: snapshot, path: legacy.txt}
    roles: {agents: [0], vesters: all}
    params: auto               # | {M: 9, N: 9, threshold: "51/100"}
    latency: {kind: fixed, ticks: 1}   # | {kind: uniform, low: 1, high: 3}
                                       # | {kind: per_link, default: 1, links: [[a, b, ticks], ...]}
    loss: 0.0
    partitions: [{start: 0, end: 50, groups: [[0, 1], [2, 3]]}]
    initial_split: {groups: [[0, 1], [2, 3]]}
    workload: {rate: 0.2, start: 0, until: 100, volume: 1000, fee: 10, fresh_receiver: 0.1}
    transactions: [{tick: 1, sender: 0, receiver: 3, volume: 100, fee: 1}]
    adversaries: [{kind: double_package_agent, nodes: [3], start: 0, end: 60, targets: [9]}]
    audit: {ratio: 0.001, cap: 4096}
    relay: {fanout: 1, timeout: 4, retry: 20}
    package_period: 1
    package_backoff: [0, 0]    # random wait after each promotion before packaging
    update_period: 1
    blacklist_decay: 10
    expect: {convergence: true}

Relative paths resolve against the scenario file's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import yaml

SCHEMA_VERSION = 1
SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

ADVERSARY_KINDS = (
    "double_package_agent",
    "double_vester",
    "sybil_swarm",
    "withholding_vester",
    "stale_broadcaster",
)


class ConfigError(ValueError):
    pass


@dataclass
class AdversarySpec:
    kind: str
    nodes: list[int] = field(default_factory=list)
    start: int = 0
    end: int | None = None
    targets: list[int] = field(default_factory=list)
    count: int = 1
    size: int = 0
    ip_labels: list[str] = field(default_factory=lambda: ["botnet"])
    fake_sn: int = 1_000_000
    replay_every: int = 10

    def active(self, tick: int) -> bool:
        return tick >= self.start and (self.end is None or tick < self.end)


@dataclass
class Partition:
    start: int
    end: int
    groups: list[list[int]]


@dataclass
class Scenario:
    nodes: int
    ticks: int
    name: str = "scenario"
    seed: int = 0
    total_supply: int = 10_000_000_000
    stakes: dict = field(default_factory=lambda: {"kind": "uniform"})
    agents: list[int] = field(default_factory=lambda: [0])
    vesters: list[int] | None = None  # None = everyone
    params: dict | None = None  # None = derive from A
    latency: dict = field(default_factory=lambda: {"kind": "fixed", "ticks": 1})
    loss: float = 0.0
    partitions: list[Partition] = field(default_factory=list)
    initial_split: list[list[int]] | None = None
    workload: dict | None = None
    transactions: list[dict] = field(default_factory=list)
    adversaries: list[AdversarySpec] = field(default_factory=list)
    audit_ratio: float = 0.001
    audit_cap: int = 4096
    relay_fanout: int = 1
    relay_timeout: int = 4
    relay_retry: int = 20
    package_period: int = 1
    package_backoff: tuple[int, int] = (0, 0)
    update_period: int = 1
    blacklist_decay: int = 10
    expect_convergence: bool = False
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def vester_ids(self) -> list[int]:
        return list(range(self.nodes)) if self.vesters is None else list(self.vesters)

    @property
    def adversarial_ids(self) -> set[int]:
        return {n for spec in self.adversaries if spec.kind != "sybil_swarm" for n in spec.nodes}

    @property
    def honest_ids(self) -> list[int]:
        bad = self.adversarial_ids
        return [i for i in range(self.nodes) if i not in bad]

    @property
    def sybil_count(self) -> int:
        return sum(spec.size for spec in self.adversaries if spec.kind == "sybil_swarm")

    def threshold(self) -> Fraction:
        if self.params and "threshold" in self.params:
            return Fraction(str(self.params["threshold"]))
        return Fraction(51, 100)

    def validate(self) -> None:
        if self.nodes < 1 or self.ticks < 1:
            raise ConfigError("nodes and ticks must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        ids = set(range(self.nodes))
        for group_list, what in [(p.groups, "partition") for p in self.partitions] + (
            [(self.initial_split, "initial_split")] if self.initial_split else []
        ):
            flat = [n for g in group_list for n in g]
            if len(flat) != len(set(flat)):
                raise ConfigError(f"{what} groups overlap")
            if what == "partition" and set(flat) != ids:
                raise ConfigError("partition groups must cover every node")
            if not set(flat) <= ids:
                raise ConfigError(f"{what} names unknown nodes")
        for p in self.partitions:
            if p.end <= p.start:
                raise ConfigError("partition end must follow start")
        for n in self.agents + self.vester_ids:
            if n not in ids:
                raise ConfigError(f"role names unknown node {n}")
        for spec in self.adversaries:
            if spec.kind not in ADVERSARY_KINDS:
                raise ConfigError(f"unknown adversary kind {spec.kind!r}")
            if spec.kind == "sybil_swarm":
                if spec.size < 1 or not spec.ip_labels:
                    raise ConfigError("sybil_swarm needs size >= 1 and ip_labels")
            elif not spec.nodes or not set(spec.nodes) <= ids:
                raise ConfigError(f"{spec.kind} needs existing target nodes")
        if not 0 <= self.loss < 1 or not 0 <= self.audit_ratio <= 1:
            raise ConfigError("probabilities must lie in [0, 1)")
        kind = self.latency.get("kind")
        if kind not in ("fixed", "uniform", "per_link"):
            raise ConfigError(f"unknown latency kind {kind!r}")
        if self.stakes.get("kind") not in ("uniform", "pareto", "explicit", "snapshot"):
            raise ConfigError(f"unknown stake kind {self.stakes.get('kind')!r}")
        if self.stakes["kind"] == "explicit":
            values = self.stakes.get("values", [])
            if len(values) != self.nodes or any(v < 0 for v in values):
                raise ConfigError("explicit stakes need one non-negative value per node")
            if sum(values) != self.total_supply:
                raise ConfigError("explicit stakes must sum to total_supply")
        if self.params is not None and not {"M", "N"} <= set(self.params):
            raise ConfigError("params override needs M and N")
        if len(self.package_backoff) != 2 or not 0 <= self.package_backoff[0] <= self.package_backoff[1]:
            raise ConfigError("package_backoff must be [low, high] with 0 <= low <= high")
        if min(self.relay_fanout, self.relay_timeout, self.package_period, self.update_period) < 1:
            raise ConfigError("relay and period settings must be >= 1")


_TOP_KEYS = {
    "version", "name", "seed", "nodes", "ticks", "total_supply", "stakes", "roles", "params",
    "latency", "loss", "partitions", "initial_split", "workload", "transactions", "adversaries",
    "audit", "relay", "package_period", "package_backoff", "update_period", "blacklist_decay", "expect",
}


def scenario_from_dict(data: dict[str, Any], base_dir: str | os.PathLike = ".") -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a mapping")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    if data.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported scenario version {data.get('version')}")
    try:
        roles = data.get("roles", {}) or {}
        vesters = roles.get("vesters", "all")
        params = data.get("params", "auto")
        audit = data.get("audit", {}) or {}
        relay = data.get("relay", {}) or {}
        split = data.get("initial_split")
        scen = Scenario(
            nodes=int(data["nodes"]),
            ticks=int(data["ticks"]),
            name=str(data.get("name", "scenario")),
            seed=int(data.get("seed", 0)),
            total_supply=int(data.get("total_supply", 10_000_000_000)),
            stakes=dict(data.get("stakes", {"kind": "uniform"})),
            agents=[int(n) for n in roles.get("agents", [0])],
            vesters=None if vesters == "all" else [int(n) for n in vesters],
            params=None if params == "auto" else dict(params),
            latency=dict(data.get("latency", {"kind": "fixed", "ticks": 1})),
            loss=float(data.get("loss", 0.0)),
            partitions=[
                Partition(int(p["start"]), int(p["end"]), [[int(n) for n in g] for g in p["groups"]])
                for p in data.get("partitions", []) or []
            ],
            initial_split=[[int(n) for n in g] for g in split["groups"]] if split else None,
            workload=dict(data["workload"]) if data.get("workload") else None,
            transactions=[dict(t) for t in data.get("transactions", []) or []],
            adversaries=[AdversarySpec(**a) for a in data.get("adversaries", []) or []],
            audit_ratio=float(audit.get("ratio", 0.001)),
            audit_cap=int(audit.get("cap", 4096)),
            relay_fanout=int(relay.get("fanout", 1)),
            relay_timeout=int(relay.get("timeout", 4)),
            relay_retry=int(relay.get("retry", 20)),
            package_period=int(data.get("package_period", 1)),
            package_backoff=tuple(int(x) for x in data.get("package_backoff", (0, 0))),
            update_period=int(data.get("update_period", 1)),
            blacklist_decay=int(data.get("blacklist_decay", 10)),
            expect_convergence=bool((data.get("expect") or {}).get("convergence", False)),
            base_dir=Path(base_dir),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed scenario: {exc!r}") from exc
    scen.validate()
    return scen


def load_scenario(path: str | os.PathLike) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return scenario_from_dict(data, path.parent)


def shipped_scenarios() -> list[Path]:
    """The scenario files bundled with the package, sorted by name."""
    return sorted(SCENARIO_DIR.glob("*.yaml"))
