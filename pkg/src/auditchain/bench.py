"""Benchmark harness: latency sweeps and scripted attack/recovery scenarios.

The sweep measures, for each (payload size, network size) cell, how long the
network takes to commit a synthetic audit workload at every node. Transactions
are generated at a fixed interval and submitted round-robin across nodes; latency
is the difference between the first submission and the last commit anywhere.
Seeded end to end: a sweep with the same spec produces byte-identical CSV output.

Scenarios replay the threat model: a forged write under stolen credentials, a
local chain rewrite, and a remote corruption of current data, each with its
detection and (where applicable) recovery.
"""

from __future__ import annotations

import hashlib
import random
import statistics
import uuid
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

from .capture import (
    AuditPolicy,
    EntityChangeEvent,
    EventKind,
    PropertyDelta,
    SeededIds,
    on_post_insert,
    on_post_update,
)
from .codec import AuditTransaction, TxnDetail, WireDate, transaction_from_entry
from .ledger import (
    Ledger,
    diff_against_peer,
    query_history,
    restore_state,
    save_ledger,
    verify_chain,
)
from .sim import (
    ForgeAppWrite,
    SimConfig,
    SimNetwork,
    TamperLocalLedger,
    spawn_network,
)

__all__ = [
    "DEFAULT_PAYLOADS",
    "DEFAULT_NETWORK_SIZES",
    "LatencySample",
    "ScenarioReport",
    "ScenarioResult",
    "SweepResult",
    "SweepSpec",
    "SCENARIO_NAMES",
    "run_attack_scenarios",
    "run_latency_sweep",
    "summarize",
    "synth_payload",
    "write_csv",
]

MIB = 1 << 20

DEFAULT_PAYLOADS = (2 * MIB, 5 * MIB, 10 * MIB, 15 * MIB, 20 * MIB)
DEFAULT_NETWORK_SIZES = (4, 10, 20, 30, 40)

_FILLER_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789"


@dataclass(frozen=True)
class SweepSpec:
    payload_sizes: tuple[int, ...] = DEFAULT_PAYLOADS
    network_sizes: tuple[int, ...] = DEFAULT_NETWORK_SIZES
    trials: int = 5
    seed: int = 0
    txn_bytes: int = 32_768
    txn_interval_ms: int = 550
    deadline_ms: int | None = None

    def __post_init__(self) -> None:
        if not self.payload_sizes or any(p <= 0 for p in self.payload_sizes):
            raise ValueError("payload sizes must be positive")
        if not self.network_sizes or any(n <= 0 for n in self.network_sizes):
            raise ValueError("network sizes must be positive")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")


@dataclass(frozen=True)
class LatencySample:
    n_nodes: int
    payload_bytes: int
    trial: int
    seed: int
    t_g_ms: int
    t_c_ms: int
    latency_ms: int
    quiescent: bool


@dataclass(frozen=True)
class CellSummary:
    n_nodes: int
    payload_bytes: int
    trials: int
    mean_latency_ms: float
    stdev_latency_ms: float
    all_quiescent: bool


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[LatencySample]
    summaries: list[CellSummary]

    @property
    def all_quiescent(self) -> bool:
        return all(r.quiescent for r in self.rows)

    def mean_latency(self, payload_bytes: int, n_nodes: int) -> float:
        for s in self.summaries:
            if s.payload_bytes == payload_bytes and s.n_nodes == n_nodes:
                return s.mean_latency_ms
        raise KeyError((payload_bytes, n_nodes))


def _rng_uuid(rng: random.Random) -> str:
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


_SYNTH_EPOCH_MS = 1_700_000_000_000


def _synth_txn(rng: random.Random, value_len: int, created_ms: int) -> AuditTransaction:
    # Fixed-width numeric fields keep the base encoding size constant, so the
    # payload value length controls the canonical size exactly (ASCII only, no
    # characters that JSON would escape).
    stamp = "".join(rng.choice(_FILLER_ALPHABET) for _ in range(16))
    value = (stamp + "x" * max(0, value_len - len(stamp)))[:value_len]
    return AuditTransaction(
        class_name="Synthetic.Workload.Record",
        created_date=WireDate(created_ms, 0),
        entity_id=rng.randrange(100_000, 999_999),
        event_type=1,
        txn_id=_rng_uuid(rng),
        session_id=_rng_uuid(rng),
        url="/workload/record.aspx?case=bench",
        user_id=rng.randrange(100, 999),
        details=(TxnDetail(_rng_uuid(rng), "Payload", None, value),),
    )


def synth_min_txn_bytes() -> int:
    """Smallest canonical size a synthetic transaction can have."""
    return _synth_txn(random.Random(0), 1, _SYNTH_EPOCH_MS).byte_size


def synth_payload(total_bytes: int, rng: random.Random,
                  txn_bytes: int = 32_768) -> list[AuditTransaction]:
    """Schema-valid transactions whose canonical encodings sum to ``total_bytes``
    within one transaction's tolerance."""
    base = synth_min_txn_bytes()
    if total_bytes < base:
        raise ValueError(f"total_bytes {total_bytes} below minimum txn size {base}")
    txns: list[AuditTransaction] = []
    built = 0
    while built < total_bytes:
        target = min(txn_bytes, total_bytes - built)
        value_len = max(1, target - base + 1)
        txn = _synth_txn(rng, value_len, _SYNTH_EPOCH_MS)
        txns.append(txn)
        built += txn.byte_size
    return txns


def _derive_seed(base: int, payload: int, n: int, trial: int) -> int:
    material = f"{base}:{payload}:{n}:{trial}".encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big") >> 1


def _run_trial(spec: SweepSpec, template: SimConfig, payload: int, n: int,
               trial: int) -> LatencySample:
    seed = _derive_seed(spec.seed, payload, n, trial)
    config = replace(template, n_nodes=n, rng_seed=seed)
    network = spawn_network(config)
    txns = synth_payload(payload, random.Random(seed ^ 0x5EED), spec.txn_bytes)
    for j, txn in enumerate(txns):
        network.submit_transaction(j % n, txn, j * spec.txn_interval_ms)
    report = network.run_until_quiescent(spec.deadline_ms)

    ids = [t.txn_id for t in txns]
    committed_everywhere = all(
        all(txn_id in times for txn_id in ids) for times in report.commit_times.values()
    )
    quiescent = report.quiescent and committed_everywhere
    t_g = min(report.txn_generated.values()) if report.txn_generated else 0
    if committed_everywhere:
        t_c = max(times[txn_id] for times in report.commit_times.values() for txn_id in ids)
    else:
        t_c = report.clock_ms
    return LatencySample(
        n_nodes=n,
        payload_bytes=payload,
        trial=trial,
        seed=seed,
        t_g_ms=t_g,
        t_c_ms=t_c,
        latency_ms=t_c - t_g,
        quiescent=quiescent,
    )


def summarize(rows: Iterable[LatencySample]) -> list[CellSummary]:
    cells: dict[tuple[int, int], list[LatencySample]] = {}
    for row in rows:
        cells.setdefault((row.n_nodes, row.payload_bytes), []).append(row)
    summaries = []
    for (n, payload), cell_rows in sorted(cells.items()):
        latencies = [r.latency_ms for r in cell_rows]
        summaries.append(CellSummary(
            n_nodes=n,
            payload_bytes=payload,
            trials=len(cell_rows),
            mean_latency_ms=statistics.mean(latencies),
            stdev_latency_ms=statistics.pstdev(latencies),
            all_quiescent=all(r.quiescent for r in cell_rows),
        ))
    return summaries


def run_latency_sweep(spec: SweepSpec, template: SimConfig | None = None) -> SweepResult:
    """One seeded simulation per (payload, network size, trial); rows are sorted
    before any output so repeated runs are byte-identical."""
    if template is None:
        template = SimConfig(n_nodes=1)
    rows = [
        _run_trial(spec, template, payload, n, trial)
        for payload in spec.payload_sizes
        for n in spec.network_sizes
        for trial in range(spec.trials)
    ]
    rows.sort(key=lambda r: (r.n_nodes, r.payload_bytes, r.trial))
    return SweepResult(spec=spec, rows=rows, summaries=summarize(rows))


def write_csv(result: SweepResult, data_path: str, summary_path: str) -> None:
    with open(data_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n_nodes,payload_bytes,trial,seed,t_g_ms,t_c_ms,latency_ms,quiescent\n")
        for r in result.rows:
            fh.write(f"{r.n_nodes},{r.payload_bytes},{r.trial},{r.seed},"
                     f"{r.t_g_ms},{r.t_c_ms},{r.latency_ms},"
                     f"{'true' if r.quiescent else 'false'}\n")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n_nodes,payload_bytes,trials,mean_latency_ms,stdev_latency_ms,"
                 "all_quiescent\n")
        for s in result.summaries:
            fh.write(f"{s.n_nodes},{s.payload_bytes},{s.trials},"
                     f"{s.mean_latency_ms:.3f},{s.stdev_latency_ms:.3f},"
                     f"{'true' if s.all_quiescent else 'false'}\n")


# -- attack scenarios ---------------------------------------------------------

SCENARIO_NAMES = ("control", "credential-theft", "local-tamper", "remote-corruption")

_ENTITY = "Sales.Order"
_ENTITY_ID = 7001
_VICTIM_USER = 42


@dataclass
class ScenarioResult:
    name: str
    passed: bool
    details: dict[str, Any] = field(default_factory=dict)


@dataclass
class ScenarioReport:
    results: list[ScenarioResult]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def wire_obj(self) -> dict[str, Any]:
        return {
            "all_passed": self.all_passed,
            "results": [
                {"name": r.name, "passed": r.passed, "details": r.details}
                for r in self.results
            ],
        }


def _honest_workload(network: SimNetwork, seed: int) -> dict[str, str | None]:
    """Insert-then-update history for one entity, submitted through the capture
    pipeline. Returns the application's current data after the writes."""
    ids = SeededIds(seed)
    policy = AuditPolicy(frozenset({_ENTITY}))
    base_ms = 1_700_000_000_000

    def event(kind: EventKind, deltas: list[PropertyDelta], offset: int) -> EntityChangeEvent:
        return EntityChangeEvent(
            entity_name=_ENTITY, entity_id=_ENTITY_ID, kind=kind,
            properties=tuple(deltas), session_id=ids(), user_id=_VICTIM_USER,
            url="/sales/order.aspx?id=7001", timestamp_ms=base_ms + offset,
        )

    entries = [
        on_post_insert(event(EventKind.INSERT, [
            PropertyDelta("Amount", new_value="150.00"),
            PropertyDelta("Status", new_value="open"),
        ], 0), policy, ids),
        on_post_update(event(EventKind.UPDATE, [
            PropertyDelta("Amount", "150.00", "175.00"),
            PropertyDelta("Status", "open", "open"),
        ], 60_000), policy, ids),
        on_post_update(event(EventKind.UPDATE, [
            PropertyDelta("Amount", "175.00", "175.00"),
            PropertyDelta("Status", "open", "approved"),
        ], 120_000), policy, ids),
    ]
    current: dict[str, str | None] = {}
    for i, entry in enumerate(entries):
        assert entry is not None
        for d in entry.details:
            current[d.property_name] = d.new_value
        network.submit_transaction(0, transaction_from_entry(entry), network.clock)
        network.run_until_quiescent()
    return current


def _fresh_network(seed: int, n_nodes: int) -> SimNetwork:
    return spawn_network(SimConfig(n_nodes=n_nodes, rng_seed=seed,
                                   block_timeout_ms=100))


def _scenario_control(seed: int, n_nodes: int) -> ScenarioResult:
    network = _fresh_network(seed, n_nodes)
    current = _honest_workload(network, seed)
    ledgers = [node.ledger for node in network.nodes]
    clean_verify = all(verify_chain(l).ok for l in ledgers)
    no_forks = all(
        diff_against_peer(ledgers[0], l) is None for l in ledgers[1:]
    )
    replayed = restore_state(ledgers[0], _ENTITY, _ENTITY_ID)
    data_matches = replayed.values == current and replayed.consistent
    return ScenarioResult(
        name="control",
        passed=clean_verify and no_forks and data_matches,
        details={"verify_ok": clean_verify, "forks": not no_forks,
                 "current_matches_chain": data_matches},
    )


def _scenario_credential_theft(seed: int, n_nodes: int) -> ScenarioResult:
    network = _fresh_network(seed, n_nodes)
    _honest_workload(network, seed)
    before = len(query_history(network.nodes[0].ledger, _ENTITY, _ENTITY_ID))
    network.inject_fault(ForgeAppWrite(
        target=2 % n_nodes, entity_name=_ENTITY, entity_id=_ENTITY_ID,
        property_name="Amount", value="99999.99", user_id=_VICTIM_USER,
        old_value="175.00",
    ))
    network.run_until_quiescent()
    histories = [query_history(n.ledger, _ENTITY, _ENTITY_ID) for n in network.nodes]
    logged_everywhere = all(len(h) == before + 1 for h in histories)
    forged = histories[0][-1] if histories[0] else None
    attributed = (
        forged is not None
        and forged.user_id == _VICTIM_USER
        and forged.details[0].new_value == "99999.99"
    )
    same_everywhere = len({h[-1].digest for h in histories if h}) == 1
    return ScenarioResult(
        name="credential-theft",
        passed=logged_everywhere and attributed and same_everywhere,
        details={
            "forged_txn_id": forged.txn_id if forged else None,
            "logged_on_all_nodes": logged_everywhere,
            "attributed_user_id": forged.user_id if forged else None,
            "identical_across_nodes": same_everywhere,
        },
    )


def _scenario_local_tamper(seed: int, n_nodes: int) -> ScenarioResult:
    network = _fresh_network(seed, n_nodes)
    _honest_workload(network, seed)
    victim = network.nodes[2 % n_nodes]
    honest = network.nodes[0]
    height = 1
    network.inject_fault(TamperLocalLedger(target=victim.node_id, height=height))

    victim_report = verify_chain(victim.ledger)
    detected = (not victim_report.ok
                and victim_report.first_bad_height is not None
                and victim_report.first_bad_height <= height + 1)
    others_ok = all(verify_chain(n.ledger).ok
                    for n in network.nodes if n.node_id != victim.node_id)
    fork = diff_against_peer(victim.ledger, honest.ledger)
    fork_found = fork is not None and fork <= height

    # Recovery: adopt the chain agreed by a quorum of the remaining peers.
    peers = [n for n in network.nodes if n.node_id != victim.node_id]
    head_counts: dict[bytes, int] = {}
    for peer in peers:
        head_counts[peer.ledger.head.digest] = head_counts.get(peer.ledger.head.digest, 0) + 1
    majority_digest = max(head_counts, key=lambda d: (head_counts[d], d))
    quorum = network.nodes[0].replica.config.quorum
    donor = next(p for p in peers if p.ledger.head.digest == majority_digest)
    quorum_met = head_counts[majority_digest] >= quorum
    victim.replica.ledger = Ledger(list(donor.ledger.blocks))

    recovered_ok = verify_chain(victim.ledger).ok
    recovered_state = restore_state(victim.ledger, _ENTITY, _ENTITY_ID)
    honest_state = restore_state(honest.ledger, _ENTITY, _ENTITY_ID)
    byte_identical = recovered_state.canonical_bytes() == honest_state.canonical_bytes()
    return ScenarioResult(
        name="local-tamper",
        passed=(detected and others_ok and fork_found and quorum_met
                and recovered_ok and byte_identical),
        details={
            "detected_at_height": victim_report.first_bad_height,
            "cause": victim_report.cause.value if victim_report.cause else None,
            "fork_point": fork,
            "honest_peers_clean": others_ok,
            "recovery_byte_identical": byte_identical,
        },
    )


def _scenario_remote_corruption(seed: int, n_nodes: int) -> ScenarioResult:
    network = _fresh_network(seed, n_nodes)
    current = _honest_workload(network, seed)
    # The exploit writes around the audit path: current data changes, chain does not.
    current["Amount"] = "0.01"

    chain_state = restore_state(network.nodes[0].ledger, _ENTITY, _ENTITY_ID)
    diff = {
        prop: {"chain": chain_state.values.get(prop), "current": current.get(prop)}
        for prop in set(chain_state.values) | set(current)
        if chain_state.values.get(prop) != current.get(prop)
    }
    detected = set(diff) == {"Amount"}
    current.update(chain_state.values)
    recovered = current == chain_state.values
    return ScenarioResult(
        name="remote-corruption",
        passed=detected and recovered,
        details={"diff": diff, "recovered": recovered},
    )


_SCENARIO_FNS = {
    "control": _scenario_control,
    "credential-theft": _scenario_credential_theft,
    "local-tamper": _scenario_local_tamper,
    "remote-corruption": _scenario_remote_corruption,
}


def run_attack_scenarios(seed: int = 0, names: Iterable[str] | None = None,
                         n_nodes: int = 4) -> ScenarioReport:
    selected = tuple(names) if names is not None else SCENARIO_NAMES
    unknown = set(selected) - set(SCENARIO_NAMES)
    if unknown:
        raise ValueError(f"unknown scenarios: {sorted(unknown)}")
    return ScenarioReport([_SCENARIO_FNS[name](seed, n_nodes) for name in selected])


def dump_node_ledgers(network: SimNetwork, directory: str) -> list[str]:
    """Persist each node's chain under the directory; returns the file paths."""
    import os

    paths = []
    for node in network.nodes:
        path = os.path.join(directory, f"node-{node.node_id}.ledger")
        save_ledger(node.ledger, path)
        paths.append(path)
    return paths
