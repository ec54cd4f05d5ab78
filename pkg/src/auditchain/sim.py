"""Deterministic discrete-event simulation of the peer network.

Full mesh of nodes, each holding a ledger, a consensus replica, and a mempool.
Submitted transactions gossip one hop to every peer (receivers deduplicate; the
mesh makes re-flooding redundant). The primary cuts a block when pending bytes
reach the configured threshold or the oldest pending transaction has waited out
the block timeout, whichever comes first.

Transport model: a message's delivery time is transmission_start + link_latency +
ceil(size / bandwidth). A node's outbound transmissions serialize on its uplink,
so transmission_start is the later of the send time and the uplink becoming free.
The clock is integer milliseconds; ties dequeue in scheduling order, which makes a
run a pure function of (config, submission schedule, fault specs).

Fault injection covers the threat model: local chain tampering (physical access),
forged application writes (stolen credentials / corrupted values), and Byzantine
consensus behavior (equivocation, outbound message drops).
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
import uuid
from collections import Counter
from dataclasses import dataclass
from typing import Any, Union

from .codec import AuditTransaction, TxnDetail, WireDate, canonical_dumps
from .consensus import ConsensusConfig, ConsensusMessage, HandleResult, MsgKind, Replica
from .ledger import Block, build_block

__all__ = [
    "DropOutbound",
    "Equivocate",
    "FaultSpec",
    "ForgeAppWrite",
    "GossipMessage",
    "SimConfig",
    "SimNetwork",
    "SimNode",
    "SimReport",
    "TamperLocalLedger",
    "inject_fault",
    "run_until_quiescent",
    "spawn_network",
    "submit_transaction",
]

_DELIVER, _SUBMIT, _TIMER = 0, 1, 2

_GOSSIP_ENVELOPE = len(canonical_dumps({"kind": "txn", "txn": None}))


@dataclass(frozen=True)
class SimConfig:
    n_nodes: int
    link_latency_ms: int = 5
    bandwidth_bytes_per_ms: int = 2000
    jitter_fraction: float = 0.0
    rng_seed: int = 0
    block_bytes_threshold: int = 262_144
    block_timeout_ms: int = 3_000
    buffer_window: int = 4

    def __post_init__(self) -> None:
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be at least 1")
        if self.link_latency_ms < 0:
            raise ValueError("link_latency_ms must be non-negative")
        if self.bandwidth_bytes_per_ms <= 0:
            raise ValueError("bandwidth must be positive")
        if not 0.0 <= self.jitter_fraction < 1.0:
            raise ValueError("jitter_fraction must be in [0, 1)")


@dataclass(frozen=True)
class GossipMessage:
    txn: AuditTransaction

    @property
    def wire_size(self) -> int:
        return _GOSSIP_ENVELOPE + self.txn.byte_size


@dataclass(frozen=True)
class TamperLocalLedger:
    """Physical-access attack: rewrite a byte of the node's own chain copy."""

    target: int
    height: int
    txn_index: int = 0
    char_index: int = 0
    xor_mask: int = 1


@dataclass(frozen=True)
class Equivocate:
    """Byzantine node: conflicting proposals (as primary) or double votes."""

    target: int


@dataclass(frozen=True)
class DropOutbound:
    """Byzantine omission: each outbound message is dropped with this probability."""

    target: int
    fraction: float


@dataclass(frozen=True)
class ForgeAppWrite:
    """Attacker-authored transaction submitted through the normal application path,
    carrying a victim user id (credential theft) or a corrupted value."""

    target: int
    entity_name: str
    entity_id: int
    property_name: str
    value: str
    user_id: int
    old_value: str | None = None


FaultSpec = Union[TamperLocalLedger, Equivocate, DropOutbound, ForgeAppWrite]


class SimNode:
    def __init__(self, node_id: int, config: SimConfig) -> None:
        self.node_id = node_id
        self.replica = Replica(
            node_id,
            ConsensusConfig.from_n(config.n_nodes),
            buffer_window=config.buffer_window,
        )
        self.mempool: dict[str, tuple[AuditTransaction, int]] = {}
        self.pending_bytes = 0
        self.committed_ids: set[str] = set()
        self.commit_times: dict[str, int] = {}
        self.uplink_free_ms = 0
        self.outstanding = False
        self.next_timer_due: int | None = None
        self.equivocate = False
        self.drop_fraction = 0.0

    @property
    def ledger(self):
        return self.replica.ledger

    def has_seen(self, txn_id: str) -> bool:
        return txn_id in self.mempool or txn_id in self.committed_ids


@dataclass
class SimReport:
    """Snapshot of a run: per-txn generation times, per-node commit times, final
    chain digests, and delivered-message counts."""

    quiescent: bool
    clock_ms: int
    events_processed: int
    txn_generated: dict[str, int]
    commit_times: dict[int, dict[str, int]]
    head_digests: dict[int, str]
    ledger_heights: dict[int, int]
    message_counts: dict[str, int]
    trace_hash: str | None = None

    def wire_obj(self) -> dict[str, Any]:
        return {
            "quiescent": self.quiescent,
            "clock_ms": self.clock_ms,
            "events_processed": self.events_processed,
            "txn_generated": dict(self.txn_generated),
            "commit_times": {str(k): dict(v) for k, v in self.commit_times.items()},
            "head_digests": {str(k): v for k, v in self.head_digests.items()},
            "ledger_heights": {str(k): v for k, v in self.ledger_heights.items()},
            "message_counts": dict(self.message_counts),
            "trace_hash": self.trace_hash,
        }


class SimNetwork:
    def __init__(self, config: SimConfig, hash_trace: bool = False,
                 trace_path: str | None = None) -> None:
        self.config = config
        self.nodes = [SimNode(i, config) for i in range(config.n_nodes)]
        self.clock = 0
        self.rng = random.Random(config.rng_seed)
        self.txn_generated: dict[str, int] = {}
        self.message_counts: Counter = Counter()
        self.events_processed = 0
        self._heap: list[tuple] = []
        self._seq = 0
        self._hasher = hashlib.sha256() if hash_trace else None
        self._trace_fh = open(trace_path, "w", encoding="utf-8") if trace_path else None

    # -- topology ----------------------------------------------------------

    @property
    def links(self) -> list[tuple[int, int]]:
        n = self.config.n_nodes
        return [(i, j) for i in range(n) for j in range(n) if i != j]

    def close(self) -> None:
        if self._trace_fh:
            self._trace_fh.close()
            self._trace_fh = None

    # -- external surface ----------------------------------------------------

    def submit_transaction(self, node_id: int, txn: AuditTransaction, t: int) -> None:
        if t < self.clock:
            raise ValueError(f"cannot submit in the past (t={t} < clock={self.clock})")
        self._schedule(t, (_SUBMIT, node_id, txn))

    def inject_fault(self, spec: FaultSpec) -> None:
        node = self._node(spec.target)
        if isinstance(spec, TamperLocalLedger):
            self._tamper(node, spec)
        elif isinstance(spec, Equivocate):
            node.equivocate = True
        elif isinstance(spec, DropOutbound):
            if not 0.0 <= spec.fraction <= 1.0:
                raise ValueError("drop fraction must be in [0, 1]")
            node.drop_fraction = spec.fraction
        elif isinstance(spec, ForgeAppWrite):
            txn = self._forge_txn(spec)
            self._schedule(self.clock, (_SUBMIT, spec.target, txn))
        else:
            raise TypeError(f"unknown fault spec: {spec!r}")

    def run_until_quiescent(self, deadline_ms: int | None = None) -> SimReport:
        heap = self._heap
        quiescent = True
        while heap:
            if deadline_ms is not None and heap[0][0] > deadline_ms:
                quiescent = False
                break
            t, _seq, action = heapq.heappop(heap)
            self.clock = t
            self.events_processed += 1
            self._process(t, action)
        return self._report(quiescent)

    # -- internals -----------------------------------------------------------

    def _node(self, node_id: int) -> SimNode:
        if not 0 <= node_id < len(self.nodes):
            raise ValueError(f"unknown node: {node_id}")
        return self.nodes[node_id]

    def _schedule(self, t: int, action: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, action))

    def _process(self, t: int, action: tuple) -> None:
        kind = action[0]
        if kind == _DELIVER:
            _, dst, msg, src = action
            self._count_delivery(t, src, dst, msg)
            node = self.nodes[dst]
            if isinstance(msg, GossipMessage):
                self._on_gossip(node, msg.txn, t)
            else:
                self._emit(node, node.replica.handle(msg), t)
        elif kind == _SUBMIT:
            _, node_id, txn = action
            self._on_submit(self.nodes[node_id], txn, t)
        else:
            _, node_id, due = action
            node = self.nodes[node_id]
            if node.next_timer_due == due:
                node.next_timer_due = None
                self._check_cut(node, t)

    def _on_submit(self, node: SimNode, txn: AuditTransaction, t: int) -> None:
        if node.has_seen(txn.txn_id):
            return
        self.txn_generated.setdefault(txn.txn_id, t)
        self._add_pending(node, txn, t)
        self._broadcast(node, GossipMessage(txn), t)
        self._check_cut(node, t)

    def _on_gossip(self, node: SimNode, txn: AuditTransaction, t: int) -> None:
        if node.has_seen(txn.txn_id):
            return
        self._add_pending(node, txn, t)
        self._check_cut(node, t)

    def _add_pending(self, node: SimNode, txn: AuditTransaction, t: int) -> None:
        node.mempool[txn.txn_id] = (txn, t)
        node.pending_bytes += txn.byte_size

    def _emit(self, node: SimNode, result: HandleResult, t: int) -> None:
        for msg in result.outbound:
            self._broadcast(node, msg, t)
            if node.equivocate and msg.kind is not MsgKind.PRE_PREPARE:
                twin_digest = hashlib.sha256(msg.block_digest + b"equivocation").digest()
                self._broadcast(
                    node,
                    ConsensusMessage(msg.kind, msg.view, msg.height, twin_digest,
                                     node.node_id),
                    t,
                )
        for block in result.committed:
            self._on_commit(node, block, t)

    def _on_commit(self, node: SimNode, block: Block, t: int) -> None:
        for txn in block.txns:
            node.committed_ids.add(txn.txn_id)
            node.commit_times[txn.txn_id] = t
            entry = node.mempool.pop(txn.txn_id, None)
            if entry is not None:
                node.pending_bytes -= entry[0].byte_size
        if node.replica.is_primary:
            node.outstanding = False
            self._check_cut(node, t)

    def _check_cut(self, node: SimNode, t: int) -> None:
        if not node.replica.is_primary or node.outstanding or not node.mempool:
            return
        cfg = self.config
        first_arrival = next(iter(node.mempool.values()))[1]
        if (node.pending_bytes >= cfg.block_bytes_threshold
                or t - first_arrival >= cfg.block_timeout_ms):
            self._propose(node, t)
        else:
            due = first_arrival + cfg.block_timeout_ms
            if node.next_timer_due != due:
                node.next_timer_due = due
                self._schedule(due, (_TIMER, node.node_id, due))

    def _take_block_txns(self, node: SimNode) -> list[AuditTransaction]:
        threshold = self.config.block_bytes_threshold
        selected: list[AuditTransaction] = []
        taken = 0
        for txn_id in list(node.mempool):
            txn, _arrival = node.mempool[txn_id]
            if selected and taken + txn.byte_size > threshold:
                break
            del node.mempool[txn_id]
            node.pending_bytes -= txn.byte_size
            selected.append(txn)
            taken += txn.byte_size
            if taken >= threshold:
                break
        return selected

    def _propose(self, node: SimNode, t: int) -> None:
        selected = self._take_block_txns(node)
        node.outstanding = True
        if node.equivocate and self.config.n_nodes > 1:
            self._propose_equivocating(node, selected, t)
            return
        self._emit(node, node.replica.propose(selected, t), t)

    def _propose_equivocating(self, node: SimNode, selected, t: int) -> None:
        # Two conflicting blocks over the same transactions; each half of the
        # peers sees a different one. The replica's own state follows wing A.
        result = node.replica.propose(selected, t)
        wing_b = build_block(selected, node.ledger.head, node.node_id, t + 1)
        peers = [i for i in range(self.config.n_nodes) if i != node.node_id]
        half = len(peers) // 2
        lower, upper = peers[:half] or peers, peers[half:]
        height = wing_b.header.height
        for msg in result.outbound:
            self._send_to(node, lower, msg, t)
        self._send_to(node, upper,
                      ConsensusMessage(MsgKind.PRE_PREPARE, 0, height, wing_b.digest,
                                       node.node_id, wing_b), t)
        self._send_to(node, upper,
                      ConsensusMessage(MsgKind.PREPARE, 0, height, wing_b.digest,
                                       node.node_id), t)
        for block in result.committed:
            self._on_commit(node, block, t)

    def _broadcast(self, src: SimNode, msg, t: int) -> None:
        n = self.config.n_nodes
        self._send_to(src, (d for d in range(n) if d != src.node_id), msg, t)

    def _send_to(self, src: SimNode, dsts, msg, t: int) -> None:
        cfg = self.config
        bw = cfg.bandwidth_bytes_per_ms
        for dst in dsts:
            if src.drop_fraction > 0.0 and self.rng.random() < src.drop_fraction:
                self.message_counts["dropped"] += 1
                continue
            size = msg.wire_size
            tx_ms = -(-size // bw)
            start = max(t, src.uplink_free_ms)
            src.uplink_free_ms = start + tx_ms
            transit = cfg.link_latency_ms + tx_ms
            if cfg.jitter_fraction > 0.0:
                factor = 1.0 + self.rng.uniform(-cfg.jitter_fraction, cfg.jitter_fraction)
                transit = max(0, round(transit * factor))
            self._schedule(start + transit, (_DELIVER, dst, msg, src.node_id))

    def _count_delivery(self, t: int, src: int, dst: int, msg) -> None:
        label = "txn" if isinstance(msg, GossipMessage) else msg.kind.value
        self.message_counts[label] += 1
        if self._hasher is not None:
            if isinstance(msg, GossipMessage):
                key = msg.txn.digest.hex()
            else:
                key = msg.block_digest.hex()
            self._hasher.update(f"{t}|{src}|{dst}|{label}|{key}\n".encode())
        if self._trace_fh is not None:
            obj = {"t": t, "src": src, "dst": dst}
            if isinstance(msg, GossipMessage):
                obj["msg"] = {"kind": "txn", "txn": msg.txn.wire_obj()}
            else:
                obj["msg"] = msg.wire_obj()
            self._trace_fh.write(canonical_dumps(obj).decode("ascii") + "\n")

    def _tamper(self, node: SimNode, spec: TamperLocalLedger) -> None:
        blocks = node.ledger.blocks
        if not 1 <= spec.height < len(blocks):
            raise ValueError(f"no tamperable block at height {spec.height}")
        block = blocks[spec.height]
        txn = block.txns[spec.txn_index % len(block.txns)]
        text = txn.url or txn.class_name
        i = spec.char_index % len(text)
        flipped = text[:i] + chr(ord(text[i]) ^ spec.xor_mask) + text[i + 1:]
        if txn.url:
            tampered_txn = AuditTransaction(
                txn.class_name, txn.created_date, txn.entity_id, txn.event_type,
                txn.txn_id, txn.session_id, flipped, txn.user_id, txn.details)
        else:
            tampered_txn = AuditTransaction(
                flipped, txn.created_date, txn.entity_id, txn.event_type,
                txn.txn_id, txn.session_id, txn.url, txn.user_id, txn.details)
        txns = list(block.txns)
        txns[spec.txn_index % len(block.txns)] = tampered_txn
        blocks[spec.height] = Block(header=block.header, txns=tuple(txns))

    def _forge_txn(self, spec: ForgeAppWrite) -> AuditTransaction:
        def rng_uuid() -> str:
            return str(uuid.UUID(int=self.rng.getrandbits(128), version=4))

        return AuditTransaction(
            class_name=spec.entity_name,
            created_date=WireDate(self.clock, 0),
            entity_id=spec.entity_id,
            event_type=1,
            txn_id=rng_uuid(),
            session_id=rng_uuid(),
            url="/forged/entry",
            user_id=spec.user_id,
            details=(TxnDetail(rng_uuid(), spec.property_name, spec.old_value,
                               spec.value),),
        )

    def _report(self, quiescent: bool) -> SimReport:
        return SimReport(
            quiescent=quiescent,
            clock_ms=self.clock,
            events_processed=self.events_processed,
            txn_generated=dict(self.txn_generated),
            commit_times={n.node_id: dict(n.commit_times) for n in self.nodes},
            head_digests={n.node_id: n.ledger.head.digest.hex() for n in self.nodes},
            ledger_heights={n.node_id: n.ledger.height for n in self.nodes},
            message_counts=dict(self.message_counts),
            trace_hash=self._hasher.hexdigest() if self._hasher else None,
        )


def spawn_network(config: SimConfig, hash_trace: bool = False,
                  trace_path: str | None = None) -> SimNetwork:
    """Fresh full-mesh network: every node at genesis with an empty mempool."""
    return SimNetwork(config, hash_trace=hash_trace, trace_path=trace_path)


def submit_transaction(network: SimNetwork, node_id: int, txn: AuditTransaction,
                       t: int) -> None:
    network.submit_transaction(node_id, txn, t)


def inject_fault(network: SimNetwork, spec: FaultSpec) -> None:
    network.inject_fault(spec)


def run_until_quiescent(network: SimNetwork,
                        deadline_ms: int | None = None) -> SimReport:
    return network.run_until_quiescent(deadline_ms)


def report_to_json(report: SimReport) -> str:
    return json.dumps(report.wire_obj(), indent=2, sort_keys=True)
