"""Three-phase BFT replication of the block ledger.

One replica per node. The view's primary proposes a block (pre-prepare); every
replica that accepts a valid proposal broadcasts a prepare; a replica that holds a
2f+1 prepare quorum for the accepted digest broadcasts a commit; a 2f+1 commit
quorum appends the block to the local ledger. Own votes count toward quorums.

Replicas are deterministic single-threaded state machines: one input (a message or
a propose call) produces a batch of outbound broadcasts and possibly committed
blocks. The transport (see :mod:`auditchain.sim`) owns delivery and timing.

The primary is static (view 0, node 0): there is no view change, so a Byzantine
primary costs liveness, never safety.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any

from .codec import canonical_dumps
from .ledger import (
    Block,
    Ledger,
    append_block,
    build_block,
    check_block_link,
    decode_block_obj,
)

__all__ = [
    "ConsensusConfig",
    "ConsensusError",
    "ConsensusMessage",
    "HandleResult",
    "MsgKind",
    "Replica",
    "max_faults",
    "quorum_size",
]


class ConsensusError(Exception):
    pass


def max_faults(n: int) -> int:
    """Largest f with n >= 3f + 1."""
    if n < 1:
        raise ConsensusError("need at least one replica")
    return (n - 1) // 3


def quorum_size(n: int) -> int:
    """Votes needed before acting: 2f + 1, so any two quorums share an honest replica."""
    return 2 * max_faults(n) + 1


@dataclass(frozen=True)
class ConsensusConfig:
    n: int
    f: int
    quorum: int

    def __post_init__(self) -> None:
        if self.n < 3 * self.f + 1:
            raise ConsensusError(f"n={self.n} cannot tolerate f={self.f} faults")
        if self.quorum != 2 * self.f + 1:
            raise ConsensusError("quorum must be 2f + 1")

    @classmethod
    def from_n(cls, n: int) -> "ConsensusConfig":
        f = max_faults(n)
        return cls(n=n, f=f, quorum=2 * f + 1)


class MsgKind(Enum):
    PRE_PREPARE = "pre_prepare"
    PREPARE = "prepare"
    COMMIT = "commit"


@dataclass(frozen=True)
class ConsensusMessage:
    kind: MsgKind
    view: int
    height: int
    block_digest: bytes
    sender: int
    block: Block | None = None

    @cached_property
    def wire_size(self) -> int:
        # Envelope plus payload: the block travels as its canonical bytes.
        base = canonical_dumps(self.wire_obj(include_block=False))
        return len(base) + (self.block.byte_size if self.block is not None else 0)

    def wire_obj(self, include_block: bool = True) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "view": self.view,
            "height": self.height,
            "block_digest": self.block_digest.hex(),
            "sender": self.sender,
            "block": self.block.wire_obj() if include_block and self.block else None,
        }

    @classmethod
    def from_wire_obj(cls, obj: dict[str, Any]) -> "ConsensusMessage":
        return cls(
            kind=MsgKind(obj["kind"]),
            view=obj["view"],
            height=obj["height"],
            block_digest=bytes.fromhex(obj["block_digest"]),
            sender=obj["sender"],
            block=decode_block_obj(obj["block"]) if obj.get("block") else None,
        )


@dataclass
class HandleResult:
    """Messages to broadcast and blocks that just committed locally."""

    outbound: list[ConsensusMessage] = field(default_factory=list)
    committed: list[Block] = field(default_factory=list)


class Replica:
    """Single node's consensus state machine over its own ledger."""

    def __init__(
        self,
        node_id: int,
        config: ConsensusConfig,
        ledger: Ledger | None = None,
        buffer_window: int = 4,
    ) -> None:
        self.node_id = node_id
        self.config = config
        self.ledger = ledger if ledger is not None else Ledger()
        self.view = 0
        self.buffer_window = buffer_window
        # First message wins per sender per (kind, height); conflicting re-votes
        # from one sender are ignored, duplicates are no-ops.
        self._votes: dict[tuple[MsgKind, int], dict[int, bytes]] = {}
        self._counts: dict[tuple[MsgKind, int], dict[bytes, int]] = {}
        self._accepted: dict[int, bytes] = {}
        self._blocks: dict[tuple[int, bytes], Block] = {}
        self._sent: dict[tuple[MsgKind, int], bytes] = {}
        self._buffer: dict[int, list[ConsensusMessage]] = {}

    def primary(self, view: int | None = None) -> int:
        return (self.view if view is None else view) % self.config.n

    @property
    def is_primary(self) -> bool:
        return self.primary() == self.node_id

    @property
    def head_height(self) -> int:
        return self.ledger.height

    def propose(self, pending, now: int) -> HandleResult:
        """Primary only: form the next block and broadcast the pre-prepare."""
        if not self.is_primary:
            raise ConsensusError(f"node {self.node_id} is not the view-{self.view} primary")
        if not pending:
            raise ConsensusError("nothing to propose")
        height = self.head_height + 1
        if height in self._accepted:
            raise ConsensusError(f"already proposed at height {height}")
        block = build_block(pending, self.ledger.head, self.node_id, now)
        result = HandleResult()
        result.outbound.append(
            ConsensusMessage(MsgKind.PRE_PREPARE, self.view, height, block.digest,
                             self.node_id, block)
        )
        self._accept(height, block)
        self._advance(result)
        return result

    def handle(self, msg: ConsensusMessage) -> HandleResult:
        result = HandleResult()
        self._ingest(msg, result)
        self._advance(result)
        return result

    def _ingest(self, msg: ConsensusMessage, result: HandleResult) -> None:
        if msg.view != self.view:
            return
        height = msg.height
        current = self.head_height + 1
        if height < current:
            return
        if height > current:
            if height <= current + self.buffer_window:
                self._buffer.setdefault(height, []).append(msg)
            return
        if msg.kind is MsgKind.PRE_PREPARE:
            self._on_pre_prepare(msg)
        else:
            self._record_vote(msg.kind, height, msg.sender, msg.block_digest)

    def _on_pre_prepare(self, msg: ConsensusMessage) -> None:
        height = msg.height
        if msg.sender != self.primary(msg.view):
            return
        if height in self._accepted:
            return
        block = msg.block
        if block is None or block.digest != msg.block_digest:
            return
        if check_block_link(block, self.ledger.head) is not None:
            return
        self._accept(height, block)

    def _accept(self, height: int, block: Block) -> None:
        self._accepted[height] = block.digest
        self._blocks[(height, block.digest)] = block

    def _record_vote(self, kind: MsgKind, height: int, sender: int, digest: bytes) -> None:
        votes = self._votes.setdefault((kind, height), {})
        if sender in votes:
            return
        votes[sender] = digest
        counts = self._counts.setdefault((kind, height), {})
        counts[digest] = counts.get(digest, 0) + 1

    def _count(self, kind: MsgKind, height: int, digest: bytes) -> int:
        return self._counts.get((kind, height), {}).get(digest, 0)

    def _send_vote(self, kind: MsgKind, height: int, digest: bytes,
                   result: HandleResult) -> None:
        self._sent[(kind, height)] = digest
        result.outbound.append(
            ConsensusMessage(kind, self.view, height, digest, self.node_id)
        )
        self._record_vote(kind, height, self.node_id, digest)

    def _advance(self, result: HandleResult) -> None:
        quorum = self.config.quorum
        progressed = True
        while progressed:
            progressed = False
            height = self.head_height + 1
            digest = self._accepted.get(height)
            if digest is None:
                return
            if (MsgKind.PREPARE, height) not in self._sent:
                self._send_vote(MsgKind.PREPARE, height, digest, result)
                progressed = True
            if ((MsgKind.COMMIT, height) not in self._sent
                    and self._count(MsgKind.PREPARE, height, digest) >= quorum):
                self._send_vote(MsgKind.COMMIT, height, digest, result)
                progressed = True
            if self._count(MsgKind.COMMIT, height, digest) >= quorum:
                # A quorum of commits proves the height is decided even if this
                # replica's own prepare quorum was starved; broadcast the commit
                # before applying so peers converge too.
                if (MsgKind.COMMIT, height) not in self._sent:
                    self._send_vote(MsgKind.COMMIT, height, digest, result)
                block = self._blocks[(height, digest)]
                append_block(self.ledger, block)
                result.committed.append(block)
                self._forget(height)
                for msg in self._buffer.pop(height + 1, []):
                    self._ingest(msg, result)
                progressed = True

    def _forget(self, height: int) -> None:
        self._accepted.pop(height, None)
        for kind in MsgKind:
            self._votes.pop((kind, height), None)
            self._counts.pop((kind, height), None)
            self._sent.pop((kind, height), None)
        for key in [k for k in self._blocks if k[0] == height]:
            self._blocks.pop(key)

    def snapshot(self) -> tuple:
        """Hashable image of the full replica state, for exhaustive exploration."""
        return (
            self.view,
            tuple(b.digest for b in self.ledger.blocks),
            tuple(sorted(
                (kind.value, h, tuple(sorted(v.items())))
                for (kind, h), v in self._votes.items() if v
            )),
            tuple(sorted(self._accepted.items())),
            tuple(sorted((kind.value, h, d) for (kind, h), d in self._sent.items())),
            tuple(sorted(
                (h, tuple((m.kind.value, m.sender, m.block_digest) for m in msgs))
                for h, msgs in self._buffer.items() if msgs
            )),
        )
