"""Per-node hash-chained block ledger.

Each block commits to its transactions through a Merkle root and to its
predecessor through the predecessor's digest, so any retroactive edit invalidates
every later link. The block digest covers the canonical bytes of the whole block
(header and transactions), which is what peers compare when hunting for forks.

A ledger instance belongs to a single owner (one node's event loop); nothing here
is thread-safe and nothing needs to be.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property, lru_cache
from typing import Any, Iterable, Sequence

from .codec import (
    AuditTransaction,
    CodecError,
    DateMode,
    canonical_dumps,
    decode_transaction_obj,
)

__all__ = [
    "Block",
    "BlockHeader",
    "EntityState",
    "Ledger",
    "LedgerError",
    "LedgerFileError",
    "VerificationReport",
    "VerifyCause",
    "ZERO_HASH",
    "append_block",
    "build_block",
    "check_block_link",
    "decode_block_obj",
    "diff_against_peer",
    "genesis",
    "load_ledger",
    "load_ledger_bytes",
    "merkle_root",
    "query_history",
    "restore_state",
    "save_ledger",
    "verify_chain",
    "verify_ledger_file",
]

ZERO_HASH = b"\x00" * 32

_HEADER_FIELDS = frozenset({"height", "prev_hash", "proposer", "timestamp_ms", "txn_root"})


class LedgerError(Exception):
    """A block was rejected or a chain operation is impossible."""


class LedgerFileError(LedgerError):
    """A persisted ledger file is unreadable from some record onward."""

    def __init__(self, message: str, height: int) -> None:
        super().__init__(message)
        self.height = height


def merkle_root(digests: Sequence[bytes]) -> bytes:
    """Binary Merkle root over transaction digests, duplicating the last node on
    odd levels. Empty input (genesis) yields the all-zero hash; a single digest is
    its own root."""
    if not digests:
        return ZERO_HASH
    level = list(digests)
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [
            hashlib.sha256(level[i] + level[i + 1]).digest()
            for i in range(0, len(level), 2)
        ]
    return level[0]


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_hash: bytes
    txn_root: bytes
    timestamp_ms: int
    proposer: int

    def wire_obj(self) -> dict[str, Any]:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash.hex(),
            "proposer": self.proposer,
            "timestamp_ms": self.timestamp_ms,
            "txn_root": self.txn_root.hex(),
        }


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    txns: tuple[AuditTransaction, ...]

    @cached_property
    def canonical_bytes(self) -> bytes:
        return canonical_dumps(self.wire_obj())

    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_bytes).digest()

    @cached_property
    def byte_size(self) -> int:
        return len(self.canonical_bytes)

    def wire_obj(self) -> dict[str, Any]:
        return {
            "header": self.header.wire_obj(),
            "txns": [t.wire_obj(DateMode.LEGACY) for t in self.txns],
        }


@lru_cache(maxsize=1)
def genesis() -> Block:
    """The one shared genesis: every field fixed, so every node starts identical."""
    return Block(
        header=BlockHeader(
            height=0, prev_hash=ZERO_HASH, txn_root=merkle_root(()),
            timestamp_ms=0, proposer=0,
        ),
        txns=(),
    )


def build_block(
    pending: Sequence[AuditTransaction], prev: Block, proposer: int, now: int
) -> Block:
    """Form the next block from pending transactions, preserving submission order."""
    if not pending:
        raise LedgerError("cannot build a block from no transactions")
    ids = [t.txn_id for t in pending]
    if len(set(ids)) != len(ids):
        raise LedgerError("duplicate transaction Id in pending set")
    return Block(
        header=BlockHeader(
            height=prev.header.height + 1,
            prev_hash=prev.digest,
            txn_root=merkle_root([t.digest for t in pending]),
            timestamp_ms=now,
            proposer=proposer,
        ),
        txns=tuple(pending),
    )


class VerifyCause(Enum):
    HASH_MISMATCH = "HashMismatch"
    ROOT_MISMATCH = "RootMismatch"
    HEIGHT_GAP = "HeightGap"
    TXN_INVALID = "TxnInvalid"


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    first_bad_height: int | None = None
    cause: VerifyCause | None = None

    def wire_obj(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "first_bad_height": self.first_bad_height,
            "cause": self.cause.value if self.cause else None,
        }


class Ledger:
    """Append-only chain, starting at genesis."""

    def __init__(self, blocks: Iterable[Block] | None = None) -> None:
        self.blocks: list[Block] = list(blocks) if blocks is not None else [genesis()]
        if not self.blocks:
            raise LedgerError("a ledger cannot be empty")

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.head.header.height

    def __len__(self) -> int:
        return len(self.blocks)


def check_block_link(block: Block, prev: Block) -> tuple[VerifyCause, str] | None:
    """Why `block` cannot extend `prev`, or None if it can."""
    if block.header.height != prev.header.height + 1:
        return (VerifyCause.HEIGHT_GAP,
                f"expected height {prev.header.height + 1}, got {block.header.height}")
    if block.header.prev_hash != prev.digest:
        return (VerifyCause.HASH_MISMATCH, "prev_hash does not match predecessor digest")
    if not block.txns:
        return (VerifyCause.TXN_INVALID, "non-genesis block with no transactions")
    ids = [t.txn_id for t in block.txns]
    if len(set(ids)) != len(ids):
        return (VerifyCause.TXN_INVALID, "duplicate transaction Id within block")
    if merkle_root([t.digest for t in block.txns]) != block.header.txn_root:
        return (VerifyCause.ROOT_MISMATCH, "txn_root does not match transactions")
    return None


def append_block(ledger: Ledger, block: Block) -> None:
    """Extend the chain; everything already committed stays byte-identical."""
    problem = check_block_link(block, ledger.head)
    if problem is not None:
        cause, message = problem
        raise LedgerError(f"{cause.value}: {message}")
    ledger.blocks.append(block)


def verify_chain(ledger: Ledger) -> VerificationReport:
    """Recompute every link and root; report the first violation by height."""
    blocks = ledger.blocks
    for i, block in enumerate(blocks):
        if block.header.height != i:
            return VerificationReport(False, i, VerifyCause.HEIGHT_GAP)
        if i == 0:
            if block.digest != genesis().digest:
                return VerificationReport(False, 0, VerifyCause.HASH_MISMATCH)
            continue
        problem = check_block_link(block, blocks[i - 1])
        if problem is not None:
            return VerificationReport(False, i, problem[0])
    return VerificationReport(True)


def diff_against_peer(local: Ledger, remote: Ledger) -> int | None:
    """Lowest height where the chains disagree; None when one is a prefix of the
    other. Disagreeing at genesis is a configuration error, not a fork."""
    if local.blocks[0].digest != remote.blocks[0].digest:
        raise LedgerError("ledgers do not share a genesis block")
    for h in range(1, min(len(local.blocks), len(remote.blocks))):
        if local.blocks[h].digest != remote.blocks[h].digest:
            return h
    return None


def query_history(ledger: Ledger, entity_name: str, entity_id: int) -> list[AuditTransaction]:
    """All committed transactions for one entity, in chain order."""
    return [
        txn
        for block in ledger.blocks
        for txn in block.txns
        if txn.class_name == entity_name and txn.entity_id == entity_id
    ]


@dataclass
class EntityState:
    """Entity property values replayed from the chain."""

    values: dict[str, str | None] = field(default_factory=dict)
    deleted: bool = False
    consistent: bool = True

    def wire_obj(self) -> dict[str, Any]:
        return {"values": dict(self.values), "deleted": self.deleted,
                "consistent": self.consistent}

    def canonical_bytes(self) -> bytes:
        return canonical_dumps(self.wire_obj())


def restore_state(ledger: Ledger, entity_name: str, entity_id: int) -> EntityState:
    """Replay the entity's committed history: inserts set values, updates overwrite
    with the new value, deletes keep the final values but mark the entity deleted.

    A history that does not start with an insert is replayed best-effort and
    flagged via ``consistent=False``.
    """
    state = EntityState()
    seen_any = False
    for txn in query_history(ledger, entity_name, entity_id):
        if txn.event_type == 0:
            state.values = {d.property_name: d.new_value for d in txn.details}
            state.deleted = False
        elif txn.event_type == 1:
            if not seen_any or state.deleted:
                state.consistent = False
            for d in txn.details:
                state.values[d.property_name] = d.new_value
        else:
            if not seen_any:
                state.consistent = False
            for d in txn.details:
                state.values[d.property_name] = d.old_value
            state.deleted = True
        seen_any = True
    return state


def decode_block_obj(obj: Any) -> Block:
    """Structural validation of a persisted block record."""
    if not isinstance(obj, dict) or obj.keys() != {"header", "txns"}:
        raise LedgerError("block record must have exactly 'header' and 'txns'")
    header = obj["header"]
    if not isinstance(header, dict) or header.keys() != _HEADER_FIELDS:
        raise LedgerError(f"block header must have exactly fields {sorted(_HEADER_FIELDS)}")
    for key in ("height", "proposer", "timestamp_ms"):
        if isinstance(header[key], bool) or not isinstance(header[key], int):
            raise LedgerError(f"header.{key} must be an integer")
    if header["height"] < 0:
        raise LedgerError("header.height must be non-negative")
    digests = {}
    for key in ("prev_hash", "txn_root"):
        raw = header[key]
        if not isinstance(raw, str) or len(raw) != 64 or raw != raw.lower():
            raise LedgerError(f"header.{key} must be 64 lowercase hex characters")
        try:
            digests[key] = bytes.fromhex(raw)
        except ValueError as exc:
            raise LedgerError(f"header.{key} is not valid hex") from exc
    if not isinstance(obj["txns"], list):
        raise LedgerError("block txns must be an array")
    try:
        txns = tuple(decode_transaction_obj(t) for t in obj["txns"])
    except CodecError as exc:
        raise LedgerError(f"invalid transaction in block: {exc}") from exc
    return Block(
        header=BlockHeader(
            height=header["height"],
            prev_hash=digests["prev_hash"],
            txn_root=digests["txn_root"],
            timestamp_ms=header["timestamp_ms"],
            proposer=header["proposer"],
        ),
        txns=txns,
    )


def save_ledger(ledger: Ledger, path: str) -> None:
    """Write the chain as length-prefixed canonical-JSON records, one per block."""
    with open(path, "wb") as fh:
        for block in ledger.blocks:
            record = block.canonical_bytes
            fh.write(b"%d\n" % len(record))
            fh.write(record)
            fh.write(b"\n")


def load_ledger(path: str) -> Ledger:
    """Read a persisted chain; raises :class:`LedgerFileError` naming the first
    unreadable record."""
    with open(path, "rb") as fh:
        return load_ledger_bytes(fh.read())


def load_ledger_bytes(data: bytes) -> Ledger:
    import json

    blocks: list[Block] = []
    pos = 0
    while pos < len(data):
        index = len(blocks)
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise LedgerFileError("truncated length prefix", index)
        try:
            length = int(data[pos:nl])
        except ValueError:
            raise LedgerFileError("corrupt length prefix", index) from None
        if length < 0 or nl + 1 + length + 1 > len(data):
            raise LedgerFileError("record length out of bounds", index)
        record = data[nl + 1 : nl + 1 + length]
        if data[nl + 1 + length : nl + 2 + length] != b"\n":
            raise LedgerFileError("missing record terminator", index)
        try:
            obj = json.loads(record)
        except ValueError:
            raise LedgerFileError("record is not valid JSON", index) from None
        try:
            blocks.append(decode_block_obj(obj))
        except LedgerError as exc:
            raise LedgerFileError(str(exc), index) from None
        pos = nl + 2 + length
    if not blocks:
        raise LedgerFileError("file contains no blocks", 0)
    return Ledger(blocks)


def verify_ledger_file(path: str) -> VerificationReport:
    """Load and verify a persisted chain; unreadable records count as invalid."""
    try:
        ledger = load_ledger(path)
    except LedgerFileError as exc:
        return VerificationReport(False, exc.height, VerifyCause.TXN_INVALID)
    return verify_chain(ledger)
