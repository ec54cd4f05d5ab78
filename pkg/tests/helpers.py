"""Shared test factories and independent oracles."""

from __future__ import annotations

import random
import uuid

from auditchain.capture import (
    AuditPolicy,
    EntityChangeEvent,
    EventKind,
    PropertyDelta,
)
from auditchain.codec import AuditTransaction, TxnDetail, WireDate
from auditchain.ledger import Ledger, append_block, build_block

ENTITY_POOL = (
    "AuditLog",
    "AuditLogDetail",
    "Sales.Order",
    "Sales.Invoice",
    "Permits.Application",
    "Permits.Inspection",
    "Hr.Employee",
)

PROPERTY_POOL = tuple(f"Prop{i}" for i in range(8))


def strip_json_whitespace(data: bytes) -> bytes:
    """Remove whitespace outside string literals; leaves everything else verbatim."""
    out = bytearray()
    in_str = False
    escaped = False
    for b in data:
        c = chr(b)
        if in_str:
            out.append(b)
            if escaped:
                escaped = False
            elif c == "\\":
                escaped = True
            elif c == '"':
                in_str = False
        else:
            if c in " \t\n\r":
                continue
            out.append(b)
            if c == '"':
                in_str = True
    return bytes(out)


def rng_uuid(rng: random.Random) -> str:
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


def random_policy(rng: random.Random) -> AuditPolicy:
    auditable = frozenset(
        name for name in ENTITY_POOL
        if name not in ("AuditLog", "AuditLogDetail") and rng.random() < 0.7
    )
    suppressed = {
        name: frozenset(p for p in PROPERTY_POOL if rng.random() < 0.3)
        for name in auditable
        if rng.random() < 0.5
    }
    return AuditPolicy(auditable, suppressed)


def random_event(rng: random.Random, kind: EventKind) -> EntityChangeEvent:
    prop_names = rng.sample(PROPERTY_POOL, rng.randrange(1, len(PROPERTY_POOL) + 1))
    deltas = []
    for name in prop_names:
        if kind is EventKind.INSERT:
            deltas.append(PropertyDelta(name, None, _random_value(rng)))
        elif kind is EventKind.DELETE:
            deltas.append(PropertyDelta(name, _random_value(rng), None))
        else:
            old = _random_value(rng)
            new = old if rng.random() < 0.4 else _random_value(rng)
            deltas.append(PropertyDelta(name, old, new))
    return EntityChangeEvent(
        entity_name=rng.choice(ENTITY_POOL),
        entity_id=rng.randrange(1, 1_000_000),
        kind=kind,
        properties=tuple(deltas),
        session_id=rng_uuid(rng),
        user_id=rng.randrange(1, 1000),
        url=f"/app/page{rng.randrange(100)}.aspx",
        timestamp_ms=rng.randrange(1_500_000_000_000, 1_800_000_000_000),
        offset_minutes=rng.choice((-300, -240, 0, 60)),
    )


def _random_value(rng: random.Random) -> str | None:
    if rng.random() < 0.15:
        return None
    return rng.choice(("0", "1", "9", "10", "open", "closed", "approved",
                       "only after 1:00 pm", "only after 2:00 pm", ""))


def oracle_expected_details(
    event: EntityChangeEvent, policy: AuditPolicy
) -> list[tuple[str, str | None, str | None]] | None:
    """Brute-force reference for the capture rules: returns (name, old, new)
    triples in property order, or None when no entry should be produced."""
    if event.entity_name in ("AuditLog", "AuditLogDetail"):
        return None
    if event.entity_name not in policy.auditable_entities:
        return None
    suppressed = policy.suppressed_properties.get(event.entity_name, frozenset())
    expected: list[tuple[str, str | None, str | None]] = []
    for delta in event.properties:
        if delta.property_name in suppressed:
            continue
        if event.kind is EventKind.INSERT:
            expected.append((delta.property_name, None, delta.new_value))
        elif event.kind is EventKind.DELETE:
            expected.append((delta.property_name, delta.old_value, None))
        elif delta.old_value != delta.new_value:
            expected.append((delta.property_name, delta.old_value, delta.new_value))
    return expected or None


def make_txn(
    rng: random.Random,
    entity_name: str = "Sales.Order",
    entity_id: int = 7001,
    event_type: int = 1,
    properties: dict[str, tuple[str | None, str | None]] | None = None,
    user_id: int = 42,
) -> AuditTransaction:
    if properties is None:
        properties = {"Amount": ("1", "2")}
    details = tuple(
        TxnDetail(rng_uuid(rng), name, old, new)
        for name, (old, new) in properties.items()
    )
    return AuditTransaction(
        class_name=entity_name,
        created_date=WireDate(rng.randrange(1_500_000_000_000, 1_800_000_000_000),
                              rng.choice((-240, 0))),
        entity_id=entity_id,
        event_type=event_type,
        txn_id=rng_uuid(rng),
        session_id=rng_uuid(rng),
        url="/app/change.aspx",
        user_id=user_id,
        details=details,
    )


def build_chain(rng: random.Random, n_blocks: int, txns_per_block: int = 2,
                proposer: int = 0) -> Ledger:
    """Honest chain of the given length built through the public append path."""
    ledger = Ledger()
    for h in range(1, n_blocks + 1):
        txns = [
            make_txn(rng, entity_id=rng.randrange(1, 50), event_type=1,
                     properties={"Value": (str(h - 1), str(h))})
            for _ in range(txns_per_block)
        ]
        block = build_block(txns, ledger.head, proposer, now=h * 1000)
        append_block(ledger, block)
    return ledger
