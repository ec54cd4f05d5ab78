"""ORM change-event capture: turns entity change notifications into audit entries.

The application layer reports every insert/update/delete of a mapped entity as an
:class:`EntityChangeEvent`. An :class:`AuditPolicy` says which entities are audited
and which of their properties are suppressed. The three ``on_post_*`` hooks apply
the policy and emit an :class:`AuditLogEntry`, or ``None`` when nothing is auditable
(the audit tables themselves, entities outside the policy, or events whose detail
list would be empty).

Pure functions over immutable inputs; identifier generation is injected so callers
can make entries deterministic.
"""

from __future__ import annotations

import json
import random
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping

__all__ = [
    "AUDIT_TABLE_NAMES",
    "AuditDetail",
    "AuditLogEntry",
    "AuditPolicy",
    "EntityChangeEvent",
    "EventKind",
    "PropertyDelta",
    "SeededIds",
    "is_auditable",
    "new_uuid",
    "on_post_delete",
    "on_post_insert",
    "on_post_update",
]

# Writes to the audit tables themselves must never be audited, or every saved
# entry would trigger another entry.
AUDIT_TABLE_NAMES = frozenset({"AuditLog", "AuditLogDetail"})


class EventKind(str, Enum):
    INSERT = "insert"
    UPDATE = "update"
    DELETE = "delete"


IdSource = Callable[[], str]


def new_uuid() -> str:
    """Default id source: random version-4 UUID, lowercase hyphenated."""
    return str(uuid.uuid4())


class SeededIds:
    """Deterministic id source producing well-formed v4 UUIDs from a seed."""

    def __init__(self, seed: int) -> None:
        self._rng = random.Random(seed)

    def __call__(self) -> str:
        bits = self._rng.getrandbits(128)
        return str(uuid.UUID(int=bits, version=4))


@dataclass(frozen=True)
class PropertyDelta:
    """Old/new value pair for one mapped property of a changed entity."""

    property_name: str
    old_value: str | None = None
    new_value: str | None = None

    def __post_init__(self) -> None:
        if not self.property_name:
            raise ValueError("property_name must be non-empty")


@dataclass(frozen=True)
class EntityChangeEvent:
    """Post-commit notification for one entity, covering all mapped properties."""

    entity_name: str
    entity_id: int
    kind: EventKind
    properties: tuple[PropertyDelta, ...]
    session_id: str
    user_id: int
    url: str
    timestamp_ms: int
    offset_minutes: int = 0

    def __post_init__(self) -> None:
        names = [p.property_name for p in self.properties]
        if len(set(names)) != len(names):
            raise ValueError("event properties must cover each property exactly once")


@dataclass(frozen=True)
class AuditPolicy:
    """Which entities are audited, and which of their properties are not."""

    auditable_entities: frozenset[str]
    suppressed_properties: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        extra = set(self.suppressed_properties) - set(self.auditable_entities)
        if extra:
            raise ValueError(
                f"suppressed_properties for non-auditable entities: {sorted(extra)}"
            )

    def suppressed_for(self, entity_name: str) -> frozenset[str]:
        return self.suppressed_properties.get(entity_name, frozenset())

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "AuditPolicy":
        entities = data.get("auditable_entities", [])
        suppressed = data.get("suppressed_properties", {})
        if not isinstance(entities, (list, tuple)) or not isinstance(suppressed, Mapping):
            raise ValueError("policy config must map auditable_entities to a list "
                             "and suppressed_properties to an object")
        return cls(
            auditable_entities=frozenset(str(e) for e in entities),
            suppressed_properties={
                str(k): frozenset(str(p) for p in v) for k, v in suppressed.items()
            },
        )

    @classmethod
    def from_file(cls, path: str) -> "AuditPolicy":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class AuditDetail:
    """One audited property change inside an entry."""

    detail_id: str
    property_name: str
    old_value: str | None
    new_value: str | None


@dataclass(frozen=True)
class AuditLogEntry:
    """Header plus per-property details for one audited entity change."""

    audit_id: str
    session_id: str
    entity_name: str
    entity_id: int
    event_type: EventKind
    created_ms: int
    offset_minutes: int
    user_id: int
    url: str
    details: tuple[AuditDetail, ...]

    def __post_init__(self) -> None:
        if not self.details:
            raise ValueError("an audit entry must carry at least one detail")


def is_auditable(entity_name: str, policy: AuditPolicy) -> bool:
    """True iff the entity is under policy and is not an audit table itself."""
    return entity_name not in AUDIT_TABLE_NAMES and entity_name in policy.auditable_entities


def _build_entry(
    event: EntityChangeEvent,
    details: Iterable[AuditDetail],
    ids: IdSource,
    audit_id: str,
) -> AuditLogEntry | None:
    details = tuple(details)
    if not details:
        return None
    return AuditLogEntry(
        audit_id=audit_id,
        session_id=event.session_id,
        entity_name=event.entity_name,
        entity_id=event.entity_id,
        event_type=event.kind,
        created_ms=event.timestamp_ms,
        offset_minutes=event.offset_minutes,
        user_id=event.user_id,
        url=event.url,
        details=details,
    )


def on_post_insert(
    event: EntityChangeEvent, policy: AuditPolicy, ids: IdSource = new_uuid
) -> AuditLogEntry | None:
    """Audit a freshly persisted entity: one detail per non-suppressed property."""
    if event.kind is not EventKind.INSERT:
        raise ValueError(f"on_post_insert called with {event.kind.value} event")
    if not is_auditable(event.entity_name, policy):
        return None
    audit_id = ids()
    suppressed = policy.suppressed_for(event.entity_name)
    details = [
        AuditDetail(ids(), p.property_name, old_value=None, new_value=p.new_value)
        for p in event.properties
        if p.property_name not in suppressed
    ]
    return _build_entry(event, details, ids, audit_id)


def on_post_update(
    event: EntityChangeEvent, policy: AuditPolicy, ids: IdSource = new_uuid
) -> AuditLogEntry | None:
    """Audit an updated entity: details only for properties that actually changed.

    A value going from absent to present (or back) counts as a change; absent on
    both sides does not.
    """
    if event.kind is not EventKind.UPDATE:
        raise ValueError(f"on_post_update called with {event.kind.value} event")
    if not is_auditable(event.entity_name, policy):
        return None
    audit_id = ids()
    suppressed = policy.suppressed_for(event.entity_name)
    details = [
        AuditDetail(ids(), p.property_name, old_value=p.old_value, new_value=p.new_value)
        for p in event.properties
        if p.property_name not in suppressed and p.old_value != p.new_value
    ]
    return _build_entry(event, details, ids, audit_id)


def on_post_delete(
    event: EntityChangeEvent, policy: AuditPolicy, ids: IdSource = new_uuid
) -> AuditLogEntry | None:
    """Audit a deleted entity: one detail per non-suppressed property, last values kept."""
    if event.kind is not EventKind.DELETE:
        raise ValueError(f"on_post_delete called with {event.kind.value} event")
    if not is_auditable(event.entity_name, policy):
        return None
    audit_id = ids()
    suppressed = policy.suppressed_for(event.entity_name)
    details = [
        AuditDetail(ids(), p.property_name, old_value=p.old_value, new_value=None)
        for p in event.properties
        if p.property_name not in suppressed
    ]
    return _build_entry(event, details, ids, audit_id)
