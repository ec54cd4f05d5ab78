"""Wire codec for audit transactions.

An :class:`AuditTransaction` is the JSON document exchanged between peers. The
encoder reproduces the upstream application's serializer byte-for-byte: fixed key
order (alphabetical with ``Details`` last), forward slashes escaped as ``\\/``, and
dates in the legacy ``/Date(<ms><+-HHMM>)/`` form (an ISO-8601 mode is available for
anything that does not need legacy conformance).

Hashing uses a separate canonical form (fully sorted keys, no whitespace, legacy
dates) so digests are independent of concrete document formatting.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from functools import cached_property
from typing import Any, Mapping

from .capture import AuditLogEntry, EventKind

__all__ = [
    "AuditTransaction",
    "CodecError",
    "DateMode",
    "TxnDetail",
    "WireDate",
    "canonical_dumps",
    "decode_transaction",
    "decode_transaction_obj",
    "encode_transaction",
    "event_kind_from_code",
    "event_type_code",
    "transaction_from_entry",
    "txn_digest",
]

DIGEST_SIZE = 32

_EVENT_CODE = {EventKind.INSERT: 0, EventKind.UPDATE: 1, EventKind.DELETE: 2}
_CODE_EVENT = {v: k for k, v in _EVENT_CODE.items()}

_UUID_RE = re.compile(r"^[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$")
_LEGACY_DATE_RE = re.compile(r"^/Date\((-?\d+)([+-])(\d{2})(\d{2})\)/$")
_ISO_DATE_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})\.(\d{3})([+-])(\d{2}):(\d{2})$"
)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_MAX_OFFSET_MINUTES = 14 * 60

_TXN_FIELDS = frozenset(
    {"ClassName", "CreatedDate", "EntityId", "EventType", "Id", "SessionId",
     "Url", "UserId", "Details"}
)
_DETAIL_FIELDS = frozenset({"Id", "NewValue", "OldValue", "PropertyName"})


class CodecError(ValueError):
    """Raised when a document cannot be decoded or violates wire invariants."""


class DateMode(Enum):
    LEGACY = "legacy"
    ISO8601 = "iso8601"


def event_type_code(kind: EventKind) -> int:
    return _EVENT_CODE[kind]


def event_kind_from_code(code: int) -> EventKind:
    try:
        return _CODE_EVENT[code]
    except KeyError:
        raise CodecError(f"unknown EventType code: {code!r}") from None


@dataclass(frozen=True)
class WireDate:
    """Instant plus the originating site's UTC offset."""

    epoch_ms: int
    offset_minutes: int

    def __post_init__(self) -> None:
        if abs(self.offset_minutes) > _MAX_OFFSET_MINUTES:
            raise CodecError(f"UTC offset out of range: {self.offset_minutes} minutes")

    def render(self, mode: DateMode) -> str:
        if mode is DateMode.LEGACY:
            sign = "-" if self.offset_minutes < 0 else "+"
            off = abs(self.offset_minutes)
            return f"/Date({self.epoch_ms}{sign}{off // 60:02d}{off % 60:02d})/"
        local = _EPOCH + timedelta(milliseconds=self.epoch_ms, minutes=self.offset_minutes)
        sign = "-" if self.offset_minutes < 0 else "+"
        off = abs(self.offset_minutes)
        return (
            f"{local.year:04d}-{local.month:02d}-{local.day:02d}"
            f"T{local.hour:02d}:{local.minute:02d}:{local.second:02d}"
            f".{local.microsecond // 1000:03d}{sign}{off // 60:02d}:{off % 60:02d}"
        )

    @classmethod
    def parse(cls, text: str) -> "WireDate":
        """Parse either the legacy or the ISO-8601 rendering."""
        m = _LEGACY_DATE_RE.match(text)
        if m:
            ms, sign, hh, mm = m.groups()
            if int(mm) >= 60:
                raise CodecError(f"unparseable date: {text!r}")
            offset = (int(hh) * 60 + int(mm)) * (-1 if sign == "-" else 1)
            return cls(epoch_ms=int(ms), offset_minutes=offset)
        m = _ISO_DATE_RE.match(text)
        if m:
            y, mo, d, h, mi, s, frac, sign, ohh, omm = m.groups()
            if int(omm) >= 60:
                raise CodecError(f"unparseable date: {text!r}")
            offset = (int(ohh) * 60 + int(omm)) * (-1 if sign == "-" else 1)
            try:
                local = datetime(int(y), int(mo), int(d), int(h), int(mi), int(s),
                                 int(frac) * 1000, tzinfo=timezone.utc)
            except ValueError as exc:
                raise CodecError(f"unparseable date: {text!r}") from exc
            epoch_ms = (local - _EPOCH) // timedelta(milliseconds=1) - offset * 60_000
            return cls(epoch_ms=epoch_ms, offset_minutes=offset)
        raise CodecError(f"unparseable date: {text!r}")


@dataclass(frozen=True)
class TxnDetail:
    detail_id: str
    property_name: str
    old_value: str | None
    new_value: str | None


@dataclass(frozen=True)
class AuditTransaction:
    """Decoded form of the wire document; field names mirror the JSON keys."""

    class_name: str
    created_date: WireDate
    entity_id: int
    event_type: int
    txn_id: str
    session_id: str
    url: str
    user_id: int
    details: tuple[TxnDetail, ...]

    @cached_property
    def canonical_bytes(self) -> bytes:
        return _dump(self.wire_obj(DateMode.LEGACY), sort_keys=True)

    @cached_property
    def byte_size(self) -> int:
        return len(self.canonical_bytes)

    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_bytes).digest()

    def wire_obj(self, mode: DateMode = DateMode.LEGACY) -> dict[str, Any]:
        """Plain-dict form in the conformance key order."""
        return {
            "ClassName": self.class_name,
            "CreatedDate": self.created_date.render(mode),
            "EntityId": self.entity_id,
            "EventType": self.event_type,
            "Id": self.txn_id,
            "SessionId": self.session_id,
            "Url": self.url,
            "UserId": self.user_id,
            "Details": [
                {
                    "Id": d.detail_id,
                    "NewValue": d.new_value,
                    "OldValue": d.old_value,
                    "PropertyName": d.property_name,
                }
                for d in self.details
            ],
        }


def _dump(obj: Any, sort_keys: bool) -> bytes:
    text = json.dumps(obj, sort_keys=sort_keys, separators=(",", ":"), ensure_ascii=True)
    # JSON never contains "/" outside string literals, so a text-level replace is
    # exactly the upstream serializer's forward-slash escaping.
    return text.replace("/", "\\/").encode("ascii")


def canonical_dumps(obj: Any) -> bytes:
    """Canonical JSON bytes: sorted keys, no whitespace, escaped slashes."""
    return _dump(obj, sort_keys=True)


def transaction_from_entry(entry: AuditLogEntry) -> AuditTransaction:
    return AuditTransaction(
        class_name=entry.entity_name,
        created_date=WireDate(entry.created_ms, entry.offset_minutes),
        entity_id=entry.entity_id,
        event_type=event_type_code(entry.event_type),
        txn_id=entry.audit_id,
        session_id=entry.session_id,
        url=entry.url,
        user_id=entry.user_id,
        details=tuple(
            TxnDetail(d.detail_id, d.property_name, d.old_value, d.new_value)
            for d in entry.details
        ),
    )


def encode_transaction(
    entry: AuditLogEntry | AuditTransaction, mode: DateMode = DateMode.LEGACY
) -> bytes:
    """Serialize an audit entry or transaction to its wire JSON document."""
    txn = entry if isinstance(entry, AuditTransaction) else transaction_from_entry(entry)
    if not txn.details:
        raise CodecError("refusing to encode a transaction with no details")
    return _dump(txn.wire_obj(mode), sort_keys=False)


def _require_str(obj: Mapping[str, Any], key: str, where: str) -> str:
    value = obj[key]
    if not isinstance(value, str):
        raise CodecError(f"{where}.{key} must be a string")
    return value


def _require_int(obj: Mapping[str, Any], key: str, where: str) -> int:
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise CodecError(f"{where}.{key} must be an integer")
    return value


def _require_uuid(obj: Mapping[str, Any], key: str, where: str) -> str:
    value = _require_str(obj, key, where)
    if not _UUID_RE.match(value):
        raise CodecError(f"{where}.{key} is not a lowercase hyphenated UUID: {value!r}")
    return value


def _opt_str(obj: Mapping[str, Any], key: str, where: str) -> str | None:
    value = obj[key]
    if value is not None and not isinstance(value, str):
        raise CodecError(f"{where}.{key} must be a string or null")
    return value


def decode_transaction_obj(obj: Any) -> AuditTransaction:
    """Validate and convert an already-parsed wire object."""
    if not isinstance(obj, dict):
        raise CodecError("transaction document must be a JSON object")
    missing = _TXN_FIELDS - obj.keys()
    if missing:
        raise CodecError(f"missing required fields: {sorted(missing)}")
    unknown = obj.keys() - _TXN_FIELDS
    if unknown:
        raise CodecError(f"unknown fields rejected: {sorted(unknown)}")

    event_type = _require_int(obj, "EventType", "txn")
    if event_type not in _CODE_EVENT:
        raise CodecError(f"unknown EventType code: {event_type}")
    raw_details = obj["Details"]
    if not isinstance(raw_details, list) or not raw_details:
        raise CodecError("Details must be a non-empty array")

    details = []
    for i, rd in enumerate(raw_details):
        where = f"Details[{i}]"
        if not isinstance(rd, dict):
            raise CodecError(f"{where} must be an object")
        if rd.keys() != _DETAIL_FIELDS:
            raise CodecError(f"{where} must have exactly fields {sorted(_DETAIL_FIELDS)}")
        name = _require_str(rd, "PropertyName", where)
        if not name:
            raise CodecError(f"{where}.PropertyName must be non-empty")
        old = _opt_str(rd, "OldValue", where)
        new = _opt_str(rd, "NewValue", where)
        if event_type == 0 and old is not None:
            raise CodecError(f"{where}: insert details cannot carry an OldValue")
        if event_type == 2 and new is not None:
            raise CodecError(f"{where}: delete details cannot carry a NewValue")
        if event_type == 1 and old == new:
            raise CodecError(f"{where}: update details must change the value")
        details.append(TxnDetail(_require_uuid(rd, "Id", where), name, old, new))
    ids = [d.detail_id for d in details]
    if len(set(ids)) != len(ids):
        raise CodecError("detail ids must be unique within a transaction")

    return AuditTransaction(
        class_name=_require_str(obj, "ClassName", "txn"),
        created_date=WireDate.parse(_require_str(obj, "CreatedDate", "txn")),
        entity_id=_require_int(obj, "EntityId", "txn"),
        event_type=event_type,
        txn_id=_require_uuid(obj, "Id", "txn"),
        session_id=_require_uuid(obj, "SessionId", "txn"),
        url=_require_str(obj, "Url", "txn"),
        user_id=_require_int(obj, "UserId", "txn"),
        details=tuple(details),
    )


def decode_transaction(data: bytes | str) -> AuditTransaction:
    """Parse and validate a wire document (either date mode accepted)."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CodecError("document is not valid UTF-8") from exc
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise CodecError(f"malformed JSON: {exc}") from exc
    return decode_transaction_obj(obj)


def txn_digest(txn: AuditTransaction) -> bytes:
    """32-byte SHA-256 over the canonical encoding; equal txns hash equal."""
    return txn.digest
