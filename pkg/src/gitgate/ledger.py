"""Durable, append-only, hash-chained store of artifact policy events.

One event per line, canonical JSON (sorted keys, no whitespace, ASCII);
the canonical line minus its own event_hash field is what gets hashed,
and each event carries its predecessor's hash.  A single writer appends
with flush-to-stable-storage; readers take immutable snapshots.
"""

from __future__ import annotations

import json
import os
import re
import secrets
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from .errors import StorageError
from .identity import ImmutableIdentity
from .policy import ProvenanceResult, Verdict

GENESIS_HASH = "0" * 64

_OID_RE = re.compile(r"\A[0-9a-f]{40}\Z")
_URI_RE = re.compile(r"\A[A-Za-z][A-Za-z0-9+.\-]*:\S*\Z")
_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"

# The seven admission-record fields every event must carry (expiry and
# revocation state are present-but-nullable), plus bookkeeping fields.
RECORD_FIELDS = (
    "event_id",
    "selector",
    "resolved_identity",
    "provenance",
    "verdict",
    "evidence_pointer",
    "context",
    "expiry",
    "revokes",
    "operator",
    "recorded_at",
    "prev_hash",
    "event_hash",
)


class DanglingRevocationError(ValueError):
    pass


class EventValidationError(ValueError):
    pass


class LedgerIntegrityError(Exception):
    def __init__(self, index: int, detail: str) -> None:
        super().__init__(f"ledger integrity failure at event {index}: {detail}")
        self.index = index
        self.detail = detail


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def parse_timestamp(text: str) -> datetime:
    if text.endswith("Z"):
        dt = datetime.fromisoformat(text[:-1])
        return dt.replace(tzinfo=timezone.utc)
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def canonical_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def hash_record(record: dict) -> str:
    import hashlib

    material = dict(record)
    material.pop("event_hash", None)
    return hashlib.sha256(canonical_json(material).encode("ascii")).hexdigest()


def _encode_ulid(value: int) -> str:
    chars = []
    for _ in range(26):
        chars.append(_CROCKFORD[value & 0x1F])
        value >>= 5
    return "".join(reversed(chars))


def _decode_ulid(text: str) -> Tuple[int, int]:
    value = 0
    for ch in text:
        value = (value << 5) | _CROCKFORD.index(ch)
    return (value >> 80, value & ((1 << 80) - 1))


@dataclass(frozen=True)
class PolicyEvent:
    event_id: str
    selector: str
    resolved_identity: ImmutableIdentity
    provenance: ProvenanceResult
    verdict: Verdict
    evidence_pointer: str
    context: str
    expiry: Optional[str]
    revokes: Optional[str]
    operator: str
    recorded_at: str
    prev_hash: str
    event_hash: str

    def expiry_datetime(self) -> Optional[datetime]:
        return parse_timestamp(self.expiry) if self.expiry is not None else None

    def recorded_datetime(self) -> datetime:
        return parse_timestamp(self.recorded_at)

    def to_record(self) -> dict:
        return {
            "event_id": self.event_id,
            "selector": self.selector,
            "resolved_identity": {
                "canonical_url": self.resolved_identity.canonical_url,
                "commit_id": self.resolved_identity.commit_id,
            },
            "provenance": self.provenance.value,
            "verdict": self.verdict.value,
            "evidence_pointer": self.evidence_pointer,
            "context": self.context,
            "expiry": self.expiry,
            "revokes": self.revokes,
            "operator": self.operator,
            "recorded_at": self.recorded_at,
            "prev_hash": self.prev_hash,
            "event_hash": self.event_hash,
        }

    def canonical_line(self) -> str:
        return canonical_json(self.to_record())

    @staticmethod
    def from_record(record: dict) -> "PolicyEvent":
        identity = record["resolved_identity"]
        return PolicyEvent(
            event_id=record["event_id"],
            selector=record["selector"],
            resolved_identity=ImmutableIdentity(
                canonical_url=identity["canonical_url"], commit_id=identity["commit_id"]
            ),
            provenance=ProvenanceResult(record["provenance"]),
            verdict=Verdict(record["verdict"]),
            evidence_pointer=record["evidence_pointer"],
            context=record["context"],
            expiry=record["expiry"],
            revokes=record["revokes"],
            operator=record["operator"],
            recorded_at=record["recorded_at"],
            prev_hash=record["prev_hash"],
            event_hash=record["event_hash"],
        )


def _check_record_shape(record: object) -> Optional[str]:
    """Schema check used by both load and verify; returns a complaint or None."""
    if not isinstance(record, dict):
        return "record is not an object"
    if set(record.keys()) != set(RECORD_FIELDS):
        missing = set(RECORD_FIELDS) - set(record.keys())
        extra = set(record.keys()) - set(RECORD_FIELDS)
        return f"bad field set (missing={sorted(missing)}, extra={sorted(extra)})"
    for key in RECORD_FIELDS:
        value = record[key]
        if key in ("expiry", "revokes"):
            if value is not None and not isinstance(value, str):
                return f"{key} must be a string or null"
        elif key == "resolved_identity":
            if (
                not isinstance(value, dict)
                or set(value.keys()) != {"canonical_url", "commit_id"}
                or not all(isinstance(v, str) for v in value.values())
            ):
                return "resolved_identity must hold canonical_url and commit_id strings"
        elif not isinstance(value, str):
            return f"{key} must be a string"
    try:
        Verdict(record["verdict"])
        ProvenanceResult(record["provenance"])
    except ValueError as exc:
        return str(exc)
    return None


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    bad_index: Optional[int] = None
    detail: Optional[str] = None
    events_checked: int = 0


def verify_chain(path: str) -> VerifyResult:
    """Stream a ledger file and recompute every hash and chain link.

    Any deviation from what append wrote (down to single bytes) is
    reported as the first bad event index.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read ledger {path!r}: {exc}") from exc

    prev_hash = GENESIS_HASH
    prev_id = ""
    index = 0
    pos = 0
    while pos < len(data):
        newline = data.find(b"\n", pos)
        if newline == -1:
            return VerifyResult(False, index, "unterminated final record", index)
        line = data[pos:newline]
        pos = newline + 1
        try:
            record = json.loads(line)
        except (ValueError, UnicodeDecodeError):
            return VerifyResult(False, index, "record is not valid JSON", index)
        complaint = _check_record_shape(record)
        if complaint is not None:
            return VerifyResult(False, index, complaint, index)
        if canonical_json(record).encode("ascii") != line:
            return VerifyResult(False, index, "record is not in canonical form", index)
        if hash_record(record) != record["event_hash"]:
            return VerifyResult(False, index, "event_hash does not match record", index)
        if record["prev_hash"] != prev_hash:
            return VerifyResult(False, index, "prev_hash does not match predecessor", index)
        if record["event_id"] <= prev_id:
            return VerifyResult(False, index, "event_id not strictly increasing", index)
        prev_hash = record["event_hash"]
        prev_id = record["event_id"]
        index += 1
    return VerifyResult(True, None, None, index)


class LedgerView:
    """Immutable snapshot of the event stream with identity and id indexes."""

    def __init__(self, events: Tuple[PolicyEvent, ...]) -> None:
        self.events = events
        self._latest: Dict[Tuple[str, str], PolicyEvent] = {}
        self._by_id: Dict[str, PolicyEvent] = {}
        for event in events:
            key = (event.resolved_identity.canonical_url, event.resolved_identity.commit_id)
            self._latest[key] = event
            self._by_id[event.event_id] = event

    def latest_for(self, identity: ImmutableIdentity) -> Optional[PolicyEvent]:
        return self._latest.get((identity.canonical_url, identity.commit_id))

    def get_event(self, event_id: str) -> Optional[PolicyEvent]:
        return self._by_id.get(event_id)

    def events_for(self, identity: ImmutableIdentity) -> List[PolicyEvent]:
        key = (identity.canonical_url, identity.commit_id)
        return [
            e
            for e in self.events
            if (e.resolved_identity.canonical_url, e.resolved_identity.commit_id) == key
        ]

    def __len__(self) -> int:
        return len(self.events)


def latest_decision_event(identity: ImmutableIdentity, view: LedgerView) -> Optional[PolicyEvent]:
    return view.latest_for(identity)


def query(
    events: Iterable[PolicyEvent],
    identity: Optional[ImmutableIdentity] = None,
    verdict: Optional[Verdict] = None,
    context: Optional[str] = None,
    since: Optional[datetime] = None,
    until: Optional[datetime] = None,
) -> List[PolicyEvent]:
    """Conjunctive filtering in chronological order.

    The context filter is a substring match, so composite context strings
    (e.g. break-glass justifications) stay queryable by their marker.
    """
    out = []
    for event in events:
        if identity is not None and event.resolved_identity != identity:
            continue
        if verdict is not None and event.verdict is not verdict:
            continue
        if context is not None and context not in event.context:
            continue
        if since is not None or until is not None:
            recorded = event.recorded_datetime()
            if since is not None and recorded < since:
                continue
            if until is not None and recorded > until:
                continue
        out.append(event)
    return out


class EventLedger:
    """Single-writer append log backed by one JSON-lines file."""

    def __init__(self, path: str, clock: Callable[[], datetime] = utc_now) -> None:
        self.path = path
        self._clock = clock
        self._lock = threading.Lock()
        self._events: List[PolicyEvent] = []
        self._ids: set = set()
        self._prev_hash = GENESIS_HASH
        self._last_ulid: Tuple[int, int] = (-1, -1)  # (ms timestamp, 80-bit suffix)
        self._view: Optional[LedgerView] = None
        self._load()

    # -- loading ---------------------------------------------------------

    def _load(self) -> None:
        if not os.path.exists(self.path):
            return
        try:
            with open(self.path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise StorageError(f"cannot read ledger {self.path!r}: {exc}") from exc

        end = len(data)
        truncate_at = None
        if data and not data.endswith(b"\n"):
            # crash mid-append: the unterminated tail is treated as absent
            end = data.rfind(b"\n") + 1
            truncate_at = end

        index = 0
        pos = 0
        while pos < end:
            newline = data.find(b"\n", pos)
            line = data[pos:newline]
            pos = newline + 1
            try:
                record = json.loads(line)
            except (ValueError, UnicodeDecodeError) as exc:
                raise LedgerIntegrityError(index, f"invalid JSON: {exc}") from exc
            complaint = _check_record_shape(record)
            if complaint is not None:
                raise LedgerIntegrityError(index, complaint)
            if canonical_json(record).encode("ascii") != line:
                raise LedgerIntegrityError(index, "record is not in canonical form")
            if hash_record(record) != record["event_hash"]:
                raise LedgerIntegrityError(index, "event_hash does not match record")
            if record["prev_hash"] != self._prev_hash:
                raise LedgerIntegrityError(index, "prev_hash does not match predecessor")
            event = PolicyEvent.from_record(record)
            self._events.append(event)
            self._ids.add(event.event_id)
            self._prev_hash = event.event_hash
            index += 1

        if self._events:
            # keep ids strictly increasing across restarts even if the clock lags
            self._last_ulid = _decode_ulid(self._events[-1].event_id)

        if truncate_at is not None:
            try:
                with open(self.path, "r+b") as fh:
                    fh.truncate(truncate_at)
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageError(f"cannot repair ledger tail: {exc}") from exc

    # -- ids ---------------------------------------------------------------

    def _next_event_id(self) -> str:
        ms = int(self._clock().timestamp() * 1000)
        last_ms, last_rand = self._last_ulid
        if ms > last_ms:
            rand = secrets.randbits(80)
        else:
            ms = last_ms
            rand = last_rand + 1
            if rand >= 1 << 80:
                ms += 1
                rand = 0
        self._last_ulid = (ms, rand)
        return _encode_ulid((ms << 80) | rand)

    # -- writing -----------------------------------------------------------

    def append(
        self,
        *,
        selector: str,
        identity: ImmutableIdentity,
        provenance: ProvenanceResult,
        verdict: Verdict,
        evidence_pointer: str,
        context: str,
        operator: str,
        expiry: Optional[object] = None,
        revokes: Optional[str] = None,
    ) -> PolicyEvent:
        """Assign id and hashes, persist with fsync, return the full event."""
        if not selector:
            raise EventValidationError("selector must be non-empty")
        if not identity.canonical_url:
            raise EventValidationError("identity canonical_url must be non-empty")
        if not _OID_RE.match(identity.commit_id):
            raise EventValidationError(f"commit_id {identity.commit_id!r} is not 40-hex")
        if not _URI_RE.match(evidence_pointer or ""):
            raise EventValidationError(f"evidence_pointer {evidence_pointer!r} is not a URI")
        if not context:
            raise EventValidationError("context must be non-empty")
        if not operator:
            raise EventValidationError("operator must be non-empty")
        if isinstance(expiry, datetime):
            expiry_text: Optional[str] = format_timestamp(expiry)
        elif isinstance(expiry, str):
            parse_timestamp(expiry)  # validates
            expiry_text = expiry
        elif expiry is None:
            expiry_text = None
        else:
            raise EventValidationError(f"unsupported expiry value {expiry!r}")

        with self._lock:
            if revokes is not None and revokes not in self._ids:
                raise DanglingRevocationError(f"revokes unknown event id {revokes!r}")
            record = {
                "event_id": self._next_event_id(),
                "selector": selector,
                "resolved_identity": {
                    "canonical_url": identity.canonical_url,
                    "commit_id": identity.commit_id,
                },
                "provenance": provenance.value,
                "verdict": verdict.value,
                "evidence_pointer": evidence_pointer,
                "context": context,
                "expiry": expiry_text,
                "revokes": revokes,
                "operator": operator,
                "recorded_at": format_timestamp(self._clock()),
                "prev_hash": self._prev_hash,
            }
            record["event_hash"] = hash_record(record)
            line = canonical_json(record).encode("ascii") + b"\n"
            try:
                os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
                with open(self.path, "ab") as fh:
                    fh.write(line)
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageError(f"cannot append to ledger: {exc}") from exc
            event = PolicyEvent.from_record(record)
            self._events.append(event)
            self._ids.add(event.event_id)
            self._prev_hash = event.event_hash
            self._view = None
            return event

    # -- reading -----------------------------------------------------------

    def view(self) -> LedgerView:
        with self._lock:
            if self._view is None:
                self._view = LedgerView(tuple(self._events))
            return self._view

    def __len__(self) -> int:
        with self._lock:
            return len(self._events)
