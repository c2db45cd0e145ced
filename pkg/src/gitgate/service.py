"""Admission control core: holds, verdicts, revocation, break-glass, and
the serve-side logic behind the gateway's git endpoints.

Tickets are views over the ledger rather than separate state: a hold is
the first-seen BLOCKED event it created, Pending exactly as long as that
event still governs its identity.  That makes hold dedup, decided-state
monotonicity, and restart recovery structural.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Callable, Dict, List, Optional

from . import identity as ident
from . import policy, wire
from .cache import CacheKey, EntryKind, MirrorStore, Tier
from .errors import StorageError
from .ledger import EventLedger, LedgerView, PolicyEvent, utc_now
from .upstream import UpstreamClient, UpstreamError

CONTEXT_INTAKE = "code_intake/protected_host"
CONTEXT_PENDING = "code_intake/pending_review"
CONTEXT_REVOKED = "code_intake/revoked"
CONTEXT_BREAK_GLASS = "break_glass"

EVIDENCE_PENDING = "quarantine://pending-review"
EVIDENCE_VERDICT = "operator://verdict"
EVIDENCE_REVOKE = "operator://revocation"
EVIDENCE_BREAK_GLASS = "operator://break-glass"

TIER_HEADER = "X-Cache-Tier"


class TicketNotFoundError(LookupError):
    pass


class TicketAlreadyDecidedError(Exception):
    def __init__(self, ticket_id: str, decided_by: str) -> None:
        super().__init__(f"ticket {ticket_id} already decided by event {decided_by}")
        self.decided_by = decided_by


class HoldNotApplicableError(Exception):
    pass


class NothingToRevokeError(Exception):
    pass


class TtlTooLongError(ValueError):
    pass


class MissingJustificationError(ValueError):
    pass


class SeedError(Exception):
    """Mirror seeding for a fresh grant failed; no event was recorded."""


@dataclass
class HoldTicket:
    ticket_id: str
    selector: str
    resolved_identity: ident.ImmutableIdentity
    created_at: str
    first_seen_event: str
    status: str  # pending | decided
    decided_by: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "ticket_id": self.ticket_id,
            "selector": self.selector,
            "resolved_identity": {
                "canonical_url": self.resolved_identity.canonical_url,
                "commit_id": self.resolved_identity.commit_id,
            },
            "created_at": self.created_at,
            "first_seen_event": self.first_seen_event,
            "status": self.status,
            "decided_by": self.decided_by,
        }


@dataclass
class ServeOutcome:
    status: int
    body: bytes
    content_type: str
    headers: Dict[str, str] = field(default_factory=dict)

    @staticmethod
    def json_outcome(status: int, payload: dict, **headers: str) -> "ServeOutcome":
        return ServeOutcome(
            status=status,
            body=json.dumps(payload, sort_keys=True).encode(),
            content_type="application/json",
            headers=dict(headers),
        )


def _denial(status: int, reason_class: str, detail: str, **extra) -> ServeOutcome:
    payload = {"reason": reason_class, "detail": detail}
    payload.update({k: v for k, v in extra.items() if v is not None})
    return ServeOutcome.json_outcome(status, payload)


def _identity_dict(identity: ident.ImmutableIdentity) -> dict:
    return {"canonical_url": identity.canonical_url, "commit_id": identity.commit_id}


def _host_and_path(canonical_url: str) -> tuple:
    host, _, path = canonical_url[len("https://") :].partition("/")
    return host, path


class AdmissionService:
    """Binds ledger, mirror store, and upstream client into admission flows."""

    def __init__(
        self,
        ledger: EventLedger,
        store: MirrorStore,
        upstream: UpstreamClient,
        clock: Callable[[], datetime] = utc_now,
        break_glass_max_ttl_seconds: float = 3600.0,
        hold_wait_max_seconds: float = 60.0,
    ) -> None:
        self.ledger = ledger
        self.store = store
        self.upstream = upstream
        self.clock = clock
        self.break_glass_max_ttl_seconds = break_glass_max_ttl_seconds
        self.hold_wait_max_seconds = hold_wait_max_seconds
        self._hold_lock = threading.Lock()

    # -- ticket views ------------------------------------------------------

    @staticmethod
    def _is_hold_event(event: PolicyEvent) -> bool:
        return (
            event.verdict is policy.Verdict.BLOCKED
            and event.revokes is None
            and policy.PENDING_REVIEW_MARK in event.context
        )

    def _ticket_from_event(self, event: PolicyEvent, view: LedgerView) -> HoldTicket:
        latest = view.latest_for(event.resolved_identity)
        pending = latest is not None and latest.event_id == event.event_id
        return HoldTicket(
            ticket_id=event.event_id,
            selector=event.selector,
            resolved_identity=event.resolved_identity,
            created_at=event.recorded_at,
            first_seen_event=event.event_id,
            status="pending" if pending else "decided",
            decided_by=None if pending else (latest.event_id if latest else None),
        )

    def get_ticket(self, ticket_id: str) -> HoldTicket:
        view = self.ledger.view()
        event = view.get_event(ticket_id)
        if event is None or not self._is_hold_event(event):
            raise TicketNotFoundError(f"no hold ticket {ticket_id!r}")
        return self._ticket_from_event(event, view)

    def pending_tickets(self) -> List[HoldTicket]:
        view = self.ledger.view()
        out = []
        for event in view.events:
            if not self._is_hold_event(event):
                continue
            ticket = self._ticket_from_event(event, view)
            if ticket.status == "pending":
                out.append(ticket)
        return out

    # -- upstream resolution -------------------------------------------------

    def resolve_selector(self, sel: ident.Selector) -> tuple:
        """Contact upstream read-only; returns (identity, advert_bytes)."""
        advert = self.upstream.fetch_advertisement(sel.host, sel.repo_path)
        adv = wire.parse_advertisement_bytes(advert)
        return ident.resolve(sel, adv), advert

    # -- admission flows -------------------------------------------------------

    def admission_hold(
        self, sel: ident.Selector, resolved: Optional[ident.ImmutableIdentity] = None
    ) -> HoldTicket:
        """Record a first-seen hold; concurrent holds for one identity dedupe."""
        if resolved is None:
            resolved, _ = self.resolve_selector(sel)
        with self._hold_lock:
            view = self.ledger.view()
            existing = view.latest_for(resolved)
            if existing is not None:
                if self._is_hold_event(existing):
                    return self._ticket_from_event(existing, view)
                raise HoldNotApplicableError(
                    f"identity already governed by event {existing.event_id}"
                )
            event = self.ledger.append(
                selector=ident.selector_text(sel),
                identity=resolved,
                provenance=policy.ProvenanceResult.UNVERIFIED,
                verdict=policy.Verdict.BLOCKED,
                evidence_pointer=EVIDENCE_PENDING,
                context=f"{CONTEXT_PENDING}/rung={sel.ref.kind.value}",
                operator="gateway",
            )
            return self._ticket_from_event(event, self.ledger.view())

    def _seed_for_identity(
        self, sel: ident.Selector, target: ident.ImmutableIdentity
    ) -> None:
        """Seed the mirror so it pins exactly `target`.

        If upstream still resolves the selector to the target commit the
        original selector is pinned (so later validation tracks its ref);
        otherwise fall back to an oid selector for the approved commit.
        """
        try:
            advert = self.upstream.fetch_advertisement(sel.host, sel.repo_path)
            adv = wire.parse_advertisement_bytes(advert)
            try:
                fresh = ident.resolve(sel, adv)
            except ident.RefNotFoundError:
                fresh = None
            seed_sel = sel
            if fresh is None or fresh.commit_id != target.commit_id:
                seed_sel = ident.Selector(sel.host, sel.repo_path, ident.RefExpr.oid(target.commit_id))
            pack = self.upstream.fetch_pack(sel.host, sel.repo_path, target.commit_id)
            self.store.seed_mirror(seed_sel, advert, pack, self.clock())
        except (UpstreamError, wire.WireError, ident.RefNotFoundError, StorageError) as exc:
            raise SeedError(f"cannot seed mirror for {target.canonical_url}: {exc}") from exc

    def record_verdict(
        self,
        ticket_id: str,
        verdict: policy.Verdict,
        operator: str,
        expiry: Optional[datetime] = None,
        evidence_pointer: Optional[str] = None,
        justification: Optional[str] = None,
    ) -> PolicyEvent:
        # decisions are serialized so one ticket cannot be decided twice
        with self._hold_lock:
            view = self.ledger.view()
            hold = view.get_event(ticket_id)
            if hold is None or not self._is_hold_event(hold):
                raise TicketNotFoundError(f"no hold ticket {ticket_id!r}")
            latest = view.latest_for(hold.resolved_identity)
            if latest is not None and latest.event_id != ticket_id:
                raise TicketAlreadyDecidedError(ticket_id, latest.event_id)

            if verdict is not policy.Verdict.BLOCKED:
                sel = ident.parse_selector(hold.selector)
                self._seed_for_identity(sel, hold.resolved_identity)

            context = CONTEXT_INTAKE
            if justification:
                context = f"{CONTEXT_INTAKE}/justification={justification}"
            return self.ledger.append(
                selector=hold.selector,
                identity=hold.resolved_identity,
                provenance=policy.ProvenanceResult.UNVERIFIED,
                verdict=verdict,
                evidence_pointer=evidence_pointer or EVIDENCE_VERDICT,
                context=context,
                operator=operator,
                expiry=expiry,
            )

    def revoke(
        self, identity: ident.ImmutableIdentity, operator: str, reason: str
    ) -> PolicyEvent:
        with self._hold_lock:
            view = self.ledger.view()
            latest = view.latest_for(identity)
            if latest is None or latest.verdict is policy.Verdict.BLOCKED:
                raise NothingToRevokeError(
                    f"{identity.canonical_url}@{identity.commit_id} has no governing grant"
                )
            return self.ledger.append(
                selector=latest.selector,
                identity=identity,
                provenance=policy.ProvenanceResult.UNVERIFIED,
                verdict=policy.Verdict.BLOCKED,
                evidence_pointer=EVIDENCE_REVOKE,
                context=f"{CONTEXT_REVOKED}/reason={reason}",
                operator=operator,
                revokes=latest.event_id,
            )

    def break_glass(
        self,
        identity: ident.ImmutableIdentity,
        operator: str,
        ttl_seconds: float,
        justification: str,
    ) -> PolicyEvent:
        if not justification or not justification.strip():
            raise MissingJustificationError("break-glass requires a justification")
        if ttl_seconds <= 0 or ttl_seconds > self.break_glass_max_ttl_seconds:
            raise TtlTooLongError(
                f"ttl must be in (0, {self.break_glass_max_ttl_seconds}] seconds"
            )
        oid_selector = ident.Selector(
            *_host_and_path(identity.canonical_url), ident.RefExpr.oid(identity.commit_id)
        )
        with self._hold_lock:
            mirror = self.store.mirror_for(identity.canonical_url)
            if mirror is None or mirror.pinned.commit_id != identity.commit_id:
                self._seed_for_identity(oid_selector, identity)

            view = self.ledger.view()
            latest = view.latest_for(identity)
            selector = (
                latest.selector if latest is not None else ident.selector_text(oid_selector)
            )
            return self.ledger.append(
                selector=selector,
                identity=identity,
                provenance=policy.ProvenanceResult.UNVERIFIED,
                verdict=policy.Verdict.RUN_DEV,
                evidence_pointer=EVIDENCE_BREAK_GLASS,
                context=f"{CONTEXT_BREAK_GLASS}/justification={justification}",
                operator=operator,
                expiry=self.clock() + timedelta(seconds=ttl_seconds),
            )

    # -- capability checks -----------------------------------------------------

    def evaluate(self, identity: ident.ImmutableIdentity) -> policy.Decision:
        return policy.evaluate(identity, self.ledger.view(), self.clock())

    def check(self, identity: ident.ImmutableIdentity, capability: policy.Capability):
        return policy.check(identity, capability, self.ledger.view(), self.clock())

    # -- git client endpoints ----------------------------------------------------

    def _serve_entry(
        self, url: str, kind: EntryKind, commit: str, content_type: str
    ) -> ServeOutcome:
        tier, data = self.store.get(CacheKey(url, kind, commit))
        if tier is Tier.MISS or data is None:
            return _denial(500, "mirror_entry_missing", f"no stored {kind.value} for {url}")
        return ServeOutcome(
            status=200,
            body=data,
            content_type=content_type,
            headers={TIER_HEADER: tier.value},
        )

    def _denial_for_decision(
        self, decision: policy.Decision, identity: ident.ImmutableIdentity
    ) -> ServeOutcome:
        extra: dict = {"identity": _identity_dict(identity)}
        if decision.reason_class == policy.REASON_PENDING_REVIEW:
            extra["ticket_id"] = decision.basis_event
        if decision.basis_event is not None:
            extra["event_id"] = decision.basis_event
        return _denial(403, decision.reason_class, decision.reason, **extra)

    def serve_info_refs(
        self, host: str, repo_path: str, service: Optional[str], wait_seconds: float = 0.0
    ) -> ServeOutcome:
        if service != wire.UPLOAD_PACK_SERVICE:
            return _denial(400, "bad_request", f"unsupported service {service!r}")
        try:
            sel = ident.selector_for_repo(host, repo_path)
        except ident.SelectorError as exc:
            return _denial(400, "bad_request", str(exc))
        url = ident.canonicalize(sel)

        mirror = self.store.mirror_for(url)
        if mirror is not None:
            decision = self.evaluate(mirror.pinned)
            if decision.reason_class != policy.REASON_FIRST_SEEN:
                return self._serve_approved_advertisement(mirror, decision)

        # first contact (or a mirror with no surviving events): resolve upstream
        try:
            resolved, _ = self.resolve_selector(sel)
        except (UpstreamError, wire.WireError, ident.RefNotFoundError) as exc:
            return _denial(502, "upstream_error", str(exc))

        decision = self.evaluate(resolved)
        if decision.reason_class == policy.REASON_FIRST_SEEN:
            ticket = self.admission_hold(sel, resolved)
            decision = self.evaluate(resolved)
            if wait_seconds > 0:
                decision = self._await_decision(resolved, wait_seconds)
            if decision.reason_class == policy.REASON_GRANTED:
                mirror = self.store.mirror_for(url)
                if mirror is not None:
                    return self._serve_approved_advertisement(mirror, decision)
            return _denial(
                403,
                decision.reason_class,
                decision.reason,
                ticket_id=ticket.ticket_id,
                event_id=decision.basis_event,
                identity=_identity_dict(resolved),
            )
        if decision.reason_class == policy.REASON_GRANTED:
            # granted but the mirror is gone (e.g. wiped cache): refuse to
            # serve live upstream bytes; an operator must re-seed
            return _denial(
                503,
                "mirror_unavailable",
                "identity is approved but its mirror is not seeded",
                event_id=decision.basis_event,
                identity=_identity_dict(resolved),
            )
        return self._denial_for_decision(decision, resolved)

    def _await_decision(
        self, identity: ident.ImmutableIdentity, wait_seconds: float
    ) -> policy.Decision:
        deadline = time.monotonic() + min(wait_seconds, self.hold_wait_max_seconds)
        while True:
            decision = self.evaluate(identity)
            if decision.reason_class != policy.REASON_PENDING_REVIEW:
                return decision
            if time.monotonic() >= deadline:
                return decision
            time.sleep(0.1)

    def _serve_approved_advertisement(self, mirror, decision: policy.Decision) -> ServeOutcome:
        identity = mirror.pinned
        if decision.reason_class != policy.REASON_GRANTED or (
            policy.Capability.FETCH not in decision.granted
        ):
            return self._denial_for_decision(decision, identity)
        if mirror.last_validation.state == "diverged":
            return _denial(
                403,
                "mirror_diverged",
                f"mirror diverged from pinned {identity.commit_id} "
                f"(observed {mirror.last_validation.observed})",
                event_id=decision.basis_event,
                identity=_identity_dict(identity),
            )
        return self._serve_entry(
            identity.canonical_url,
            EntryKind.ADVERTISEMENT,
            identity.commit_id,
            wire.ADVERTISEMENT_CONTENT_TYPE,
        )

    def serve_upload_pack(self, host: str, repo_path: str, body: bytes) -> ServeOutcome:
        try:
            request = wire.parse_upload_pack_request(body)
        except wire.WireError as exc:
            return _denial(400, "bad_request", str(exc))
        try:
            sel = ident.selector_for_repo(host, repo_path)
        except ident.SelectorError as exc:
            return _denial(400, "bad_request", str(exc))
        url = ident.canonicalize(sel)

        mirror = self.store.mirror_for(url)
        if mirror is None:
            return _denial(404, "unknown_repository", f"no pinned mirror for {url}")
        identity = mirror.pinned

        result = self.check(identity, policy.Capability.FETCH)
        if not result.allowed:
            return self._denial_for_decision(result.decision, identity)
        if mirror.last_validation.state == "diverged":
            return _denial(
                403,
                "mirror_diverged",
                f"mirror diverged from pinned {identity.commit_id}",
                event_id=result.decision.basis_event,
                identity=_identity_dict(identity),
            )

        # the synthesized advertisement names exactly one tip: the pin
        unknown = [w for w in request.wants if w != identity.commit_id]
        if unknown:
            return _denial(404, "unknown_want", f"want {unknown[0]} is not the pinned commit")

        if request.haves and not request.done:
            return ServeOutcome(200, b"0008NAK\n", wire.RESULT_CONTENT_TYPE)

        tier, pack = self.store.get(CacheKey(url, EntryKind.PACK, identity.commit_id))
        if tier is Tier.MISS or pack is None:
            return _denial(500, "mirror_entry_missing", f"no stored pack for {url}")
        nak = b"0008NAK\n"
        if "side-band-64k" in request.capabilities:
            payload = nak + wire.frame_sideband(pack)
        else:
            payload = nak + pack
        return ServeOutcome(
            status=200,
            body=payload,
            content_type=wire.RESULT_CONTENT_TYPE,
            headers={TIER_HEADER: tier.value},
        )

    # -- reporting ----------------------------------------------------------------

    def mirrors_report(self) -> List[dict]:
        return [state.to_dict() for state in self.store.mirrors()]
