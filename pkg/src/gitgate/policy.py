"""Capability-scoped verdicts and grant evaluation.

Seven verdicts map to fixed capability sets; evaluation folds the latest
governing ledger event for an identity into a decision, honoring expiry
and revocation.  Nothing here mutates state: callers pass a consistent
ledger view and a timestamp.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import FrozenSet, Optional, TYPE_CHECKING

from .identity import ImmutableIdentity

if TYPE_CHECKING:  # pragma: no cover
    from .ledger import LedgerView


class Capability(Enum):
    FETCH = "fetch"
    UNPACK = "unpack"
    BUILD = "build"
    TEST = "test"
    RUN_DEV = "run_dev"
    RUN_CI = "run_ci"


class Verdict(Enum):
    FETCH_ONLY = "FETCH_ONLY"
    UNPACK_ONLY = "UNPACK_ONLY"
    BUILD_NO_NETWORK = "BUILD_NO_NETWORK"
    TEST_NO_SECRETS = "TEST_NO_SECRETS"
    RUN_DEV = "RUN_DEV"
    RUN_CI = "RUN_CI"
    BLOCKED = "BLOCKED"


class ProvenanceResult(Enum):
    VERIFIED = "verified"
    UNVERIFIED = "unverified"
    UNSUPPORTED = "unsupported"


_CAPABILITY_SETS = {
    Verdict.FETCH_ONLY: frozenset({Capability.FETCH}),
    Verdict.UNPACK_ONLY: frozenset({Capability.FETCH, Capability.UNPACK}),
    Verdict.BUILD_NO_NETWORK: frozenset({Capability.FETCH, Capability.UNPACK, Capability.BUILD}),
    Verdict.TEST_NO_SECRETS: frozenset(
        {Capability.FETCH, Capability.UNPACK, Capability.BUILD, Capability.TEST}
    ),
    Verdict.RUN_DEV: frozenset(
        {Capability.FETCH, Capability.UNPACK, Capability.BUILD, Capability.TEST, Capability.RUN_DEV}
    ),
    Verdict.RUN_CI: frozenset(
        {Capability.FETCH, Capability.UNPACK, Capability.BUILD, Capability.TEST, Capability.RUN_CI}
    ),
    Verdict.BLOCKED: frozenset(),
}


def capabilities_of(verdict: Verdict) -> FrozenSet[Capability]:
    return _CAPABILITY_SETS[verdict]


# Denial reason classes; the gateway surfaces these verbatim in 403 bodies.
REASON_FIRST_SEEN = "first_seen"
REASON_PENDING_REVIEW = "pending_review"
REASON_BLOCKED = "blocked"
REASON_REVOKED = "revoked"
REASON_EXPIRED = "expired"
REASON_GRANTED = "granted"

PENDING_REVIEW_MARK = "pending_review"


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    granted: FrozenSet[Capability]
    expiry: Optional[datetime]
    basis_event: Optional[str]
    reason: str
    reason_class: str

    @property
    def allowed_any(self) -> bool:
        return bool(self.granted)


@dataclass(frozen=True)
class CheckResult:
    allowed: bool
    reason: str
    decision: Decision


def _blocked(reason: str, reason_class: str, basis: Optional[str] = None) -> Decision:
    return Decision(
        verdict=Verdict.BLOCKED,
        granted=frozenset(),
        expiry=None,
        basis_event=basis,
        reason=reason,
        reason_class=reason_class,
    )


def evaluate(identity: ImmutableIdentity, view: "LedgerView", now: datetime) -> Decision:
    """Decide what the identity may do right now, from its latest event."""
    event = view.latest_for(identity)
    if event is None:
        return _blocked("first-seen, no policy event", REASON_FIRST_SEEN)

    if event.verdict is Verdict.BLOCKED:
        if event.revokes is not None:
            return _blocked(
                f"revoked by event {event.event_id}", REASON_REVOKED, event.event_id
            )
        if PENDING_REVIEW_MARK in event.context:
            return _blocked(
                f"held for review under event {event.event_id}",
                REASON_PENDING_REVIEW,
                event.event_id,
            )
        return _blocked(f"blocked by event {event.event_id}", REASON_BLOCKED, event.event_id)

    expiry = event.expiry_datetime()
    if expiry is not None and expiry < now:
        return _blocked(
            f"grant {event.event_id} expired at {event.expiry}", REASON_EXPIRED, event.event_id
        )

    return Decision(
        verdict=event.verdict,
        granted=capabilities_of(event.verdict),
        expiry=expiry,
        basis_event=event.event_id,
        reason=f"granted {event.verdict.value} by event {event.event_id}",
        reason_class=REASON_GRANTED,
    )


def check(
    identity: ImmutableIdentity,
    capability: Capability,
    view: "LedgerView",
    now: datetime,
) -> CheckResult:
    decision = evaluate(identity, view, now)
    if capability in decision.granted:
        return CheckResult(True, decision.reason, decision)
    if decision.reason_class == REASON_GRANTED:
        reason = f"verdict {decision.verdict.value} does not grant {capability.value}"
    else:
        reason = decision.reason
    return CheckResult(False, reason, decision)
