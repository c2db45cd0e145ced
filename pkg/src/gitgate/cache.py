"""Two-tier pinned mirror store for approved artifacts.

The hot tier is an in-memory LRU over raw entry bytes; the disk tier is a
content-addressed object store (zlib at rest, sha-256 named) plus one
index file per canonical URL.  A disk hit re-reads the durable index,
verifies the object digest, and promotes the bytes to the hot tier.
Mirror pin state (what was seeded, against which upstream HEAD, and the
sticky validation status) lives beside the entry indexes.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Tuple

from .errors import StorageError
from . import identity as ident
from . import wire

DEFAULT_HOT_BUDGET = 256 * 1024 * 1024

# capabilities the gateway advertises to its own clients; deliberately minimal
GATEWAY_CAPABILITIES = ("side-band-64k", "no-progress")


class EntryKind(Enum):
    ADVERTISEMENT = "advertisement"
    PACK = "pack"


class Tier(Enum):
    HOT = "hot"
    DISK = "disk"
    MISS = "miss"


class CacheKey(NamedTuple):
    canonical_url: str
    kind: EntryKind
    commit_id: str

    def entry_id(self) -> str:
        return f"{self.kind.value}:{self.commit_id}"


@dataclass
class ValidationState:
    state: str = "never_checked"  # never_checked | ok | diverged
    checked_at: Optional[str] = None
    observed: Optional[str] = None  # divergent commit id; 40 zeros if the ref vanished

    def to_dict(self) -> dict:
        return {"state": self.state, "checked_at": self.checked_at, "observed": self.observed}

    @staticmethod
    def from_dict(data: dict) -> "ValidationState":
        return ValidationState(
            state=data["state"], checked_at=data.get("checked_at"), observed=data.get("observed")
        )


@dataclass
class MirrorState:
    canonical_url: str
    selector: str
    pinned: ident.ImmutableIdentity
    pinned_refname: Optional[str]
    seeded_at: str
    upstream_head_at_seed: str
    advert_fingerprint: ident.CompatibilityFingerprint
    pack_fingerprint: ident.CompatibilityFingerprint
    pack_path: str
    last_validation: ValidationState = field(default_factory=ValidationState)

    def to_dict(self) -> dict:
        return {
            "canonical_url": self.canonical_url,
            "selector": self.selector,
            "pinned": {
                "canonical_url": self.pinned.canonical_url,
                "commit_id": self.pinned.commit_id,
            },
            "pinned_refname": self.pinned_refname,
            "seeded_at": self.seeded_at,
            "upstream_head_at_seed": self.upstream_head_at_seed,
            "advert_fingerprint": {
                "algorithm": self.advert_fingerprint.algorithm,
                "digest": self.advert_fingerprint.digest,
                "subject": self.advert_fingerprint.subject.value,
            },
            "pack_fingerprint": {
                "algorithm": self.pack_fingerprint.algorithm,
                "digest": self.pack_fingerprint.digest,
                "subject": self.pack_fingerprint.subject.value,
            },
            "pack_path": self.pack_path,
            "last_validation": self.last_validation.to_dict(),
        }

    @staticmethod
    def from_dict(data: dict) -> "MirrorState":
        return MirrorState(
            canonical_url=data["canonical_url"],
            selector=data["selector"],
            pinned=ident.ImmutableIdentity(
                canonical_url=data["pinned"]["canonical_url"],
                commit_id=data["pinned"]["commit_id"],
            ),
            pinned_refname=data.get("pinned_refname"),
            seeded_at=data["seeded_at"],
            upstream_head_at_seed=data["upstream_head_at_seed"],
            advert_fingerprint=ident.CompatibilityFingerprint(
                algorithm=data["advert_fingerprint"]["algorithm"],
                digest=data["advert_fingerprint"]["digest"],
                subject=ident.FingerprintSubject(data["advert_fingerprint"]["subject"]),
            ),
            pack_fingerprint=ident.CompatibilityFingerprint(
                algorithm=data["pack_fingerprint"]["algorithm"],
                digest=data["pack_fingerprint"]["digest"],
                subject=ident.FingerprintSubject(data["pack_fingerprint"]["subject"]),
            ),
            pack_path=data["pack_path"],
            last_validation=ValidationState.from_dict(data["last_validation"]),
        )


class ValidationOutcome(NamedTuple):
    ok: bool
    observed: Optional[str]  # set when diverged


def synthesize_advertisement(pinned: ident.ImmutableIdentity, refname: Optional[str]) -> bytes:
    """Advertisement body for a pinned mirror: HEAD plus the pinned ref only.

    Upstream refs are never replayed; the pinned identity is the only
    thing this gateway ever advertises for an approved artifact.
    """
    refs: List[Tuple[str, str]] = [(pinned.commit_id, "HEAD")]
    head_target = None
    if refname is not None:
        refs.append((pinned.commit_id, refname))
        if refname.startswith("refs/heads/"):
            head_target = refname
    adv = wire.RefAdvertisement(
        service=wire.UPLOAD_PACK_SERVICE,
        refs=tuple(refs),
        capabilities=GATEWAY_CAPABILITIES,
        head_target=head_target,
    )
    return wire.render_ref_advertisement(adv)


def _url_slug(canonical_url: str) -> str:
    return hashlib.sha256(canonical_url.encode("utf-8")).hexdigest()[:24]


class MirrorStore:
    """Content-addressed disk tier plus LRU hot tier, one writer per key."""

    def __init__(self, root: str, hot_budget_bytes: int = DEFAULT_HOT_BUDGET) -> None:
        self.root = os.path.abspath(root)
        self.hot_budget_bytes = hot_budget_bytes
        self._objects_dir = os.path.join(self.root, "objects")
        self._entries_dir = os.path.join(self.root, "entries")
        self._mirrors_dir = os.path.join(self.root, "mirrors")
        for d in (self._objects_dir, self._entries_dir, self._mirrors_dir):
            os.makedirs(d, exist_ok=True)
        self._lock = threading.Lock()
        self._hot: "OrderedDict[CacheKey, bytes]" = OrderedDict()
        self._hot_bytes = 0
        self._mirrors: Dict[str, MirrorState] = {}
        self._load_mirrors()

    # -- mirror registry ---------------------------------------------------

    def _load_mirrors(self) -> None:
        for name in sorted(os.listdir(self._mirrors_dir)):
            if not name.endswith(".json"):
                continue
            try:
                with open(os.path.join(self._mirrors_dir, name), "rb") as fh:
                    state = MirrorState.from_dict(json.loads(fh.read()))
            except (OSError, ValueError, KeyError) as exc:
                raise StorageError(f"unreadable mirror record {name}: {exc}") from exc
            self._mirrors[state.canonical_url] = state

    def _mirror_path(self, canonical_url: str) -> str:
        return os.path.join(self._mirrors_dir, _url_slug(canonical_url) + ".json")

    def _persist_mirror(self, state: MirrorState) -> None:
        self._write_atomic(self._mirror_path(state.canonical_url), json.dumps(state.to_dict(), indent=2).encode())

    def mirror_for(self, canonical_url: str) -> Optional[MirrorState]:
        with self._lock:
            return self._mirrors.get(canonical_url)

    def mirrors(self) -> List[MirrorState]:
        with self._lock:
            return list(self._mirrors.values())

    # -- object store ------------------------------------------------------

    def object_path(self, digest: str) -> str:
        return os.path.join(self._objects_dir, digest[:2], digest)

    def _write_atomic(self, path: str, data: bytes) -> None:
        tmp = path + ".tmp"
        try:
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(tmp, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except OSError as exc:
            raise StorageError(f"cannot write {path!r}: {exc}") from exc

    def _store_object(self, data: bytes, kind: EntryKind, now: datetime) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.object_path(digest)
        if not os.path.exists(path):
            self._write_atomic(path, zlib.compress(data))
            meta = {
                "digest": digest,
                "size": len(data),
                "kind": kind.value,
                "stored_at": now.isoformat(),
            }
            self._write_atomic(path + ".meta.json", json.dumps(meta).encode())
        return digest

    def _read_object(self, digest: str) -> bytes:
        path = self.object_path(digest)
        try:
            with open(path + ".meta.json", "rb") as fh:
                meta = json.loads(fh.read())
            with open(path, "rb") as fh:
                data = zlib.decompress(fh.read())
        except (OSError, ValueError, zlib.error) as exc:
            raise StorageError(f"unreadable cache object {digest}: {exc}") from exc
        if hashlib.sha256(data).hexdigest() != digest or meta.get("size") != len(data):
            raise StorageError(f"cache object {digest} failed integrity re-check")
        return data

    # -- entry index -------------------------------------------------------

    def _entries_path(self, canonical_url: str) -> str:
        return os.path.join(self._entries_dir, _url_slug(canonical_url) + ".json")

    def _read_entries(self, canonical_url: str) -> Optional[dict]:
        path = self._entries_path(canonical_url)
        try:
            with open(path, "rb") as fh:
                return json.loads(fh.read())
        except FileNotFoundError:
            return None
        except (OSError, ValueError) as exc:
            raise StorageError(f"unreadable entry index for {canonical_url}: {exc}") from exc

    def _update_entries(self, key: CacheKey, digest: str, size: int) -> None:
        index = self._read_entries(key.canonical_url) or {
            "canonical_url": key.canonical_url,
            "entries": {},
        }
        index["entries"][key.entry_id()] = {"digest": digest, "size": size}
        self._write_atomic(self._entries_path(key.canonical_url), json.dumps(index, indent=2).encode())

    # -- hot tier ----------------------------------------------------------

    def _hot_insert(self, key: CacheKey, data: bytes) -> None:
        if key in self._hot:
            self._hot_bytes -= len(self._hot.pop(key))
        self._hot[key] = data
        self._hot_bytes += len(data)
        self._evict_over_budget()

    def _evict_over_budget(self) -> List[CacheKey]:
        evicted = []
        while self._hot_bytes > self.hot_budget_bytes and self._hot:
            key, data = self._hot.popitem(last=False)
            self._hot_bytes -= len(data)
            evicted.append(key)
        return evicted

    def evict_hot(self) -> List[CacheKey]:
        """Evict least-recently-hit entries until the byte budget is met."""
        with self._lock:
            return self._evict_over_budget()

    def clear_hot(self) -> None:
        with self._lock:
            self._hot.clear()
            self._hot_bytes = 0

    def hot_keys(self) -> List[CacheKey]:
        with self._lock:
            return list(self._hot.keys())

    # -- two-tier access ---------------------------------------------------

    def put(self, key: CacheKey, data: bytes, now: datetime) -> None:
        """Disk first, then hot; identical bytes land on one disk object."""
        with self._lock:
            digest = self._store_object(data, key.kind, now)
            self._update_entries(key, digest, len(data))
            self._hot_insert(key, data)

    def get(self, key: CacheKey) -> Tuple[Tier, Optional[bytes]]:
        with self._lock:
            data = self._hot.get(key)
            if data is not None:
                self._hot.move_to_end(key)
                return (Tier.HOT, data)
        # cold path: consult the durable index, verify, then promote
        index = self._read_entries(key.canonical_url)
        if index is None:
            return (Tier.MISS, None)
        record = index["entries"].get(key.entry_id())
        if record is None:
            return (Tier.MISS, None)
        data = self._read_object(record["digest"])
        with self._lock:
            self._hot_insert(key, data)
        return (Tier.DISK, data)

    # -- seeding and validation ---------------------------------------------

    def seed_mirror(
        self,
        sel: ident.Selector,
        upstream_advert_bytes: bytes,
        upstream_pack_bytes: bytes,
        now: datetime,
    ) -> MirrorState:
        """Pin a selector against upstream's advertisement and store its pack.

        Raises RefNotFoundError when the selector's ref is not advertised.
        """
        adv = wire.parse_advertisement_bytes(upstream_advert_bytes)
        pinned = ident.resolve(sel, adv)
        refname = ident.pinned_refname(sel, adv)
        try:
            head_at_seed = ident.resolve(
                ident.Selector(sel.host, sel.repo_path, ident.RefExpr.head()), adv
            ).commit_id
        except ident.RefNotFoundError:
            head_at_seed = pinned.commit_id

        synthesized = synthesize_advertisement(pinned, refname)
        now_ts = now.isoformat()

        advert_key = CacheKey(pinned.canonical_url, EntryKind.ADVERTISEMENT, pinned.commit_id)
        pack_key = CacheKey(pinned.canonical_url, EntryKind.PACK, pinned.commit_id)
        self.put(advert_key, synthesized, now)
        self.put(pack_key, upstream_pack_bytes, now)

        state = MirrorState(
            canonical_url=pinned.canonical_url,
            selector=ident.selector_text(sel),
            pinned=pinned,
            pinned_refname=refname,
            seeded_at=now_ts,
            upstream_head_at_seed=head_at_seed,
            advert_fingerprint=ident.fingerprint(
                ident.FingerprintSubject.ADVERTISEMENT, upstream_advert_bytes
            ),
            pack_fingerprint=ident.fingerprint(ident.FingerprintSubject.PACK, upstream_pack_bytes),
            pack_path=self.object_path(hashlib.sha256(upstream_pack_bytes).hexdigest()),
            last_validation=ValidationState(),
        )
        with self._lock:
            self._mirrors[pinned.canonical_url] = state
            self._persist_mirror(state)
        return state

    def validate_mirror(
        self, state: MirrorState, fresh_advert_bytes: bytes, now: datetime
    ) -> ValidationOutcome:
        """Re-resolve the original selector; divergence is sticky until re-seed."""
        if state.last_validation.state == "diverged":
            return ValidationOutcome(False, state.last_validation.observed)
        sel = ident.parse_selector(state.selector)
        adv = wire.parse_advertisement_bytes(fresh_advert_bytes)
        try:
            observed = ident.resolve(sel, adv).commit_id
        except ident.RefNotFoundError:
            observed = wire.ZERO_OID  # pinned ref vanished upstream
        if observed == state.pinned.commit_id:
            state.last_validation = ValidationState("ok", now.isoformat(), None)
            outcome = ValidationOutcome(True, None)
        else:
            state.last_validation = ValidationState("diverged", now.isoformat(), observed)
            outcome = ValidationOutcome(False, observed)
        with self._lock:
            self._mirrors[state.canonical_url] = state
            self._persist_mirror(state)
        return outcome

    # -- inspection ----------------------------------------------------------

    def list_entries(self) -> List[dict]:
        """Entry listing for the inspection CLI: tier, size, digest per key."""
        out = []
        with self._lock:
            hot_keys = set(self._hot.keys())
        for name in sorted(os.listdir(self._entries_dir)):
            if not name.endswith(".json"):
                continue
            try:
                with open(os.path.join(self._entries_dir, name), "rb") as fh:
                    index = json.loads(fh.read())
            except (OSError, ValueError) as exc:
                raise StorageError(f"unreadable entry index {name}: {exc}") from exc
            url = index["canonical_url"]
            for entry_id, record in sorted(index["entries"].items()):
                kind_name, _, commit = entry_id.partition(":")
                key = CacheKey(url, EntryKind(kind_name), commit)
                out.append(
                    {
                        "canonical_url": url,
                        "kind": kind_name,
                        "commit_id": commit,
                        "tier": Tier.HOT.value if key in hot_keys else Tier.DISK.value,
                        "size": record["size"],
                        "digest": record["digest"],
                    }
                )
        return out
