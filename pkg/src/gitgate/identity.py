"""Selectors, immutable identities, and compatibility fingerprints.

A selector is the pre-resolution request (`git+https://host/path[@ref]`);
resolution against a ref advertisement pins it to a canonical URL plus a
40-hex commit id.  Content fingerprints are kept separate from commit
identity so that served bytes and resolved identity stay independent
trust inputs.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .wire import RefAdvertisement

SELECTOR_SCHEME = "git+https"

_OID_RE = re.compile(r"\A[0-9a-f]{40}\Z")
_HOST_RE = re.compile(r"\A[a-z0-9]([a-z0-9.\-]*[a-z0-9])?(:[0-9]{1,5})?\Z")
_TAG_SHORTHAND_RE = re.compile(r"\Av\d[0-9A-Za-z.\-_]*\Z")


class SelectorError(ValueError):
    """Base class for selector grammar violations."""


class BadSchemeError(SelectorError):
    pass


class BadHostError(SelectorError):
    pass


class BadPathError(SelectorError):
    pass


class BadRefError(SelectorError):
    pass


class RefNotFoundError(LookupError):
    pass


class AmbiguousRefError(LookupError):
    pass


class RefKind(Enum):
    HEAD = "head"
    BRANCH = "branch"
    TAG = "tag"
    OID = "oid"


@dataclass(frozen=True)
class RefExpr:
    kind: RefKind
    name: Optional[str] = None  # branch/tag name or 40-hex oid; None for HEAD

    @staticmethod
    def head() -> "RefExpr":
        return RefExpr(RefKind.HEAD)

    @staticmethod
    def branch(name: str) -> "RefExpr":
        return RefExpr(RefKind.BRANCH, name)

    @staticmethod
    def tag(name: str) -> "RefExpr":
        return RefExpr(RefKind.TAG, name)

    @staticmethod
    def oid(hexid: str) -> "RefExpr":
        return RefExpr(RefKind.OID, hexid)


@dataclass(frozen=True)
class Selector:
    host: str
    repo_path: str
    ref: RefExpr
    scheme: str = SELECTOR_SCHEME


@dataclass(frozen=True)
class ImmutableIdentity:
    canonical_url: str
    commit_id: str


class FingerprintSubject(Enum):
    ADVERTISEMENT = "ref_advertisement_bytes"
    PACK = "pack_bytes"


@dataclass(frozen=True)
class CompatibilityFingerprint:
    algorithm: str
    digest: str
    subject: FingerprintSubject


def _validate_path(path: str) -> str:
    if not path:
        raise BadPathError("empty repository path")
    segments = path.split("/")
    for seg in segments:
        if not seg:
            raise BadPathError(f"empty segment in path {path!r}")
        if seg == "..":
            raise BadPathError(f"'..' segment in path {path!r}")
    if segments[-1].endswith(".git"):
        segments[-1] = segments[-1][: -len(".git")]
        if not segments[-1]:
            raise BadPathError(f"path {path!r} reduces to an empty name")
    return "/".join(segments)


def classify_ref(text: str) -> RefExpr:
    if _OID_RE.match(text):
        return RefExpr.oid(text)
    if text.startswith("refs/tags/"):
        name = text[len("refs/tags/") :]
        if not name:
            raise BadRefError("empty tag name")
        return RefExpr.tag(name)
    if text.startswith("refs/heads/"):
        name = text[len("refs/heads/") :]
        if not name:
            raise BadRefError("empty branch name")
        return RefExpr.branch(name)
    if _TAG_SHORTHAND_RE.match(text):
        return RefExpr.tag(text)
    if not text or text.startswith("refs/") or any(c.isspace() for c in text):
        raise BadRefError(f"unusable ref expression {text!r}")
    return RefExpr.branch(text)


def parse_selector(text: str) -> Selector:
    """Parse `git+https://<host>/<path>[@<ref>]` into a Selector."""
    prefix = SELECTOR_SCHEME + "://"
    if "://" not in text:
        raise BadSchemeError(f"selector {text!r} has no scheme")
    if not text.startswith(prefix):
        scheme = text.split("://", 1)[0]
        raise BadSchemeError(f"unsupported scheme {scheme!r}")
    rest = text[len(prefix) :]
    if "/" not in rest:
        raise BadPathError(f"selector {text!r} has no repository path")
    host, path_and_ref = rest.split("/", 1)
    host = host.lower()
    if not _HOST_RE.match(host):
        raise BadHostError(f"invalid host {host!r}")
    if "@" in path_and_ref:
        path, ref_text = path_and_ref.rsplit("@", 1)
        ref = classify_ref(ref_text)
    else:
        path, ref = path_and_ref, RefExpr.head()
    return Selector(host=host, repo_path=_validate_path(path), ref=ref)


def selector_for_repo(host: str, repo_path: str) -> Selector:
    """Selector for a bare host/path pair (no ref expression), as seen in
    gateway URL paths; validates both components."""
    host = host.lower()
    if not _HOST_RE.match(host):
        raise BadHostError(f"invalid host {host!r}")
    return Selector(host=host, repo_path=_validate_path(repo_path), ref=RefExpr.head())


def canonicalize(sel: Selector) -> str:
    """Canonical repository URL shared by all equivalent selectors."""
    return f"https://{sel.host}/{sel.repo_path}"


def selector_text(sel: Selector) -> str:
    """Canonical selector string; parse_selector(selector_text(s)) == s."""
    base = f"{SELECTOR_SCHEME}://{sel.host}/{sel.repo_path}"
    ref = sel.ref
    if ref.kind is RefKind.HEAD:
        return base
    if ref.kind is RefKind.OID:
        return f"{base}@{ref.name}"
    if ref.kind is RefKind.TAG:
        if _TAG_SHORTHAND_RE.match(ref.name or ""):
            return f"{base}@{ref.name}"
        return f"{base}@refs/tags/{ref.name}"
    # branch: spell out refs/heads/ when the bare name would classify as
    # something else (tag shorthand or a 40-hex oid)
    bare = classify_ref(ref.name or "")
    if bare.kind is RefKind.BRANCH:
        return f"{base}@{ref.name}"
    return f"{base}@refs/heads/{ref.name}"


def resolve(sel: Selector, adv: RefAdvertisement) -> ImmutableIdentity:
    """Pin a selector to a commit id using a parsed ref advertisement.

    Oid selectors pass through verbatim without consulting the refs;
    membership is checked later, at pack-serving time.
    """
    url = canonicalize(sel)
    ref = sel.ref
    if ref.kind is RefKind.OID:
        return ImmutableIdentity(url, ref.name or "")

    names = [name for _, name in adv.refs]
    if len(names) != len(set(names)):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise AmbiguousRefError(f"advertisement repeats refname(s) {dupes}")

    if ref.kind is RefKind.BRANCH:
        oid = adv.oid_for(f"refs/heads/{ref.name}")
        if oid is None:
            raise RefNotFoundError(f"refs/heads/{ref.name} not advertised by {url}")
        return ImmutableIdentity(url, oid)

    if ref.kind is RefKind.TAG:
        # prefer the peeled entry so annotated tags pin the commit itself
        oid = adv.oid_for(f"refs/tags/{ref.name}^{{}}") or adv.oid_for(f"refs/tags/{ref.name}")
        if oid is None:
            raise RefNotFoundError(f"refs/tags/{ref.name} not advertised by {url}")
        return ImmutableIdentity(url, oid)

    # HEAD: symref target when advertised, else the literal HEAD ref
    if adv.head_target is not None:
        oid = adv.oid_for(adv.head_target) or adv.oid_for("HEAD")
        if oid is None:
            raise RefNotFoundError(f"HEAD target {adv.head_target!r} not advertised by {url}")
        return ImmutableIdentity(url, oid)
    oid = adv.oid_for("HEAD")
    if oid is None:
        raise RefNotFoundError(f"no HEAD advertised by {url}")
    return ImmutableIdentity(url, oid)


def pinned_refname(sel: Selector, adv: RefAdvertisement) -> Optional[str]:
    """The advertised refname a selector pins, if any (None for oid pins)."""
    ref = sel.ref
    if ref.kind is RefKind.OID:
        return None
    if ref.kind is RefKind.BRANCH:
        return f"refs/heads/{ref.name}"
    if ref.kind is RefKind.TAG:
        return f"refs/tags/{ref.name}"
    if adv.head_target is not None and adv.oid_for(adv.head_target) is not None:
        return adv.head_target
    return None


def fingerprint(subject: FingerprintSubject, data: bytes) -> CompatibilityFingerprint:
    """sha-256 fingerprint of the exact bytes served for a given subject."""
    return CompatibilityFingerprint(
        algorithm="sha-256",
        digest=hashlib.sha256(data).hexdigest(),
        subject=subject,
    )
