"""Git smart-HTTP v0 wire codec: pkt-line framing, ref advertisements,
upload-pack request bodies, and side-band response framing.

Only the upload-pack side of protocol v0 is implemented, with SHA-1 object
ids.  All functions here are pure and stateless.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Tuple

MAX_PKT_PAYLOAD = 65516  # 0xffff minus the 4-byte length header, per pack protocol
ZERO_OID = "0" * 40

UPLOAD_PACK_SERVICE = "git-upload-pack"
ADVERTISEMENT_CONTENT_TYPE = "application/x-git-upload-pack-advertisement"
RESULT_CONTENT_TYPE = "application/x-git-upload-pack-result"

_OID_RE = re.compile(rb"\A[0-9a-f]{40}\Z")
_HEX_RE = re.compile(rb"\A[0-9a-fA-F]{4}\Z")

SIDE_BAND_DATA = 1
SIDE_BAND_PROGRESS = 2
SIDE_BAND_FATAL = 3


class WireError(Exception):
    """Base class for wire-format violations."""


class OversizePayloadError(WireError):
    pass


class TruncatedFrameError(WireError):
    pass


class BadLengthFieldError(WireError):
    pass


class MalformedAdvertisementError(WireError):
    pass


class MalformedRequestError(WireError):
    pass


class EmptyWantsError(MalformedRequestError):
    pass


class FrameKind(Enum):
    DATA = "data"
    FLUSH = "flush"


@dataclass(frozen=True)
class PktFrame:
    kind: FrameKind
    payload: bytes = b""

    @staticmethod
    def data(payload: bytes) -> "PktFrame":
        return PktFrame(FrameKind.DATA, payload)


FLUSH = PktFrame(FrameKind.FLUSH)


@dataclass(frozen=True)
class RefAdvertisement:
    """Parsed form of an upload-pack ref advertisement body."""

    service: str
    refs: Tuple[Tuple[str, str], ...]  # (oid, refname) in advertised order
    capabilities: Tuple[str, ...]
    head_target: Optional[str] = None

    def oid_for(self, refname: str) -> Optional[str]:
        for oid, name in self.refs:
            if name == refname:
                return oid
        return None


@dataclass
class UploadPackRequest:
    wants: List[str]
    haves: List[str] = field(default_factory=list)
    done: bool = False
    depth: Optional[int] = None
    # capability tokens the client attached to its first want line; not part
    # of the negotiation state but needed to frame the response correctly
    capabilities: List[str] = field(default_factory=list)


def encode_pkt(frame: PktFrame) -> bytes:
    if frame.kind is FrameKind.FLUSH:
        return b"0000"
    if len(frame.payload) > MAX_PKT_PAYLOAD:
        raise OversizePayloadError(
            f"pkt payload of {len(frame.payload)} bytes exceeds {MAX_PKT_PAYLOAD}"
        )
    return b"%04x%s" % (len(frame.payload) + 4, frame.payload)


def encode_pkt_stream(frames: Iterable[PktFrame]) -> bytes:
    return b"".join(encode_pkt(f) for f in frames)


def pkt_data_line(text: str) -> PktFrame:
    return PktFrame.data(text.encode("utf-8"))


def decode_pkt_stream(data: bytes) -> List[PktFrame]:
    """Decode a complete byte sequence into pkt frames.

    The whole input must be consumed; anything else raises a typed
    WireError, never an unhandled exception (fuzz target).
    """
    frames: List[PktFrame] = []
    pos = 0
    total = len(data)
    while pos < total:
        header = data[pos : pos + 4]
        if len(header) < 4:
            raise TruncatedFrameError(f"{len(header)} trailing bytes, need 4 for a length field")
        if not _HEX_RE.match(header):
            raise BadLengthFieldError(f"non-hex length field {header!r} at offset {pos}")
        length = int(header, 16)
        if length == 0:
            frames.append(FLUSH)
            pos += 4
            continue
        if length < 4:
            raise BadLengthFieldError(f"reserved length {length:#06x} at offset {pos}")
        if length - 4 > MAX_PKT_PAYLOAD:
            raise BadLengthFieldError(f"length {length:#06x} above pkt maximum at offset {pos}")
        if pos + length > total:
            raise TruncatedFrameError(
                f"frame at offset {pos} declares {length} bytes, only {total - pos} remain"
            )
        frames.append(PktFrame.data(data[pos + 4 : pos + length]))
        pos += length
    return frames


def _valid_oid(token: bytes) -> bool:
    return bool(_OID_RE.match(token))


def _split_caps(blob: bytes, where: str) -> List[str]:
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedAdvertisementError(f"undecodable capabilities on {where}") from exc
    return [tok for tok in text.strip().split(" ") if tok]


def parse_ref_advertisement(frames: List[PktFrame]) -> RefAdvertisement:
    """Parse the smart-HTTP advertisement frame sequence.

    Expected shape: service announce, flush, one or more ref lines (the
    first carrying a NUL-separated capability list), terminal flush.
    """
    if len(frames) < 4:
        raise MalformedAdvertisementError("advertisement needs at least 4 frames")
    announce = frames[0]
    if announce.kind is not FrameKind.DATA or not announce.payload.startswith(b"# service="):
        raise MalformedAdvertisementError("missing service announce frame")
    service = announce.payload[len(b"# service=") :].rstrip(b"\n").decode("ascii", "replace")
    if frames[1].kind is not FrameKind.FLUSH:
        raise MalformedAdvertisementError("announce frame must be followed by flush")
    if frames[-1].kind is not FrameKind.FLUSH:
        raise MalformedAdvertisementError("advertisement must end with flush")
    ref_frames = frames[2:-1]
    if not ref_frames:
        raise MalformedAdvertisementError("no ref frames (capability carrier missing)")

    refs: List[Tuple[str, str]] = []
    seen_names = set()
    capabilities: List[str] = []
    head_target: Optional[str] = None

    for i, frame in enumerate(ref_frames):
        if frame.kind is not FrameKind.DATA:
            raise MalformedAdvertisementError(f"unexpected flush inside ref section at frame {i}")
        line = frame.payload
        if line.endswith(b"\n"):
            line = line[:-1]
        if i == 0:
            if b"\0" not in line:
                raise MalformedAdvertisementError("first ref line lacks NUL capability separator")
            line, caps_blob = line.split(b"\0", 1)
            raw_caps = _split_caps(caps_blob, "first ref line")
            for cap in raw_caps:
                if cap.startswith("symref=HEAD:"):
                    if head_target is not None:
                        raise MalformedAdvertisementError("duplicate symref=HEAD capability")
                    head_target = cap[len("symref=HEAD:") :]
                else:
                    capabilities.append(cap)
        elif b"\0" in line:
            raise MalformedAdvertisementError(f"stray NUL on ref line {i}")
        if len(line) < 42 or line[40:41] != b" ":
            raise MalformedAdvertisementError(f"ref line {i} is not '<oid> <refname>'")
        oid, name = line[:40], line[41:]
        if not _valid_oid(oid):
            raise MalformedAdvertisementError(f"bad object id {oid!r} on ref line {i}")
        refname = name.decode("utf-8", "replace")
        if not refname:
            raise MalformedAdvertisementError(f"empty refname on ref line {i}")
        if i == 0 and refname == "capabilities^{}" and oid == ZERO_OID.encode():
            continue  # empty-repository sentinel carries capabilities only
        if refname in seen_names:
            raise MalformedAdvertisementError(f"duplicate refname {refname!r}")
        seen_names.add(refname)
        refs.append((oid.decode("ascii"), refname))

    return RefAdvertisement(
        service=service,
        refs=tuple(refs),
        capabilities=tuple(capabilities),
        head_target=head_target,
    )


def parse_advertisement_bytes(data: bytes) -> RefAdvertisement:
    return parse_ref_advertisement(decode_pkt_stream(data))


def _check_refname(name: str) -> None:
    if not name or " " in name or "\0" in name or "\n" in name:
        raise MalformedAdvertisementError(f"invalid refname {name!r}")


def render_ref_advertisement(adv: RefAdvertisement) -> bytes:
    """Render the full smart-HTTP advertisement body, announce frame and
    terminal flush included.  parse(render(adv)) == adv for valid input."""
    caps = list(adv.capabilities)
    if adv.head_target is not None:
        caps.append(f"symref=HEAD:{adv.head_target}")
    cap_blob = " ".join(caps)

    frames: List[PktFrame] = [pkt_data_line(f"# service={adv.service}\n"), FLUSH]
    if not adv.refs:
        frames.append(pkt_data_line(f"{ZERO_OID} capabilities^{{}}\0{cap_blob}\n"))
    else:
        seen = set()
        for i, (oid, name) in enumerate(adv.refs):
            if not _OID_RE.match(oid.encode("ascii", "replace")):
                raise MalformedAdvertisementError(f"bad object id {oid!r}")
            _check_refname(name)
            if name in seen:
                raise MalformedAdvertisementError(f"duplicate refname {name!r}")
            seen.add(name)
            if i == 0:
                frames.append(pkt_data_line(f"{oid} {name}\0{cap_blob}\n"))
            else:
                frames.append(pkt_data_line(f"{oid} {name}\n"))
    frames.append(FLUSH)
    return encode_pkt_stream(frames)


def parse_upload_pack_request(data: bytes) -> UploadPackRequest:
    """Parse the body of a POST to git-upload-pack.

    Collects want/have/done/deepen lines; flush frames separate the
    negotiation sections and carry no content of their own.
    """
    frames = decode_pkt_stream(data)
    req = UploadPackRequest(wants=[])
    for frame in frames:
        if frame.kind is FrameKind.FLUSH:
            continue
        line = frame.payload
        if line.endswith(b"\n"):
            line = line[:-1]
        if line == b"done":
            req.done = True
        elif line.startswith(b"want "):
            rest = line[5:]
            oid, _, caps_blob = rest.partition(b" ")
            if not _valid_oid(oid):
                raise MalformedRequestError(f"bad object id in want line: {oid!r}")
            req.wants.append(oid.decode("ascii"))
            if caps_blob:
                req.capabilities.extend(
                    tok for tok in caps_blob.decode("utf-8", "replace").split(" ") if tok
                )
        elif line.startswith(b"have "):
            oid = line[5:]
            if not _valid_oid(oid):
                raise MalformedRequestError(f"bad object id in have line: {oid!r}")
            req.haves.append(oid.decode("ascii"))
        elif line.startswith(b"deepen "):
            try:
                depth = int(line[7:])
            except ValueError as exc:
                raise MalformedRequestError(f"non-integer deepen: {line!r}") from exc
            if depth <= 0:
                raise MalformedRequestError(f"deepen must be positive, got {depth}")
            req.depth = depth
        else:
            raise MalformedRequestError(f"unrecognized request line: {line[:60]!r}")
    if not req.wants:
        raise EmptyWantsError("upload-pack request contains no want lines")
    return req


def render_upload_pack_request(req: UploadPackRequest) -> bytes:
    """Inverse of parse_upload_pack_request, used when talking to upstreams."""
    frames: List[PktFrame] = []
    for i, oid in enumerate(req.wants):
        if i == 0 and req.capabilities:
            frames.append(pkt_data_line(f"want {oid} {' '.join(req.capabilities)}\n"))
        else:
            frames.append(pkt_data_line(f"want {oid}\n"))
    if req.depth is not None:
        frames.append(pkt_data_line(f"deepen {req.depth}\n"))
    frames.append(FLUSH)
    for oid in req.haves:
        frames.append(pkt_data_line(f"have {oid}\n"))
    if req.done:
        frames.append(pkt_data_line("done\n"))
    return encode_pkt_stream(frames)


def frame_sideband(pack: bytes, band: int = SIDE_BAND_DATA, chunk: int = MAX_PKT_PAYLOAD - 1) -> bytes:
    """Wrap raw pack bytes into side-band-64k pkt frames plus terminal flush."""
    out = []
    prefix = bytes([band])
    for start in range(0, len(pack), chunk):
        out.append(encode_pkt(PktFrame.data(prefix + pack[start : start + chunk])))
    out.append(encode_pkt(FLUSH))
    return b"".join(out)
