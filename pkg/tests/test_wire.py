import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gitgate import wire
from gitgate.wire import (
    FLUSH,
    BadLengthFieldError,
    EmptyWantsError,
    FrameKind,
    MalformedAdvertisementError,
    MalformedRequestError,
    OversizePayloadError,
    PktFrame,
    RefAdvertisement,
    TruncatedFrameError,
    UploadPackRequest,
    WireError,
    decode_pkt_stream,
    encode_pkt,
    encode_pkt_stream,
    parse_advertisement_bytes,
    parse_ref_advertisement,
    parse_upload_pack_request,
    render_ref_advertisement,
    render_upload_pack_request,
)

OID_A = "f3c1" + "0" * 36
OID_B = "a" * 40


# -- pkt-line framing ---------------------------------------------------------


def test_flush_encodes_to_fixed_bytes():
    assert encode_pkt(FLUSH) == b"0000"


def test_data_frame_length_prefix():
    # oracle: 4 + payload length, rendered as 4 lowercase hex digits
    assert encode_pkt(PktFrame.data(b"hello\n")) == b"000ahello\n"


def test_empty_data_frame():
    assert encode_pkt(PktFrame.data(b"")) == b"0004"
    assert decode_pkt_stream(b"0004") == [PktFrame.data(b"")]


def test_oversize_payload_rejected():
    encode_pkt(PktFrame.data(b"x" * 65516))  # boundary fits
    with pytest.raises(OversizePayloadError):
        encode_pkt(PktFrame.data(b"x" * 65517))


def test_length_prefix_matches_payload_length():
    for size in (0, 1, 7, 255, 65516):
        encoded = encode_pkt(PktFrame.data(b"y" * size))
        assert int(encoded[:4], 16) == size + 4
        assert encoded[:4] == encoded[:4].lower()


def test_decode_flush():
    assert decode_pkt_stream(b"0000") == [FLUSH]


def test_decode_rejects_non_hex_length():
    with pytest.raises(BadLengthFieldError):
        decode_pkt_stream(b"000z")


def test_decode_rejects_reserved_lengths():
    for reserved in (b"0001", b"0002", b"0003"):
        with pytest.raises(BadLengthFieldError):
            decode_pkt_stream(reserved)


def test_decode_rejects_truncation():
    with pytest.raises(TruncatedFrameError):
        decode_pkt_stream(b"0009hi")
    with pytest.raises(TruncatedFrameError):
        decode_pkt_stream(b"00")


def test_decode_consumes_entire_input():
    stream = encode_pkt_stream([PktFrame.data(b"a"), FLUSH, PktFrame.data(b"bc")])
    assert decode_pkt_stream(stream) == [PktFrame.data(b"a"), FLUSH, PktFrame.data(b"bc")]


@given(st.binary(max_size=300))
def test_pkt_round_trip(payload):
    frame = PktFrame.data(payload)
    assert decode_pkt_stream(encode_pkt(frame)) == [frame]


@given(st.lists(st.one_of(st.binary(max_size=64).map(PktFrame.data), st.just(FLUSH)), max_size=20))
def test_pkt_stream_round_trip(frames):
    assert decode_pkt_stream(encode_pkt_stream(frames)) == frames


@given(st.binary(max_size=400))
@settings(max_examples=300)
def test_decode_total_on_arbitrary_bytes(data):
    try:
        decode_pkt_stream(data)
    except WireError:
        pass


def test_decode_bulk_fuzz_never_crashes():
    rng = random.Random(0xC0FFEE)
    for _ in range(10_000):
        blob = rng.randbytes(rng.randrange(0, 64))
        try:
            decode_pkt_stream(blob)
        except WireError:
            pass


# -- ref advertisements --------------------------------------------------------


def adv_frames(*lines: bytes) -> list:
    frames = [wire.pkt_data_line("# service=git-upload-pack\n"), FLUSH]
    frames += [PktFrame.data(line) for line in lines]
    frames.append(FLUSH)
    return frames


def test_parse_single_ref_advertisement():
    frames = adv_frames(
        f"{OID_A} refs/heads/main\0side-band-64k no-progress symref=HEAD:refs/heads/main\n".encode()
    )
    adv = parse_ref_advertisement(frames)
    assert adv.service == "git-upload-pack"
    assert adv.refs == ((OID_A, "refs/heads/main"),)
    assert adv.capabilities == ("side-band-64k", "no-progress")
    assert adv.head_target == "refs/heads/main"


def test_parse_empty_repository_sentinel():
    frames = adv_frames(f"{'0' * 40} capabilities^{{}}\0side-band-64k\n".encode())
    adv = parse_ref_advertisement(frames)
    assert adv.refs == ()
    assert adv.capabilities == ("side-band-64k",)


def test_parse_requires_nul_separator_on_first_ref():
    frames = adv_frames(f"{OID_A} refs/heads/main\n".encode())
    with pytest.raises(MalformedAdvertisementError):
        parse_ref_advertisement(frames)


def test_parse_requires_service_header():
    frames = [PktFrame.data(b"nonsense\n"), FLUSH, PktFrame.data(b"x"), FLUSH]
    with pytest.raises(MalformedAdvertisementError):
        parse_ref_advertisement(frames)


def test_parse_rejects_bad_oid():
    frames = adv_frames(b"nothex" + b"0" * 34 + b" refs/heads/main\0caps\n")
    with pytest.raises(MalformedAdvertisementError):
        parse_ref_advertisement(frames)


def test_parse_rejects_sha256_oids():
    frames = adv_frames(("e" * 64 + " refs/heads/main\0caps\n").encode())
    with pytest.raises(MalformedAdvertisementError):
        parse_ref_advertisement(frames)


def test_parse_rejects_duplicate_refnames():
    frames = adv_frames(
        f"{OID_A} refs/heads/main\0\n".encode(),
        f"{OID_B} refs/heads/main\n".encode(),
    )
    with pytest.raises(MalformedAdvertisementError):
        parse_ref_advertisement(frames)


def test_render_preserves_ref_order():
    refs = tuple((OID_B[:-1] + str(i), f"refs/heads/b{i}") for i in range(5))
    adv = RefAdvertisement("git-upload-pack", refs, ("no-progress",), None)
    parsed = parse_advertisement_bytes(render_ref_advertisement(adv))
    assert parsed.refs == refs


def test_render_empty_advertisement_shape():
    adv = RefAdvertisement("git-upload-pack", (), ("side-band-64k",), None)
    body = render_ref_advertisement(adv)
    frames = decode_pkt_stream(body)
    assert frames[0].payload == b"# service=git-upload-pack\n"
    assert frames[1] is FLUSH or frames[1].kind is FrameKind.FLUSH
    assert b"capabilities^{}" in frames[2].payload
    assert frames[-1].kind is FrameKind.FLUSH


NAME_ALPHABET = st.text(
    alphabet=st.sampled_from("abcdefghijklmnopqrstuvwxyz0123456789-/._"), min_size=1, max_size=30
).filter(lambda s: "//" not in s and not s.startswith("/") and not s.endswith("/"))

CAP_TOKEN = st.text(
    alphabet=st.sampled_from("abcdefghijklmnopqrstuvwxyz0123456789-=_"), min_size=1, max_size=20
).filter(lambda s: not s.startswith("symref="))


@st.composite
def advertisements(draw):
    n = draw(st.integers(min_value=0, max_value=6))
    oids = [
        "".join(draw(st.sampled_from("0123456789abcdef")) for _ in range(40)) for _ in range(n)
    ]
    names = draw(
        st.lists(NAME_ALPHABET, min_size=n, max_size=n, unique=True)
    )
    caps = draw(st.lists(CAP_TOKEN, max_size=4))
    head = draw(st.one_of(st.none(), NAME_ALPHABET))
    return RefAdvertisement(
        service="git-upload-pack",
        refs=tuple(zip(oids, names)),
        capabilities=tuple(caps),
        head_target=head,
    )


@given(advertisements())
@settings(max_examples=300)
def test_advertisement_round_trip(adv):
    assert parse_advertisement_bytes(render_ref_advertisement(adv)) == adv


# -- upload-pack requests --------------------------------------------------------


def test_parse_basic_clone_request():
    body = encode_pkt_stream(
        [wire.pkt_data_line(f"want {OID_A}\n"), FLUSH, wire.pkt_data_line("done\n")]
    )
    req = parse_upload_pack_request(body)
    assert req.wants == [OID_A]
    assert req.done is True
    assert req.haves == []


def test_parse_request_with_capabilities_and_haves():
    body = encode_pkt_stream(
        [
            wire.pkt_data_line(f"want {OID_A} side-band-64k no-progress\n"),
            wire.pkt_data_line(f"want {OID_B}\n"),
            FLUSH,
            wire.pkt_data_line(f"have {OID_B}\n"),
            wire.pkt_data_line("done\n"),
        ]
    )
    req = parse_upload_pack_request(body)
    assert req.wants == [OID_A, OID_B]
    assert req.capabilities == ["side-band-64k", "no-progress"]
    assert req.haves == [OID_B]


def test_parse_request_deepen():
    body = encode_pkt_stream(
        [wire.pkt_data_line(f"want {OID_A}\n"), wire.pkt_data_line("deepen 1\n"), FLUSH]
    )
    assert parse_upload_pack_request(body).depth == 1


def test_parse_request_rejects_zero_wants():
    body = encode_pkt_stream([FLUSH, wire.pkt_data_line("done\n")])
    with pytest.raises(EmptyWantsError):
        parse_upload_pack_request(body)


def test_parse_request_rejects_garbage_lines():
    body = encode_pkt_stream([wire.pkt_data_line("steal-secrets please\n")])
    with pytest.raises(MalformedRequestError):
        parse_upload_pack_request(body)


def test_upload_pack_request_round_trip():
    req = UploadPackRequest(
        wants=[OID_A, OID_B], haves=[OID_B], done=True, depth=3, capabilities=["no-progress"]
    )
    parsed = parse_upload_pack_request(render_upload_pack_request(req))
    assert parsed == req


# -- side-band framing -------------------------------------------------------------


def test_sideband_frames_reassemble_to_pack():
    pack = b"PACK" + bytes(range(256)) * 300
    framed = wire.frame_sideband(pack)
    frames = decode_pkt_stream(framed)
    assert frames[-1].kind is FrameKind.FLUSH
    data = b"".join(f.payload[1:] for f in frames[:-1])
    assert all(f.payload[0] == 1 for f in frames[:-1])
    assert data == pack
