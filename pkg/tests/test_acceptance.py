"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line.  Run with `pytest tests/test_acceptance.py -s`."""

import json
import os
import random
import subprocess
import time
from contextlib import contextmanager
from datetime import timedelta

import pytest

from gitgate import policy, wire
from gitgate.bench import BenchConfig, DeskBench, Mode, ValidationFailedError
from gitgate.identity import ImmutableIdentity, RefExpr, Selector
from gitgate.ledger import EventLedger, verify_chain
from gitgate.policy import Capability, Verdict
from gitgate.upstream import advance_branch, git_env
from tests.conftest import UPSTREAM_HOST

EXAMPLE_COMMIT = "f3c1" + "0" * 36


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE[{name}]: FAIL")
        raise
    else:
        print(f"\nACCEPTANCE[{name}]: PASS")


# -- 1. verdict truth table ---------------------------------------------------------


def test_acceptance_verdict_truth_table():
    # Independent restatement of the seven-verdict capability table.
    table = {
        "FETCH_ONLY": {"fetch"},
        "UNPACK_ONLY": {"fetch", "unpack"},
        "BUILD_NO_NETWORK": {"fetch", "unpack", "build"},
        "TEST_NO_SECRETS": {"fetch", "unpack", "build", "test"},
        "RUN_DEV": {"fetch", "unpack", "build", "test", "run_dev"},
        "RUN_CI": {"fetch", "unpack", "build", "test", "run_ci"},
        "BLOCKED": set(),
    }
    with criterion("verdict-truth-table"):
        start = time.monotonic()
        checked = 0
        for verdict in Verdict:
            granted = policy.capabilities_of(verdict)
            for cap in Capability:
                expected = cap.value in table[verdict.value]
                assert (cap in granted) is expected, (verdict, cap)
                checked += 1
        assert checked == 42
        assert time.monotonic() - start < 1.0


# -- 2. policy-event schema ---------------------------------------------------------


def test_acceptance_policy_event_schema(tmp_path):
    with criterion("policy-event-schema"):
        path = str(tmp_path / "ledger.jsonl")
        ledger = EventLedger(path)
        appended = ledger.append(
            selector="acme/tool@{pre-resolution}",
            identity=ImmutableIdentity("https://example.com/acme/tool", EXAMPLE_COMMIT),
            provenance=policy.ProvenanceResult.VERIFIED,
            verdict=Verdict.RUN_DEV,
            evidence_pointer="report://quarantine",
            context="code_intake/protected_host",
            operator="operator-1",
        )

        # read: the persisted line, and a fresh load of the ledger
        raw_line = open(path, "rb").read().splitlines()[0]
        reloaded = EventLedger(path).view().events[0]

        # display: the canonical line rendering used by the events CLI
        assert raw_line.decode("ascii") == appended.canonical_line()
        assert reloaded.canonical_line() == appended.canonical_line()

        record = json.loads(raw_line)
        # all seven admission-record fields are present (expiry/revocation
        # explicitly recorded, here as null)
        assert record["selector"] == "acme/tool@{pre-resolution}"
        assert record["resolved_identity"]["commit_id"] == EXAMPLE_COMMIT
        assert record["provenance"] == "verified"
        assert record["verdict"] == "RUN_DEV"
        assert record["evidence_pointer"] == "report://quarantine"
        assert record["context"] == "code_intake/protected_host"
        assert "expiry" in record and record["expiry"] is None
        assert "revokes" in record and record["revokes"] is None

        # generic round-trip: every persisted event reloads field-identical
        ledger.append(
            selector="git+https://example.com/other/repo@v2",
            identity=ImmutableIdentity("https://example.com/other/repo", "b" * 40),
            provenance=policy.ProvenanceResult.UNVERIFIED,
            verdict=Verdict.BLOCKED,
            evidence_pointer="quarantine://pending-review",
            context="code_intake/pending_review/rung=tag",
            operator="gateway",
            expiry="2027-01-01T00:00:00.000000Z",
        )
        lines = open(path, "rb").read().splitlines()
        reread = EventLedger(path).view().events
        assert [e.canonical_line().encode() for e in reread] == lines


# -- 3. lifecycle state machine -------------------------------------------------------


def test_acceptance_lifecycle_state_machine(gateway_env):
    env = gateway_env

    def build_state(name):
        """Create one lifecycle state on a dedicated repository; returns its
        identity plus a ticket id when one exists."""
        repo_path = f"acme/{name}"
        import tempfile

        new_dir = tempfile.mkdtemp(prefix=f"state-{name.replace('/', '_')}-")
        from gitgate.upstream import create_bare_repo

        head = create_bare_repo(new_dir, branch="main", files={"f.txt": f"{name}\n"})
        env.upstream.add_repo(repo_path, new_dir)
        env.repos[repo_path] = new_dir
        env.heads[repo_path] = head
        url = f"https://{UPSTREAM_HOST}/{repo_path}"
        identity = ImmutableIdentity(url, head)
        sel = Selector(UPSTREAM_HOST, repo_path, RefExpr.head())

        if name == "first-seen":
            pass
        elif name == "pending":
            env.service.admission_hold(sel)
        elif name == "granted":
            t = env.service.admission_hold(sel)
            env.service.record_verdict(t.ticket_id, Verdict.RUN_DEV, "op")
        elif name == "expired":
            t = env.service.admission_hold(sel)
            env.service.record_verdict(
                t.ticket_id, Verdict.RUN_DEV, "op", expiry=env.clock() + timedelta(seconds=60)
            )
            env.clock.advance(61)
        elif name == "revoked":
            t = env.service.admission_hold(sel)
            env.service.record_verdict(t.ticket_id, Verdict.RUN_DEV, "op")
            env.service.revoke(identity, "op", "recall")
        elif name == "break-glass-active":
            env.service.break_glass(identity, "op", 1800, "incident")
        elif name == "break-glass-expired":
            env.service.break_glass(identity, "op", 300, "incident")
            env.clock.advance(301)
        return repo_path, identity

    # oracle: state -> (fetch outcome, Fetch check, RunDev check); a fetch
    # outcome is either "serve" or the denial reason class
    oracle = {
        "first-seen": ("pending_review", False, False),
        "pending": ("pending_review", False, False),
        "granted": ("serve", True, True),
        "expired": ("expired", False, False),
        "revoked": ("revoked", False, False),
        "break-glass-active": ("serve", True, True),
        "break-glass-expired": ("expired", False, False),
    }

    with criterion("lifecycle-state-machine"):
        agreements = 0
        for state, (expected_fetch, expect_fetch_cap, expect_rundev_cap) in oracle.items():
            repo_path, identity = build_state(state)

            status, _, body = env.fetch_info_refs(repo_path)
            if expected_fetch == "serve":
                assert status == 200, (state, body)
            else:
                assert status == 403, (state, status, body)
                payload = json.loads(body)
                assert payload["reason"] == expected_fetch, (state, payload)
                # every denial is evidenced
                assert payload.get("ticket_id") or payload.get("event_id"), (state, payload)
            agreements += 1

            # capability checks against the same identity the fetch used
            assert env.service.check(identity, Capability.FETCH).allowed is expect_fetch_cap, state
            assert (
                env.service.check(identity, Capability.RUN_DEV).allowed is expect_rundev_cap
            ), state
            agreements += 2
        assert agreements == len(oracle) * 3  # 100% agreement, all combinations


# -- 4. git interop at desk scale ------------------------------------------------------


def test_acceptance_git_interop(gateway_env, tmp_path):
    env = gateway_env
    with criterion("git-interop"):
        start = time.monotonic()
        env.hold_and_approve("acme/tool")
        pinned = env.heads["acme/tool"]
        url = env.repo_url("acme/tool")

        out = subprocess.run(
            ["git", "ls-remote", url], stdout=subprocess.PIPE, stderr=subprocess.PIPE,
            env=git_env(), timeout=30,
        )
        assert out.returncode == 0, out.stderr.decode()
        assert pinned in out.stdout.decode()

        clone_dir = str(tmp_path / "accept-clone")
        out = subprocess.run(
            ["git", "clone", "--quiet", url, clone_dir],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, env=git_env(), timeout=30,
        )
        assert out.returncode == 0, out.stderr.decode()
        head = subprocess.run(
            ["git", "-C", clone_dir, "rev-parse", "HEAD"],
            stdout=subprocess.PIPE, check=True,
        ).stdout.decode().strip()
        assert head == pinned
        assert time.monotonic() - start < 30.0


# -- 5. protocol round-trip ------------------------------------------------------------


def test_acceptance_protocol_round_trip():
    rng = random.Random(0xACCE97)
    hexdigits = "0123456789abcdef"

    def random_advertisement():
        n = rng.randrange(0, 6)
        names = rng.sample(
            [f"refs/heads/b{i}" for i in range(40)] + [f"refs/tags/t{i}" for i in range(40)], n
        )
        refs = tuple(("".join(rng.choice(hexdigits) for _ in range(40)), name) for name in names)
        caps = tuple(rng.sample(["side-band-64k", "no-progress", "thin-pack", "agent=x"], rng.randrange(0, 4)))
        head = rng.choice([None, "refs/heads/main", "refs/heads/dev"])
        return wire.RefAdvertisement("git-upload-pack", refs, caps, head)

    with criterion("protocol-round-trip"):
        for _ in range(10_000):
            payload = rng.randbytes(rng.randrange(0, 80))
            frame = wire.PktFrame.data(payload)
            assert wire.decode_pkt_stream(wire.encode_pkt(frame)) == [frame]

        for _ in range(10_000):
            adv = random_advertisement()
            assert wire.parse_advertisement_bytes(wire.render_ref_advertisement(adv)) == adv

        crashes = 0
        for _ in range(10_000):
            blob = rng.randbytes(rng.randrange(0, 64))
            try:
                wire.decode_pkt_stream(blob)
            except wire.WireError:
                pass
            except Exception:
                crashes += 1
        assert crashes == 0


# -- 6. ledger tamper evidence ----------------------------------------------------------


def test_acceptance_ledger_tamper_evidence(tmp_path):
    with criterion("ledger-tamper-evidence"):
        start = time.monotonic()
        path = str(tmp_path / "ledger.jsonl")
        ledger = EventLedger(path)
        for i in range(10):
            ledger.append(
                selector=f"git+https://example.com/repo/{i}",
                identity=ImmutableIdentity(f"https://example.com/repo/{i}", f"{i:040d}"[:40]),
                provenance=policy.ProvenanceResult.UNVERIFIED,
                verdict=Verdict.FETCH_ONLY if i % 2 else Verdict.RUN_CI,
                evidence_pointer="operator://verdict",
                context="code_intake/protected_host",
                operator="op",
            )
        original = open(path, "rb").read()
        assert verify_chain(path).ok

        # oracle: the event index owning each byte offset, from line lengths
        owners = []
        for index, line in enumerate(original.splitlines(keepends=True)):
            owners.extend([index] * len(line))
        assert len(owners) == len(original)

        tampered_path = str(tmp_path / "tampered.jsonl")
        for offset in range(len(original)):
            tampered = bytearray(original)
            tampered[offset] ^= 0x01
            with open(tampered_path, "wb") as fh:
                fh.write(tampered)
            result = verify_chain(tampered_path)
            assert not result.ok, f"flip at {offset} went undetected"
            assert result.bad_index == owners[offset], (
                f"flip at {offset}: reported {result.bad_index}, expected {owners[offset]}"
            )
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"exhaustive flip sweep took {elapsed:.1f}s"


# -- 7. benchmark guard ------------------------------------------------------------------


def test_acceptance_benchmark_guard(tmp_path):
    with criterion("benchmark-divergence-guard"):
        config = BenchConfig(
            repos=("git+https://upstream.test/guard/repo",), samples_per_cell=2
        )
        out_dir = str(tmp_path / "bench-out")
        with DeskBench(str(tmp_path / "work"), config) as desk:
            url = "https://upstream.test/guard/repo"
            assert desk.store.mirror_for(url) is not None  # seeded
            advance_branch(os.path.join(str(tmp_path / "work"), "upstreams", "guard__repo"))
            with pytest.raises(ValidationFailedError):
                desk.run(out_dir)
            assert desk.store.mirror_for(url).last_validation.state == "diverged"
        # zero files written
        assert not os.path.exists(os.path.join(out_dir, "latest.json"))
        assert not os.path.exists(os.path.join(out_dir, "latest.md"))
        snapshot_dir = os.path.join(out_dir, "snapshots")
        assert not os.path.exists(snapshot_dir) or os.listdir(snapshot_dir) == []


# -- 8. deployability ordering --------------------------------------------------------------


def test_acceptance_deployability_ordering(tmp_path):
    with criterion("deployability-ordering"):
        start = time.monotonic()
        config = BenchConfig(samples_per_cell=5, upstream_delay_ms=100.0)
        out_dir = str(tmp_path / "bench-out")
        with DeskBench(str(tmp_path / "work"), config) as desk:
            report, _ = desk.run(out_dir)

        cells = {(row["repo"], row["mode"]): row["median_ms"] for row in report["cells"]}
        repos = report["config"]["repos_measured"]
        assert len(repos) == 5
        for repo in repos:
            web = cells[(repo, Mode.WEB)]
            cache = cells[(repo, Mode.CACHE)]
            hot = cells[(repo, Mode.HOT_CACHE)]
            assert hot < cache < web, (repo, hot, cache, web)
            assert web >= 100.0, (repo, web)
            assert hot <= 0.2 * web, (repo, hot, web)

        # the published live-network numbers appear as a labeled baseline,
        # never as desk-scale assertions
        baseline = report["reference_baseline"]
        assert baseline["web"] == [433, 1062]
        assert baseline["cache"] == [32, 44]
        assert baseline["hot_cache"] == [13, 16]
        assert "reference" in baseline["label"]
        md = open(os.path.join(out_dir, "latest.md")).read()
        assert "433" in md and "reference" in md

        assert time.monotonic() - start < 60.0


# -- 9. snapshot discipline -------------------------------------------------------------------


def test_acceptance_snapshot_discipline(tmp_path):
    with criterion("snapshot-discipline"):
        config = BenchConfig(
            repos=("git+https://upstream.test/snap/repo",),
            samples_per_cell=2,
            upstream_delay_ms=5.0,
        )
        out_dir = str(tmp_path / "bench-out")
        snapshot_dir = os.path.join(out_dir, "snapshots")
        with DeskBench(str(tmp_path / "work"), config) as desk:
            desk.run(out_dir)
            first_snapshots = {
                name: open(os.path.join(snapshot_dir, name), "rb").read()
                for name in os.listdir(snapshot_dir)
            }
            assert len(first_snapshots) == 1
            latest_one = open(os.path.join(out_dir, "latest.json"), "rb").read()

            desk.run(out_dir)
            two_snapshots = {
                name: open(os.path.join(snapshot_dir, name), "rb").read()
                for name in os.listdir(snapshot_dir)
            }
            assert len(two_snapshots) == 2  # two distinct immutable snapshots
            assert set(first_snapshots) < set(two_snapshots)
            latest_two = open(os.path.join(out_dir, "latest.json"), "rb").read()
            assert latest_two != latest_one  # latest.* rewritten

            desk.run(out_dir)

        # the third run added a snapshot and left the first two byte-identical
        final = sorted(os.listdir(snapshot_dir))
        assert len(final) == 3
        for name, content in two_snapshots.items():
            assert open(os.path.join(snapshot_dir, name), "rb").read() == content
