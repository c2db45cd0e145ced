import json
import os
import subprocess
import sys

from gitgate.cli import main, parse_duration_seconds
from gitgate.upstream import LocalUpstream, advance_branch, create_bare_repo
from tests.conftest import UPSTREAM_HOST


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_config(tmp_path, upstream_base=None, tokens=True):
    overrides = ""
    if upstream_base:
        overrides = f'[upstream_overrides]\n"{UPSTREAM_HOST}" = "{upstream_base}"\n'
    token_table = '[admin_tokens]\nalice = "cli-token"\n' if tokens else ""
    path = tmp_path / "gitgate.toml"
    path.write_text(
        'listen = "127.0.0.1:0"\n'
        'admin_listen = "127.0.0.1:0"\n'
        'cache_root = "cache"\n'
        'ledger_path = "ledger.jsonl"\n' + token_table + overrides
    )
    return str(path)


def test_parse_duration():
    assert parse_duration_seconds("45s") == 45
    assert parse_duration_seconds("30m") == 1800
    assert parse_duration_seconds("2h") == 7200
    assert parse_duration_seconds("30d") == 30 * 86400


def test_resolve_prints_identity(tmp_path, capsys):
    repo = str(tmp_path / "r.git")
    head = create_bare_repo(repo, files={"x": "1\n"})
    upstream = LocalUpstream({"acme/tool": repo}).start()
    try:
        cfg = write_config(tmp_path, upstream.base_url)
        code, out, _ = run_cli(
            ["resolve", f"git+https://{UPSTREAM_HOST}/acme/tool@main", "--config", cfg], capsys
        )
        assert code == 0
        assert out.split()[0] == head
        code, out, _ = run_cli(
            ["resolve", f"git+https://{UPSTREAM_HOST}/acme/tool", "--config", cfg, "--json"],
            capsys,
        )
        payload = json.loads(out)
        assert payload["commit_id"] == head
        assert payload["canonical_url"] == f"https://{UPSTREAM_HOST}/acme/tool"
    finally:
        upstream.stop()


def test_resolve_bad_selector_exits_1(capsys):
    code, _, err = run_cli(["resolve", "ftp://nope/x"], capsys)
    assert code == 1 and "error" in err


def test_missing_config_exits_2(capsys):
    code, _, err = run_cli(["events", "--config", "/nonexistent.toml"], capsys)
    assert code == 2


def test_verify_ledger_ok_and_tampered(tmp_path, capsys):
    from gitgate.identity import ImmutableIdentity
    from gitgate.ledger import EventLedger
    from gitgate.policy import ProvenanceResult, Verdict

    path = str(tmp_path / "ledger.jsonl")
    ledger = EventLedger(path)
    for _ in range(3):
        ledger.append(
            selector="git+https://h/x/y",
            identity=ImmutableIdentity("https://h/x/y", "a" * 40),
            provenance=ProvenanceResult.UNVERIFIED,
            verdict=Verdict.FETCH_ONLY,
            evidence_pointer="operator://verdict",
            context="code_intake/protected_host",
            operator="op",
        )
    code, out, _ = run_cli(["verify-ledger", "--path", path], capsys)
    assert code == 0 and out.startswith("ok (3 events)")

    data = bytearray(open(path, "rb").read())
    data[len(data) // 2] ^= 0x01
    open(path, "wb").write(bytes(data))
    code, out, _ = run_cli(["verify-ledger", "--path", path, "--json"], capsys)
    assert code == 1
    payload = json.loads(out)
    assert payload["ok"] is False and payload["bad_index"] is not None


def test_events_and_cache_ls_empty_state(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, out, _ = run_cli(["events", "--config", cfg, "--json"], capsys)
    assert code == 0 and json.loads(out) == {"events": []}
    code, out, _ = run_cli(["cache-ls", "--config", cfg], capsys)
    assert code == 0 and "cache is empty" in out


def test_bench_cli_guard_exit_code(tmp_path, capsys):
    workdir = str(tmp_path / "work")
    out_dir = str(tmp_path / "out")
    # first run seeds the harness repos inside workdir
    code, out, _ = run_cli(
        [
            "bench",
            "--repos",
            f"git+https://{UPSTREAM_HOST}/acme/solo",
            "--samples",
            "2",
            "--inject-ms",
            "5",
            "--workdir",
            workdir,
            "--out",
            out_dir,
        ],
        capsys,
    )
    assert code == 0, out
    assert os.path.exists(os.path.join(out_dir, "latest.json"))
    assert "snapshot" in out

    # move the fixture upstream's branch; rerun must refuse with exit 3
    advance_branch(os.path.join(workdir, "upstreams", "acme__solo"), "main")
    snapshots_before = sorted(os.listdir(os.path.join(out_dir, "snapshots")))
    code, _, err = run_cli(
        [
            "bench",
            "--repos",
            f"git+https://{UPSTREAM_HOST}/acme/solo",
            "--samples",
            "2",
            "--inject-ms",
            "5",
            "--workdir",
            workdir,
            "--out",
            out_dir,
        ],
        capsys,
    )
    assert code == 3
    assert "report refused" in err
    assert sorted(os.listdir(os.path.join(out_dir, "snapshots"))) == snapshots_before


def test_bench_cli_json_output(tmp_path, capsys):
    code, out, _ = run_cli(
        [
            "bench",
            "--repos",
            f"git+https://{UPSTREAM_HOST}/acme/j1",
            f"git+https://{UPSTREAM_HOST}/acme/j2",
            "--samples",
            "2",
            "--inject-ms",
            "5",
            "--out",
            str(tmp_path / "out"),
            "--json",
        ],
        capsys,
    )
    assert code == 0
    report = json.loads(out)
    assert report["schema"] == 1
    assert len(report["cells"]) == 6


def test_admin_cli_against_running_gateway(gateway_env, tmp_path, capsys):
    env = gateway_env
    status, _, body = env.fetch_info_refs("acme/tool")
    ticket_id = json.loads(body)["ticket_id"]
    api = env.gateway.admin_base_url
    code, out, _ = run_cli(
        ["pending", "--api", api, "--token", "test-token", "--json"], capsys
    )
    assert code == 0
    assert json.loads(out)["tickets"][0]["ticket_id"] == ticket_id

    code, out, _ = run_cli(
        [
            "approve",
            ticket_id,
            "--verdict",
            "RUN_DEV",
            "--expiry",
            "30d",
            "--api",
            api,
            "--token",
            "test-token",
        ],
        capsys,
    )
    assert code == 0 and "RUN_DEV" in out
    assert env.fetch_info_refs("acme/tool")[0] == 200

    head = env.heads["acme/tool"]
    code, out, _ = run_cli(
        [
            "revoke",
            "--url",
            f"https://{UPSTREAM_HOST}/acme/tool",
            "--commit",
            head,
            "--reason",
            "cve-123",
            "--api",
            api,
            "--token",
            "test-token",
        ],
        capsys,
    )
    assert code == 0
    assert env.fetch_info_refs("acme/tool")[0] == 403

    code, out, _ = run_cli(
        [
            "break-glass",
            "--url",
            f"https://{UPSTREAM_HOST}/acme/tool",
            "--commit",
            head,
            "--ttl",
            "30m",
            "--justification",
            "incident 7",
            "--api",
            api,
            "--token",
            "test-token",
        ],
        capsys,
    )
    assert code == 0 and "expires" in out
    assert env.fetch_info_refs("acme/tool")[0] == 200


def test_approve_unknown_verdict_rejected_client_side(capsys):
    code, _, err = run_cli(
        ["approve", "TICKET", "--verdict", "NONSENSE", "--api", "http://127.0.0.1:1",
         "--token", "x"],
        capsys,
    )
    assert code == 1 and "unknown verdict" in err


def test_serve_subcommand_starts_and_stops(tmp_path):
    cfg = write_config(tmp_path)
    proc = subprocess.Popen(
        [sys.executable, "-u", "-m", "gitgate.cli", "serve", "--config", cfg],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    try:
        line = proc.stdout.readline()
        assert "client API" in line
    finally:
        proc.terminate()
        proc.wait(timeout=10)
