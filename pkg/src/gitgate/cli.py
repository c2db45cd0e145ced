"""Operator and developer command line.

Read commands (`events`, `verify-ledger`, `cache-ls`, `resolve`) open the
configured state directly; mutating commands (`approve`, `deny`, `revoke`,
`break-glass`) and `pending` talk to a running gateway's admin API so the
ledger keeps a single writer.
"""

from __future__ import annotations

import argparse
import http.client
import json
import re
import sys
import tempfile
import threading
import urllib.parse
from datetime import timedelta
from typing import Optional

from . import __version__, bench as bench_mod
from . import identity as ident
from . import ledger as ledger_mod
from . import policy, wire
from .cache import MirrorStore
from .config import ConfigError, GatewayConfig, load_config
from .httpd import GatewayServer
from .ledger import EventLedger, verify_chain
from .service import AdmissionService
from .upstream import UpstreamClient, UpstreamError

EXIT_OK = 0
EXIT_OPERATION = 1
EXIT_CONFIG = 2
EXIT_BENCH_GUARD = 3

_DURATION_RE = re.compile(r"\A(\d+(?:\.\d+)?)([smhd])\Z")
_DURATION_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400}


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = EXIT_OPERATION) -> None:
        super().__init__(message)
        self.exit_code = exit_code


def parse_duration_seconds(text: str) -> float:
    match = _DURATION_RE.match(text.strip())
    if not match:
        raise CliError(f"cannot parse duration {text!r} (use e.g. 45s, 30m, 2h, 30d)")
    return float(match.group(1)) * _DURATION_UNITS[match.group(2)]


def _expiry_from_flag(text: Optional[str], clock) -> Optional[str]:
    if text is None:
        return None
    if _DURATION_RE.match(text.strip()):
        deadline = clock() + timedelta(seconds=parse_duration_seconds(text))
        return ledger_mod.format_timestamp(deadline)
    try:
        ledger_mod.parse_timestamp(text)
    except ValueError as exc:
        raise CliError(f"--expiry must be a duration or timestamp: {exc}") from exc
    return text


def _load_config_or_fail(path: Optional[str]) -> GatewayConfig:
    if path is None:
        raise CliError("this command needs --config", EXIT_CONFIG)
    try:
        return load_config(path)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc


class AdminClient:
    """Thin JSON client for the gateway's admin API."""

    def __init__(self, base_url: str, token: str, timeout: float = 30.0) -> None:
        parsed = urllib.parse.urlsplit(base_url)
        if parsed.scheme != "http":
            raise CliError(f"admin API base {base_url!r} must be http://host:port")
        self.netloc = parsed.netloc
        self.token = token
        self.timeout = timeout

    def call(self, method: str, path: str, payload: Optional[dict] = None) -> dict:
        conn = http.client.HTTPConnection(self.netloc, timeout=self.timeout)
        headers = {"Authorization": f"Bearer {self.token}"}
        body = None
        if payload is not None:
            body = json.dumps(payload).encode()
            headers["Content-Type"] = "application/json"
        try:
            conn.request(method, path, body=body, headers=headers)
            resp = conn.getresponse()
            data = resp.read()
        except OSError as exc:
            raise CliError(f"cannot reach admin API at {self.netloc}: {exc}") from exc
        finally:
            conn.close()
        reply = json.loads(data) if data else {}
        if resp.status >= 400:
            detail = reply.get("detail") or reply.get("error") or f"HTTP {resp.status}"
            raise CliError(f"admin API refused: {detail}")
        return reply


def _admin_client(args) -> AdminClient:
    if args.api and args.token:
        return AdminClient(args.api, args.token)
    cfg = _load_config_or_fail(args.config)
    token = args.token or cfg.first_token()
    if token is None:
        raise CliError("no admin token configured; pass --token", EXIT_CONFIG)
    base = args.api or f"http://{cfg.admin_listen}"
    return AdminClient(base, token)


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# -- subcommand implementations ---------------------------------------------------


def cmd_serve(args) -> int:
    cfg = _load_config_or_fail(args.config)
    ledger = EventLedger(cfg.ledger_path)
    store = MirrorStore(cfg.cache_root, hot_budget_bytes=cfg.hot_tier_budget_bytes)
    client = UpstreamClient(cfg.upstream_overrides, timeout=cfg.upstream_timeout_seconds)
    service = AdmissionService(
        ledger,
        store,
        client,
        break_glass_max_ttl_seconds=cfg.break_glass_max_ttl_seconds,
        hold_wait_max_seconds=cfg.hold_wait_max_seconds,
    )
    client_host, _, client_port = cfg.listen.rpartition(":")
    admin_host, _, admin_port = cfg.admin_listen.rpartition(":")
    gateway = GatewayServer(
        service,
        cfg.admin_tokens,
        listen=(client_host, int(client_port)),
        admin_listen=(admin_host, int(admin_port)),
    )
    gateway.start()
    print(f"client API  : {gateway.client_base_url}/git/<host>/<path>")
    print(f"admin API   : {gateway.admin_base_url}/api/v1")
    print(f"ledger      : {cfg.ledger_path}")
    print(f"cache root  : {cfg.cache_root}")
    if not cfg.admin_tokens:
        print("warning: no admin tokens configured; the admin API will refuse everything")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        gateway.stop()
    return EXIT_OK


def cmd_resolve(args) -> int:
    try:
        sel = ident.parse_selector(args.selector)
    except ident.SelectorError as exc:
        raise CliError(str(exc))
    overrides = {}
    if args.config:
        overrides = _load_config_or_fail(args.config).upstream_overrides
    client = UpstreamClient(overrides)
    try:
        advert = client.fetch_advertisement(sel.host, sel.repo_path)
        identity = ident.resolve(sel, wire.parse_advertisement_bytes(advert))
    except (UpstreamError, wire.WireError, ident.RefNotFoundError) as exc:
        raise CliError(str(exc))
    if args.json:
        _print_json(
            {
                "selector": ident.selector_text(sel),
                "canonical_url": identity.canonical_url,
                "commit_id": identity.commit_id,
            }
        )
    else:
        print(f"{identity.commit_id}  {identity.canonical_url}")
    return EXIT_OK


def cmd_pending(args) -> int:
    reply = _admin_client(args).call("GET", "/api/v1/pending")
    if args.json:
        _print_json(reply)
        return EXIT_OK
    tickets = reply.get("tickets", [])
    if not tickets:
        print("no pending tickets")
        return EXIT_OK
    for t in tickets:
        identity = t["resolved_identity"]
        print(
            f"{t['ticket_id']}  {t['selector']}  ->  {identity['commit_id'][:12]}  "
            f"(created {t['created_at']})"
        )
    return EXIT_OK


def _verdict_payload(args, verdict: str) -> dict:
    payload: dict = {"verdict": verdict}
    expiry = _expiry_from_flag(getattr(args, "expiry", None), ledger_mod.utc_now)
    if expiry:
        payload["expiry"] = expiry
    if getattr(args, "evidence", None):
        payload["evidence_pointer"] = args.evidence
    if getattr(args, "justification", None):
        payload["justification"] = args.justification
    return payload


def cmd_approve(args) -> int:
    try:
        policy.Verdict(args.verdict)
    except ValueError:
        valid = ", ".join(v.value for v in policy.Verdict)
        raise CliError(f"unknown verdict {args.verdict!r} (choose from {valid})")
    reply = _admin_client(args).call(
        "POST", f"/api/v1/tickets/{args.ticket}/verdict", _verdict_payload(args, args.verdict)
    )
    event = reply["event"]
    print(f"recorded {event['verdict']} as event {event['event_id']}")
    return EXIT_OK


def cmd_deny(args) -> int:
    reply = _admin_client(args).call(
        "POST", f"/api/v1/tickets/{args.ticket}/verdict", _verdict_payload(args, "BLOCKED")
    )
    event = reply["event"]
    print(f"recorded BLOCKED as event {event['event_id']}")
    return EXIT_OK


def cmd_revoke(args) -> int:
    reply = _admin_client(args).call(
        "POST",
        "/api/v1/identities/revoke",
        {"canonical_url": args.url, "commit_id": args.commit, "reason": args.reason},
    )
    event = reply["event"]
    print(f"revoked by event {event['event_id']}")
    return EXIT_OK


def cmd_break_glass(args) -> int:
    reply = _admin_client(args).call(
        "POST",
        "/api/v1/identities/break-glass",
        {
            "canonical_url": args.url,
            "commit_id": args.commit,
            "ttl_seconds": parse_duration_seconds(args.ttl),
            "justification": args.justification,
        },
    )
    event = reply["event"]
    print(f"break-glass grant {event['event_id']} expires {event['expiry']}")
    return EXIT_OK


def cmd_events(args) -> int:
    cfg = _load_config_or_fail(args.config)
    try:
        ledger = EventLedger(cfg.ledger_path)
    except ledger_mod.LedgerIntegrityError as exc:
        raise CliError(f"ledger failed integrity checks: {exc}")
    verdict = None
    if args.verdict:
        try:
            verdict = policy.Verdict(args.verdict)
        except ValueError:
            raise CliError(f"unknown verdict {args.verdict!r}")
    identity = None
    if args.url and args.commit:
        identity = ident.ImmutableIdentity(args.url, args.commit)
    events = ledger_mod.query(
        ledger.view().events,
        identity=identity,
        verdict=verdict,
        context=args.context,
        since=ledger_mod.parse_timestamp(args.since) if args.since else None,
        until=ledger_mod.parse_timestamp(args.until) if args.until else None,
    )
    if args.url and not args.commit:
        events = [e for e in events if e.resolved_identity.canonical_url == args.url]
    if args.json:
        _print_json({"events": [e.to_record() for e in events]})
    else:
        for event in events:
            print(event.canonical_line())
    return EXIT_OK


def cmd_verify_ledger(args) -> int:
    path = args.path
    if path is None:
        path = _load_config_or_fail(args.config).ledger_path
    try:
        result = verify_chain(path)
    except Exception as exc:  # missing file, unreadable, ...
        raise CliError(str(exc))
    if args.json:
        _print_json(
            {
                "ok": result.ok,
                "bad_index": result.bad_index,
                "detail": result.detail,
                "events_checked": result.events_checked,
            }
        )
    elif result.ok:
        print(f"ok ({result.events_checked} events)")
    else:
        print(f"bad at index {result.bad_index}: {result.detail}")
    return EXIT_OK if result.ok else EXIT_OPERATION


def cmd_cache_ls(args) -> int:
    cfg = _load_config_or_fail(args.config)
    store = MirrorStore(cfg.cache_root, hot_budget_bytes=cfg.hot_tier_budget_bytes)
    entries = store.list_entries()
    if args.json:
        _print_json({"entries": entries})
        return EXIT_OK
    if not entries:
        print("cache is empty")
        return EXIT_OK
    for e in entries:
        print(
            f"{e['tier']:<4} {e['kind']:<13} {e['size']:>9}  {e['commit_id'][:12]}  "
            f"{e['canonical_url']}  {e['digest'][:12]}"
        )
    return EXIT_OK


def cmd_bench(args) -> int:
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    try:
        config = bench_mod.BenchConfig(
            repos=tuple(args.repos) if args.repos else bench_mod.DEFAULT_REPOS,
            modes=modes,
            samples_per_cell=args.samples,
            upstream_delay_ms=None if args.live else args.inject_ms,
        )
    except ValueError as exc:
        raise CliError(str(exc))

    workdir_ctx = None
    workdir = args.workdir
    if workdir is None:
        workdir_ctx = tempfile.TemporaryDirectory(prefix="gitgate-bench-")
        workdir = workdir_ctx.name
    try:
        with bench_mod.DeskBench(workdir, config, live=args.live) as desk:
            try:
                report, paths = desk.run(args.out)
            except bench_mod.ValidationFailedError as exc:
                raise CliError(f"report refused: {exc}", EXIT_BENCH_GUARD)
    finally:
        if workdir_ctx is not None:
            workdir_ctx.cleanup()

    if args.json:
        _print_json(report)
        return EXIT_OK
    print(f"wrote {paths.latest_json}")
    print(f"wrote {paths.latest_md}")
    print(f"wrote {paths.latest_csv}")
    print(f"wrote {paths.latest_png}")
    print(f"snapshot {paths.snapshot}")
    cells = {(row["repo"], row["mode"]): row for row in report["cells"]}
    repos = report["config"]["repos_measured"]
    for repo in repos:
        parts = []
        for mode in report["config"]["modes"]:
            cell = cells.get((repo, mode))
            if cell:
                parts.append(f"{mode}={cell['median_ms']:.2f}ms")
        print(f"{repo}: " + "  ".join(parts))
    baseline = report["reference_baseline"]
    print(
        f"reference baseline ({baseline['label']}): "
        f"web {baseline['web'][0]}-{baseline['web'][1]}, "
        f"cache {baseline['cache'][0]}-{baseline['cache'][1]}, "
        f"hot-cache {baseline['hot_cache'][0]}-{baseline['hot_cache'][1]}"
    )
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _add_admin_opts(parser) -> None:
    parser.add_argument("--config", help="gateway config file (TOML)")
    parser.add_argument("--api", help="admin API base URL, e.g. http://127.0.0.1:8471")
    parser.add_argument("--token", help="admin bearer token")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gitgate",
        description="Admission-controlled Git smart-HTTP intake gateway",
    )
    parser.add_argument("--version", action="version", version=f"gitgate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the gateway until interrupted")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("resolve", help="resolve a selector to its immutable identity")
    p.add_argument("selector")
    p.add_argument("--config", help="config file (for upstream overrides)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("pending", help="list pending admission tickets")
    _add_admin_opts(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_pending)

    p = sub.add_parser("approve", help="record a verdict for a pending ticket")
    p.add_argument("ticket")
    p.add_argument("--verdict", required=True, help="FETCH_ONLY, UNPACK_ONLY, ... RUN_CI")
    p.add_argument("--expiry", help="duration (30d) or timestamp")
    p.add_argument("--evidence", help="evidence pointer URI")
    p.add_argument("--justification")
    _add_admin_opts(p)
    p.set_defaults(func=cmd_approve)

    p = sub.add_parser("deny", help="record a BLOCKED verdict for a pending ticket")
    p.add_argument("ticket")
    p.add_argument("--evidence", help="evidence pointer URI")
    p.add_argument("--justification")
    _add_admin_opts(p)
    p.set_defaults(func=cmd_deny)

    p = sub.add_parser("revoke", help="revoke the governing grant of an identity")
    p.add_argument("--url", required=True, help="canonical repository URL")
    p.add_argument("--commit", required=True, help="40-hex commit id")
    p.add_argument("--reason", required=True)
    _add_admin_opts(p)
    p.set_defaults(func=cmd_revoke)

    p = sub.add_parser("break-glass", help="time-boxed emergency RUN_DEV grant")
    p.add_argument("--url", required=True)
    p.add_argument("--commit", required=True)
    p.add_argument("--ttl", required=True, help="duration, e.g. 30m")
    p.add_argument("--justification", required=True)
    _add_admin_opts(p)
    p.set_defaults(func=cmd_break_glass)

    p = sub.add_parser("events", help="query the policy-event ledger")
    p.add_argument("--config", required=False)
    p.add_argument("--verdict")
    p.add_argument("--context", help="substring match")
    p.add_argument("--url")
    p.add_argument("--commit")
    p.add_argument("--since")
    p.add_argument("--until")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_events)

    p = sub.add_parser("verify-ledger", help="stream the ledger and check its hash chain")
    p.add_argument("--config")
    p.add_argument("--path", help="ledger file (overrides config)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify_ledger)

    p = sub.add_parser("cache-ls", help="list mirror cache entries")
    p.add_argument("--config", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cache_ls)

    p = sub.add_parser("bench", help="measure web / cache / hot-cache intake latency")
    p.add_argument("--repos", nargs="*", help="selectors (default: five bundled fixtures)")
    p.add_argument("--modes", default="web,cache,hot-cache")
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--inject-ms", type=float, default=100.0, help="fake-upstream delay")
    p.add_argument("--live", action="store_true", help="measure real upstreams over the network")
    p.add_argument("--out", default="docs/benchmarks")
    p.add_argument("--workdir", help="keep harness state here instead of a temp dir")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return EXIT_OPERATION


if __name__ == "__main__":
    sys.exit(main())
