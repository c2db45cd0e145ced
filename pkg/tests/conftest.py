import http.client
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Dict, Optional

import pytest

from gitgate.cache import MirrorStore
from gitgate.httpd import GatewayServer
from gitgate.ledger import EventLedger
from gitgate.service import AdmissionService
from gitgate.upstream import LocalUpstream, UpstreamClient, create_bare_repo

UPSTREAM_HOST = "upstream.test"
ADMIN_TOKEN = "test-token"
OPERATOR = "alice"


class TestClock:
    """Real UTC clock plus a controllable offset for expiry scenarios."""

    def __init__(self) -> None:
        self.offset = timedelta(0)

    def __call__(self) -> datetime:
        return datetime.now(timezone.utc) + self.offset

    def advance(self, seconds: float) -> None:
        self.offset += timedelta(seconds=seconds)


@dataclass
class GatewayEnv:
    upstream: LocalUpstream
    service: AdmissionService
    gateway: GatewayServer
    ledger: EventLedger
    store: MirrorStore
    clock: TestClock
    repos: Dict[str, str] = field(default_factory=dict)  # repo path -> bare dir
    heads: Dict[str, str] = field(default_factory=dict)  # repo path -> head oid

    def repo_url(self, repo_path: str) -> str:
        return f"{self.gateway.client_base_url}/git/{UPSTREAM_HOST}/{repo_path}"

    def http_get(self, path: str) -> tuple:
        conn = http.client.HTTPConnection("127.0.0.1", self.gateway.client_port, timeout=30)
        try:
            conn.request("GET", path)
            resp = conn.getresponse()
            body = resp.read()
            return resp.status, dict(resp.getheaders()), body
        finally:
            conn.close()

    def fetch_info_refs(self, repo_path: str, extra_query: str = "") -> tuple:
        return self.http_get(
            f"/git/{UPSTREAM_HOST}/{repo_path}/info/refs?service=git-upload-pack{extra_query}"
        )

    def http_post(self, path: str, body: bytes, content_type: str) -> tuple:
        conn = http.client.HTTPConnection("127.0.0.1", self.gateway.client_port, timeout=30)
        try:
            conn.request("POST", path, body=body, headers={"Content-Type": content_type})
            resp = conn.getresponse()
            data = resp.read()
            return resp.status, dict(resp.getheaders()), data
        finally:
            conn.close()

    def admin(self, method: str, path: str, payload: Optional[dict] = None, token: str = ADMIN_TOKEN) -> tuple:
        conn = http.client.HTTPConnection("127.0.0.1", self.gateway.admin_port, timeout=30)
        headers = {}
        if token is not None:
            headers["Authorization"] = f"Bearer {token}"
        body = None
        if payload is not None:
            body = json.dumps(payload).encode()
            headers["Content-Type"] = "application/json"
        try:
            conn.request(method, path, body=body, headers=headers)
            resp = conn.getresponse()
            data = resp.read()
            return resp.status, json.loads(data) if data else {}
        finally:
            conn.close()

    def hold_and_approve(self, repo_path: str, verdict: str = "RUN_DEV", expiry: str = None) -> dict:
        """Standard admission flow: first fetch creates the hold, admin approves."""
        status, _, body = self.fetch_info_refs(repo_path)
        assert status == 403, body
        ticket_id = json.loads(body)["ticket_id"]
        payload = {"verdict": verdict}
        if expiry:
            payload["expiry"] = expiry
        status, reply = self.admin("POST", f"/api/v1/tickets/{ticket_id}/verdict", payload)
        assert status == 200, reply
        return reply["event"]


@pytest.fixture
def gateway_env(tmp_path):
    repos, heads = {}, {}
    for repo_path, files in {
        "acme/tool": {"tool.py": "print('tool')\n", "README.md": "acme tool\n"},
        "acme/lib": {"lib.py": "VALUE = 3\n"},
    }.items():
        directory = str(tmp_path / repo_path.replace("/", "__"))
        heads[repo_path] = create_bare_repo(directory, branch="main", files=files)
        repos[repo_path] = directory

    upstream = LocalUpstream(repos).start()
    clock = TestClock()
    ledger = EventLedger(str(tmp_path / "ledger.jsonl"), clock=clock)
    store = MirrorStore(str(tmp_path / "cache"))
    client = UpstreamClient({UPSTREAM_HOST: upstream.base_url}, timeout=10.0)
    service = AdmissionService(
        ledger,
        store,
        client,
        clock=clock,
        break_glass_max_ttl_seconds=3600,
        hold_wait_max_seconds=10.0,
    )
    gateway = GatewayServer(service, {OPERATOR: ADMIN_TOKEN}).start()
    env = GatewayEnv(
        upstream=upstream,
        service=service,
        gateway=gateway,
        ledger=ledger,
        store=store,
        clock=clock,
        repos=repos,
        heads=heads,
    )
    yield env
    gateway.stop()
    upstream.stop()
