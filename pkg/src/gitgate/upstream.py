"""Upstream contact: the read-only smart-HTTP client the gateway uses to
resolve and seed, plus a local upstream server for desk-scale work.

The local upstream serves real bare repositories through `git upload-pack
--stateless-rpc` and supports injecting a fixed response delay, which is
what makes latency ordering measurable without touching public networks.
"""

from __future__ import annotations

import http.client
import os
import subprocess
import threading
import time
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Dict, Optional, Tuple

from . import wire


class UpstreamError(Exception):
    """Upstream could not be contacted or replied with something unusable."""


_FIXED_GIT_ENV = {
    "GIT_AUTHOR_NAME": "gitgate-fixture",
    "GIT_AUTHOR_EMAIL": "fixture@localhost",
    "GIT_COMMITTER_NAME": "gitgate-fixture",
    "GIT_COMMITTER_EMAIL": "fixture@localhost",
    "GIT_AUTHOR_DATE": "2024-01-01T00:00:00 +0000",
    "GIT_COMMITTER_DATE": "2024-01-01T00:00:00 +0000",
}


def git_env() -> dict:
    env = dict(os.environ)
    env.update(_FIXED_GIT_ENV)
    return env


def _git(repo: str, *args: str, data: bytes = b"") -> bytes:
    proc = subprocess.run(
        ["git", "-C", repo, *args],
        input=data,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        env=git_env(),
    )
    if proc.returncode != 0:
        raise RuntimeError(f"git {' '.join(args)} failed: {proc.stderr.decode(errors='replace')}")
    return proc.stdout


def create_bare_repo(path: str, branch: str = "main", files: Optional[Dict[str, str]] = None) -> str:
    """Create a bare repository with one commit on `branch`; returns its oid."""
    files = files or {"README.md": "fixture repository\n"}
    subprocess.run(
        ["git", "init", "--bare", "-b", branch, path],
        check=True,
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    tree_lines = []
    for name, content in sorted(files.items()):
        blob = _git(path, "hash-object", "-w", "--stdin", data=content.encode()).decode().strip()
        tree_lines.append(f"100644 blob {blob}\t{name}")
    tree = _git(path, "mktree", data="\n".join(tree_lines).encode() + b"\n").decode().strip()
    commit = _git(path, "commit-tree", tree, "-m", "initial commit").decode().strip()
    _git(path, "update-ref", f"refs/heads/{branch}", commit)
    _git(path, "symbolic-ref", "HEAD", f"refs/heads/{branch}")
    return commit


def advance_branch(path: str, branch: str = "main", message: str = "advance") -> str:
    """Add one commit on top of `branch` (same tree); returns the new oid."""
    old = _git(path, "rev-parse", f"refs/heads/{branch}").decode().strip()
    tree = _git(path, "rev-parse", f"{old}^{{tree}}").decode().strip()
    commit = _git(path, "commit-tree", tree, "-p", old, "-m", message).decode().strip()
    _git(path, "update-ref", f"refs/heads/{branch}", commit)
    return commit


def add_tag(path: str, name: str, target: str, annotated: bool = False) -> None:
    if annotated:
        _git(path, "tag", "-a", name, "-m", f"tag {name}", target)
    else:
        _git(path, "update-ref", f"refs/tags/{name}", target)


class UpstreamClient:
    """Read-only smart-HTTP client used for resolution and seeding.

    `overrides` maps hosts to base URLs (e.g. a local upstream on
    127.0.0.1); anything else is reached at https://<host>.
    """

    def __init__(self, overrides: Optional[Dict[str, str]] = None, timeout: float = 10.0) -> None:
        self.overrides = dict(overrides or {})
        self.timeout = timeout

    def base_for(self, host: str) -> str:
        return self.overrides.get(host, f"https://{host}")

    def _open(self, base: str) -> Tuple[http.client.HTTPConnection, str]:
        parsed = urllib.parse.urlsplit(base)
        if parsed.scheme == "https":
            conn: http.client.HTTPConnection = http.client.HTTPSConnection(
                parsed.netloc, timeout=self.timeout
            )
        elif parsed.scheme == "http":
            conn = http.client.HTTPConnection(parsed.netloc, timeout=self.timeout)
        else:
            raise UpstreamError(f"unsupported upstream scheme in {base!r}")
        return conn, parsed.path.rstrip("/")

    def fetch_advertisement(self, host: str, repo_path: str) -> bytes:
        """GET the upload-pack ref advertisement; returns the raw body."""
        base = self.base_for(host)
        conn, prefix = self._open(base)
        url = f"{prefix}/{repo_path}/info/refs?service={wire.UPLOAD_PACK_SERVICE}"
        try:
            conn.request("GET", url)
            resp = conn.getresponse()
            body = resp.read()
        except OSError as exc:
            raise UpstreamError(f"cannot reach upstream {base}: {exc}") from exc
        finally:
            conn.close()
        if resp.status != 200:
            raise UpstreamError(f"upstream {base}{url} answered {resp.status}")
        return body

    def fetch_pack(self, host: str, repo_path: str, want: str) -> bytes:
        """Fetch the raw pack for a single want, with no capabilities.

        Without side-band the response is one NAK pkt-line followed by the
        bare pack stream; everything after the NAK is returned verbatim.
        """
        base = self.base_for(host)
        body = wire.render_upload_pack_request(
            wire.UploadPackRequest(wants=[want], haves=[], done=True)
        )
        conn, prefix = self._open(base)
        url = f"{prefix}/{repo_path}/git-upload-pack"
        try:
            conn.request(
                "POST",
                url,
                body=body,
                headers={"Content-Type": "application/x-git-upload-pack-request"},
            )
            resp = conn.getresponse()
            data = resp.read()
        except OSError as exc:
            raise UpstreamError(f"cannot reach upstream {base}: {exc}") from exc
        finally:
            conn.close()
        if resp.status != 200:
            raise UpstreamError(f"upstream {base}{url} answered {resp.status}")
        try:
            length = int(data[:4], 16)
        except ValueError as exc:
            raise UpstreamError("upload-pack response is not pkt-line framed") from exc
        first = data[4:length]
        if first.rstrip(b"\n") != b"NAK":
            raise UpstreamError(f"expected NAK from upstream, got {first[:20]!r}")
        pack = data[length:]
        if not pack.startswith(b"PACK"):
            raise UpstreamError("upstream reply after NAK is not a pack stream")
        return pack


class _UpstreamHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "LocalUpstream"

    def log_message(self, *args) -> None:  # keep test output quiet
        pass

    def _deny(self, status: int, message: str) -> None:
        body = message.encode()
        self.send_response(status)
        self.send_header("Content-Type", "text/plain")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _repo_dir(self, repo_path: str) -> Optional[str]:
        if repo_path.endswith(".git"):
            repo_path = repo_path[: -len(".git")]
        return self.server.repos.get(repo_path)

    def do_GET(self) -> None:
        self.server.apply_delay()
        parsed = urllib.parse.urlsplit(self.path)
        query = urllib.parse.parse_qs(parsed.query)
        if not parsed.path.endswith("/info/refs"):
            self._deny(404, "not found")
            return
        if query.get("service") != [wire.UPLOAD_PACK_SERVICE]:
            self._deny(400, "dumb protocol not supported")
            return
        repo = self._repo_dir(parsed.path[1 : -len("/info/refs")])
        if repo is None:
            self._deny(404, "unknown repository")
            return
        refs = subprocess.run(
            ["git", "upload-pack", "--stateless-rpc", "--advertise-refs", repo],
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            check=True,
        ).stdout
        announce = wire.encode_pkt_stream(
            [wire.pkt_data_line(f"# service={wire.UPLOAD_PACK_SERVICE}\n"), wire.FLUSH]
        )
        body = announce + refs
        self.send_response(200)
        self.send_header("Content-Type", wire.ADVERTISEMENT_CONTENT_TYPE)
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self) -> None:
        self.server.apply_delay()
        parsed = urllib.parse.urlsplit(self.path)
        if not parsed.path.endswith("/git-upload-pack"):
            self._deny(404, "not found")
            return
        repo = self._repo_dir(parsed.path[1 : -len("/git-upload-pack")])
        if repo is None:
            self._deny(404, "unknown repository")
            return
        length = int(self.headers.get("Content-Length", "0"))
        request_body = self.rfile.read(length)
        proc = subprocess.run(
            ["git", "upload-pack", "--stateless-rpc", repo],
            input=request_body,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
        body = proc.stdout
        self.send_response(200)
        self.send_header("Content-Type", wire.RESULT_CONTENT_TYPE)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class LocalUpstream(ThreadingHTTPServer):
    """Bundled upstream: real bare repositories behind smart HTTP, with a
    configurable response delay for deployability measurements."""

    daemon_threads = True

    def __init__(self, repos: Optional[Dict[str, str]] = None, delay_ms: float = 0.0) -> None:
        super().__init__(("127.0.0.1", 0), _UpstreamHandler)
        self.repos: Dict[str, str] = dict(repos or {})
        self.delay_ms = delay_ms
        self._thread: Optional[threading.Thread] = None

    def apply_delay(self) -> None:
        if self.delay_ms > 0:
            time.sleep(self.delay_ms / 1000.0)

    def add_repo(self, repo_path: str, directory: str) -> None:
        self.repos[repo_path] = directory

    @property
    def port(self) -> int:
        return self.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> "LocalUpstream":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
