"""HTTP front: the git-facing listener and the JSON admin listener.

Both are plain threaded stdlib servers sharing one AdmissionService; the
client path stays lean because its latency is part of the product story.
"""

from __future__ import annotations

import gzip
import json
import re
import threading
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Dict, Optional, Tuple

from . import identity as ident
from . import ledger as ledger_mod
from . import policy
from .service import (
    AdmissionService,
    HoldNotApplicableError,
    MissingJustificationError,
    NothingToRevokeError,
    SeedError,
    ServeOutcome,
    TicketAlreadyDecidedError,
    TicketNotFoundError,
    TtlTooLongError,
)

_INFO_REFS_RE = re.compile(r"\A/git/(?P<host>[^/]+)/(?P<path>.+)/info/refs\Z")
_UPLOAD_PACK_RE = re.compile(r"\A/git/(?P<host>[^/]+)/(?P<path>.+)/git-upload-pack\Z")

_CORS_HEADERS = {
    "Access-Control-Allow-Origin": "*",
    "Access-Control-Allow-Methods": "GET, POST, OPTIONS",
    "Access-Control-Allow-Headers": "Authorization, Content-Type",
}


class _BaseHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args) -> None:
        pass

    def _respond(self, outcome: ServeOutcome) -> None:
        self.send_response(outcome.status)
        self.send_header("Content-Type", outcome.content_type)
        self.send_header("Content-Length", str(len(outcome.body)))
        self.send_header("Cache-Control", "no-cache")
        for name, value in outcome.headers.items():
            self.send_header(name, value)
        self.end_headers()
        self.wfile.write(outcome.body)

    def _respond_json(self, status: int, payload: dict, **headers: str) -> None:
        self._respond(ServeOutcome.json_outcome(status, payload, **headers))

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0") or "0")
        body = self.rfile.read(length) if length else b""
        if self.headers.get("Content-Encoding", "").lower() == "gzip":
            body = gzip.decompress(body)
        return body


class _ClientHandler(_BaseHandler):
    server: "ClientServer"

    def do_GET(self) -> None:
        try:
            self._handle_get()
        except Exception as exc:  # never reset a git client's connection
            self._respond_json(500, {"reason": "internal_error", "detail": str(exc)})

    def do_POST(self) -> None:
        try:
            self._handle_post()
        except Exception as exc:
            self._respond_json(500, {"reason": "internal_error", "detail": str(exc)})

    def _handle_get(self) -> None:
        parsed = urllib.parse.urlsplit(self.path)
        match = _INFO_REFS_RE.match(urllib.parse.unquote(parsed.path))
        if not match:
            self._respond_json(404, {"reason": "not_found", "detail": "unknown path"})
            return
        query = urllib.parse.parse_qs(parsed.query)
        service = query.get("service", [None])[0]
        try:
            wait_seconds = float(query.get("wait", ["0"])[0])
        except ValueError:
            wait_seconds = 0.0
        outcome = self.server.service.serve_info_refs(
            match["host"], match["path"], service, wait_seconds=wait_seconds
        )
        self._respond(outcome)

    def _handle_post(self) -> None:
        parsed = urllib.parse.urlsplit(self.path)
        match = _UPLOAD_PACK_RE.match(urllib.parse.unquote(parsed.path))
        if not match:
            self._respond_json(404, {"reason": "not_found", "detail": "unknown path"})
            return
        body = self._read_body()
        outcome = self.server.service.serve_upload_pack(match["host"], match["path"], body)
        self._respond(outcome)


class _AdminHandler(_BaseHandler):
    server: "AdminServer"

    def _respond_json(self, status: int, payload: dict, **headers: str) -> None:
        headers = {**_CORS_HEADERS, **headers}
        super()._respond_json(status, payload, **headers)

    def do_OPTIONS(self) -> None:
        self.send_response(204)
        for name, value in _CORS_HEADERS.items():
            self.send_header(name, value)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def _operator(self) -> Optional[str]:
        auth = self.headers.get("Authorization", "")
        if not auth.startswith("Bearer "):
            return None
        return self.server.token_map.get(auth[len("Bearer ") :])

    def _json_body(self) -> dict:
        body = self._read_body()
        if not body:
            return {}
        return json.loads(body)

    def do_GET(self) -> None:
        try:
            self._handle_get()
        except Exception as exc:
            self._respond_json(500, {"error": "internal_error", "detail": str(exc)})

    def _handle_get(self) -> None:
        operator = self._operator()
        if operator is None:
            self._respond_json(401, {"error": "unauthorized", "detail": "bearer token required"})
            return
        parsed = urllib.parse.urlsplit(self.path)
        query = urllib.parse.parse_qs(parsed.query)
        service = self.server.service
        if parsed.path == "/api/v1/pending":
            tickets = [t.to_dict() for t in service.pending_tickets()]
            self._respond_json(200, {"tickets": tickets})
        elif parsed.path == "/api/v1/events":
            try:
                events = self._query_events(query)
            except ValueError as exc:
                self._respond_json(400, {"error": "bad_filter", "detail": str(exc)})
                return
            self._respond_json(200, {"events": [e.to_record() for e in events]})
        elif parsed.path == "/api/v1/mirrors":
            self._respond_json(200, {"mirrors": service.mirrors_report()})
        else:
            self._respond_json(404, {"error": "not_found", "detail": "unknown admin path"})

    def _query_events(self, query: Dict[str, list]):
        def single(name: str) -> Optional[str]:
            values = query.get(name)
            return values[0] if values else None

        view = self.server.service.ledger.view()
        verdict = single("verdict")
        identity = None
        url, commit = single("url"), single("commit")
        if url and commit:
            identity = ident.ImmutableIdentity(url, commit)
        since, until = single("since"), single("until")
        events = ledger_mod.query(
            view.events,
            identity=identity,
            verdict=policy.Verdict(verdict) if verdict else None,
            context=single("context"),
            since=ledger_mod.parse_timestamp(since) if since else None,
            until=ledger_mod.parse_timestamp(until) if until else None,
        )
        if url and not commit:
            events = [e for e in events if e.resolved_identity.canonical_url == url]
        return events

    def do_POST(self) -> None:
        try:
            self._handle_post()
        except Exception as exc:
            self._respond_json(500, {"error": "internal_error", "detail": str(exc)})

    def _handle_post(self) -> None:
        operator = self._operator()
        if operator is None:
            self._respond_json(401, {"error": "unauthorized", "detail": "bearer token required"})
            return
        parsed = urllib.parse.urlsplit(self.path)
        try:
            body = self._json_body()
        except ValueError:
            self._respond_json(400, {"error": "bad_request", "detail": "body is not JSON"})
            return
        try:
            self._dispatch_post(parsed.path, body, operator)
        except TicketNotFoundError as exc:
            self._respond_json(404, {"error": "ticket_not_found", "detail": str(exc)})
        except TicketAlreadyDecidedError as exc:
            self._respond_json(
                409,
                {"error": "ticket_already_decided", "detail": str(exc), "event_id": exc.decided_by},
            )
        except NothingToRevokeError as exc:
            self._respond_json(404, {"error": "nothing_to_revoke", "detail": str(exc)})
        except (TtlTooLongError, MissingJustificationError) as exc:
            self._respond_json(400, {"error": "invalid_request", "detail": str(exc)})
        except SeedError as exc:
            self._respond_json(502, {"error": "seed_failed", "detail": str(exc)})
        except HoldNotApplicableError as exc:
            self._respond_json(409, {"error": "hold_not_applicable", "detail": str(exc)})
        except (KeyError, TypeError, ValueError) as exc:
            self._respond_json(400, {"error": "bad_request", "detail": str(exc)})

    def _dispatch_post(self, path: str, body: dict, operator: str) -> None:
        service = self.server.service
        verdict_match = re.match(r"\A/api/v1/tickets/([A-Za-z0-9]+)/verdict\Z", path)
        if verdict_match:
            verdict = policy.Verdict(body["verdict"])
            expiry = body.get("expiry")
            event = service.record_verdict(
                verdict_match.group(1),
                verdict,
                operator,
                expiry=ledger_mod.parse_timestamp(expiry) if expiry else None,
                evidence_pointer=body.get("evidence_pointer"),
                justification=body.get("justification"),
            )
            self._respond_json(200, {"event": event.to_record()})
        elif path == "/api/v1/identities/revoke":
            identity = ident.ImmutableIdentity(body["canonical_url"], body["commit_id"])
            event = service.revoke(identity, operator, body.get("reason", "unspecified"))
            self._respond_json(200, {"event": event.to_record()})
        elif path == "/api/v1/identities/break-glass":
            identity = ident.ImmutableIdentity(body["canonical_url"], body["commit_id"])
            event = service.break_glass(
                identity, operator, float(body["ttl_seconds"]), body.get("justification", "")
            )
            self._respond_json(200, {"event": event.to_record()})
        else:
            self._respond_json(404, {"error": "not_found", "detail": "unknown admin path"})


class ClientServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: Tuple[str, int], service: AdmissionService) -> None:
        super().__init__(address, _ClientHandler)
        self.service = service


class AdminServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(
        self, address: Tuple[str, int], service: AdmissionService, token_map: Dict[str, str]
    ) -> None:
        super().__init__(address, _AdminHandler)
        self.service = service
        self.token_map = token_map  # token -> operator name


class GatewayServer:
    """Runs the client and admin listeners on daemon threads."""

    def __init__(
        self,
        service: AdmissionService,
        admin_tokens: Dict[str, str],  # operator -> token
        listen: Tuple[str, int] = ("127.0.0.1", 0),
        admin_listen: Tuple[str, int] = ("127.0.0.1", 0),
    ) -> None:
        token_map = {token: operator for operator, token in admin_tokens.items()}
        self.service = service
        self.client_server = ClientServer(listen, service)
        self.admin_server = AdminServer(admin_listen, service, token_map)
        self._threads: list = []

    @property
    def client_port(self) -> int:
        return self.client_server.server_address[1]

    @property
    def admin_port(self) -> int:
        return self.admin_server.server_address[1]

    @property
    def client_base_url(self) -> str:
        host = self.client_server.server_address[0]
        return f"http://{host}:{self.client_port}"

    @property
    def admin_base_url(self) -> str:
        host = self.admin_server.server_address[0]
        return f"http://{host}:{self.admin_port}"

    def start(self) -> "GatewayServer":
        for server in (self.client_server, self.admin_server):
            thread = threading.Thread(target=server.serve_forever, daemon=True)
            thread.start()
            self._threads.append(thread)
        return self

    def stop(self) -> None:
        for server in (self.client_server, self.admin_server):
            server.shutdown()
            server.server_close()
        for thread in self._threads:
            thread.join(timeout=5)
