"""Latency measurement of the intake path: per-repo, per-mode sampling,
medians, divergence-guarded report emission, and frozen snapshots.

Three modes are measured around full info/refs exchanges: direct upstream
(`web`), gateway disk-tier hit (`cache`), and gateway hot-tier hit
(`hot-cache`).  The default scheduler samples the modes of one repository
in paired rounds, back to back, so that ordering between modes reflects
structure rather than load drift; samples are strictly sequential either
way.  Reports refuse to materialize if any mirror diverged from its
pinned target during the run.
"""

from __future__ import annotations

import csv
import http.client
import io
import json
import os
import time
import urllib.parse
from dataclasses import dataclass
from datetime import datetime
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import identity as ident
from . import policy
from .cache import MirrorStore
from .httpd import GatewayServer
from .ledger import EventLedger, utc_now
from .service import TIER_HEADER, AdmissionService
from .upstream import LocalUpstream, UpstreamClient, create_bare_repo
from . import wire


class Mode:
    WEB = "web"
    CACHE = "cache"
    HOT_CACHE = "hot-cache"

    ALL = (WEB, CACHE, HOT_CACHE)


# Published live-network reference medians (ms) for side-by-side reading;
# desk-scale runs cannot reproduce these absolute numbers.
REFERENCE_BASELINE = {
    "label": "live-network reference medians (ms), five public repositories",
    "web": [433, 1062],
    "cache": [32, 44],
    "hot_cache": [13, 16],
}

DEFAULT_REPOS = (
    "git+https://upstream.test/git/git",
    "git+https://upstream.test/golang/go",
    "git+https://upstream.test/nodejs/node",
    "git+https://upstream.test/python/cpython",
    "git+https://upstream.test/hashicorp/terraform",
)


class BenchError(Exception):
    pass


class EmptyInputError(BenchError):
    pass


class MirrorNotSeededError(BenchError):
    pass


class TierViolationError(BenchError):
    pass


class ValidationFailedError(BenchError):
    pass


class SnapshotExistsError(BenchError):
    pass


@dataclass
class BenchConfig:
    repos: Sequence[str] = DEFAULT_REPOS
    modes: Sequence[str] = Mode.ALL
    samples_per_cell: int = 5
    upstream_delay_ms: Optional[float] = None

    def __post_init__(self) -> None:
        if self.samples_per_cell < 1:
            raise ValueError("samples_per_cell must be >= 1")
        for mode in self.modes:
            if mode not in Mode.ALL:
                raise ValueError(f"unknown mode {mode!r}")


@dataclass
class BenchSample:
    repo: str  # canonical repository URL
    mode: str
    latency_ms: float
    observed_tier: str  # hot | disk | upstream
    taken_at: str


def median(values: Sequence[float]) -> float:
    """Sorted middle element; even-length input averages the two middles."""
    if not values:
        raise EmptyInputError("median of an empty sample list")
    ordered = sorted(values)
    n = len(ordered)
    if n % 2 == 1:
        return ordered[n // 2]
    return (ordered[n // 2 - 1] + ordered[n // 2]) / 2.0


_MODE_TIER = {Mode.CACHE: "disk", Mode.HOT_CACHE: "hot", Mode.WEB: "upstream"}


class _Conn:
    """Persistent keep-alive connection; the timed region covers one full
    request-response exchange, never the TCP setup."""

    def __init__(self, netloc: str, timeout: float = 30.0) -> None:
        self.conn = http.client.HTTPConnection(netloc, timeout=timeout)
        self.conn.connect()

    def timed_get(self, path: str) -> Tuple[float, int, Optional[str]]:
        t0 = time.perf_counter()
        self.conn.request("GET", path)
        resp = self.conn.getresponse()
        resp.read()
        t1 = time.perf_counter()
        return ((t1 - t0) * 1000.0, resp.status, resp.getheader(TIER_HEADER))

    def close(self) -> None:
        self.conn.close()


class BenchHarness:
    """Samples a running gateway and its upstream."""

    def __init__(
        self,
        gateway: GatewayServer,
        upstream_client: UpstreamClient,
        store: MirrorStore,
        clock: Callable[[], datetime] = utc_now,
    ) -> None:
        self.gateway = gateway
        self.upstream_client = upstream_client
        self.store = store
        self.clock = clock

    # -- paths ---------------------------------------------------------------

    @staticmethod
    def _selector(repo: str) -> ident.Selector:
        return ident.parse_selector(repo)

    def _gateway_path(self, sel: ident.Selector) -> str:
        return f"/git/{sel.host}/{sel.repo_path}/info/refs?service={wire.UPLOAD_PACK_SERVICE}"

    def _upstream_netloc_and_path(self, sel: ident.Selector) -> Tuple[str, str]:
        base = self.upstream_client.base_for(sel.host)
        parsed = urllib.parse.urlsplit(base)
        path = f"{parsed.path.rstrip('/')}/{sel.repo_path}/info/refs?service={wire.UPLOAD_PACK_SERVICE}"
        return parsed.netloc, path

    def _gateway_netloc(self) -> str:
        return f"127.0.0.1:{self.gateway.client_port}"

    def _require_validated_mirror(self, sel: ident.Selector) -> None:
        state = self.store.mirror_for(ident.canonicalize(sel))
        if state is None:
            raise MirrorNotSeededError(f"no mirror seeded for {ident.canonicalize(sel)}")
        if state.last_validation.state != "ok":
            raise MirrorNotSeededError(
                f"mirror for {ident.canonicalize(sel)} is not validated "
                f"({state.last_validation.state})"
            )

    def _sample(
        self, conn: _Conn, path: str, repo_url: str, mode: str
    ) -> BenchSample:
        latency, status, tier = conn.timed_get(path)
        observed = tier if tier is not None else "upstream"
        if status != 200:
            raise TierViolationError(f"{mode} sample for {repo_url} answered {status}")
        required = _MODE_TIER[mode]
        if observed != required:
            raise TierViolationError(
                f"{mode} sample for {repo_url} observed tier {observed!r}, "
                f"required {required!r}; cell aborted"
            )
        return BenchSample(
            repo=repo_url,
            mode=mode,
            latency_ms=latency,
            observed_tier=observed,
            taken_at=self.clock().isoformat(),
        )

    # -- single cells -----------------------------------------------------------

    def run_cell(self, repo: str, mode: str, n: int) -> List[BenchSample]:
        """One (repo, mode) cell: n strictly sequential samples."""
        sel = self._selector(repo)
        repo_url = ident.canonicalize(sel)
        samples = []
        if mode == Mode.WEB:
            netloc, path = self._upstream_netloc_and_path(sel)
            conn = _Conn(netloc)
            try:
                for _ in range(n):
                    samples.append(self._sample(conn, path, repo_url, mode))
            finally:
                conn.close()
            return samples

        self._require_validated_mirror(sel)
        path = self._gateway_path(sel)
        conn = _Conn(self._gateway_netloc())
        try:
            if mode == Mode.CACHE:
                for _ in range(n):
                    self.store.clear_hot()
                    samples.append(self._sample(conn, path, repo_url, mode))
            else:
                conn.timed_get(path)  # the one warming request
                for _ in range(n):
                    samples.append(self._sample(conn, path, repo_url, mode))
        finally:
            conn.close()
        return samples

    # -- paired rounds -------------------------------------------------------------

    def run_matrix(self, config: BenchConfig) -> List[BenchSample]:
        """All configured cells; per repo, modes are sampled in paired
        rounds so every round sees the same transient system conditions."""
        samples: List[BenchSample] = []
        for repo in config.repos:
            sel = self._selector(repo)
            repo_url = ident.canonicalize(sel)
            gateway_modes = [m for m in config.modes if m != Mode.WEB]
            if gateway_modes:
                self._require_validated_mirror(sel)
            gw_conn = web_conn = None
            try:
                if gateway_modes:
                    gw_conn = _Conn(self._gateway_netloc())
                    gw_conn.timed_get(self._gateway_path(sel))  # connection + residency warm-up
                if Mode.WEB in config.modes:
                    netloc, web_path = self._upstream_netloc_and_path(sel)
                    web_conn = _Conn(netloc)
                for _ in range(config.samples_per_cell):
                    if Mode.CACHE in config.modes:
                        self.store.clear_hot()
                        samples.append(
                            self._sample(gw_conn, self._gateway_path(sel), repo_url, Mode.CACHE)
                        )
                    if Mode.HOT_CACHE in config.modes:
                        if Mode.CACHE not in config.modes:
                            gw_conn.timed_get(self._gateway_path(sel))  # warming request
                        samples.append(
                            self._sample(
                                gw_conn, self._gateway_path(sel), repo_url, Mode.HOT_CACHE
                            )
                        )
                    if Mode.WEB in config.modes:
                        samples.append(self._sample(web_conn, web_path, repo_url, Mode.WEB))
            finally:
                for conn in (gw_conn, web_conn):
                    if conn is not None:
                        conn.close()
        return samples

    # -- validation ------------------------------------------------------------------

    def validate_mirrors(self, repos: Sequence[str]) -> Dict[str, dict]:
        """Fresh upstream resolution per repo; feeds the report guard."""
        results: Dict[str, dict] = {}
        for repo in repos:
            sel = self._selector(repo)
            url = ident.canonicalize(sel)
            state = self.store.mirror_for(url)
            if state is None:
                raise MirrorNotSeededError(f"no mirror seeded for {url}")
            fresh = self.upstream_client.fetch_advertisement(sel.host, sel.repo_path)
            outcome = self.store.validate_mirror(state, fresh, self.clock())
            results[url] = {
                "state": "ok" if outcome.ok else "diverged",
                "observed": outcome.observed,
                "pinned": state.pinned.commit_id,
            }
        return results


# -- reporting ---------------------------------------------------------------------


def aggregate_cells(samples: Sequence[BenchSample]) -> List[dict]:
    by_cell: Dict[Tuple[str, str], List[float]] = {}
    order: List[Tuple[str, str]] = []
    for sample in samples:
        key = (sample.repo, sample.mode)
        if key not in by_cell:
            by_cell[key] = []
            order.append(key)
        by_cell[key].append(sample.latency_ms)
    rows = []
    for repo, mode in order:
        latencies = by_cell[(repo, mode)]
        rows.append(
            {
                "repo": repo,
                "mode": mode,
                "median_ms": round(median(latencies), 3),
                "min_ms": round(min(latencies), 3),
                "max_ms": round(max(latencies), 3),
                "n": len(latencies),
            }
        )
    return rows


def _render_markdown(report: dict) -> str:
    lines = ["# Intake latency report", ""]
    lines.append(f"Created: {report['created_at']}  ")
    cfg = report["config"]
    lines.append(
        f"Samples per cell: {cfg['samples_per_cell']}; modes: {', '.join(cfg['modes'])}; "
        f"injected upstream delay: {cfg['upstream_delay_ms']} ms"
    )
    lines.append("")
    modes = list(cfg["modes"])
    lines.append("| repo | " + " | ".join(f"{m} median (ms)" for m in modes) + " |")
    lines.append("|" + "---|" * (len(modes) + 1))
    cells = {(row["repo"], row["mode"]): row for row in report["cells"]}
    for repo in cfg["repos_measured"]:
        row = [repo]
        for mode in modes:
            cell = cells.get((repo, mode))
            row.append(f"{cell['median_ms']:.2f}" if cell else "-")
        lines.append("| " + " | ".join(row) + " |")
    baseline = report["reference_baseline"]
    lines.append(
        "| _"
        + baseline["label"]
        + "_ | "
        + " | ".join(
            f"{baseline[m.replace('-', '_')][0]}–{baseline[m.replace('-', '_')][1]}"
            for m in modes
        )
        + " |"
    )
    lines.append("")
    lines.append("Mirror validations:")
    for url, result in sorted(report["validations"].items()):
        lines.append(f"- `{url}`: {result['state']}")
    lines.append("")
    lines.append(f"Sampling: {cfg['scheduling']}; {cfg['hot_tier_reset']}; {cfg['connections']}.")
    lines.append("")
    return "\n".join(lines)


def _render_figure(report: dict) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = report["config"]
    repos = cfg["repos_measured"]
    modes = list(cfg["modes"])
    cells = {(row["repo"], row["mode"]): row["median_ms"] for row in report["cells"]}

    fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * len(repos)), 4.0))
    width = 0.8 / max(len(modes), 1)
    for i, mode in enumerate(modes):
        xs = [j + i * width for j in range(len(repos))]
        ys = [cells.get((repo, mode), 0.0) for repo in repos]
        bars = ax.bar(xs, ys, width=width, label=mode)
        ax.bar_label(bars, fmt="%.1f", fontsize=7)
    ax.set_yscale("log")
    ax.set_ylabel("median latency (ms, log scale)")
    ax.set_xticks([j + width * (len(modes) - 1) / 2 for j in range(len(repos))])
    ax.set_xticklabels([r.rsplit("/", 1)[-1] for r in repos], rotation=15, ha="right")
    ax.set_title("info/refs latency by serving mode")
    ax.legend()
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120)
    plt.close(fig)
    return buf.getvalue()


@dataclass
class ReportPaths:
    latest_json: str
    latest_md: str
    latest_csv: str
    latest_png: str
    snapshot: str


def emit_report(
    samples: Sequence[BenchSample],
    validations: Dict[str, dict],
    out_dir: str,
    config: BenchConfig,
    clock: Callable[[], datetime] = utc_now,
) -> ReportPaths:
    """Write latest.{json,md,csv,png} plus one immutable snapshot.

    Any diverged mirror fails the whole report: nothing is written.
    """
    diverged = sorted(url for url, result in validations.items() if result["state"] != "ok")
    if diverged:
        raise ValidationFailedError(
            f"mirror(s) diverged from pinned targets: {', '.join(diverged)}"
        )

    created_at = clock()
    repos_measured = []
    for sample in samples:
        if sample.repo not in repos_measured:
            repos_measured.append(sample.repo)
    report = {
        "schema": 1,
        "created_at": created_at.isoformat(),
        "config": {
            "repos": list(config.repos),
            "repos_measured": repos_measured,
            "modes": list(config.modes),
            "samples_per_cell": config.samples_per_cell,
            "upstream_delay_ms": config.upstream_delay_ms,
            "hot_tier_reset": "hot tier cleared in-process before every cache-mode sample; "
            "process not restarted",
            "scheduling": "paired rounds per repo (cache, hot-cache, web back to back)",
            "connections": "persistent connection per repo and endpoint; connection setup "
            "excluded from the timed exchange",
        },
        "cells": aggregate_cells(samples),
        "validations": validations,
        "reference_baseline": dict(REFERENCE_BASELINE),
        "samples": [
            {
                "repo": s.repo,
                "mode": s.mode,
                "latency_ms": round(s.latency_ms, 3),
                "observed_tier": s.observed_tier,
                "taken_at": s.taken_at,
            }
            for s in samples
        ],
    }

    snapshot_dir = os.path.join(out_dir, "snapshots")
    os.makedirs(snapshot_dir, exist_ok=True)
    snapshot_name = created_at.strftime("%Y%m%dT%H%M%S%fZ") + ".json"
    snapshot_path = os.path.join(snapshot_dir, snapshot_name)
    if os.path.exists(snapshot_path):
        raise SnapshotExistsError(f"snapshot {snapshot_path} already exists; refusing to overwrite")

    report_json = json.dumps(report, indent=2, sort_keys=True)
    figure_png = _render_figure(report)
    markdown = _render_markdown(report)
    csv_buf = io.StringIO()
    writer = csv.writer(csv_buf)
    writer.writerow(["repo", "mode", "median_ms", "min_ms", "max_ms", "n"])
    for row in report["cells"]:
        writer.writerow(
            [row["repo"], row["mode"], row["median_ms"], row["min_ms"], row["max_ms"], row["n"]]
        )

    # the immutable snapshot lands first; latest.* are the mutable mirrors
    with open(snapshot_path, "x") as fh:
        fh.write(report_json)
    paths = ReportPaths(
        latest_json=os.path.join(out_dir, "latest.json"),
        latest_md=os.path.join(out_dir, "latest.md"),
        latest_csv=os.path.join(out_dir, "latest.csv"),
        latest_png=os.path.join(out_dir, "latest.png"),
        snapshot=snapshot_path,
    )
    with open(paths.latest_json, "w") as fh:
        fh.write(report_json)
    with open(paths.latest_md, "w") as fh:
        fh.write(markdown)
    with open(paths.latest_csv, "w") as fh:
        fh.write(csv_buf.getvalue())
    with open(paths.latest_png, "wb") as fh:
        fh.write(figure_png)
    return paths


# -- desk-scale orchestration ----------------------------------------------------------


class DeskBench:
    """Self-contained measurement environment: local upstream repositories,
    a gateway seeded through the normal admission flow, and the harness.

    With live=True the configured selectors are measured against their real
    upstreams instead (network required); everything else is identical.
    """

    def __init__(
        self,
        workdir: str,
        config: BenchConfig,
        live: bool = False,
        clock: Callable[[], datetime] = utc_now,
    ) -> None:
        self.workdir = workdir
        self.config = config
        self.live = live
        self.clock = clock
        self.upstream: Optional[LocalUpstream] = None
        self.gateway: Optional[GatewayServer] = None
        self.service: Optional[AdmissionService] = None
        self.harness: Optional[BenchHarness] = None
        self.store: Optional[MirrorStore] = None

    def __enter__(self) -> "DeskBench":
        return self.setup()

    def __exit__(self, *exc) -> None:
        self.close()

    def setup(self) -> "DeskBench":
        os.makedirs(self.workdir, exist_ok=True)
        overrides = {}
        if not self.live:
            repos = {}
            for selector_text in self.config.repos:
                sel = ident.parse_selector(selector_text)
                directory = os.path.join(
                    self.workdir, "upstreams", sel.repo_path.replace("/", "__")
                )
                if not os.path.exists(directory):
                    create_bare_repo(
                        directory,
                        branch="main",
                        files={"README.md": f"{sel.repo_path} fixture\n"},
                    )
                repos[sel.repo_path] = directory
            self.upstream = LocalUpstream(repos).start()
            hosts = {ident.parse_selector(r).host for r in self.config.repos}
            overrides = {host: self.upstream.base_url for host in hosts}

        ledger = EventLedger(os.path.join(self.workdir, "ledger.jsonl"), clock=self.clock)
        self.store = MirrorStore(os.path.join(self.workdir, "cache"))
        client = UpstreamClient(overrides, timeout=30.0)
        self.service = AdmissionService(ledger, self.store, client, clock=self.clock)
        self.gateway = GatewayServer(self.service, {"bench": "bench-token"}).start()
        self.harness = BenchHarness(self.gateway, client, self.store, clock=self.clock)

        # admit every repo through the normal flow before measuring
        for selector_text in self.config.repos:
            sel = ident.parse_selector(selector_text)
            url = ident.canonicalize(sel)
            if self.store.mirror_for(url) is None:
                ticket = self.service.admission_hold(sel)
                self.service.record_verdict(
                    ticket.ticket_id, policy.Verdict.FETCH_ONLY, "bench"
                )

        if self.upstream is not None and self.config.upstream_delay_ms:
            self.upstream.delay_ms = self.config.upstream_delay_ms
        return self

    def run(self, out_dir: str) -> Tuple[dict, ReportPaths]:
        """Validate, sample, and emit; raises ValidationFailedError (and
        writes nothing) if any mirror diverged."""
        assert self.harness is not None
        validations = self.harness.validate_mirrors(self.config.repos)
        samples: List[BenchSample] = []
        if all(result["state"] == "ok" for result in validations.values()):
            samples = self.harness.run_matrix(self.config)
        paths = emit_report(samples, validations, out_dir, self.config, clock=self.clock)
        with open(paths.latest_json) as fh:
            return json.load(fh), paths

    def close(self) -> None:
        if self.gateway is not None:
            self.gateway.stop()
        if self.upstream is not None:
            self.upstream.stop()
