#!/usr/bin/env python3
"""Boot a seeded gateway with one pending ticket, then run the console's
end-to-end vitest suite against it.

Usage: python scripts/run_console_e2e.py
"""

import http.client
import os
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "src"))

from gitgate.cache import MirrorStore  # noqa: E402
from gitgate.httpd import GatewayServer  # noqa: E402
from gitgate.ledger import EventLedger  # noqa: E402
from gitgate.service import AdmissionService  # noqa: E402
from gitgate.upstream import LocalUpstream, UpstreamClient, create_bare_repo  # noqa: E402

HOST = "upstream.test"
REPO_PATH = "acme/tool"
TOKEN = "console-e2e-token"


def main() -> int:
    frontend = os.path.join(ROOT, "frontend")
    if not os.path.isdir(os.path.join(frontend, "node_modules")):
        print("installing frontend dependencies ...")
        subprocess.run(["npm", "install", "--no-fund", "--no-audit"], cwd=frontend, check=True)

    with tempfile.TemporaryDirectory(prefix="console-e2e-") as tmp:
        repo_dir = os.path.join(tmp, "repo.git")
        create_bare_repo(repo_dir, branch="main", files={"tool.py": "print('hi')\n"})
        upstream = LocalUpstream({REPO_PATH: repo_dir}).start()
        ledger = EventLedger(os.path.join(tmp, "ledger.jsonl"))
        store = MirrorStore(os.path.join(tmp, "cache"))
        client = UpstreamClient({HOST: upstream.base_url})
        service = AdmissionService(ledger, store, client)
        gateway = GatewayServer(service, {"console": TOKEN}).start()

        try:
            # a first client fetch creates the pending ticket
            conn = http.client.HTTPConnection("127.0.0.1", gateway.client_port)
            conn.request("GET", f"/git/{HOST}/{REPO_PATH}/info/refs?service=git-upload-pack")
            resp = conn.getresponse()
            resp.read()
            conn.close()
            if resp.status != 403:
                print(f"expected a 403 hold, got {resp.status}")
                return 1
            if len(service.pending_tickets()) != 1:
                print("expected exactly one pending ticket")
                return 1

            env = dict(os.environ)
            env.update(
                {
                    "GITGATE_ADMIN_URL": gateway.admin_base_url,
                    "GITGATE_TOKEN": TOKEN,
                    "GITGATE_CLIENT_URL": gateway.client_base_url,
                    "GITGATE_HOST": HOST,
                    "GITGATE_REPO_PATH": REPO_PATH,
                }
            )
            proc = subprocess.run(
                ["npx", "vitest", "run", "tests/e2e.test.ts"], cwd=frontend, env=env
            )
            ok = proc.returncode == 0
            print(f"\nACCEPTANCE[console-end-to-end]: {'PASS' if ok else 'FAIL'}")
            return proc.returncode
        finally:
            gateway.stop()
            upstream.stop()


if __name__ == "__main__":
    sys.exit(main())
