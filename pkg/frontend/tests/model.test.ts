import { describe, expect, it } from "vitest";

import type { PendingTicket } from "../src/api.js";
import {
  QueueModel,
  VERDICTS,
  ageSeconds,
  expiryFromInput,
  parseDurationSeconds,
  validateBreakGlassForm,
  validateVerdictForm,
} from "../src/model.js";

function ticket(id: string, createdAt = "2026-03-01T10:00:00.000000Z"): PendingTicket {
  return {
    ticket_id: id,
    selector: "git+https://upstream.test/acme/tool",
    resolved_identity: {
      canonical_url: "https://upstream.test/acme/tool",
      commit_id: "f3c1" + "0".repeat(36),
    },
    created_at: createdAt,
    first_seen_event: id,
    status: "pending",
    decided_by: null,
  };
}

describe("QueueModel", () => {
  it("mirrors the server list exactly", () => {
    const model = new QueueModel();
    model.reconcile([ticket("T1"), ticket("T2")]);
    expect(model.list().map((r) => r.ticket.ticket_id)).toEqual(["T1", "T2"]);
    model.reconcile([ticket("T2")]);
    expect(model.list().map((r) => r.ticket.ticket_id)).toEqual(["T2"]);
    expect(model.size).toBe(1);
  });

  it("keeps action state across reconciles while still pending", () => {
    const model = new QueueModel();
    model.reconcile([ticket("T1")]);
    model.beginSubmit("T1", "RUN_DEV");
    model.reconcile([ticket("T1")]);
    expect(model.get("T1")?.action).toEqual({ kind: "submitting", verdict: "RUN_DEV" });
  });

  it("drops rows the server no longer reports, even mid-flight", () => {
    const model = new QueueModel();
    model.reconcile([ticket("T1")]);
    model.beginSubmit("T1", "RUN_DEV");
    model.completeSubmit("T1", "EV9");
    model.reconcile([]);
    expect(model.size).toBe(0);
  });

  it("records failures with the server's reason", () => {
    const model = new QueueModel();
    model.reconcile([ticket("T1")]);
    model.failSubmit("T1", "ticket already decided by event EV2");
    expect(model.get("T1")?.action).toEqual({
      kind: "failed",
      reason: "ticket already decided by event EV2",
    });
  });

  it("orders rows by creation time", () => {
    const model = new QueueModel();
    model.reconcile([
      ticket("T2", "2026-03-01T11:00:00.000000Z"),
      ticket("T1", "2026-03-01T10:00:00.000000Z"),
    ]);
    expect(model.list().map((r) => r.ticket.ticket_id)).toEqual(["T1", "T2"]);
  });
});

describe("durations and expiry", () => {
  it("parses shorthand durations", () => {
    expect(parseDurationSeconds("45s")).toBe(45);
    expect(parseDurationSeconds("30m")).toBe(1800);
    expect(parseDurationSeconds("2h")).toBe(7200);
    expect(parseDurationSeconds("30d")).toBe(30 * 86400);
    expect(parseDurationSeconds("nonsense")).toBeNull();
  });

  it("turns durations into absolute timestamps", () => {
    const now = new Date("2026-03-01T00:00:00Z");
    expect(expiryFromInput("1h", now)).toBe("2026-03-01T01:00:00.000Z");
    expect(expiryFromInput("", now)).toBeNull();
    expect(expiryFromInput("2026-04-01T00:00:00Z", now)).toBe("2026-04-01T00:00:00.000Z");
    expect(() => expiryFromInput("not a date", now)).toThrow();
  });

  it("computes ticket age", () => {
    const t = ticket("T1", "2026-03-01T10:00:00.000Z");
    expect(ageSeconds(t, new Date("2026-03-01T10:00:30Z"))).toBe(30);
  });
});

describe("verdict form", () => {
  const now = new Date("2026-03-01T00:00:00Z");

  it("lists all seven verdicts", () => {
    expect(VERDICTS).toHaveLength(7);
    expect(VERDICTS).toContain("BLOCKED");
    expect(VERDICTS).toContain("RUN_CI");
  });

  it("requires an explicit verdict choice", () => {
    expect(() =>
      validateVerdictForm(
        { verdict: "", expiry: "", evidencePointer: "", justification: "" },
        now,
      ),
    ).toThrow(/pick a verdict/);
  });

  it("builds the submission payload", () => {
    const result = validateVerdictForm(
      {
        verdict: "RUN_DEV",
        expiry: "30d",
        evidencePointer: "report://quarantine",
        justification: "reviewed",
      },
      now,
    );
    expect(result.verdict).toBe("RUN_DEV");
    expect(result.expiry).toBe("2026-03-31T00:00:00.000Z");
    expect(result.evidence_pointer).toBe("report://quarantine");
    expect(result.justification).toBe("reviewed");
  });

  it("rejects unknown verdict tokens", () => {
    expect(() =>
      validateVerdictForm(
        { verdict: "ALLOW_ALL", expiry: "", evidencePointer: "", justification: "" },
        now,
      ),
    ).toThrow(/unknown verdict/);
  });
});

describe("break-glass form", () => {
  const valid = {
    canonicalUrl: "https://upstream.test/acme/tool",
    commitId: "f3c1" + "0".repeat(36),
    ttl: "30m",
    justification: "prod incident",
  };

  it("accepts a valid form", () => {
    const result = validateBreakGlassForm(valid, 3600);
    expect(result.ttl_seconds).toBe(1800);
    expect(result.justification).toBe("prod incident");
  });

  it("requires a justification (no API call without one)", () => {
    expect(() => validateBreakGlassForm({ ...valid, justification: "  " }, 3600)).toThrow(
      /justification/,
    );
  });

  it("caps the ttl", () => {
    expect(() => validateBreakGlassForm({ ...valid, ttl: "2h" }, 3600)).toThrow(/maximum/);
  });

  it("validates the commit id shape", () => {
    expect(() => validateBreakGlassForm({ ...valid, commitId: "short" }, 3600)).toThrow(/40 hex/);
  });
});
