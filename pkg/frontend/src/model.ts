// View-models for the approval queue and the submission forms.
// Everything here is DOM-free so it can be tested headless; rows mirror
// the server's pending list and never invent identities client-side.

import type { PendingTicket } from "./api.js";

export const VERDICTS = [
  "FETCH_ONLY",
  "UNPACK_ONLY",
  "BUILD_NO_NETWORK",
  "TEST_NO_SECRETS",
  "RUN_DEV",
  "RUN_CI",
  "BLOCKED",
] as const;

export type Verdict = (typeof VERDICTS)[number];

export type RowAction =
  | { kind: "idle" }
  | { kind: "submitting"; verdict: Verdict }
  | { kind: "done"; eventId: string }
  | { kind: "failed"; reason: string };

export interface QueueRow {
  ticket: PendingTicket;
  action: RowAction;
}

export class QueueModel {
  private rows = new Map<string, QueueRow>();

  /** Mirror the server's pending list, preserving in-flight action state. */
  reconcile(tickets: PendingTicket[]): void {
    const fresh = new Map<string, QueueRow>();
    for (const ticket of tickets) {
      const existing = this.rows.get(ticket.ticket_id);
      fresh.set(ticket.ticket_id, { ticket, action: existing?.action ?? { kind: "idle" } });
    }
    // rows the server no longer lists are decided (or were never real): drop
    this.rows = fresh;
  }

  list(): QueueRow[] {
    return [...this.rows.values()].sort((a, b) =>
      a.ticket.created_at.localeCompare(b.ticket.created_at),
    );
  }

  get(ticketId: string): QueueRow | undefined {
    return this.rows.get(ticketId);
  }

  get size(): number {
    return this.rows.size;
  }

  beginSubmit(ticketId: string, verdict: Verdict): void {
    const row = this.rows.get(ticketId);
    if (!row) return;
    row.action = { kind: "submitting", verdict };
  }

  completeSubmit(ticketId: string, eventId: string): void {
    const row = this.rows.get(ticketId);
    if (!row) return;
    row.action = { kind: "done", eventId };
  }

  failSubmit(ticketId: string, reason: string): void {
    const row = this.rows.get(ticketId);
    if (!row) return;
    row.action = { kind: "failed", reason };
  }
}

export function ageSeconds(ticket: PendingTicket, now: Date): number {
  return Math.max(0, (now.getTime() - new Date(ticket.created_at).getTime()) / 1000);
}

const DURATION_RE = /^(\d+(?:\.\d+)?)([smhd])$/;
const DURATION_UNITS: Record<string, number> = { s: 1, m: 60, h: 3600, d: 86400 };

export function parseDurationSeconds(text: string): number | null {
  const match = DURATION_RE.exec(text.trim());
  if (!match) return null;
  return parseFloat(match[1]) * DURATION_UNITS[match[2]];
}

/** Expiry input accepts a duration shorthand (30d) or a timestamp;
 * returns an ISO timestamp for the API, null for "no expiry". */
export function expiryFromInput(text: string, now: Date): string | null {
  const trimmed = text.trim();
  if (!trimmed) return null;
  const seconds = parseDurationSeconds(trimmed);
  if (seconds !== null) {
    return new Date(now.getTime() + seconds * 1000).toISOString();
  }
  const parsed = new Date(trimmed);
  if (Number.isNaN(parsed.getTime())) {
    throw new Error(`cannot parse expiry ${JSON.stringify(trimmed)}`);
  }
  return parsed.toISOString();
}

export interface VerdictFormInput {
  verdict: string; // "" until the operator explicitly picks one
  expiry: string;
  evidencePointer: string;
  justification: string;
}

export interface VerdictFormResult {
  verdict: Verdict;
  expiry?: string;
  evidence_pointer?: string;
  justification?: string;
}

/** No default verdict: approval requires an explicit choice. */
export function validateVerdictForm(input: VerdictFormInput, now: Date): VerdictFormResult {
  if (!input.verdict) {
    throw new Error("pick a verdict first");
  }
  if (!(VERDICTS as readonly string[]).includes(input.verdict)) {
    throw new Error(`unknown verdict ${JSON.stringify(input.verdict)}`);
  }
  const result: VerdictFormResult = { verdict: input.verdict as Verdict };
  const expiry = expiryFromInput(input.expiry, now);
  if (expiry) result.expiry = expiry;
  if (input.evidencePointer.trim()) result.evidence_pointer = input.evidencePointer.trim();
  if (input.justification.trim()) result.justification = input.justification.trim();
  return result;
}

export interface BreakGlassFormInput {
  canonicalUrl: string;
  commitId: string;
  ttl: string;
  justification: string;
}

export interface BreakGlassFormResult {
  canonical_url: string;
  commit_id: string;
  ttl_seconds: number;
  justification: string;
}

export function validateBreakGlassForm(
  input: BreakGlassFormInput,
  maxTtlSeconds: number,
): BreakGlassFormResult {
  if (!input.justification.trim()) {
    throw new Error("break-glass requires a justification");
  }
  const ttl = parseDurationSeconds(input.ttl);
  if (ttl === null || ttl <= 0) {
    throw new Error(`cannot parse ttl ${JSON.stringify(input.ttl)} (use e.g. 30m)`);
  }
  if (ttl > maxTtlSeconds) {
    throw new Error(`ttl exceeds the configured maximum of ${maxTtlSeconds}s`);
  }
  if (!/^[0-9a-f]{40}$/.test(input.commitId.trim())) {
    throw new Error("commit id must be 40 hex characters");
  }
  if (!input.canonicalUrl.trim()) {
    throw new Error("canonical URL is required");
  }
  return {
    canonical_url: input.canonicalUrl.trim(),
    commit_id: input.commitId.trim(),
    ttl_seconds: ttl,
    justification: input.justification.trim(),
  };
}
