// Thin client for the gateway admin API. Errors carry the API's response
// body verbatim so the UI can show exactly what the server said.

export interface ConsoleConfig {
  baseUrl: string; // e.g. http://127.0.0.1:8471
  token: string;
}

export interface IdentityRef {
  canonical_url: string;
  commit_id: string;
}

export interface PendingTicket {
  ticket_id: string;
  selector: string;
  resolved_identity: IdentityRef;
  created_at: string;
  first_seen_event: string;
  status: string;
  decided_by: string | null;
}

export interface PolicyEventRecord {
  event_id: string;
  selector: string;
  resolved_identity: IdentityRef;
  provenance: string;
  verdict: string;
  evidence_pointer: string;
  context: string;
  expiry: string | null;
  revokes: string | null;
  operator: string;
  recorded_at: string;
  prev_hash: string;
  event_hash: string;
}

export interface MirrorRecord {
  canonical_url: string;
  selector: string;
  pinned: IdentityRef;
  pinned_refname: string | null;
  seeded_at: string;
  upstream_head_at_seed: string;
  last_validation: { state: string; checked_at: string | null; observed: string | null };
}

export interface VerdictSubmission {
  verdict: string;
  expiry?: string;
  evidence_pointer?: string;
  justification?: string;
}

export interface EventFilters {
  verdict?: string;
  context?: string;
  url?: string;
  commit?: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: string,
  ) {
    super(`admin API ${status}: ${body}`);
  }
}

type FetchLike = typeof fetch;

export class AdminApi {
  private readonly fetchFn: FetchLike;

  constructor(
    private readonly config: ConsoleConfig,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? fetch.bind(globalThis);
  }

  private async call<T>(method: string, path: string, payload?: unknown): Promise<T> {
    const headers: Record<string, string> = {
      Authorization: `Bearer ${this.config.token}`,
    };
    let body: string | undefined;
    if (payload !== undefined) {
      headers["Content-Type"] = "application/json";
      body = JSON.stringify(payload);
    }
    const response = await this.fetchFn(`${this.config.baseUrl}${path}`, {
      method,
      headers,
      body,
    });
    const text = await response.text();
    if (!response.ok) {
      throw new ApiError(response.status, text);
    }
    return JSON.parse(text) as T;
  }

  async listPending(): Promise<PendingTicket[]> {
    const reply = await this.call<{ tickets: PendingTicket[] }>("GET", "/api/v1/pending");
    return reply.tickets;
  }

  async listEvents(filters: EventFilters = {}): Promise<PolicyEventRecord[]> {
    const params = new URLSearchParams();
    for (const [key, value] of Object.entries(filters)) {
      if (value) params.set(key, value);
    }
    const suffix = params.size > 0 ? `?${params.toString()}` : "";
    const reply = await this.call<{ events: PolicyEventRecord[] }>(
      "GET",
      `/api/v1/events${suffix}`,
    );
    return reply.events;
  }

  async listMirrors(): Promise<MirrorRecord[]> {
    const reply = await this.call<{ mirrors: MirrorRecord[] }>("GET", "/api/v1/mirrors");
    return reply.mirrors;
  }

  async submitVerdict(ticketId: string, submission: VerdictSubmission): Promise<PolicyEventRecord> {
    const reply = await this.call<{ event: PolicyEventRecord }>(
      "POST",
      `/api/v1/tickets/${ticketId}/verdict`,
      submission,
    );
    return reply.event;
  }

  async submitRevoke(identity: IdentityRef, reason: string): Promise<PolicyEventRecord> {
    const reply = await this.call<{ event: PolicyEventRecord }>(
      "POST",
      "/api/v1/identities/revoke",
      { ...identity, reason },
    );
    return reply.event;
  }

  async submitBreakGlass(
    identity: IdentityRef,
    ttlSeconds: number,
    justification: string,
  ): Promise<PolicyEventRecord> {
    const reply = await this.call<{ event: PolicyEventRecord }>(
      "POST",
      "/api/v1/identities/break-glass",
      { ...identity, ttl_seconds: ttlSeconds, justification },
    );
    return reply.event;
  }
}
