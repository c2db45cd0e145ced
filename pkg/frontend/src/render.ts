// DOM projection of the view-models. Full values are kept in title/copy
// attributes wherever the cell shows an ellipsized hash or URL.

import type { AdminApi, PendingTicket, PolicyEventRecord } from "./api.js";
import { ApiError } from "./api.js";
import { QueueModel, VERDICTS, ageSeconds, validateVerdictForm } from "./model.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text !== undefined) node.textContent = text;
  return node;
}

function shortHash(value: string): HTMLElement {
  const span = el("span", { class: "hash", title: value }, value.slice(0, 12));
  span.dataset.full = value;
  return span;
}

export function errorText(error: unknown): string {
  if (error instanceof ApiError) return error.body || `HTTP ${error.status}`;
  return String(error instanceof Error ? error.message : error);
}

export interface QueueHandlers {
  submit(ticketId: string, form: ReturnType<typeof validateVerdictForm>): Promise<void>;
}

export function renderQueue(
  container: HTMLElement,
  model: QueueModel,
  handlers: QueueHandlers,
  now: Date = new Date(),
): void {
  container.replaceChildren();
  const rows = model.list();
  if (rows.length === 0) {
    container.append(el("p", { class: "empty", "data-role": "empty-queue" }, "No pending tickets."));
    return;
  }
  const table = el("table", { class: "queue", "data-role": "queue-table" });
  const head = el("tr");
  for (const title of ["ticket", "selector", "identity", "age", "decision", ""]) {
    head.append(el("th", {}, title));
  }
  table.append(head);

  for (const row of rows) {
    const ticket = row.ticket;
    const tr = el("tr", { "data-ticket": ticket.ticket_id });

    tr.append(el("td", {}, ticket.ticket_id));
    tr.append(el("td", { title: ticket.selector }, ticket.selector));
    const identityCell = el("td");
    identityCell.append(shortHash(ticket.resolved_identity.commit_id));
    identityCell.append(el("div", { class: "dim" }, ticket.resolved_identity.canonical_url));
    tr.append(identityCell);
    tr.append(el("td", {}, `${Math.round(ageSeconds(ticket, now))}s`));

    const formCell = el("td");
    const picker = el("select", { "data-role": "verdict" });
    picker.append(el("option", { value: "" }, "choose verdict…"));
    for (const verdict of VERDICTS) {
      picker.append(el("option", { value: verdict }, verdict));
    }
    const expiry = el("input", { placeholder: "expiry (30d)", "data-role": "expiry" });
    const evidence = el("input", { placeholder: "evidence URI", "data-role": "evidence" });
    formCell.append(picker, expiry, evidence);
    tr.append(formCell);

    const actionCell = el("td");
    if (row.action.kind === "submitting") {
      actionCell.append(el("span", { class: "state" }, `submitting ${row.action.verdict}…`));
    } else if (row.action.kind === "failed") {
      const failed = el("span", { class: "state error", "data-role": "row-error" });
      failed.textContent = row.action.reason; // API error bodies verbatim
      actionCell.append(failed);
    }
    if (row.action.kind === "idle" || row.action.kind === "failed") {
      const button = el("button", { "data-role": "submit-verdict" }, "record verdict");
      button.addEventListener("click", () => {
        let form;
        try {
          form = validateVerdictForm(
            {
              verdict: picker.value,
              expiry: expiry.value,
              evidencePointer: evidence.value,
              justification: "",
            },
            new Date(),
          );
        } catch (error) {
          const failed = el("span", { class: "state error", "data-role": "row-error" });
          failed.textContent = errorText(error);
          actionCell.replaceChildren(failed, button);
          return;
        }
        void handlers.submit(ticket.ticket_id, form);
      });
      actionCell.append(button);
    }
    tr.append(actionCell);
    table.append(tr);
  }
  container.append(table);
}

export interface TimelineHandlers {
  revoke(identity: { canonical_url: string; commit_id: string }): Promise<void>;
}

export function renderTimeline(
  container: HTMLElement,
  events: PolicyEventRecord[],
  handlers: TimelineHandlers,
): void {
  container.replaceChildren();
  if (events.length === 0) {
    container.append(el("p", { class: "empty" }, "No events match the filter."));
    return;
  }
  const table = el("table", { class: "timeline", "data-role": "timeline-table" });
  const head = el("tr");
  for (const title of [
    "event",
    "selector",
    "identity",
    "provenance",
    "verdict",
    "evidence",
    "context",
    "expiry",
    "revokes",
    "operator",
    "recorded",
    "",
  ]) {
    head.append(el("th", {}, title));
  }
  table.append(head);
  for (const event of [...events].reverse()) {
    const tr = el("tr", { "data-event": event.event_id });
    tr.append(el("td", {}, event.event_id));
    tr.append(el("td", { title: event.selector }, event.selector));
    const identityCell = el("td");
    identityCell.append(shortHash(event.resolved_identity.commit_id));
    identityCell.append(el("div", { class: "dim" }, event.resolved_identity.canonical_url));
    tr.append(identityCell);
    tr.append(el("td", {}, event.provenance));
    tr.append(el("td", { class: `verdict-${event.verdict}` }, event.verdict));
    tr.append(el("td", { title: event.evidence_pointer }, event.evidence_pointer));
    tr.append(el("td", { title: event.context }, event.context));
    tr.append(el("td", {}, event.expiry ?? "—"));
    tr.append(el("td", {}, event.revokes ?? "—"));
    tr.append(el("td", {}, event.operator));
    tr.append(el("td", {}, event.recorded_at));
    const actions = el("td");
    if (event.verdict !== "BLOCKED") {
      const button = el("button", { "data-role": "revoke" }, "revoke");
      button.addEventListener("click", () => void handlers.revoke(event.resolved_identity));
      actions.append(button);
    }
    tr.append(actions);
    table.append(tr);
  }
  container.append(table);
}

export function renderBanner(container: HTMLElement, message: string | null): void {
  container.replaceChildren();
  if (message !== null) {
    container.append(el("div", { class: "banner", "data-role": "banner" }, message));
  }
}
