// Console wiring: settings, the 2s polling loop, and form submission.

import { AdminApi, ApiError, type ConsoleConfig } from "./api.js";
import { QueueModel, validateBreakGlassForm } from "./model.js";
import { errorText, renderBanner, renderQueue, renderTimeline } from "./render.js";

const POLL_INTERVAL_MS = 2000;
const BREAK_GLASS_MAX_TTL_SECONDS = 3600;

function loadConfig(): ConsoleConfig | null {
  const baseUrl = localStorage.getItem("gitgate.baseUrl");
  const token = localStorage.getItem("gitgate.token");
  if (!baseUrl || !token) return null;
  return { baseUrl, token };
}

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function boot(): void {
  const settingsForm = byId<HTMLFormElement>("settings");
  const baseUrlInput = byId<HTMLInputElement>("base-url");
  const tokenInput = byId<HTMLInputElement>("token");
  const banner = byId<HTMLElement>("banner");
  const queueContainer = byId<HTMLElement>("queue");
  const timelineContainer = byId<HTMLElement>("timeline");
  const verdictFilter = byId<HTMLSelectElement>("filter-verdict");
  const contextFilter = byId<HTMLInputElement>("filter-context");
  const breakGlassForm = byId<HTMLFormElement>("break-glass");

  let config = loadConfig();
  if (config) {
    baseUrlInput.value = config.baseUrl;
    tokenInput.value = config.token;
  }

  settingsForm.addEventListener("submit", (event) => {
    event.preventDefault();
    localStorage.setItem("gitgate.baseUrl", baseUrlInput.value.trim());
    localStorage.setItem("gitgate.token", tokenInput.value.trim());
    config = loadConfig();
    void refresh();
  });

  const queue = new QueueModel();

  async function refresh(): Promise<void> {
    if (!config) {
      renderBanner(banner, "Set the admin API base URL and token to connect.");
      return;
    }
    const api = new AdminApi(config);
    try {
      const [tickets, events] = await Promise.all([
        api.listPending(),
        api.listEvents({
          verdict: verdictFilter.value || undefined,
          context: contextFilter.value || undefined,
        }),
      ]);
      renderBanner(banner, null);
      queue.reconcile(tickets);
      renderQueue(queueContainer, queue, {
        async submit(ticketId, form) {
          queue.beginSubmit(ticketId, form.verdict);
          renderQueue(queueContainer, queue, this);
          try {
            const event = await api.submitVerdict(ticketId, form);
            queue.completeSubmit(ticketId, event.event_id);
          } catch (error) {
            queue.failSubmit(ticketId, errorText(error));
          }
          await refresh();
        },
      });
      renderTimeline(timelineContainer, events, {
        async revoke(identity) {
          const reason = window.prompt("Revocation reason?") ?? "";
          if (!reason.trim()) return;
          try {
            await api.submitRevoke(identity, reason.trim());
          } catch (error) {
            renderBanner(banner, errorText(error));
          }
          await refresh();
        },
      });
    } catch (error) {
      if (error instanceof ApiError && error.status === 401) {
        renderBanner(banner, "Authentication failed: the admin token was rejected.");
      } else {
        renderBanner(banner, `Admin API unreachable: ${errorText(error)}`);
      }
    }
  }

  breakGlassForm.addEventListener("submit", (event) => {
    event.preventDefault();
    if (!config) return;
    const api = new AdminApi(config);
    let form;
    try {
      form = validateBreakGlassForm(
        {
          canonicalUrl: byId<HTMLInputElement>("bg-url").value,
          commitId: byId<HTMLInputElement>("bg-commit").value,
          ttl: byId<HTMLInputElement>("bg-ttl").value,
          justification: byId<HTMLInputElement>("bg-justification").value,
        },
        BREAK_GLASS_MAX_TTL_SECONDS,
      );
    } catch (error) {
      renderBanner(banner, errorText(error)); // client-side validation, no API call
      return;
    }
    void api
      .submitBreakGlass(
        { canonical_url: form.canonical_url, commit_id: form.commit_id },
        form.ttl_seconds,
        form.justification,
      )
      .then(() => refresh())
      .catch((error) => renderBanner(banner, errorText(error)));
  });

  verdictFilter.addEventListener("change", () => void refresh());
  contextFilter.addEventListener("change", () => void refresh());

  void refresh();
  setInterval(() => void refresh(), POLL_INTERVAL_MS);
}

boot();
