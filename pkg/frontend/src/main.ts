/** App wiring: setup form -> job -> event stream -> views. */

import { ApiClient, ServiceError } from "./api.js";
import { initialState, reduce } from "./state.js";
import type { JobEvent, TaskForm, UiState } from "./types.js";
import {
  renderCompletion,
  renderEventLog,
  renderProbeCard,
  renderStageBadges,
  renderTests,
} from "./views.js";

const api = new ApiClient("");

interface App {
  state: UiState;
  jobId: string | null;
  stop: (() => void) | null;
}

const app: App = { state: initialState(), jobId: null, stop: null };

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function readForm(): TaskForm {
  return {
    device_brand: byId<HTMLInputElement>("device-brand").value.trim(),
    device_model: byId<HTMLInputElement>("device-model").value.trim(),
    platform_id: byId<HTMLSelectElement>("platform-id").value.trim(),
    serial_number: byId<HTMLInputElement>("serial-number").value.trim() || undefined,
    device_key: byId<HTMLInputElement>("device-key").value.trim() || undefined,
    function_description:
      byId<HTMLTextAreaElement>("function-description").value.trim() || undefined,
  };
}

/** Mirrors the task invariants: brand, model, platform must be non-empty. */
export function formValid(form: TaskForm): boolean {
  return Boolean(form.device_brand && form.device_model && form.platform_id);
}

function refreshSubmitState(): void {
  byId<HTMLButtonElement>("submit-task").disabled = !formValid(readForm());
}

function render(): void {
  renderStageBadges(app.state, byId("stage-badges"));
  renderEventLog(app.state, byId("event-log"));
  renderTests(app.state, byId("test-results"));
  renderProbeCard(app.state, byId("probe-host"), {
    onAnswer: (answer) => {
      if (!app.jobId || !app.state.probeOutstanding) return;
      // optimistic disable; the hil_feedback event confirms it
      app.state = { ...app.state, probeOutstanding: false };
      render();
      api.answerProbe(app.jobId, answer).catch((error) => showBanner(String(error)));
    },
  });
  renderCompletion(app.state, byId("completion-host"),
    app.jobId ? api.artifactUrl(app.jobId) : null);
}

function showBanner(message: string): void {
  const banner = byId("form-banner");
  banner.textContent = message;
  banner.classList.remove("hidden");
}

function onEvent(event: JobEvent): void {
  app.state = reduce(app.state, event);
  render();
}

async function submitTask(): Promise<void> {
  const form = readForm();
  if (!formValid(form)) return;
  const overrides: Record<string, unknown> = { hil_enabled: true };
  const fixturesDir = byId<HTMLInputElement>("fixtures-dir").value.trim();
  if (fixturesDir) overrides.fixtures_dir = fixturesDir;
  try {
    byId("form-banner").classList.add("hidden");
    const jobId = await api.createJob(form, overrides);
    app.jobId = jobId;
    app.state = initialState();
    byId("setup-view").classList.add("hidden");
    byId("progress-view").classList.remove("hidden");
    byId("job-id").textContent = jobId;
    app.stop = api.streamEvents(jobId, onEvent, () => app.state.done);
    render();
  } catch (error) {
    // service rejection: keep the form, surface the error inline
    const detail = error instanceof ServiceError ? error.message : String(error);
    showBanner(`could not create job: ${detail}`);
  }
}

export function boot(): void {
  const form = byId<HTMLFormElement>("setup-form");
  form.addEventListener("input", refreshSubmitState);
  form.addEventListener("submit", (raw) => {
    raw.preventDefault();
    void submitTask();
  });
  refreshSubmitState();
}

if (typeof document !== "undefined" && document.getElementById("setup-form")) {
  boot();
}
