/** DOM rendering: pure functions of UiState, no business logic. */

import type { UiState } from "./types.js";
import { NO_CAP } from "./types.js";

export const PIPELINE_STAGES = [
  "ingesting",
  "generating_control",
  "generating_integration",
  "auto_debugging",
  "awaiting_hil",
  "hil_running",
  "done",
  "failed",
];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderStageBadges(state: UiState, host: HTMLElement): void {
  host.replaceChildren();
  for (const stage of PIPELINE_STAGES) {
    if (stage === "failed" && state.currentStage !== "failed") continue;
    const reached = state.stages.includes(stage);
    const badge = el("span", "stage-badge", stage.replace(/_/g, " "));
    if (reached) badge.classList.add("reached");
    if (stage === state.currentStage) badge.classList.add("current");
    host.appendChild(badge);
  }
}

export function renderEventLog(state: UiState, host: HTMLElement): void {
  // windowed list: only the newest lines are kept in the DOM
  const WINDOW = 200;
  host.replaceChildren();
  for (const line of state.traceLines.slice(-WINDOW)) {
    host.appendChild(el("div", "trace-line", `#${line.seq} ${line.text}`));
  }
  host.scrollTop = host.scrollHeight;
}

export function renderTests(state: UiState, host: HTMLElement): void {
  host.replaceChildren();
  const entries = Object.entries(state.testResults);
  if (!entries.length) return;
  const passed = entries.filter(([, verdict]) => verdict === "passed").length;
  host.appendChild(el("div", "tests-summary", `tests: ${passed}/${entries.length} passed`));
  for (const [testId, verdict] of entries) {
    host.appendChild(el("div", `test-row ${verdict}`, `${testId}: ${verdict}`));
  }
}

export interface ProbeHandlers {
  onAnswer: (answer: "yes" | "no") => void;
}

export function renderProbeCard(state: UiState, host: HTMLElement,
                                handlers: ProbeHandlers): void {
  host.replaceChildren();
  if (!state.probe && !state.functions.length) return;

  if (state.probe) {
    const card = el("div", "probe-card");
    card.appendChild(el("p", "probe-question", state.probe.question));
    const yes = el("button", "answer-yes", "yes");
    const no = el("button", "answer-no", "no");
    // enabled iff the probe is the latest unanswered event
    yes.disabled = !state.probeOutstanding;
    no.disabled = !state.probeOutstanding;
    yes.onclick = () => handlers.onAnswer("yes");
    no.onclick = () => handlers.onAnswer("no");
    const row = el("div", "answer-row");
    row.append(yes, no);
    card.appendChild(row);
    host.appendChild(card);
  }

  const counters = el("div", "no-counters");
  for (const fn of state.functions) {
    const count = state.noCounts[fn] ?? 0;
    const item = el("span", "no-counter", `${fn}: ${count}/${NO_CAP} no`);
    if (state.failedFunctions.includes(fn)) {
      item.classList.add("failed");
      item.textContent = `${fn}: failed (${count}/${NO_CAP} no)`;
    }
    counters.appendChild(item);
  }
  host.appendChild(counters);
}

export function renderCompletion(state: UiState, host: HTMLElement,
                                 artifactUrl: string | null): void {
  host.replaceChildren();
  if (state.errorMessage) {
    host.appendChild(el("div", "banner error", state.errorMessage));
    return;
  }
  if (!state.done) return;
  const ok = state.usable && state.currentStage === "done";
  const panel = el("div", `completion ${ok ? "ok" : "bad"}`);
  panel.appendChild(el("p", undefined,
    ok ? "Integration complete." : `Pipeline failed: ${state.failureReason}`));
  if (artifactUrl && ok) {
    const link = el("a", "artifact-link", "download artifact");
    link.setAttribute("href", artifactUrl);
    link.setAttribute("download", "artifact.json");
    panel.appendChild(link);
  }
  host.appendChild(panel);
}
