/** The single reducer all UI state flows through.
 *
 * Views never mutate state themselves: replaying the same event stream
 * into a fresh client reproduces the same view, which is also exactly
 * how reconnects work (resume from lastSeq, reduce the rest).
 */

import type { JobEvent, UiState } from "./types.js";

export function initialState(): UiState {
  return {
    stages: [],
    currentStage: null,
    traceLines: [],
    functions: [],
    testsTotal: 0,
    testResults: {},
    probe: null,
    probeOutstanding: false,
    noCounts: {},
    failedFunctions: [],
    done: false,
    usable: null,
    failureReason: "",
    errorMessage: null,
    lastSeq: 0,
  };
}

function asString(value: unknown): string {
  return typeof value === "string" ? value : JSON.stringify(value);
}

export function reduce(state: UiState, event: JobEvent): UiState {
  const next: UiState = {
    ...state,
    stages: state.stages.slice(),
    traceLines: state.traceLines.slice(),
    testResults: { ...state.testResults },
    noCounts: { ...state.noCounts },
    failedFunctions: state.failedFunctions.slice(),
    lastSeq: Math.max(state.lastSeq, event.seq),
  };
  const data = event.data;

  switch (event.event) {
    case "stage": {
      const stage = asString(data.stage);
      next.stages.push(stage);
      next.currentStage = stage;
      break;
    }
    case "trace": {
      const tool = data.tool ? ` ${asString(data.tool)}` : "";
      const path = data.path ? ` ${asString(data.path)}` : "";
      next.traceLines.push({
        seq: event.seq,
        text: `step ${data.step} [${asString(data.phase)}] ${asString(data.kind)}${tool}${path}`,
      });
      break;
    }
    case "functions": {
      next.functions = (data.functions as string[]) ?? [];
      for (const fn of next.functions) {
        if (!(fn in next.noCounts)) next.noCounts[fn] = 0;
      }
      break;
    }
    case "tests": {
      next.testsTotal = (data.count as number) ?? 0;
      break;
    }
    case "test_result": {
      next.testResults[asString(data.test_id)] = asString(data.verdict);
      break;
    }
    case "hil_probe": {
      next.probe = {
        functionId: asString(data.function_id),
        question: asString(data.question),
        seq: event.seq,
      };
      next.probeOutstanding = true;
      break;
    }
    case "hil_feedback": {
      // the probe is answered; buttons stay disabled until the next probe
      next.probeOutstanding = false;
      break;
    }
    case "hil_no_counted": {
      next.noCounts[asString(data.function_id)] = data.no_count as number;
      break;
    }
    case "hil_function_failed": {
      const fn = asString(data.function_id);
      if (!next.failedFunctions.includes(fn)) next.failedFunctions.push(fn);
      break;
    }
    case "hil_completed": {
      next.probeOutstanding = false;
      break;
    }
    case "done": {
      next.done = true;
      next.usable = (data.usable as boolean) ?? null;
      next.failureReason = asString(data.failure_reason ?? "");
      next.probeOutstanding = false;
      break;
    }
    case "error": {
      next.errorMessage = asString(data.message ?? "unknown error");
      next.probeOutstanding = false;
      break;
    }
    default:
      // ingested / generated / retrieval / debug_report / hil_* bookkeeping
      // events carry no view state of their own
      break;
  }
  return next;
}

export function replay(events: JobEvent[]): UiState {
  return events.reduce(reduce, initialState());
}
