/** Thin client for the job service; the UI talks to nothing else. */

import type { JobEvent, TaskForm } from "./types.js";

export class ServiceError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, init);
    } catch (error) {
      throw new ServiceError(`service unreachable: ${error}`);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        /* plain-text error body */
      }
      throw new ServiceError(detail, response.status);
    }
    return response.json();
  }

  async createJob(task: TaskForm, overrides: Record<string, unknown> = {}): Promise<string> {
    const body = { ...task, overrides };
    const reply = (await this.request("/jobs", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    })) as { job_id: string };
    return reply.job_id;
  }

  async answerProbe(jobId: string, answer: "yes" | "no"): Promise<void> {
    await this.request(`/jobs/${jobId}/hil`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ answer }),
    });
  }

  artifactUrl(jobId: string): string {
    return `${this.baseUrl}/jobs/${jobId}/artifact`;
  }

  /**
   * Subscribe to the job's SSE stream. Reconnects automatically and
   * resumes from the last delivered sequence number, so the consumer
   * sees every event exactly once, in order.
   */
  streamEvents(
    jobId: string,
    onEvent: (event: JobEvent) => void,
    isDone: () => boolean,
  ): () => void {
    let lastSeq = 0;
    let closed = false;
    let source: EventSource | null = null;

    const open = () => {
      if (closed || isDone()) return;
      source = new EventSource(`${this.baseUrl}/jobs/${jobId}/events?after=${lastSeq}`);
      const handle = (type: string) => (raw: MessageEvent) => {
        const seq = Number(raw.lastEventId);
        if (seq <= lastSeq) return; // duplicate after a racey reconnect
        lastSeq = seq;
        onEvent({ seq, event: type, data: JSON.parse(raw.data) });
      };
      for (const type of EVENT_TYPES) {
        source.addEventListener(type, handle(type));
      }
      source.onerror = () => {
        source?.close();
        if (!closed && !isDone()) setTimeout(open, 500);
      };
    };
    open();
    return () => {
      closed = true;
      source?.close();
    };
  }
}

/** Named SSE event types the service emits. */
export const EVENT_TYPES = [
  "stage",
  "ingested",
  "retrieval",
  "trace",
  "generated",
  "functions",
  "tests",
  "test_result",
  "revision",
  "debug_report",
  "hil_started",
  "hil_probe",
  "hil_feedback",
  "hil_no_counted",
  "hil_repair",
  "hil_repair_skipped",
  "hil_function_failed",
  "hil_transport_failure",
  "hil_completed",
  "hil_aborted",
  "done",
  "error",
] as const;
