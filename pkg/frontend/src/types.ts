/** Wire types for the job service API and the UI's derived state. */

export interface JobEvent {
  seq: number;
  event: string;
  data: Record<string, unknown>;
}

export interface TaskForm {
  device_brand: string;
  device_model: string;
  platform_id: string;
  serial_number?: string;
  device_key?: string;
  function_description?: string;
}

export interface ProbeCard {
  functionId: string;
  question: string;
  seq: number;
}

export interface TraceLine {
  seq: number;
  text: string;
}

export const NO_CAP = 10;

/** Everything a view renders; derived solely from the event stream. */
export interface UiState {
  stages: string[];
  currentStage: string | null;
  traceLines: TraceLine[];
  functions: string[];
  testsTotal: number;
  testResults: Record<string, string>;
  probe: ProbeCard | null;
  /** yes/no buttons are enabled iff this is true */
  probeOutstanding: boolean;
  noCounts: Record<string, number>;
  failedFunctions: string[];
  done: boolean;
  usable: boolean | null;
  failureReason: string;
  errorMessage: string | null;
  lastSeq: number;
}
