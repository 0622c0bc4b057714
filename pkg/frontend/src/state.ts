/** Session state machine for the choosing → done → training → reviewing flow.
 *
 * The server is the source of truth; this class only mirrors it and
 * enforces the client-side invariants: phases advance in one direction,
 * progress never decreases, and at most one choice is in flight.
 */

import type { JobStatus, Progress } from "./api.js";

export type Phase = "choosing" | "done" | "training" | "reviewing";

export interface CurrentFrame {
  readonly frameId: string;
  readonly images: readonly string[];
}

const PHASE_ORDER: Record<Phase, number> = {
  choosing: 0,
  done: 1,
  training: 2,
  reviewing: 3,
};

export class StateError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "StateError";
  }
}

export class UiSessionState {
  phase: Phase = "choosing";
  progress: Progress = { answered: 0, total: 0 };
  frame: CurrentFrame | null = null;
  /** True while a choice is awaiting the server's ack; blocks re-clicks. */
  locked = false;
  jobId: string | null = null;
  job: JobStatus | null = null;
  modelId: string | null = null;
  trainingError: string | null = null;

  constructor(readonly sessionId: string) {
    if (!sessionId) throw new StateError("sessionId must be non-empty");
  }

  get progressFraction(): number {
    return this.progress.total === 0
      ? 0
      : this.progress.answered / this.progress.total;
  }

  private advanceTo(next: Phase): void {
    if (PHASE_ORDER[next] < PHASE_ORDER[this.phase]) {
      throw new StateError(`illegal phase change ${this.phase} -> ${next}`);
    }
    this.phase = next;
  }

  private updateProgress(progress: Progress): void {
    if (
      progress.answered < this.progress.answered ||
      (this.progress.total !== 0 && progress.total !== this.progress.total)
    ) {
      throw new StateError(
        `progress went backwards: ${this.progress.answered}/${this.progress.total}` +
          ` -> ${progress.answered}/${progress.total}`,
      );
    }
    this.progress = progress;
  }

  /** Apply a /next payload: either the next frame to answer, or done. */
  loadedNext(payload: {
    frame_id?: string;
    images?: readonly string[];
    done?: boolean;
    progress: Progress;
  }): void {
    if (this.phase !== "choosing" && this.phase !== "done") {
      throw new StateError(`cannot load frames in phase ${this.phase}`);
    }
    this.updateProgress(payload.progress);
    if (payload.done) {
      this.frame = null;
      this.advanceTo("done");
      return;
    }
    if (!payload.frame_id || !payload.images) {
      throw new StateError("next-frame payload carries neither a frame nor done");
    }
    this.frame = { frameId: payload.frame_id, images: payload.images };
  }

  /** Reserve the in-flight slot; returns false when a choice is already pending. */
  beginChoice(): boolean {
    if (this.phase !== "choosing" || this.locked || this.frame === null) {
      return false;
    }
    this.locked = true;
    return true;
  }

  choiceAcknowledged(ack: { progress: Progress }): void {
    this.updateProgress(ack.progress);
    this.locked = false;
    this.frame = null;
  }

  choiceFailed(): void {
    this.locked = false;
  }

  beginTraining(jobId: string): void {
    if (this.phase !== "done" && this.phase !== "training") {
      throw new StateError(`cannot train in phase ${this.phase}`);
    }
    this.advanceTo("training");
    this.jobId = jobId;
    this.job = null;
    this.trainingError = null;
  }

  jobUpdated(job: JobStatus): Phase {
    if (this.phase !== "training") {
      throw new StateError(`job update arrived in phase ${this.phase}`);
    }
    this.job = job;
    if (job.status === "done" && job.model_id) {
      this.modelId = job.model_id;
      this.advanceTo("reviewing");
    } else if (job.status === "failed") {
      // Stay in training so the operator can retry; the banner shows why.
      this.trainingError = job.error ?? "training failed";
      this.jobId = null;
    }
    return this.phase;
  }
}

/** Rebuild local state from the server's view of an existing session. */
export function resumeState(info: {
  session_id: string;
  progress: Progress;
  done: boolean;
}): UiSessionState {
  const state = new UiSessionState(info.session_id);
  state.progress = info.progress;
  if (info.done) state.phase = "done";
  return state;
}
