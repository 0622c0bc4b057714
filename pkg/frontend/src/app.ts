/** Controller: wires the API client, the session state, and the views.
 *
 * All mutations flow through sequential API calls chained on a single
 * in-flight promise, so a second click while one is pending is a no-op
 * and `settle()` lets scripts await quiescence.
 */

import { ApiClient, ApiError, type TrainRequest } from "./api.js";
import { resumeState, UiSessionState } from "./state.js";
import {
  keyToPosition,
  renderChoiceGrid,
  renderCompare,
  renderNoSession,
  renderProgressAndTrain,
} from "./views.js";

export interface AppOptions {
  sessionId?: string;
  pollIntervalMs?: number;
  trainConfig?: TrainRequest["config"];
}

interface CompareView {
  frameId: string;
  wc: number;
  ww: number;
}

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class App {
  state: UiSessionState | null = null;
  variant = "hybrid";
  compare: CompareView | null = null;
  lastError: string | null = null;

  private frameIds: readonly string[] = [];
  private q = 4;
  private inflight: Promise<void> | null = null;
  private watching = false;
  private readonly pollIntervalMs: number;
  private keyHandler: ((event: KeyboardEvent) => void) | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly options: AppOptions = {},
  ) {
    this.pollIntervalMs = options.pollIntervalMs ?? 1000;
  }

  static sessionIdFromSearch(search: string): string | null {
    const value = new URLSearchParams(search).get("session");
    return value === null || value === "" ? null : value;
  }

  async start(): Promise<void> {
    const doc = this.root.ownerDocument;
    const sessionId =
      this.options.sessionId ??
      App.sessionIdFromSearch(doc.defaultView?.location.search ?? "");
    if (sessionId === null) {
      renderNoSession(this.root);
      return;
    }
    const info = await this.api.session(sessionId);
    this.state = resumeState(info);
    this.frameIds = info.frame_ids;
    this.q = info.q;
    this.keyHandler = (event: KeyboardEvent) => {
      const position = keyToPosition(event.key, this.q);
      if (position !== null) void this.pick(position);
    };
    doc.addEventListener("keydown", this.keyHandler);
    if (info.done) {
      this.render();
    } else {
      await this.run(() => this.loadNext());
    }
  }

  /** Detach document-level listeners (scripted flows mount several apps). */
  dispose(): void {
    if (this.keyHandler !== null) {
      this.root.ownerDocument.removeEventListener("keydown", this.keyHandler);
      this.keyHandler = null;
    }
  }

  /** Chain a task onto the single in-flight slot. */
  private run(task: () => Promise<void>): Promise<void> {
    const chained = (this.inflight ?? Promise.resolve())
      .then(task)
      .catch((error: unknown) => {
        this.lastError = error instanceof Error ? error.message : String(error);
        this.render();
      })
      .finally(() => {
        if (this.inflight === chained) this.inflight = null;
      });
    this.inflight = chained;
    return chained;
  }

  /** Await every queued API interaction (for scripted flows and tests). */
  async settle(): Promise<void> {
    while (this.inflight !== null) await this.inflight;
  }

  async waitForPhase(phase: string, timeoutMs = 60_000): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    while (this.state?.phase !== phase) {
      if (Date.now() > deadline) {
        throw new Error(
          `timed out waiting for phase ${phase} (still ${this.state?.phase})`,
        );
      }
      await sleep(10);
    }
  }

  private async loadNext(): Promise<void> {
    const state = this.state;
    if (state === null) return;
    const payload = await this.api.next(state.sessionId);
    state.loadedNext(payload);
    if (state.phase === "done" && this.compare === null) {
      this.lastError = null;
    }
    this.render();
  }

  pick(position: number): Promise<void> {
    const state = this.state;
    if (state === null || !state.beginChoice()) return Promise.resolve();
    const frameId = state.frame?.frameId ?? "";
    this.render();
    return this.run(async () => {
      try {
        const ack = await this.api.choose(state.sessionId, frameId, position);
        state.choiceAcknowledged(ack);
        this.lastError = null;
      } catch (error) {
        state.choiceFailed();
        if (!(error instanceof ApiError)) throw error;
        this.lastError = error.detail;
      }
      await this.loadNext();
    });
  }

  startTraining(): Promise<void> {
    const state = this.state;
    if (state === null || (state.phase !== "done" && state.trainingError === null)) {
      return Promise.resolve();
    }
    return this.run(async () => {
      const body: TrainRequest = { variant: this.variant };
      if (this.options.trainConfig) body.config = this.options.trainConfig;
      const { job_id } = await this.api.train(state.sessionId, body);
      state.beginTraining(job_id);
      this.lastError = null;
      this.render();
      this.watchJob();
    });
  }

  /** Poll the training job once a second until it settles. */
  private watchJob(): void {
    if (this.watching) return;
    this.watching = true;
    void (async () => {
      try {
        const state = this.state;
        while (state !== null && state.phase === "training" && state.jobId !== null) {
          await sleep(this.pollIntervalMs);
          const job = await this.api.job(state.jobId);
          const phase = state.jobUpdated(job);
          if (phase === "reviewing") this.openCompare();
          this.render();
        }
      } catch (error) {
        this.lastError = error instanceof Error ? error.message : String(error);
        this.render();
      } finally {
        this.watching = false;
      }
    })();
  }

  private openCompare(): void {
    const first = this.frameIds[0];
    if (first !== undefined) {
      this.compare = { frameId: first, wc: 0.5, ww: 1.0 };
    }
  }

  render(): void {
    const state = this.state;
    if (state === null) {
      renderNoSession(this.root);
      return;
    }
    const doc = this.root.ownerDocument;
    while (this.root.firstChild) this.root.removeChild(this.root.firstChild);

    const header = doc.createElement("div");
    header.className = "status-bar";
    this.root.appendChild(header);
    renderProgressAndTrain(header, {
      phase: state.phase,
      answered: state.progress.answered,
      total: state.progress.total,
      variant: this.variant,
      job: state.job,
      trainingError: state.trainingError,
      onVariantChange: (variant) => {
        this.variant = variant;
      },
      onTrain: () => void this.startTraining(),
    });

    if (this.lastError !== null) {
      const banner = doc.createElement("div");
      banner.className = "error-banner";
      banner.textContent = this.lastError;
      this.root.appendChild(banner);
    }

    if (state.phase === "choosing" && state.frame !== null) {
      const gridHost = doc.createElement("div");
      this.root.appendChild(gridHost);
      renderChoiceGrid(gridHost, {
        frame: state.frame,
        locked: state.locked,
        onPick: (position) => void this.pick(position),
      });
    } else if (state.phase === "reviewing" && this.compare !== null) {
      const compareHost = doc.createElement("div");
      this.root.appendChild(compareHost);
      const modelId = state.modelId ?? "";
      const view = this.compare;
      renderCompare(compareHost, {
        frameIds: this.frameIds,
        frameId: view.frameId,
        wc: view.wc,
        ww: view.ww,
        originalUrl: this.api.frameImageUrl(view.frameId),
        previewUrl: this.api.previewUrl(modelId, view.frameId, view.wc, view.ww),
        onFrameChange: (frameId) => {
          view.frameId = frameId;
          this.render();
        },
        onWindowChange: (wc, ww) => {
          view.wc = wc;
          view.ww = ww;
          this.render();
        },
        onPreviewError: () => {
          // A missing frame resets the picker to the first known frame.
          const first = this.frameIds[0];
          if (first !== undefined && view.frameId !== first) {
            view.frameId = first;
            this.render();
          }
        },
      });
    }
  }
}
