/** Typed client for the study service's JSON API.
 *
 * Every call goes through `request`, which raises ApiError with the
 * server's status code and detail message on any non-2xx response, so
 * callers can branch on status (409 duplicate, 404 missing, ...).
 */

export interface Progress {
  readonly answered: number;
  readonly total: number;
}

export interface SessionInfo {
  readonly session_id: string;
  readonly user_id: string;
  readonly q: number;
  readonly progress: Progress;
  readonly done: boolean;
  readonly frame_ids: readonly string[];
}

export interface NextFramePayload {
  readonly frame_id?: string;
  readonly images?: readonly string[];
  readonly done?: boolean;
  readonly progress: Progress;
}

export interface ChoiceAck {
  readonly progress: Progress;
}

export interface JobStatus {
  readonly status: "queued" | "running" | "done" | "failed";
  readonly epoch: number;
  readonly loss: number | null;
  readonly total_epochs?: number;
  readonly model_id?: string;
  readonly error?: string;
}

export interface ModelInfo {
  readonly model_id: string;
  readonly user_id: string;
  readonly variant: string;
  readonly sigmas: readonly number[];
  readonly epsilons: readonly number[];
}

export interface SessionConfig {
  images_dir: string;
  scenarios_per_image?: number;
  q?: number;
  seed?: number;
  spread?: number;
  center_sigmas?: readonly number[];
  center_epsilons?: readonly number[];
}

export interface TrainRequest {
  variant: string;
  config?: {
    epochs?: number;
    lr?: number;
    batch_size?: number;
    seed?: number;
  };
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

type FetchLike = typeof fetch;

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string = "",
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((...args) => fetch(...args));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  createSession(userId: string, config: SessionConfig): Promise<{ session_id: string }> {
    return this.post("/api/sessions", { user_id: userId, config });
  }

  session(sessionId: string): Promise<SessionInfo> {
    return this.request(`/api/sessions/${sessionId}`);
  }

  next(sessionId: string): Promise<NextFramePayload> {
    return this.request(`/api/sessions/${sessionId}/next`);
  }

  choose(sessionId: string, frameId: string, position: number): Promise<ChoiceAck> {
    return this.post(`/api/sessions/${sessionId}/choice`, {
      frame_id: frameId,
      position,
    });
  }

  train(sessionId: string, body: TrainRequest): Promise<{ job_id: string }> {
    return this.post(`/api/sessions/${sessionId}/train`, body);
  }

  job(jobId: string): Promise<JobStatus> {
    return this.request(`/api/jobs/${jobId}`);
  }

  model(modelId: string): Promise<ModelInfo> {
    return this.request(`/api/models/${modelId}`);
  }

  candidateImageUrl(frameId: string, position: number): string {
    return `${this.baseUrl}/api/images/${frameId}/${position}`;
  }

  frameImageUrl(frameId: string): string {
    return `${this.baseUrl}/api/frames/${frameId}`;
  }

  previewUrl(modelId: string, frameId: string, wc: number, ww: number): string {
    return (
      `${this.baseUrl}/api/models/${modelId}/preview/${frameId}` +
      `?wc=${encodeURIComponent(wc)}&ww=${encodeURIComponent(ww)}`
    );
  }
}
