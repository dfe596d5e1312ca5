// Thin typed client for the backend; every method maps to one endpoint and
// surfaces the backend's {code, message} errors as ApiError.

import type {
  Axis,
  CaseInfo,
  ExportResult,
  HealthInfo,
  PlaceResult,
  SliceGeometry,
  Snapshot,
  Suggestion,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface SliceResponse {
  image: Blob;
  geometry: SliceGeometry;
}

async function errorFrom(resp: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const body = (await resp.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(resp.status, code, message);
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  private url(path: string): string {
    return `${this.base}/api/v1${path}`;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await fetch(this.url(path), init);
    } catch (err) {
      throw new ApiError(0, "unreachable", `backend unreachable: ${String(err)}`);
    }
    if (!resp.ok) throw await errorFrom(resp);
    return (await resp.json()) as T;
  }

  private post<T>(path: string, body?: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: body === undefined ? "{}" : JSON.stringify(body),
    });
  }

  health(): Promise<HealthInfo> {
    return this.request<HealthInfo>("/healthz");
  }

  listCases(): Promise<CaseInfo[]> {
    return this.request<CaseInfo[]>("/cases");
  }

  startSession(caseId: string, noise = false, seed = 0): Promise<Snapshot> {
    return this.post<Snapshot>("/sessions", { case_id: caseId, noise, seed });
  }

  getSession(sessionId: string): Promise<Snapshot> {
    return this.request<Snapshot>(`/sessions/${sessionId}`);
  }

  placeProbe(
    sessionId: string,
    centre: readonly [number, number, number],
    diameter: number,
  ): Promise<PlaceResult> {
    return this.post<PlaceResult>(`/sessions/${sessionId}/probes`, { centre, diameter });
  }

  advance(sessionId: string): Promise<Snapshot> {
    return this.post<Snapshot>(`/sessions/${sessionId}/advance`);
  }

  /** `overlays` is "all", "none", or a comma list of gland/tumour/ablation. */
  async fetchSlice(
    sessionId: string,
    axis: Axis,
    index: number,
    overlays = "all",
  ): Promise<SliceResponse> {
    const query = `axis=${axis}&index=${index}&overlays=${encodeURIComponent(overlays)}`;
    let resp: Response;
    try {
      resp = await fetch(this.url(`/sessions/${sessionId}/slice?${query}`));
    } catch (err) {
      throw new ApiError(0, "unreachable", `backend unreachable: ${String(err)}`);
    }
    if (!resp.ok) throw await errorFrom(resp);
    const header = resp.headers.get("X-Slice-Geometry");
    if (!header) throw new ApiError(0, "bad_slice", "slice response lacks X-Slice-Geometry");
    return {
      image: await resp.blob(),
      geometry: JSON.parse(header) as SliceGeometry,
    };
  }

  suggest(sessionId: string, planner: string, seed = 0): Promise<Suggestion> {
    return this.request<Suggestion>(`/sessions/${sessionId}/suggest?planner=${planner}&seed=${seed}`);
  }

  exportSession(sessionId: string): Promise<ExportResult> {
    return this.post<ExportResult>(`/sessions/${sessionId}/export`);
  }
}
