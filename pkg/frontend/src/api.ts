import type {
  AnnotationPoint,
  ApiErrorBody,
  ExportManifest,
  PipelineConfigDto,
  ProcessorManifest,
  Project,
  RunState,
  SavedPipeline,
  SaveResult,
} from "./types";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Error raised for any non-2xx response, carrying the service error body. */
export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly detail: Record<string, unknown>;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.name = "ApiError";
    this.status = status;
    this.code = body.code;
    this.detail = body.detail;
  }
}

async function errorBody(response: Response): Promise<ApiErrorBody> {
  try {
    const parsed = (await response.json()) as Partial<ApiErrorBody>;
    return {
      code: parsed.code ?? "HttpError",
      message: parsed.message ?? `request failed with status ${response.status}`,
      detail: parsed.detail ?? {},
    };
  } catch {
    return {
      code: "HttpError",
      message: `request failed with status ${response.status}`,
      detail: {},
    };
  }
}

/**
 * Thin typed wrapper over the service HTTP surface. Every method maps to
 * exactly one endpoint; no business logic lives here.
 */
export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl = "", fetchFn?: FetchLike) {
    this.base = baseUrl.replace(/\/$/, "");
    const fallback: FetchLike = (input, init) => globalThis.fetch(input, init);
    this.fetchFn = fetchFn ?? fallback;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(this.base + path, init);
    if (!response.ok) {
      throw new ApiError(response.status, await errorBody(response));
    }
    return (await response.json()) as T;
  }

  getProject(): Promise<Project> {
    return this.request("GET", "/project");
  }

  async getProcessors(): Promise<ProcessorManifest[]> {
    const body = await this.request<{ processors: ProcessorManifest[] }>("GET", "/processors");
    return body.processors;
  }

  /** URL for an <img> tag; the frame endpoint streams PNG bytes. */
  frameUrl(camera: string, index: number): string {
    return `${this.base}/frames/${encodeURIComponent(camera)}/${index}`;
  }

  async getAnnotations(camera?: string, frame?: number): Promise<AnnotationPoint[]> {
    const query = new URLSearchParams();
    if (camera !== undefined) query.set("camera", camera);
    if (frame !== undefined) query.set("frame", String(frame));
    const encoded = query.toString();
    const suffix = encoded === "" ? "" : `?${encoded}`;
    const body = await this.request<{ annotations: AnnotationPoint[] }>(
      "GET",
      `/annotations${suffix}`,
    );
    return body.annotations;
  }

  putAnnotation(point: {
    camera: string;
    frame: number;
    part: string;
    u: number;
    v: number;
    provenance?: string;
    residual?: number;
  }): Promise<AnnotationPoint> {
    return this.request("POST", "/annotations", point);
  }

  async deleteAnnotation(camera: string, frame: number, part: string): Promise<boolean> {
    const query = new URLSearchParams({ camera, frame: String(frame), part });
    const body = await this.request<{ removed: boolean }>(
      "DELETE",
      `/annotations?${query.toString()}`,
    );
    return body.removed;
  }

  async interpolateAnnotations(
    camera: string,
    part: string,
    frameA: number,
    frameB: number,
  ): Promise<AnnotationPoint[]> {
    const body = await this.request<{ filled: AnnotationPoint[] }>(
      "POST",
      "/annotations/interpolate",
      { camera, part, frame_a: frameA, frame_b: frameB },
    );
    return body.filled;
  }

  async reproject(frame: number, part: string): Promise<AnnotationPoint[]> {
    const body = await this.request<{ proposals: AnnotationPoint[] }>("POST", "/reproject", {
      frame,
      part,
    });
    return body.proposals;
  }

  async selectCalibrationFrames(count: number): Promise<number[]> {
    const body = await this.request<{ frames: number[] }>(
      "POST",
      "/calibration/select-frames",
      { count },
    );
    return body.frames;
  }

  exportEasywand(outDir?: string): Promise<ExportManifest> {
    const payload = outDir === undefined ? {} : { out_dir: outDir };
    return this.request("POST", "/calibration/export-easywand", payload);
  }

  importDlt(path: string): Promise<Project> {
    return this.request("POST", "/calibration/import-dlt", { path });
  }

  async listPipelines(): Promise<SavedPipeline[]> {
    const body = await this.request<{ pipelines: SavedPipeline[] }>("GET", "/pipelines");
    return body.pipelines;
  }

  savePipeline(id: string, config: PipelineConfigDto): Promise<SaveResult> {
    return this.request("POST", "/pipelines", { id, config });
  }

  submitRun(pipelineId: string): Promise<{ run_id: string; status: string }> {
    return this.request("POST", `/pipelines/${encodeURIComponent(pipelineId)}/run`);
  }

  getRun(runId: string): Promise<RunState> {
    return this.request("GET", `/runs/${encodeURIComponent(runId)}`);
  }

  /** Artifacts are addressed by stage index within the run's report. */
  artifactUrl(runId: string, stageIndex: number): string {
    return `${this.base}/runs/${encodeURIComponent(runId)}/artifacts/${stageIndex}`;
  }

  /** Fetch a run artifact as CSV text for inline previews. */
  async getArtifact(runId: string, stageIndex: number): Promise<string> {
    const response = await this.fetchFn(this.artifactUrl(runId, stageIndex), { method: "GET" });
    if (!response.ok) {
      throw new ApiError(response.status, await errorBody(response));
    }
    return response.text();
  }
}
