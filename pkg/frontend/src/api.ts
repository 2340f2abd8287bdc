// Typed client for the segmentation service. The UI never computes any
// segmentation math; everything numeric comes back from these routes.

export type JobState =
  | "created"
  | "fields_ready"
  | "running"
  | "paused"
  | "converged"
  | "failed";

export interface JobDoc {
  id: string;
  slice_id: string;
  state: JobState;
  iteration: number;
  field_version: number;
  convergence_iteration: number | null;
  error: string | null;
  config: Record<string, unknown>;
}

// [row, col] in image pixel coordinates, matching the service convention.
export type Point = [number, number];

export interface PromptPayload {
  strokes: Point[][];
}

export interface ContourSnapshot {
  iteration: number;
  polylines: Point[][];
}

export interface PromptReply {
  field_version: number;
  state: JobState;
}

export interface RunReply {
  state: JobState;
  target_iteration: number;
}

interface DetailItem {
  loc?: (string | number)[];
  msg?: string;
}

export class ApiError extends Error {
  readonly status: number;
  readonly field: string | null;

  constructor(status: number, detail: unknown) {
    super(describeDetail(status, detail));
    this.status = status;
    this.field = fieldOfDetail(detail);
  }
}

function describeDetail(status: number, detail: unknown): string {
  if (typeof detail === "string") return detail;
  if (Array.isArray(detail) && detail.length > 0) {
    const d = detail[0] as DetailItem;
    const loc = (d.loc ?? []).join(".");
    return loc ? `${loc}: ${d.msg ?? "invalid"}` : d.msg ?? "invalid";
  }
  return `request failed with status ${status}`;
}

function fieldOfDetail(detail: unknown): string | null {
  if (!Array.isArray(detail) || detail.length === 0) return null;
  const loc = (detail[0] as DetailItem).loc ?? [];
  const last = loc[loc.length - 1];
  return typeof last === "string" ? last : null;
}

export class FigacClient {
  constructor(
    readonly base: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchFn(`${this.base}${path}`, init);
    if (!resp.ok) {
      let detail: unknown = null;
      try {
        detail = ((await resp.json()) as { detail?: unknown }).detail ?? null;
      } catch {
        // non-JSON error body, keep the bare status
      }
      throw new ApiError(resp.status, detail);
    }
    return resp;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.request(path, init);
    return (await resp.json()) as T;
  }

  private postJson<T>(path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method: "POST" };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    return this.json<T>(path, init);
  }

  async uploadSlice(png: BlobPart, filename = "slice.png"): Promise<string> {
    const form = new FormData();
    form.append("file", new Blob([png], { type: "image/png" }), filename);
    const doc = await this.json<{ slice_id: string }>("/slices", {
      method: "POST",
      body: form,
    });
    return doc.slice_id;
  }

  sliceUrl(sliceId: string): string {
    return `${this.base}/slices/${sliceId}`;
  }

  fieldUrl(jobId: string, name: "g" | "beta"): string {
    return `${this.base}/jobs/${jobId}/fields/${name}`;
  }

  maskUrl(jobId: string): string {
    return `${this.base}/jobs/${jobId}/mask`;
  }

  createJob(sliceId: string, config: Record<string, unknown> = {}): Promise<JobDoc> {
    return this.postJson<JobDoc>("/jobs", { slice_id: sliceId, config });
  }

  getJob(jobId: string): Promise<JobDoc> {
    return this.json<JobDoc>(`/jobs/${jobId}`);
  }

  setPrompts(jobId: string, prompts: PromptPayload): Promise<PromptReply> {
    return this.postJson<PromptReply>(`/jobs/${jobId}/prompts`, prompts);
  }

  run(jobId: string, iters: number): Promise<RunReply> {
    return this.postJson<RunReply>(`/jobs/${jobId}/run`, { iters });
  }

  pause(jobId: string): Promise<JobDoc> {
    return this.postJson<JobDoc>(`/jobs/${jobId}/pause`);
  }

  contour(jobId: string, iter: number | "latest" = "latest"): Promise<ContourSnapshot> {
    return this.json<ContourSnapshot>(`/jobs/${jobId}/contour?iter=${iter}`);
  }

  async slicePng(sliceId: string): Promise<Uint8Array<ArrayBuffer>> {
    const resp = await this.request(`/slices/${sliceId}`);
    return new Uint8Array(await resp.arrayBuffer());
  }

  async fieldPng(jobId: string, name: "g" | "beta"): Promise<Uint8Array<ArrayBuffer>> {
    const resp = await this.request(`/jobs/${jobId}/fields/${name}`);
    return new Uint8Array(await resp.arrayBuffer());
  }

  async maskPng(jobId: string): Promise<Uint8Array<ArrayBuffer>> {
    const resp = await this.request(`/jobs/${jobId}/mask`);
    return new Uint8Array(await resp.arrayBuffer());
  }
}
