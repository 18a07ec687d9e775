/** Typed client for the backend HTTP API. All rendering data comes from
 * these payloads verbatim; the UI adds no logic of its own. */

export type BannerLevel = "error" | "warning" | "success";

export interface Banner {
  level: BannerLevel;
  messages: string[];
}

export interface UploadResult {
  dataset_id: string | null;
  banner: Banner;
  report: Record<string, number>;
}

export interface ModelInfo {
  id: string;
  display_name: string;
  architecture: string;
  defaults: Record<string, unknown>;
}

export interface JobSnapshot {
  job_id: string;
  state: string;
  progress: number;
  epoch?: number | null;
  latest_loss?: number | null;
  message?: string;
}

export interface SingleEvalResult {
  answer: string;
  probability: number;
  annotated_image_url: string;
}

export interface BatchEvalResult {
  results_csv_url: string;
  annotated_zip_url: string;
  n_processed: number;
  n_failed: number;
}

export interface SampleInfo {
  image_id: string;
  image_url: string;
  questions: string[];
}

export class ApiError extends Error {
  constructor(
    public code: string,
    public httpStatus: number,
    message: string,
    public body: unknown = null,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseJson(resp: Response): Promise<unknown> {
  try {
    return await resp.json();
  } catch {
    return null;
  }
}

export class ApiClient {
  constructor(
    private fetchImpl: FetchLike = (...args) => fetch(...args),
    private base: string = "",
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    const body = (await parseJson(resp)) as Record<string, unknown> | null;
    if (!resp.ok) {
      throw new ApiError(
        (body?.code as string) ?? "ERROR",
        resp.status,
        (body?.message as string) ?? resp.statusText,
        body,
      );
    }
    return body as T;
  }

  async uploadDataset(images: Blob, qa: Blob): Promise<UploadResult> {
    const form = new FormData();
    form.append("images", images, "images.zip");
    form.append("qa", qa, "qa.csv");
    try {
      return await this.request<UploadResult>("/api/dataset", {
        method: "POST",
        body: form,
      });
    } catch (err) {
      // a rejected dataset still carries a renderable error banner
      if (err instanceof ApiError && err.code === "DATASET_INVALID" && err.body) {
        return err.body as UploadResult;
      }
      throw err;
    }
  }

  listModels(): Promise<ModelInfo[]> {
    return this.request<ModelInfo[]>("/api/models");
  }

  startFineTune(modelId: string | null, datasetId: string | null): Promise<{ job_id: string }> {
    const body: Record<string, string> = {};
    if (modelId) body.model_id = modelId;
    if (datasetId) body.dataset_id = datasetId;
    return this.request("/api/finetune", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  jobStatus(jobId: string): Promise<JobSnapshot> {
    return this.request<JobSnapshot>(`/api/finetune/${encodeURIComponent(jobId)}`);
  }

  async evalSingle(image: Blob, question: string): Promise<SingleEvalResult> {
    const form = new FormData();
    form.append("image", image, "image.png");
    form.append("question", question);
    return this.request<SingleEvalResult>("/api/eval/single", {
      method: "POST",
      body: form,
    });
  }

  async evalBatch(images: Blob, questions: Blob): Promise<BatchEvalResult> {
    const form = new FormData();
    form.append("images", images, "images.zip");
    form.append("questions", questions, "questions.csv");
    return this.request<BatchEvalResult>("/api/eval/batch", {
      method: "POST",
      body: form,
    });
  }

  sampleInfo(): Promise<SampleInfo> {
    return this.request<SampleInfo>("/api/sample");
  }

  async fetchBlob(url: string): Promise<Blob> {
    const resp = await this.fetchImpl(this.base + url);
    if (!resp.ok) {
      throw new ApiError("FILE_NOT_FOUND", resp.status, `could not fetch ${url}`);
    }
    return resp.blob();
  }
}
