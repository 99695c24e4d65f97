// Thin typed client over the inference service. A later predict() call
// aborts any still-running one so stale responses never land in the panel.

import type { PredictRequest, PredictResponse, SchemaDoc, Template, FieldError } from "./types.js";

export class ServiceError extends Error {
  constructor(
    message: string,
    public status: number,
    public fields: FieldError[] = [],
  ) {
    super(message);
  }
}

export class ApiClient {
  private inflight: AbortController | null = null;

  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!response.ok) {
      throw new ServiceError(`${path} failed with ${response.status}`, response.status);
    }
    return (await response.json()) as T;
  }

  async health(): Promise<{ status: string; model_hash?: string }> {
    return this.getJson("/health");
  }

  async schema(): Promise<SchemaDoc> {
    return this.getJson("/schema");
  }

  async templates(): Promise<Template[]> {
    const payload = await this.getJson<{ templates: Template[] }>("/templates");
    return payload.templates;
  }

  async predict(request: PredictRequest): Promise<PredictResponse> {
    if (this.inflight) {
      this.inflight.abort();
    }
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const response = await this.fetchImpl(`${this.baseUrl}/predict`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(request),
        signal: controller.signal,
      });
      if (!response.ok) {
        let fields: FieldError[] = [];
        try {
          const body = (await response.json()) as { detail?: FieldError[] };
          if (Array.isArray(body.detail)) fields = body.detail;
        } catch {
          // non-JSON error body: keep fields empty
        }
        throw new ServiceError(`prediction failed with ${response.status}`, response.status, fields);
      }
      return (await response.json()) as PredictResponse;
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }
}
