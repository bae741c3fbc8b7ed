/** Thin client over the advisor service with latest-wins de-duplication for
 * rapid re-predict requests (slider drags): stale responses never render. */

import {
  CateResponse,
  CounterfactualSet,
  DidResult,
  Features,
  GlobalReport,
  Meta,
  PredictResponse,
  isMeta,
  isPredictResponse,
} from "./types";

export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private predictToken = 0;

  constructor(
    readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, init);
    const body = await res.json().catch(() => ({}));
    if (!res.ok) {
      const detail = (body as { detail?: string }).detail ?? res.statusText;
      throw new ApiError(res.status, detail);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async meta(): Promise<Meta> {
    const doc = await this.request<Meta>("/meta");
    if (!isMeta(doc)) throw new ApiError(500, "malformed /meta payload");
    return doc;
  }

  /** Latest-wins: resolves null when a newer predict has been issued since. */
  async predict(features: Features): Promise<PredictResponse | null> {
    const token = ++this.predictToken;
    const doc = await this.post<PredictResponse>("/predict", { features });
    if (token !== this.predictToken) return null;
    if (!isPredictResponse(doc)) throw new ApiError(500, "malformed /predict payload");
    return doc;
  }

  counterfactuals(features: Features, k: number,
                  constraints?: Record<string, unknown>): Promise<CounterfactualSet> {
    const payload: Record<string, unknown> = { features, k };
    if (constraints) payload.constraints = constraints;
    return this.post<CounterfactualSet>("/counterfactuals", payload);
  }

  globalExplanations(): Promise<GlobalReport> {
    return this.request<GlobalReport>("/explanations/global");
  }

  cate(covariates: Record<string, number>): Promise<CateResponse> {
    return this.post<CateResponse>("/cate", { covariates });
  }

  evaluationDid(): Promise<DidResult> {
    return this.request<DidResult>("/evaluation/did");
  }

  health(): Promise<{ status: string }> {
    return this.request<{ status: string }>("/health");
  }
}
