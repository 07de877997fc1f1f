/** Typed client for the rerank HTTP API: POST /rerank and GET /health. */

export interface SeedDraft {
  title: string;
  abstract: string;
}

export interface CandidateInput {
  candidate_id: string;
  title: string;
  abstract: string;
}

export interface RerankRequest {
  seed: SeedDraft;
  candidates: CandidateInput[];
  alpha: number;
}

export interface ScoredCandidate {
  candidate_id: string;
  bg_score: number;
  mt_score: number;
  bg_norm: number;
  mt_norm: number;
  fused: number;
}

export interface Rankings {
  bg: string[];
  mt: string[];
  fused: string[];
}

export interface RerankResponse {
  alpha: number;
  candidates: ScoredCandidate[];
  rankings: Rankings;
  models?: Record<string, string>;
}

export interface HealthResponse {
  ready: boolean;
  missing: string[];
  models: Record<string, unknown>;
}

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** At most one rerank request is in flight; a new submit aborts the old one. */
export class RerankClient {
  private inflight: AbortController | null = null;

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async rerank(request: RerankRequest): Promise<RerankResponse> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const resp = await this.fetchFn(`${this.baseUrl}/rerank`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request),
        signal: controller.signal,
      });
      if (!resp.ok) {
        let detail = `HTTP ${resp.status}`;
        try {
          const body = (await resp.json()) as { error?: string };
          if (body.error) detail = `${detail}: ${body.error}`;
        } catch {
          // non-JSON error body; keep the status text
        }
        throw new ApiError(resp.status, detail);
      }
      return (await resp.json()) as RerankResponse;
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }

  async health(): Promise<HealthResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/health`);
    if (!resp.ok) throw new ApiError(resp.status, `HTTP ${resp.status}`);
    return (await resp.json()) as HealthResponse;
  }
}
