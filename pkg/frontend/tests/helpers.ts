/** Mock-server helpers: reproduce the API's normalization/fusion contract
 * so fixture responses look exactly like real ones. */

import { vi } from "vitest";
import type { CandidateInput, RerankRequest, RerankResponse } from "../src/api.js";

export function minmax(values: number[]): number[] {
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  if (hi === lo) return values.map(() => 0.5);
  return values.map((v) => (v - lo) / (hi - lo));
}

export function rankIds(ids: string[], scores: number[]): string[] {
  return ids
    .map((id, i) => [id, scores[i]] as const)
    .sort((a, b) => (b[1] - a[1]) || (a[0] < b[0] ? -1 : a[0] > b[0] ? 1 : 0))
    .map(([id]) => id);
}

export interface FacetScores {
  bg: Record<string, number>;
  mt: Record<string, number>;
}

/** Build the response the server would produce for this request. */
export function mockResponse(request: RerankRequest, scores: FacetScores): RerankResponse {
  const ids = request.candidates.map((c) => c.candidate_id);
  const bgRaw = ids.map((id) => scores.bg[id]);
  const mtRaw = ids.map((id) => scores.mt[id]);
  const bgNorm = minmax(bgRaw);
  const mtNorm = minmax(mtRaw);
  const fused = ids.map((_, i) => request.alpha * bgNorm[i] + (1 - request.alpha) * mtNorm[i]);
  return {
    alpha: request.alpha,
    candidates: ids.map((id, i) => ({
      candidate_id: id,
      bg_score: bgRaw[i],
      mt_score: mtRaw[i],
      bg_norm: bgNorm[i],
      mt_norm: mtNorm[i],
      fused: fused[i],
    })),
    rankings: {
      bg: rankIds(ids, bgRaw),
      mt: rankIds(ids, mtRaw),
      fused: rankIds(ids, fused),
    },
  };
}

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

/** fetch stub that serves /rerank from the scoring tables. */
export function mockServer(scores: FacetScores) {
  return vi.fn(async (url: string, init?: RequestInit) => {
    if (url.endsWith("/rerank")) {
      const request = JSON.parse(String(init?.body)) as RerankRequest;
      return jsonResponse(200, mockResponse(request, scores));
    }
    if (url.endsWith("/health")) {
      return jsonResponse(200, { ready: true, missing: [], models: {} });
    }
    return jsonResponse(404, { error: "no route" });
  });
}

export function candidates(n: number): CandidateInput[] {
  return Array.from({ length: n }, (_, i) => ({
    candidate_id: `c${String(i).padStart(2, "0")}`,
    title: `candidate ${i}`,
    abstract: `abstract ${i}`,
  }));
}
