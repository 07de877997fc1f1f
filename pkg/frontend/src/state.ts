/** Exploration session state and its pure transitions.
 *
 * The rendered order is always the fused ranking of the last response;
 * the UI never reorders on its own. Moving the alpha slider after a
 * response marks the results stale until the next submit. History is
 * append-only within a session and feeds "use this result as next seed".
 */

import type { CandidateInput, RerankRequest, RerankResponse, SeedDraft } from "./api.js";

export interface Snapshot {
  request: RerankRequest;
  response: RerankResponse;
}

export interface ExplorationState {
  seed: SeedDraft;
  candidates: CandidateInput[];
  alpha: number;
  lastResponse: RerankResponse | null;
  /** alpha at the time of the last response; staleness = alpha moved since */
  respondedAlpha: number | null;
  history: Snapshot[];
  banner: string | null;
}

export function newState(): ExplorationState {
  return {
    seed: { title: "", abstract: "" },
    candidates: [],
    alpha: 0.5,
    lastResponse: null,
    respondedAlpha: null,
    history: [],
    banner: null,
  };
}

export function setSeed(state: ExplorationState, seed: SeedDraft): ExplorationState {
  return { ...state, seed };
}

export function setAlpha(state: ExplorationState, alpha: number): ExplorationState {
  if (alpha < 0 || alpha > 1 || Number.isNaN(alpha)) {
    throw new RangeError(`alpha must be in [0, 1], got ${alpha}`);
  }
  return { ...state, alpha };
}

export function addCandidate(state: ExplorationState, candidate: CandidateInput): ExplorationState {
  if (state.candidates.some((c) => c.candidate_id === candidate.candidate_id)) {
    throw new Error(`duplicate candidate_id ${candidate.candidate_id}`);
  }
  return { ...state, candidates: [...state.candidates, candidate] };
}

export function removeCandidate(state: ExplorationState, candidateId: string): ExplorationState {
  return { ...state, candidates: state.candidates.filter((c) => c.candidate_id !== candidateId) };
}

/** Inline validation run before any request goes out. */
export function validateForSubmit(state: ExplorationState): string[] {
  const problems: string[] = [];
  if (!state.seed.title.trim()) problems.push("seed title is empty");
  if (!state.seed.abstract.trim()) problems.push("seed abstract is empty");
  if (state.candidates.length === 0) problems.push("add at least one candidate");
  for (const c of state.candidates) {
    if (!c.title.trim() || !c.abstract.trim()) {
      problems.push(`candidate ${c.candidate_id} is missing title or abstract`);
    }
  }
  return problems;
}

export function buildRequest(state: ExplorationState): RerankRequest {
  return {
    seed: { ...state.seed },
    candidates: state.candidates.map((c) => ({ ...c })),
    alpha: state.alpha,
  };
}

export function applyResponse(
  state: ExplorationState,
  request: RerankRequest,
  response: RerankResponse,
): ExplorationState {
  return {
    ...state,
    lastResponse: response,
    respondedAlpha: request.alpha,
    history: [...state.history, { request, response }],
    banner: null,
  };
}

export function setBanner(state: ExplorationState, banner: string | null): ExplorationState {
  return { ...state, banner };
}

export function isStale(state: ExplorationState): boolean {
  return state.lastResponse !== null && state.respondedAlpha !== state.alpha;
}

/** Displayed order: exactly the server's fused ranking, never recomputed. */
export function displayedOrder(state: ExplorationState): string[] {
  return state.lastResponse ? [...state.lastResponse.rankings.fused] : [];
}

/** Adopt a result as the next seed draft, closing the exploration loop. */
export function adoptAsSeed(state: ExplorationState, candidateId: string): ExplorationState {
  const found = state.candidates.find((c) => c.candidate_id === candidateId);
  if (!found) throw new Error(`unknown candidate ${candidateId}`);
  return { ...state, seed: { title: found.title, abstract: found.abstract } };
}
