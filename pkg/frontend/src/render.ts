/** DOM rendering: ranked result list, facet quadrant view, banners.
 *
 * Rendering is a pure projection of ExplorationState; candidates appear in
 * the order the server returned (rankings.fused), with per-facet badges.
 */

import type { RerankResponse, ScoredCandidate } from "./api.js";
import { displayedOrder, isStale, type ExplorationState } from "./state.js";

export type Quadrant =
  | "same-problem-different-method"
  | "same-method-different-problem"
  | "both-high"
  | "both-low";

export const QUADRANT_THRESHOLD = 0.5;

export function quadrantOf(bgNorm: number, mtNorm: number): Quadrant {
  const bgHigh = bgNorm >= QUADRANT_THRESHOLD;
  const mtHigh = mtNorm >= QUADRANT_THRESHOLD;
  if (bgHigh && mtHigh) return "both-high";
  if (bgHigh) return "same-problem-different-method";
  if (mtHigh) return "same-method-different-problem";
  return "both-low";
}

function byId(response: RerankResponse): Map<string, ScoredCandidate> {
  return new Map(response.candidates.map((c) => [c.candidate_id, c]));
}

function badge(label: string, value: number, cls: string): string {
  return `<span class="badge ${cls}" title="${label}">${label} ${value.toFixed(2)}</span>`;
}

export function renderResults(container: HTMLElement, state: ExplorationState): void {
  container.innerHTML = "";
  container.classList.toggle("stale", isStale(state));
  const stale = document.createElement("div");
  stale.className = "stale-indicator";
  stale.textContent = isStale(state)
    ? "weights changed since these results; press rerank to refresh"
    : "";
  stale.hidden = !isStale(state);
  container.appendChild(stale);
  if (!state.lastResponse) return;
  const scores = byId(state.lastResponse);
  const list = document.createElement("ol");
  list.className = "results";
  for (const id of displayedOrder(state)) {
    const entry = scores.get(id);
    if (!entry) continue;
    const meta = state.candidates.find((c) => c.candidate_id === id);
    const row = document.createElement("li");
    row.className = "result-row";
    row.dataset.candidateId = id;
    row.innerHTML =
      `<span class="result-title">${meta ? meta.title : id}</span> ` +
      badge("bg", entry.bg_norm, "badge-bg") +
      badge("mt", entry.mt_norm, "badge-mt") +
      badge("fused", entry.fused, "badge-fused") +
      `<button type="button" class="adopt" data-candidate-id="${id}">use as seed</button>`;
    list.appendChild(row);
  }
  container.appendChild(list);
}

export function renderQuadrants(
  container: HTMLElement,
  state: ExplorationState,
  onPick: (candidateId: string) => void,
): void {
  container.innerHTML = "";
  if (!state.lastResponse) return;
  const names: Quadrant[] = [
    "same-problem-different-method",
    "both-high",
    "both-low",
    "same-method-different-problem",
  ];
  const cells = new Map<Quadrant, HTMLElement>();
  for (const name of names) {
    const cell = document.createElement("div");
    cell.className = `quadrant quadrant-${name}`;
    cell.dataset.quadrant = name;
    const label = document.createElement("h4");
    label.textContent = name.replace(/-/g, " ");
    cell.appendChild(label);
    container.appendChild(cell);
    cells.set(name, cell);
  }
  for (const entry of state.lastResponse.candidates) {
    const point = document.createElement("button");
    point.type = "button";
    point.className = "point";
    point.dataset.candidateId = entry.candidate_id;
    point.dataset.quadrant = quadrantOf(entry.bg_norm, entry.mt_norm);
    point.style.left = `${Math.round(100 * entry.mt_norm)}%`;
    point.style.bottom = `${Math.round(100 * entry.bg_norm)}%`;
    point.title = `${entry.candidate_id}: bg ${entry.bg_norm.toFixed(2)}, mt ${entry.mt_norm.toFixed(2)}`;
    point.textContent = "●";
    point.addEventListener("click", () => onPick(entry.candidate_id));
    cells.get(quadrantOf(entry.bg_norm, entry.mt_norm))!.appendChild(point);
  }
}

export function renderBanner(
  container: HTMLElement,
  state: ExplorationState,
  onDismiss: () => void,
): void {
  container.innerHTML = "";
  if (!state.banner) return;
  const banner = document.createElement("div");
  banner.className = "banner banner-error";
  banner.setAttribute("role", "alert");
  const text = document.createElement("span");
  text.textContent = state.banner;
  const dismiss = document.createElement("button");
  dismiss.type = "button";
  dismiss.className = "banner-dismiss";
  dismiss.textContent = "dismiss";
  dismiss.addEventListener("click", onDismiss);
  banner.append(text, dismiss);
  container.appendChild(banner);
}

export function renderValidation(container: HTMLElement, problems: string[]): void {
  container.innerHTML = "";
  if (!problems.length) return;
  const list = document.createElement("ul");
  list.className = "validation-problems";
  for (const p of problems) {
    const item = document.createElement("li");
    item.textContent = p;
    list.appendChild(item);
  }
  container.appendChild(list);
}
