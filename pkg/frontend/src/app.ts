/** Wires state, client, and renderers into the exploration console. */

import { ApiError, RerankClient } from "./api.js";
import {
  addCandidate,
  adoptAsSeed,
  applyResponse,
  buildRequest,
  newState,
  removeCandidate,
  setAlpha,
  setBanner,
  setSeed,
  validateForSubmit,
  type ExplorationState,
} from "./state.js";
import { renderBanner, renderQuadrants, renderResults, renderValidation } from "./render.js";

export interface App {
  getState(): ExplorationState;
  submit(): Promise<void>;
  root: HTMLElement;
}

const SKELETON = `
  <div class="banner-slot"></div>
  <section class="seed-editor">
    <h3>Seed paper</h3>
    <input class="seed-title" placeholder="title" />
    <textarea class="seed-abstract" placeholder="abstract"></textarea>
  </section>
  <section class="candidate-editor">
    <h3>Candidates</h3>
    <input class="cand-id" placeholder="id" />
    <input class="cand-title" placeholder="title" />
    <textarea class="cand-abstract" placeholder="abstract"></textarea>
    <button type="button" class="add-candidate">add candidate</button>
    <ul class="candidate-list"></ul>
  </section>
  <section class="controls">
    <label>background &#8596; method weight
      <input type="range" class="alpha" min="0" max="1" step="0.05" value="0.5" />
      <span class="alpha-value">0.50</span>
    </label>
    <button type="button" class="submit">rerank</button>
    <div class="validation-slot"></div>
  </section>
  <section class="results-slot"></section>
  <section class="quadrants-slot"></section>
`;

export function bootstrap(root: HTMLElement, client: RerankClient): App {
  root.innerHTML = SKELETON;
  let state = newState();

  const el = <T extends HTMLElement>(selector: string): T => {
    const found = root.querySelector<T>(selector);
    if (!found) throw new Error(`missing element ${selector}`);
    return found;
  };
  const seedTitle = el<HTMLInputElement>(".seed-title");
  const seedAbstract = el<HTMLTextAreaElement>(".seed-abstract");
  const alphaSlider = el<HTMLInputElement>(".alpha");
  const alphaValue = el<HTMLSpanElement>(".alpha-value");

  function syncInputs(): void {
    seedTitle.value = state.seed.title;
    seedAbstract.value = state.seed.abstract;
    alphaSlider.value = String(state.alpha);
    alphaValue.textContent = state.alpha.toFixed(2);
  }

  function renderCandidates(): void {
    const list = el<HTMLUListElement>(".candidate-list");
    list.innerHTML = "";
    for (const c of state.candidates) {
      const item = document.createElement("li");
      item.dataset.candidateId = c.candidate_id;
      item.innerHTML = `<span>${c.candidate_id}: ${c.title}</span>` +
        `<button type="button" class="remove" data-candidate-id="${c.candidate_id}">remove</button>`;
      item.querySelector(".remove")!.addEventListener("click", () => {
        state = removeCandidate(state, c.candidate_id);
        render();
      });
      list.appendChild(item);
    }
  }

  function render(): void {
    syncInputs();
    renderCandidates();
    renderBanner(el(".banner-slot"), state, () => {
      state = setBanner(state, null);
      render();
    });
    renderResults(el(".results-slot"), state);
    renderQuadrants(el(".quadrants-slot"), state, (candidateId) => {
      state = adoptAsSeed(state, candidateId);
      render();
    });
    el(".results-slot").querySelectorAll<HTMLButtonElement>("button.adopt").forEach((btn) => {
      btn.addEventListener("click", () => {
        state = adoptAsSeed(state, btn.dataset.candidateId!);
        render();
      });
    });
  }

  seedTitle.addEventListener("input", () => {
    state = setSeed(state, { ...state.seed, title: seedTitle.value });
  });
  seedAbstract.addEventListener("input", () => {
    state = setSeed(state, { ...state.seed, abstract: seedAbstract.value });
  });
  alphaSlider.addEventListener("input", () => {
    state = setAlpha(state, Number(alphaSlider.value));
    alphaValue.textContent = state.alpha.toFixed(2);
    renderResults(el(".results-slot"), state); // staleness indicator
  });
  el<HTMLButtonElement>(".add-candidate").addEventListener("click", () => {
    const id = el<HTMLInputElement>(".cand-id").value.trim();
    const title = el<HTMLInputElement>(".cand-title").value.trim();
    const abstract = el<HTMLTextAreaElement>(".cand-abstract").value.trim();
    if (!id) {
      renderValidation(el(".validation-slot"), ["candidate id is required"]);
      return;
    }
    try {
      state = addCandidate(state, { candidate_id: id, title, abstract });
    } catch (err) {
      renderValidation(el(".validation-slot"), [String(err)]);
      return;
    }
    renderValidation(el(".validation-slot"), []);
    render();
  });

  async function submit(): Promise<void> {
    const problems = validateForSubmit(state);
    renderValidation(el(".validation-slot"), problems);
    if (problems.length) return;
    const request = buildRequest(state);
    try {
      const response = await client.rerank(request);
      state = applyResponse(state, request, response);
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") return; // superseded
      const message = err instanceof ApiError
        ? `rerank failed (${err.message}); your inputs are unchanged, retry when ready`
        : `rerank failed (${String(err)})`;
      state = setBanner(state, message);
    }
    render();
  }

  el<HTMLButtonElement>(".submit").addEventListener("click", () => {
    void submit();
  });

  render();
  return {
    getState: () => state,
    submit,
    root,
  };
}
