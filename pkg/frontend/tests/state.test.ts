import { describe, expect, it } from "vitest";
import {
  addCandidate,
  adoptAsSeed,
  applyResponse,
  buildRequest,
  displayedOrder,
  isStale,
  newState,
  removeCandidate,
  setAlpha,
  setSeed,
  validateForSubmit,
} from "../src/state.js";
import { candidates, mockResponse } from "./helpers.js";

function populated() {
  let state = setSeed(newState(), { title: "t", abstract: "a" });
  for (const c of candidates(3)) state = addCandidate(state, c);
  return state;
}

describe("state transitions", () => {
  it("alpha is clamped to [0, 1]", () => {
    expect(() => setAlpha(newState(), 1.2)).toThrow(RangeError);
    expect(() => setAlpha(newState(), -0.1)).toThrow(RangeError);
    expect(setAlpha(newState(), 0.3).alpha).toBe(0.3);
  });

  it("duplicate candidate ids are rejected", () => {
    const state = populated();
    expect(() => addCandidate(state, candidates(1)[0])).toThrow(/duplicate/);
  });

  it("remove drops exactly one candidate", () => {
    const state = removeCandidate(populated(), "c01");
    expect(state.candidates.map((c) => c.candidate_id)).toEqual(["c00", "c02"]);
  });

  it("validation catches empty fields", () => {
    expect(validateForSubmit(newState())).toContain("seed title is empty");
    expect(validateForSubmit(populated())).toEqual([]);
  });

  it("history is append-only across responses", () => {
    let state = populated();
    for (let i = 0; i < 3; i++) {
      const request = buildRequest(state);
      const response = mockResponse(request, {
        bg: { c00: i, c01: 1, c02: 2 },
        mt: { c00: 2, c01: 1, c02: i },
      });
      const next = applyResponse(state, request, response);
      expect(next.history.slice(0, state.history.length)).toEqual(state.history);
      expect(next.history).toHaveLength(state.history.length + 1);
      state = next;
    }
  });

  it("staleness tracks alpha drift since the last response", () => {
    let state = populated();
    const request = buildRequest(state);
    state = applyResponse(state, request, mockResponse(request, {
      bg: { c00: 1, c01: 2, c02: 3 },
      mt: { c00: 3, c01: 2, c02: 1 },
    }));
    expect(isStale(state)).toBe(false);
    state = setAlpha(state, 0.9);
    expect(isStale(state)).toBe(true);
    expect(displayedOrder(state)).toEqual(state.lastResponse!.rankings.fused);
  });

  it("adoptAsSeed copies the candidate into the seed draft", () => {
    const state = adoptAsSeed(populated(), "c02");
    expect(state.seed).toEqual({ title: "candidate 2", abstract: "abstract 2" });
    expect(() => adoptAsSeed(state, "ghost")).toThrow(/unknown/);
  });
});
