import { describe, expect, it, vi } from "vitest";
import { ApiError, RerankClient } from "../src/api.js";
import { candidates, jsonResponse, mockResponse } from "./helpers.js";

const REQUEST = {
  seed: { title: "t", abstract: "a" },
  candidates: candidates(2),
  alpha: 0.5,
};

describe("RerankClient", () => {
  it("posts the request body verbatim", async () => {
    const fetchFn = vi.fn(async (_url: string, init?: RequestInit) => {
      const body = JSON.parse(String(init?.body));
      return jsonResponse(200, mockResponse(body, { bg: { c00: 1, c01: 0 }, mt: { c00: 0, c01: 1 } }));
    });
    const client = new RerankClient("http://x", fetchFn as never);
    const resp = await client.rerank(REQUEST);
    expect(fetchFn).toHaveBeenCalledWith("http://x/rerank", expect.objectContaining({ method: "POST" }));
    expect(resp.alpha).toBe(0.5);
  });

  it("wraps http errors in ApiError with the server detail", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(413, { error: "pool too large" }));
    const client = new RerankClient("", fetchFn as never);
    await expect(client.rerank(REQUEST)).rejects.toMatchObject({
      status: 413,
      message: expect.stringContaining("pool too large"),
    });
    await expect(client.rerank(REQUEST)).rejects.toBeInstanceOf(ApiError);
  });

  it("a new submit aborts the in-flight one", async () => {
    const seenSignals: AbortSignal[] = [];
    const fetchFn = vi.fn(
      (_url: string, init?: RequestInit) =>
        new Promise<Response>((resolve, reject) => {
          const signal = init?.signal as AbortSignal;
          seenSignals.push(signal);
          signal.addEventListener("abort", () =>
            reject(new DOMException("aborted", "AbortError")),
          );
          setTimeout(
            () =>
              resolve(
                jsonResponse(
                  200,
                  mockResponse(JSON.parse(String(init?.body)), {
                    bg: { c00: 1, c01: 0 },
                    mt: { c00: 0, c01: 1 },
                  }),
                ),
              ),
            20,
          );
        }),
    );
    const client = new RerankClient("", fetchFn as never);
    const first = client.rerank(REQUEST);
    const second = client.rerank({ ...REQUEST, alpha: 1 });
    await expect(first).rejects.toHaveProperty("name", "AbortError");
    const resp = await second;
    expect(resp.alpha).toBe(1);
    expect(seenSignals[0].aborted).toBe(true);
    expect(seenSignals[1].aborted).toBe(false);
  });

  it("health round-trips", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(200, { ready: true, missing: [], models: {} }));
    const client = new RerankClient("", fetchFn as never);
    expect((await client.health()).ready).toBe(true);
  });
});
