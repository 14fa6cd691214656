import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiError, HttpApi } from "../src/api.js";

interface Recorded {
  url: string;
  method: string;
  body: unknown;
}

function stubFetch(status: number, payload: unknown): Recorded[] {
  const calls: Recorded[] = [];
  vi.stubGlobal("fetch", async (url: string, options: RequestInit = {}) => {
    calls.push({
      url,
      method: options.method ?? "GET",
      body: options.body ? JSON.parse(options.body as string) : undefined,
    });
    return new Response(JSON.stringify(payload), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  });
  return calls;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("HttpApi request shapes", () => {
  it("posts the sparkle envelope on createSession", async () => {
    const calls = stubFetch(201, { session_id: "s1" });
    const api = new HttpApi("http://svc");
    await api.createSession({
      text: "seed",
      language: "en",
      target_beat_count: 6,
      target_segment_words: [800, 1000],
    });
    expect(calls).toHaveLength(1);
    expect(calls[0]?.url).toBe("http://svc/sessions");
    expect(calls[0]?.method).toBe("POST");
    expect((calls[0]?.body as { sparkle: { text: string } }).sparkle.text).toBe("seed");
  });

  it("hits the documented endpoint paths", async () => {
    const calls = stubFetch(200, { sessions: [], segment: {}, reply: "ok" });
    const api = new HttpApi("");
    await api.listSessions();
    await api.select("s1", "mystery");
    await api.expand("s1");
    await api.refine("s1", 2, "slower");
    await api.manualEdit("s1", 0, "new words");
    await api.brainstorm("s1", "hm");
    expect(calls.map((c) => `${c.method} ${c.url}`)).toEqual([
      "GET /sessions",
      "POST /sessions/s1/select",
      "POST /sessions/s1/expand",
      "POST /sessions/s1/segments/2/refine",
      "PUT /sessions/s1/segments/0",
      "POST /sessions/s1/brainstorm",
    ]);
    expect(calls[1]?.body).toEqual({ persona_id: "mystery" });
    expect(calls[3]?.body).toEqual({ instruction: "slower" });
  });

  it("wraps the service error envelope in ApiError", async () => {
    stubFetch(400, {
      error: {
        code: "validation",
        message: "bad beat",
        fields: { key_events: "expected 3..5 events, got 2" },
      },
    });
    const api = new HttpApi("");
    const failure = await api.editBeat("s1", "comedy", {
      setting: { location: "x", time: "y" },
      characters: ["Mara"],
      key_events: ["a", "b"],
    }).catch((e: unknown) => e);
    expect(failure).toBeInstanceOf(ApiError);
    const err = failure as ApiError;
    expect(err.status).toBe(400);
    expect(err.code).toBe("validation");
    expect(err.fields["key_events"]).toMatch(/expected 3..5/);
  });

  it("maps conflicts and backend failures", async () => {
    stubFetch(409, { error: { code: "illegal_state", message: "no selection open" } });
    const err = (await new HttpApi("").select("s1", "mystery").catch((e: unknown) => e)) as ApiError;
    expect(err.status).toBe(409);
    expect(err.code).toBe("illegal_state");
  });
});
