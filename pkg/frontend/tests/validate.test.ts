import { describe, expect, it } from "vitest";

import { beatFromDraft, draftFromBeat, validateBeatDraft } from "../src/validate.js";

const goodDraft = {
  location: "the river lock",
  time: "at first light",
  characters: ["Mara", "Theo"],
  keyEvents: ["Mara opens the lock", "Theo hides the key", "the water rises"],
};

describe("validateBeatDraft", () => {
  it("accepts a draft satisfying the beat invariants", () => {
    expect(validateBeatDraft(goodDraft)).toEqual({});
  });

  it("rejects two events, mirroring the server floor", () => {
    const problems = validateBeatDraft({ ...goodDraft, keyEvents: ["one", "two"] });
    expect(problems["key_events"]).toMatch(/between 3 and 5/);
  });

  it("rejects six events, mirroring the server ceiling", () => {
    const events = ["a", "b", "c", "d", "e", "f"];
    expect(validateBeatDraft({ ...goodDraft, keyEvents: events })["key_events"]).toBeDefined();
  });

  it("rejects an empty location and empty character list", () => {
    expect(validateBeatDraft({ ...goodDraft, location: "  " })["setting.location"]).toBeDefined();
    expect(validateBeatDraft({ ...goodDraft, characters: ["", "  "] })["characters"]).toBeDefined();
  });

  it("ignores blank event lines when counting", () => {
    const problems = validateBeatDraft({
      ...goodDraft,
      keyEvents: ["one real event", "  ", "another event", "third event", ""],
    });
    expect(problems).toEqual({});
  });
});

describe("draft round-trip", () => {
  it("beat -> draft -> beat preserves content", () => {
    const beat = beatFromDraft(goodDraft);
    expect(beatFromDraft(draftFromBeat(beat))).toEqual(beat);
    expect(beat.setting.location).toBe("the river lock");
    expect(beat.key_events).toHaveLength(3);
  });
});
