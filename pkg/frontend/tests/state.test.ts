import { describe, expect, it } from "vitest";

import {
  badgeFor,
  badgeNote,
  comparePageCount,
  comparePair,
  openRound,
  wordCount,
} from "../src/state.js";
import type { Proposal, Session, Verdict } from "../src/types.js";

const cleanVerdict: Verdict = {
  has_error: false,
  error_description: "",
  retrieved_segment_ids: [],
  similarity_scores: [],
  parse_warning: false,
};

function proposal(id: string): Proposal {
  return {
    persona_id: id,
    rank: null,
    beat: {
      setting: { location: "x", time: "y" },
      characters: ["Mara"],
      key_events: ["a", "b", "c"],
    },
    rationale: "because",
    verdict: cleanVerdict,
    repairs: [],
    provenance: [],
  };
}

describe("badges", () => {
  it("maps the verdict partition onto the three badge states", () => {
    expect(badgeFor(null)).toBe("pending");
    expect(badgeFor(cleanVerdict)).toBe("consistent");
    expect(badgeFor({ ...cleanVerdict, has_error: true, error_description: "broken" })).toBe(
      "warning",
    );
  });

  it("surfaces the verifier's description verbatim on warnings", () => {
    const verdict = { ...cleanVerdict, has_error: true, error_description: "Mara died earlier." };
    expect(badgeNote(verdict)).toBe("Mara died earlier.");
    expect(badgeNote({ ...cleanVerdict, parse_warning: true })).toMatch(/unparseable/);
    expect(badgeNote(cleanVerdict)).toBe("");
  });
});

describe("comparison paging", () => {
  it("pages through proposals two at a time in server order", () => {
    const proposals = ["a", "b", "c", "d", "e"].map(proposal);
    expect(comparePageCount(proposals.length)).toBe(3);
    expect(comparePair(proposals, 0).map((p) => p?.persona_id)).toEqual(["a", "b"]);
    expect(comparePair(proposals, 1).map((p) => p?.persona_id)).toEqual(["c", "d"]);
    const [last, empty] = comparePair(proposals, 2);
    expect(last?.persona_id).toBe("e");
    expect(empty).toBeNull();
  });

  it("defaults to the top-2 ranked pair on page zero", () => {
    const proposals = ["first", "second", "third"].map(proposal);
    const [left, right] = comparePair(proposals, 0);
    expect(left?.persona_id).toBe("first");
    expect(right?.persona_id).toBe("second");
  });
});

describe("openRound", () => {
  const base: Session = {
    session_id: "s",
    status: "awaiting_selection",
    sparkle: { text: "t", language: "en", target_beat_count: 2, target_segment_words: [800, 1000] },
    beats: [],
    segments: [],
    selection_log: [],
    pending_persona: null,
    proposal_history: [
      { beat_index: 0, stage: "initial_beat", proposals: [proposal("a")], failures: {} },
    ],
    brainstorm_log: [],
  };

  it("returns the latest round when it targets the next beat", () => {
    expect(openRound(base)?.beat_index).toBe(0);
  });

  it("returns null once the round's beat has been selected", () => {
    const consumed: Session = {
      ...base,
      beats: [proposal("a").beat],
      selection_log: ["a"],
    };
    expect(openRound(consumed)).toBeNull();
  });
});

describe("wordCount parity with the server rule", () => {
  it("splits on whitespace and drops punctuation-only tokens", () => {
    expect(wordCount('She said, "wait" --- now.')).toBe(4);
    expect(wordCount("")).toBe(0);
    expect(wordCount("  \n\t ")).toBe(0);
    expect(wordCount("one two\nthree")).toBe(3);
    expect(wordCount("“Hello there” — she said")).toBe(4);
  });
});
