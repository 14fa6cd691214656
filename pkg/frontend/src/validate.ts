/** Client-side beat validation mirroring the server's invariants, so bad
 * edits are blocked before they ever reach the wire. */

import type { Beat } from "./types.js";

export const MIN_EVENTS = 3;
export const MAX_EVENTS = 5;

export interface BeatDraft {
  location: string;
  time: string;
  characters: string[];
  keyEvents: string[];
}

/** Field path -> message; an empty object means the draft is valid. */
export function validateBeatDraft(draft: BeatDraft): Record<string, string> {
  const problems: Record<string, string> = {};
  if (!draft.location.trim()) {
    problems["setting.location"] = "location must not be empty";
  }
  const characters = draft.characters.map((c) => c.trim()).filter((c) => c.length > 0);
  if (characters.length === 0) {
    problems["characters"] = "at least one character is required";
  }
  const events = draft.keyEvents.map((e) => e.trim()).filter((e) => e.length > 0);
  if (events.length < MIN_EVENTS || events.length > MAX_EVENTS) {
    problems["key_events"] = `between ${MIN_EVENTS} and ${MAX_EVENTS} events required, got ${events.length}`;
  }
  return problems;
}

export function draftFromBeat(beat: Beat): BeatDraft {
  return {
    location: beat.setting.location,
    time: beat.setting.time,
    characters: [...beat.characters],
    keyEvents: [...beat.key_events],
  };
}

export function beatFromDraft(draft: BeatDraft): Beat {
  return {
    setting: { location: draft.location.trim(), time: draft.time.trim() },
    characters: draft.characters.map((c) => c.trim()).filter((c) => c.length > 0),
    key_events: draft.keyEvents.map((e) => e.trim()).filter((e) => e.length > 0),
  };
}
