/** Pure view-state helpers. The server's ranking is authoritative: nothing
 * here ever reorders or filters proposals. */

import type { Proposal, ProposalRound, Session, Verdict } from "./types.js";

export type Badge = "consistent" | "warning" | "pending";

export function badgeFor(verdict: Verdict | null): Badge {
  if (verdict === null) return "pending";
  return verdict.has_error ? "warning" : "consistent";
}

export function badgeNote(verdict: Verdict | null): string {
  if (verdict === null) return "consistency check pending";
  if (verdict.has_error) return verdict.error_description;
  return verdict.parse_warning ? "verifier reply unparseable; treated as consistent" : "";
}

/** The round open for the next beat position, if any. */
export function openRound(session: Session): ProposalRound | null {
  const latest = session.proposal_history[session.proposal_history.length - 1];
  if (!latest) return null;
  return latest.beat_index === session.beats.length ? latest : null;
}

export function comparePageCount(proposalCount: number): number {
  return Math.max(1, Math.ceil(proposalCount / 2));
}

/** Two-up comparison pairs in server rank order; page 0 is the top-2. */
export function comparePair(proposals: Proposal[], page: number): [Proposal | null, Proposal | null] {
  const left = proposals[2 * page] ?? null;
  const right = proposals[2 * page + 1] ?? null;
  return [left, right];
}

/** Running word count with the same rule the server uses: whitespace split,
 * punctuation-only tokens dropped. */
export function wordCount(text: string): number {
  let count = 0;
  for (const token of text.split(/\s+/u)) {
    if (token.length === 0) continue;
    if (token.replace(/[\p{P}]/gu, "").length === 0) continue;
    count += 1;
  }
  return count;
}

export function storyComplete(session: Session): boolean {
  return session.status === "complete";
}
