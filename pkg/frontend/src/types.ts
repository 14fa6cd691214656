/** API payload shapes, mirroring docs/schemas.md on the service side. */

export interface Setting {
  location: string;
  time: string;
}

export interface Beat {
  setting: Setting;
  characters: string[];
  key_events: string[];
}

export interface Verdict {
  has_error: boolean;
  error_description: string;
  retrieved_segment_ids: string[];
  similarity_scores: number[];
  parse_warning: boolean;
}

export interface Proposal {
  persona_id: string;
  rank: number | null;
  beat: Beat;
  rationale: string;
  verdict: Verdict | null;
  repairs: string[];
  provenance: string[];
}

export interface ProposalRound {
  beat_index: number;
  stage: string;
  proposals: Proposal[];
  failures: Record<string, string>;
}

export interface Revision {
  instruction: string;
  prior_prose: string;
}

export interface Segment {
  beat_index: number;
  persona_id: string;
  prose: string;
  word_count: number;
  revisions: Revision[];
  flags: string[];
}

export interface Sparkle {
  text: string;
  language: string;
  target_beat_count: number;
  target_segment_words: [number, number];
}

export interface Session {
  session_id: string;
  status: string;
  sparkle: Sparkle;
  beats: Beat[];
  segments: Segment[];
  selection_log: string[];
  pending_persona: string | null;
  proposal_history: ProposalRound[];
  brainstorm_log: { role: string; text: string }[];
}

export interface SessionSummary {
  session_id: string;
  status: string;
  sparkle_text: string;
  beats: number;
  segments: number;
  target_beat_count: number;
}

export interface Metrics {
  word_count: number;
  gunning_fog: number;
  dialogue_ratio: number;
  location_count: number;
}

export interface NewSessionRequest {
  text: string;
  language: string;
  target_beat_count: number;
  target_segment_words: [number, number];
}

/** The service client surface the workspace is written against. */
export interface ApiClient {
  listSessions(): Promise<SessionSummary[]>;
  createSession(sparkle: NewSessionRequest): Promise<Session>;
  getSession(id: string): Promise<Session>;
  nextRound(id: string): Promise<void>;
  retryPersona(id: string, personaId: string): Promise<void>;
  editBeat(id: string, personaId: string, beat: Beat): Promise<void>;
  select(id: string, personaId: string): Promise<void>;
  expand(id: string): Promise<Segment>;
  refine(id: string, segment: number, instruction: string): Promise<Segment>;
  manualEdit(id: string, segment: number, prose: string): Promise<Segment>;
  brainstorm(id: string, message: string): Promise<string>;
  metrics(id: string): Promise<Metrics>;
}
