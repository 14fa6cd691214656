/** HTTP client for the storyloom service; all workspace mutations go
 * through here (the UI keeps no draft state the server doesn't own). */

import type {
  ApiClient,
  Beat,
  Metrics,
  NewSessionRequest,
  Segment,
  Session,
  SessionSummary,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly fields: Record<string, string>;

  constructor(status: number, code: string, message: string, fields: Record<string, string> = {}) {
    super(message);
    this.status = status;
    this.code = code;
    this.fields = fields;
  }
}

export class HttpApi implements ApiClient {
  private readonly base: string;

  constructor(base = "") {
    this.base = base.replace(/\/$/, "");
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.base + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json().catch(() => ({}));
    if (!response.ok) {
      const err = (payload as { error?: { code?: string; message?: string; fields?: Record<string, string> } }).error ?? {};
      throw new ApiError(
        response.status,
        err.code ?? "error",
        err.message ?? `request failed with status ${response.status}`,
        err.fields ?? {},
      );
    }
    return payload as T;
  }

  async listSessions(): Promise<SessionSummary[]> {
    const data = await this.request<{ sessions: SessionSummary[] }>("GET", "/sessions");
    return data.sessions;
  }

  createSession(sparkle: NewSessionRequest): Promise<Session> {
    return this.request<Session>("POST", "/sessions", { sparkle });
  }

  getSession(id: string): Promise<Session> {
    return this.request<Session>("GET", `/sessions/${id}`);
  }

  async nextRound(id: string): Promise<void> {
    await this.request("POST", `/sessions/${id}/proposals`);
  }

  async retryPersona(id: string, personaId: string): Promise<void> {
    await this.request("POST", `/sessions/${id}/proposals/${personaId}/retry`);
  }

  async editBeat(id: string, personaId: string, beat: Beat): Promise<void> {
    await this.request("PUT", `/sessions/${id}/proposals/${personaId}/beat`, { beat });
  }

  async select(id: string, personaId: string): Promise<void> {
    await this.request("POST", `/sessions/${id}/select`, { persona_id: personaId });
  }

  async expand(id: string): Promise<Segment> {
    const data = await this.request<{ segment: Segment }>("POST", `/sessions/${id}/expand`);
    return data.segment;
  }

  async refine(id: string, segment: number, instruction: string): Promise<Segment> {
    const data = await this.request<{ segment: Segment }>(
      "POST",
      `/sessions/${id}/segments/${segment}/refine`,
      { instruction },
    );
    return data.segment;
  }

  async manualEdit(id: string, segment: number, prose: string): Promise<Segment> {
    const data = await this.request<{ segment: Segment }>(
      "PUT",
      `/sessions/${id}/segments/${segment}`,
      { prose },
    );
    return data.segment;
  }

  async brainstorm(id: string, message: string): Promise<string> {
    const data = await this.request<{ reply: string }>("POST", `/sessions/${id}/brainstorm`, {
      message,
    });
    return data.reply;
  }

  metrics(id: string): Promise<Metrics> {
    return this.request<Metrics>("GET", `/sessions/${id}/metrics`);
  }
}
