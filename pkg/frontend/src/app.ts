/** The three-panel workspace.
 *
 * Left: story portfolio (list / create / open). Center: the current round's
 * proposals (ranked card grid or two-up comparison) and the prose workspace.
 * Bottom: brainstorm chat and the refine instruction box.
 *
 * All workflow transitions are pessimistic: every mutation round-trips
 * through the API and the workspace re-renders from the server's session.
 */

import { ApiError } from "./api.js";
import {
  badgeFor,
  badgeNote,
  comparePageCount,
  comparePair,
  openRound,
  wordCount,
} from "./state.js";
import type { ApiClient, Metrics, Proposal, Session, SessionSummary } from "./types.js";
import { beatFromDraft, draftFromBeat, validateBeatDraft, type BeatDraft } from "./validate.js";

type CenterView = "cards" | "compare";

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export class StudioApp {
  private readonly api: ApiClient;
  private readonly root: HTMLElement;

  private sessions: SessionSummary[] = [];
  private session: Session | null = null;
  private metrics: Metrics | null = null;
  private view: CenterView = "cards";
  private comparePage = 0;
  private editingPersona: string | null = null;
  private editErrors: Record<string, string> = {};
  private editDraft: BeatDraft | null = null;
  private busy = false;
  private error: string | null = null;

  constructor(api: ApiClient, root: HTMLElement) {
    this.api = api;
    this.root = root;
    this.root.addEventListener("click", (event) => this.onClick(event));
    this.root.addEventListener("submit", (event) => this.onSubmit(event));
  }

  async init(): Promise<void> {
    await this.run(async () => {
      this.sessions = await this.api.listSessions();
    });
  }

  /** Re-fetch the open session from the server; the server is the only
   * source of truth the workspace renders from. */
  async reload(): Promise<void> {
    if (!this.session) return;
    const id = this.session.session_id;
    this.session = await this.api.getSession(id);
    this.metrics = this.session.segments.length > 0 ? await this.api.metrics(id) : null;
    this.sessions = await this.api.listSessions();
  }

  private async run(action: () => Promise<void>): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    this.error = null;
    this.render();
    try {
      await action();
    } catch (err) {
      if (err instanceof ApiError) {
        const fields = Object.entries(err.fields)
          .map(([path, message]) => `${path}: ${message}`)
          .join("; ");
        this.error = fields ? `${err.message} (${fields})` : err.message;
      } else {
        this.error = err instanceof Error ? err.message : String(err);
      }
    } finally {
      this.busy = false;
      this.render();
    }
  }

  // -- event wiring ---------------------------------------------------------

  private onClick(event: Event): void {
    const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (!target) return;
    const action = target.dataset.action ?? "";
    const arg = target.dataset.arg ?? "";
    event.preventDefault();
    switch (action) {
      case "open-session":
        void this.run(async () => {
          this.session = await this.api.getSession(arg);
          this.metrics =
            this.session.segments.length > 0 ? await this.api.metrics(arg) : null;
          this.view = "cards";
          this.comparePage = 0;
          this.editingPersona = null;
        });
        break;
      case "next-round":
        void this.run(async () => {
          await this.api.nextRound(this.requireSession().session_id);
          await this.reload();
          this.comparePage = 0;
        });
        break;
      case "retry-persona":
        void this.run(async () => {
          await this.api.retryPersona(this.requireSession().session_id, arg);
          await this.reload();
        });
        break;
      case "view-cards":
        this.view = "cards";
        this.render();
        break;
      case "view-compare":
        this.view = "compare";
        this.comparePage = 0;
        this.render();
        break;
      case "compare-prev":
        this.comparePage = Math.max(0, this.comparePage - 1);
        this.render();
        break;
      case "compare-next": {
        const round = this.session ? openRound(this.session) : null;
        const pages = comparePageCount(round ? round.proposals.length : 0);
        this.comparePage = Math.min(pages - 1, this.comparePage + 1);
        this.render();
        break;
      }
      case "select-persona":
        void this.run(async () => {
          const id = this.requireSession().session_id;
          await this.api.select(id, arg);
          await this.api.expand(id);
          await this.reload();
          this.editingPersona = null;
        });
        break;
      case "edit-beat": {
        const round = this.session ? openRound(this.session) : null;
        const proposal = round?.proposals.find((p) => p.persona_id === arg) ?? null;
        if (proposal) {
          this.editingPersona = arg;
          this.editDraft = draftFromBeat(proposal.beat);
          this.editErrors = {};
          this.render();
        }
        break;
      }
      case "edit-cancel":
        this.editingPersona = null;
        this.editDraft = null;
        this.editErrors = {};
        this.render();
        break;
      case "reload":
        void this.run(() => this.reload());
        break;
      default:
        break;
    }
  }

  private onSubmit(event: Event): void {
    const form = event.target as HTMLFormElement;
    if (!form.dataset.form) return;
    event.preventDefault();
    switch (form.dataset.form) {
      case "new-session":
        void this.submitNewSession(form);
        break;
      case "edit-beat":
        void this.submitBeatEdit(form);
        break;
      case "refine":
        void this.submitRefine(form);
        break;
      case "manual-edit":
        void this.submitManualEdit(form);
        break;
      case "brainstorm":
        void this.submitBrainstorm(form);
        break;
      default:
        break;
    }
  }

  private field(form: HTMLFormElement, name: string): string {
    const element = form.elements.namedItem(name) as HTMLInputElement | HTMLTextAreaElement | null;
    return element ? element.value : "";
  }

  private async submitNewSession(form: HTMLFormElement): Promise<void> {
    const text = this.field(form, "sparkle").trim();
    const beats = parseInt(this.field(form, "beats") || "6", 10);
    const language = this.field(form, "language").trim() || "en";
    const lower = parseInt(this.field(form, "words_lower") || "800", 10);
    const upper = parseInt(this.field(form, "words_upper") || "1000", 10);
    await this.run(async () => {
      this.session = await this.api.createSession({
        text,
        language,
        target_beat_count: beats,
        target_segment_words: [lower, upper],
      });
      this.metrics = null;
      this.sessions = await this.api.listSessions();
      this.view = "cards";
      this.comparePage = 0;
    });
  }

  /** Client-side validation mirrors the server's beat invariants; an invalid
   * draft never reaches the wire. */
  private async submitBeatEdit(form: HTMLFormElement): Promise<void> {
    const personaId = form.dataset.persona ?? "";
    const draft: BeatDraft = {
      location: this.field(form, "location"),
      time: this.field(form, "time"),
      characters: this.field(form, "characters").split(",").map((c) => c.trim()),
      keyEvents: this.field(form, "events")
        .split("\n")
        .map((e) => e.trim())
        .filter((e) => e.length > 0),
    };
    const problems = validateBeatDraft(draft);
    if (Object.keys(problems).length > 0) {
      this.editErrors = problems;
      this.editDraft = draft;
      this.render();
      return;
    }
    await this.run(async () => {
      await this.api.editBeat(this.requireSession().session_id, personaId, beatFromDraft(draft));
      await this.reload();
      this.editingPersona = null;
      this.editDraft = null;
      this.editErrors = {};
    });
  }

  private async submitRefine(form: HTMLFormElement): Promise<void> {
    const segment = parseInt(form.dataset.segment ?? "0", 10);
    const instruction = this.field(form, "instruction").trim();
    if (!instruction) return;
    await this.run(async () => {
      await this.api.refine(this.requireSession().session_id, segment, instruction);
      await this.reload();
    });
  }

  private async submitManualEdit(form: HTMLFormElement): Promise<void> {
    const segment = parseInt(form.dataset.segment ?? "0", 10);
    const prose = this.field(form, "prose");
    await this.run(async () => {
      await this.api.manualEdit(this.requireSession().session_id, segment, prose);
      await this.reload();
    });
  }

  private async submitBrainstorm(form: HTMLFormElement): Promise<void> {
    const message = this.field(form, "message").trim();
    if (!message) return;
    await this.run(async () => {
      await this.api.brainstorm(this.requireSession().session_id, message);
      await this.reload();
    });
  }

  private requireSession(): Session {
    if (!this.session) throw new Error("no session open");
    return this.session;
  }

  // -- rendering -------------------------------------------------------------

  render(): void {
    this.root.innerHTML = `
      <header class="topbar">
        <h1>storyloom studio</h1>
        ${this.session ? `<span class="session-tag">${esc(this.session.session_id)} · ${esc(this.session.status)}</span>` : ""}
        ${this.busy ? `<span class="busy" data-testid="busy">working…</span>` : ""}
        ${this.error ? `<span class="error-line" data-testid="error">${esc(this.error)} <button data-action="reload">retry</button></span>` : ""}
      </header>
      <main class="workspace">
        <aside class="panel-left">${this.renderPortfolio()}</aside>
        <section class="panel-center">${this.renderCenter()}</section>
        <section class="panel-bottom">${this.renderBottom()}</section>
      </main>`;
  }

  private renderPortfolio(): string {
    const items = this.sessions
      .map(
        (s) => `
        <li>
          <button class="session-link" data-action="open-session" data-arg="${esc(s.session_id)}">
            <span class="session-title">${esc(s.sparkle_text.slice(0, 48))}</span>
            <span class="session-meta">${esc(s.status)} · ${s.segments}/${s.target_beat_count}</span>
          </button>
        </li>`,
      )
      .join("");
    return `
      <h2>Portfolio</h2>
      <ul class="session-list" data-testid="session-list">${items || "<li class='empty'>no stories yet</li>"}</ul>
      <form data-form="new-session" class="new-session">
        <h3>New story</h3>
        <textarea name="sparkle" placeholder="Sparkle: the seed of your story…" required></textarea>
        <div class="row">
          <label>beats <input name="beats" type="number" min="1" max="10" value="6"></label>
          <label>language <input name="language" value="en" size="4"></label>
        </div>
        <div class="row">
          <label>words <input name="words_lower" type="number" value="800" size="5"> –
          <input name="words_upper" type="number" value="1000" size="5"></label>
        </div>
        <button type="submit">Start</button>
      </form>`;
  }

  private renderCenter(): string {
    const session = this.session;
    if (!session) {
      return `<p class="placeholder">Open a story from the portfolio, or start a new one.</p>`;
    }
    const round = openRound(session);
    const parts: string[] = [];
    if (round) {
      parts.push(this.renderRound(round.proposals, round.failures));
    } else if (session.status === "awaiting_selection") {
      parts.push(
        `<div class="round-controls"><button data-action="next-round">Generate proposals for beat ${session.beats.length + 1}</button></div>`,
      );
    } else if (session.status === "complete") {
      parts.push(`<p class="done-note" data-testid="complete">Story complete.</p>`);
    }
    parts.push(this.renderProseWorkspace(session));
    return parts.join("\n");
  }

  private renderRound(proposals: Proposal[], failures: Record<string, string>): string {
    const toggle = `
      <div class="round-controls">
        <span>Beat proposals (server rank order)</span>
        <span class="view-toggle">
          <button data-action="view-cards" ${this.view === "cards" ? "disabled" : ""}>all cards</button>
          <button data-action="view-compare" ${this.view === "compare" ? "disabled" : ""}>compare 2-up</button>
        </span>
      </div>`;
    const failureCards = Object.entries(failures)
      .map(
        ([pid, message]) => `
        <article class="card failure" data-testid="failure-card">
          <header><strong>${esc(pid)}</strong><span class="badge badge-failed">failed</span></header>
          <p class="failure-message">${esc(message)}</p>
          <button data-action="retry-persona" data-arg="${esc(pid)}">Retry</button>
        </article>`,
      )
      .join("");
    if (this.view === "compare") {
      const pages = comparePageCount(proposals.length);
      const [left, right] = comparePair(proposals, this.comparePage);
      return `${toggle}
        <div class="compare-bar">
          <button data-action="compare-prev" ${this.comparePage === 0 ? "disabled" : ""}>&larr; previous pair</button>
          <span data-testid="compare-page">pair ${this.comparePage + 1} of ${pages}</span>
          <button data-action="compare-next" ${this.comparePage >= pages - 1 ? "disabled" : ""}>next pair &rarr;</button>
        </div>
        <div class="compare-grid" data-testid="compare-grid">
          ${left ? this.renderProposalCard(left) : ""}
          ${right ? this.renderProposalCard(right) : ""}
        </div>
        ${failureCards}`;
    }
    return `${toggle}
      <div class="card-grid" data-testid="card-grid">
        ${proposals.map((p) => this.renderProposalCard(p)).join("")}
        ${failureCards}
      </div>`;
  }

  private renderProposalCard(proposal: Proposal): string {
    if (this.editingPersona === proposal.persona_id) {
      return this.renderBeatEditor(proposal);
    }
    const badge = badgeFor(proposal.verdict);
    const note = badgeNote(proposal.verdict);
    const events = proposal.beat.key_events.map((e) => `<li>${esc(e)}</li>`).join("");
    return `
      <article class="card" data-testid="proposal-card" data-persona="${esc(proposal.persona_id)}">
        <header>
          <strong>#${proposal.rank ?? "–"} ${esc(proposal.persona_id)}</strong>
          <span class="badge badge-${badge}" data-testid="badge">${badge}</span>
        </header>
        ${note ? `<p class="badge-note" data-testid="badge-note">${esc(note)}</p>` : ""}
        <p class="setting">${esc(proposal.beat.setting.location)} · ${esc(proposal.beat.setting.time)}</p>
        <p class="characters">${esc(proposal.beat.characters.join(", "))}</p>
        <ol class="events">${events}</ol>
        <p class="rationale">${esc(proposal.rationale)}</p>
        <footer>
          <button data-action="select-persona" data-arg="${esc(proposal.persona_id)}" data-testid="select">Select &amp; expand</button>
          <button data-action="edit-beat" data-arg="${esc(proposal.persona_id)}" data-testid="edit">Edit beat</button>
        </footer>
      </article>`;
  }

  private renderBeatEditor(proposal: Proposal): string {
    const draft = this.editDraft ?? draftFromBeat(proposal.beat);
    const err = (path: string): string =>
      this.editErrors[path]
        ? `<span class="field-error" data-testid="field-error">${esc(this.editErrors[path] ?? "")}</span>`
        : "";
    return `
      <article class="card editing" data-testid="beat-editor">
        <header><strong>Editing ${esc(proposal.persona_id)}</strong></header>
        <form data-form="edit-beat" data-persona="${esc(proposal.persona_id)}">
          <label>location <input name="location" value="${esc(draft.location)}">${err("setting.location")}</label>
          <label>time <input name="time" value="${esc(draft.time)}"></label>
          <label>characters (comma separated)
            <input name="characters" value="${esc(draft.characters.join(", "))}">${err("characters")}
          </label>
          <label>key events (one per line)
            <textarea name="events" rows="6">${esc(draft.keyEvents.join("\n"))}</textarea>${err("key_events")}
          </label>
          <footer>
            <button type="submit" data-testid="save-edit">Save &amp; re-verify</button>
            <button type="button" data-action="edit-cancel">Cancel</button>
          </footer>
        </form>
      </article>`;
  }

  private renderProseWorkspace(session: Session): string {
    if (session.segments.length === 0) {
      return `<p class="placeholder">No prose yet: select a beat to expand it.</p>`;
    }
    const total = wordCount(session.segments.map((s) => s.prose).join(" "));
    const metrics = this.metrics
      ? `<span class="metrics" data-testid="metrics">
           fog ${this.metrics.gunning_fog.toFixed(2)} ·
           dialogue ${(this.metrics.dialogue_ratio * 100).toFixed(1)}% ·
           locations ${this.metrics.location_count}
         </span>`
      : "";
    const segments = session.segments
      .map(
        (segment, i) => `
        <article class="segment" data-testid="segment">
          <header>
            <strong>Segment ${i + 1}</strong>
            <span>${esc(segment.persona_id)} · ${segment.word_count} words</span>
            ${segment.flags.length ? `<span class="flag">${esc(segment.flags.join(", "))}</span>` : ""}
          </header>
          <form data-form="manual-edit" data-segment="${i}">
            <textarea name="prose" rows="10" data-testid="prose">${esc(segment.prose)}</textarea>
            <footer>
              <button type="submit">Save manual edit</button>
              <span class="revisions" data-testid="revisions">${segment.revisions.length} revision(s)</span>
            </footer>
          </form>
          <form data-form="refine" data-segment="${i}" class="refine-row">
            <input name="instruction" placeholder="Refine: e.g. more dialogue, slower pacing…">
            <button type="submit" data-testid="refine">Refine</button>
          </form>
          ${
            segment.revisions.length
              ? `<details><summary>revision history</summary><ol>${segment.revisions
                  .map((r) => `<li><em>${esc(r.instruction)}</em></li>`)
                  .join("")}</ol></details>`
              : ""
          }
        </article>`,
      )
      .join("");
    return `
      <div class="prose-workspace" data-testid="prose-workspace">
        <div class="prose-header">
          <h2>Story so far</h2>
          <span class="word-count" data-testid="word-count">${total} words</span>
          ${metrics}
        </div>
        ${segments}
      </div>`;
  }

  private renderBottom(): string {
    if (!this.session) return "";
    const transcript = this.session.brainstorm_log
      .map(
        (entry) =>
          `<p class="chat-${esc(entry.role)}"><strong>${esc(entry.role)}:</strong> ${esc(entry.text)}</p>`,
      )
      .join("");
    return `
      <div class="brainstorm" data-testid="brainstorm">
        <h2>Brainstorm</h2>
        <p class="hint">Talk through ideas; the draft itself is never touched.</p>
        <div class="transcript" data-testid="transcript">${transcript || "<p class='empty'>no exchanges yet</p>"}</div>
        <form data-form="brainstorm" class="refine-row">
          <input name="message" placeholder="What if…?">
          <button type="submit">Send</button>
        </form>
      </div>`;
  }
}
