"""Session orchestration: the one code path behind both the CLI and the
HTTP service.

Each mutating operation drives the domain state machine, then persists the
session snapshot (when a store is attached) so a crash between operations
loses at most the in-flight step.
"""

from __future__ import annotations

import hashlib
import json
import uuid
from typing import Any

from . import analytics, expander, personas, plotctl
from .domain import (
    DEFAULT_BEAT_COUNT,
    DEFAULT_SEGMENT_WORDS,
    BeatProposal,
    DomainError,
    NarrativeSegment,
    ProposalRound,
    SessionEvent,
    SessionStatus,
    Sparkle,
    Stage,
    StorySession,
    advance_status,
    beat_from_dict,
)
from .gateway import BackendProfile, backend_for_profile
from .personas import FanOutResult
from .plotctl import SegmentIndex
from .roster import Roster, load_roster
from .store import PortfolioStore, StoryState, session_to_dict


class SelectionError(DomainError):
    """Selection referenced a persona with no live proposal this round."""


class StateError(DomainError):
    """Operation not legal for the session's current status."""


def deterministic_session_id(seed: int, sparkle_text: str) -> str:
    digest = hashlib.sha256(f"{seed}\x1f{sparkle_text}".encode("utf-8")).hexdigest()
    return f"replay-{digest[:12]}"


class StoryEngine:
    """Coordinates generation, verification, selection and persistence."""

    def __init__(
        self,
        profile: BackendProfile,
        roster: Roster | None = None,
        backend: Any = None,
        store: PortfolioStore | None = None,
        retrieval_k: int = plotctl.DEFAULT_RETRIEVAL_K,
    ):
        self.profile = profile
        self.roster = roster or load_roster()
        self.backend = backend if backend is not None else backend_for_profile(profile)
        self.store = store
        self.retrieval_k = retrieval_k

    # -- persistence ---------------------------------------------------------

    def _persist(self, state: StoryState) -> None:
        if self.store is not None:
            self.store.save(state)

    def load(self, session_id: str) -> StoryState:
        if self.store is None:
            raise DomainError("engine has no portfolio store attached")
        return self.store.load(session_id)

    # -- lifecycle -----------------------------------------------------------

    def create_session(self, sparkle: Sparkle, session_id: str | None = None) -> StoryState:
        session = StorySession(
            session_id=session_id or uuid.uuid4().hex[:12],
            sparkle=sparkle,
        )
        state = StoryState(session=session, index=SegmentIndex())
        advance_status(session, SessionEvent.SPARKLE_SUBMITTED)
        self.run_round(state)
        return state

    def run_round(self, state: StoryState) -> ProposalRound:
        """Run one blind-variation round for the next beat position."""
        session = state.session
        if session.status is not SessionStatus.AWAITING_SELECTION:
            raise StateError(f"cannot generate proposals while {session.status.value}")
        if len(session.beats) >= session.sparkle.target_beat_count:
            raise StateError("all configured beats have already been selected")
        stage = Stage.INITIAL_BEAT if not session.beats else Stage.NEXT_BEAT
        result: FanOutResult = personas.generate_proposals(
            session, stage, self.roster, self.profile, self.backend
        )
        plotctl.verify_proposals(
            state.index, result.proposals, self.profile, self.backend, k=self.retrieval_k
        )
        ranked = plotctl.rank_proposals(result.proposals)
        rnd = ProposalRound(
            beat_index=len(session.beats),
            stage=stage,
            proposals=ranked,
            failures=result.failures,
        )
        session.proposal_history.append(rnd)
        self._persist(state)
        return rnd

    def _require_round(self, state: StoryState) -> ProposalRound:
        rnd = state.session.current_round()
        if rnd is None:
            raise StateError("no open proposal round for the current beat position")
        return rnd

    def _find_proposal(self, rnd: ProposalRound, persona_id: str) -> BeatProposal:
        for proposal in rnd.proposals:
            if proposal.persona_id == persona_id:
                return proposal
        raise SelectionError(f"persona {persona_id!r} has no proposal in the current round")

    def retry_persona(self, state: StoryState, persona_id: str) -> BeatProposal:
        """Regenerate a single persona's leg and re-rank the open round."""
        session = state.session
        rnd = self._require_round(state)
        proposal = personas.regenerate_for_persona(
            session, persona_id, rnd.stage, self.roster, self.profile, self.backend
        )
        proposal.verdict = plotctl.check_consistency(
            state.index, proposal.beat, self.profile, self.backend, k=self.retrieval_k
        )
        replaced = False
        for i, existing in enumerate(rnd.proposals):
            if existing.persona_id == persona_id:
                rnd.proposals[i] = proposal
                replaced = True
                break
        if not replaced:
            rnd.proposals.append(proposal)
        rnd.failures.pop(persona_id, None)
        rnd.proposals = plotctl.rank_proposals(self._roster_ordered(rnd.proposals))
        self._persist(state)
        return proposal

    def _roster_ordered(self, proposals: list[BeatProposal]) -> list[BeatProposal]:
        order = {pid: i for i, pid in enumerate(self.roster.ids)}
        return sorted(proposals, key=lambda p: order.get(p.persona_id, len(order)))

    def edit_proposal(
        self, state: StoryState, persona_id: str, beat_data: dict
    ) -> BeatProposal:
        """Apply an author edit to a proposal's beat, then re-verify and re-rank."""
        rnd = self._require_round(state)
        proposal = self._find_proposal(rnd, persona_id)
        edited = beat_from_dict(beat_data, index=proposal.beat.index)
        expander.edit_beat(state.session, proposal, edited)
        proposal.verdict = plotctl.check_consistency(
            state.index, proposal.beat, self.profile, self.backend, k=self.retrieval_k
        )
        rnd.proposals = plotctl.rank_proposals(self._roster_ordered(rnd.proposals))
        self._persist(state)
        return proposal

    def select(self, state: StoryState, persona_id: str) -> BeatProposal:
        """Record a selection: append the beat, log the persona, advance."""
        session = state.session
        rnd = session.current_round()
        if session.status is not SessionStatus.AWAITING_SELECTION or rnd is None:
            raise StateError("no selection is open right now")
        proposal = self._find_proposal(rnd, persona_id)
        advance_status(session, SessionEvent.BEAT_SELECTED)
        session.beats.append(proposal.beat)
        session.selection_log.append(persona_id)
        session.pending_persona = persona_id
        session.check_invariants()
        self._persist(state)
        return proposal

    def expand(self, state: StoryState) -> NarrativeSegment:
        """Expand the just-selected beat into a segment and index it."""
        session = state.session
        if session.status is not SessionStatus.EXPANDING or session.pending_persona is None:
            raise StateError("no selected beat is awaiting expansion")
        rnd = session.proposal_history[-1]
        proposal = self._find_proposal(rnd, session.pending_persona)
        segment = expander.expand_beat(session, proposal, self.roster, self.profile, self.backend)
        session.segments.append(segment)
        plotctl.index_segment(state.index, segment, self.backend)
        session.pending_persona = None
        advance_status(session, SessionEvent.SEGMENT_ACCEPTED)
        session.check_invariants()
        self._persist(state)
        return segment

    def refine(self, state: StoryState, segment_index: int, instruction: str) -> NarrativeSegment:
        segment = expander.refine(
            state.session, segment_index, instruction, self.roster, self.profile, self.backend
        )
        self._persist(state)
        return segment

    def manual_edit(self, state: StoryState, segment_index: int, prose: str) -> NarrativeSegment:
        segment = expander.manual_edit(
            state.session, segment_index, prose, state.index, self.backend
        )
        self._persist(state)
        return segment

    def brainstorm(self, state: StoryState, message: str) -> str:
        reply = expander.brainstorm(state.session, message, self.profile, self.backend)
        self._persist(state)
        return reply

    def finish_early(self, state: StoryState) -> None:
        advance_status(state.session, SessionEvent.FINISH_EARLY)
        self._persist(state)

    # -- reporting -----------------------------------------------------------

    def metrics(self, state: StoryState) -> analytics.NarrativeMetrics:
        return analytics.compute_metrics(state.session.story_text(), state.session.beats)

    def export_text(self, state: StoryState) -> str:
        return state.session.story_text() + "\n"

    def export_json(self, state: StoryState) -> str:
        # Story exports exclude the brainstorm transcript (ideation is not
        # part of the work) and the embedding index (internal machinery).
        data = session_to_dict(state.session, include_brainstorm=False)
        return json.dumps(data, ensure_ascii=False, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Scripted replays
# ---------------------------------------------------------------------------


def sparkle_from_dict(data: dict) -> Sparkle:
    words = data.get("target_segment_words", DEFAULT_SEGMENT_WORDS)
    return Sparkle(
        text=data["text"],
        language=data.get("language", "en"),
        target_beat_count=data.get("target_beat_count", DEFAULT_BEAT_COUNT),
        target_segment_words=tuple(words),
    )


def run_replay(engine: StoryEngine, script: dict, session_id: str | None = None) -> StoryState:
    """Execute a scripted selection sequence end-to-end.

    Script shape: {seed, sparkle, picks, edits?, refinements?, brainstorms?,
    finish_early?}. Edits are keyed by pick ordinal and applied before the
    pick; refinements and brainstorms run after the pick they name.
    """
    sparkle = sparkle_from_dict(script["sparkle"])
    picks: list[str] = list(script.get("picks", []))
    edits: dict[str, dict] = {str(k): v for k, v in script.get("edits", {}).items()}
    refinements = list(script.get("refinements", []))
    brainstorms = list(script.get("brainstorms", []))
    if session_id is None:
        session_id = deterministic_session_id(int(script.get("seed", 0)), sparkle.text)

    state = engine.create_session(sparkle, session_id=session_id)
    for ordinal, persona_id in enumerate(picks):
        if ordinal > 0:
            engine.run_round(state)
        if str(ordinal) in edits:
            engine.edit_proposal(state, persona_id, edits[str(ordinal)])
        engine.select(state, persona_id)
        engine.expand(state)
        for item in brainstorms:
            if int(item.get("after_pick", -1)) == ordinal:
                engine.brainstorm(state, item["message"])
        for item in refinements:
            if int(item.get("after_pick", -1)) == ordinal:
                engine.refine(state, int(item["segment"]), item["instruction"])
    if script.get("finish_early") and state.session.status is not SessionStatus.COMPLETE:
        engine.finish_early(state)
    return state
