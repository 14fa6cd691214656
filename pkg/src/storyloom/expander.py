"""Turning selected beats into prose, plus the editing aids.

Brainstorm is a non-mutating ideation chat; refine rewrites a segment under
an instruction; manual edits replace prose directly and re-embed the
segment's index entry so consistency checks see the human's canonical text.
"""

from __future__ import annotations

from dataclasses import replace

from . import gateway
from .domain import (
    BeatProposal,
    DomainError,
    NarrativeSegment,
    Revision,
    SessionStatus,
    Stage,
    StoryBeat,
    StorySession,
    count_words,
)
from .gateway import BackendProfile, GenerationParams, PromptBundle
from .personas import assemble_prompt, load_template
from .plotctl import SegmentIndex, segment_key
from .roster import Roster

WORD_RANGE_TOLERANCE = 0.25  # slack either side before a segment is flagged
MAX_GENERATION_ATTEMPTS = 2  # one automatic regeneration, then flag
OUT_OF_RANGE_FLAG = "word-count-out-of-range"


class IllegalState(DomainError):
    pass


class UnknownSegment(DomainError):
    def __init__(self, segment_index: int):
        self.segment_index = segment_index
        super().__init__(f"no segment with index {segment_index}")


def _acceptable(word_count: int, lower: int, upper: int) -> bool:
    return lower * (1 - WORD_RANGE_TOLERANCE) <= word_count <= upper * (1 + WORD_RANGE_TOLERANCE)


def _generate_with_retry(
    make_bundle,
    profile: BackendProfile,
    backend,
    lower: int,
    upper: int,
) -> tuple[str, tuple[str, ...]]:
    """Generate prose, retrying once if the word count misses the tolerance
    band; a second miss is flagged and left to the human."""
    prose = ""
    for attempt in range(1, MAX_GENERATION_ATTEMPTS + 1):
        prose = gateway.complete(make_bundle(attempt), profile, backend=backend)
        if _acceptable(count_words(prose), lower, upper):
            return prose, ()
    return prose, (OUT_OF_RANGE_FLAG,)


def expand_beat(
    session: StorySession,
    proposal: BeatProposal,
    roster: Roster,
    profile: BackendProfile,
    backend,
) -> NarrativeSegment:
    """Expand the selected beat into prose using the proposal's persona."""
    if session.status is not SessionStatus.EXPANDING:
        raise IllegalState("session is not expanding a selected beat")
    if not session.beats or session.beats[-1] != proposal.beat:
        raise IllegalState("proposal does not belong to the current round")
    lower, upper = session.sparkle.target_segment_words
    persona = roster.get(proposal.persona_id)

    def make_bundle(attempt: int) -> PromptBundle:
        return assemble_prompt(persona, session, Stage.EXPANSION, profile, attempt=attempt)

    prose, flags = _generate_with_retry(make_bundle, profile, backend, lower, upper)
    return NarrativeSegment(
        beat_index=proposal.beat.index,
        persona_id=persona.id,
        prose=prose,
        word_count=count_words(prose),
        flags=flags,
    )


def brainstorm(
    session: StorySession,
    user_message: str,
    profile: BackendProfile,
    backend,
) -> str:
    """Non-mutating ideation chat: beats and segments are untouched; the
    exchange lands only in the separate brainstorm transcript."""
    if not user_message.strip():
        raise DomainError("brainstorm message must be non-empty")
    history = gateway.compress_history(session.segments, session.beats).text
    transcript_tail = "\n".join(
        f"{entry['role']}: {entry['text']}" for entry in session.brainstorm_log[-6:]
    )
    context_parts = [
        f"Story seed: {session.sparkle.text}",
        f"Story so far:\n{history}" if history else "Story so far: (nothing expanded yet)",
    ]
    if transcript_tail:
        context_parts.append(f"Recent brainstorm exchanges:\n{transcript_tail}")
    context_parts.append(f"Author message: {user_message}")
    bundle = PromptBundle(
        meta_layer=load_template("brainstorm_meta"),
        context_layer="\n\n".join(context_parts),
        constraint_layer=load_template("brainstorm_constraint"),
        params=GenerationParams(
            temperature=gateway.TEMP_EXPANSION,
            max_tokens=512,
            model_id=profile.generation_model,
        ),
        tags=(("stage", "brainstorm"), ("turn", str(len(session.brainstorm_log)))),
    )
    reply = gateway.complete(bundle, profile, backend=backend)
    session.brainstorm_log.append({"role": "user", "text": user_message})
    session.brainstorm_log.append({"role": "assistant", "text": reply})
    return reply


def refine(
    session: StorySession,
    segment_index: int,
    instruction: str,
    roster: Roster,
    profile: BackendProfile,
    backend,
) -> NarrativeSegment:
    """Instruction-driven rewrite of one segment; prior prose is kept in the
    revision trail. The segment keeps its original persona attribution."""
    if not 0 <= segment_index < len(session.segments):
        raise UnknownSegment(segment_index)
    if not instruction.strip():
        raise DomainError("revision instruction must be non-empty")
    segment = session.segments[segment_index]
    persona = roster.get(segment.persona_id)
    lower, upper = session.sparkle.target_segment_words
    history = gateway.compress_history(session.segments, session.beats).text

    def make_bundle(attempt: int) -> PromptBundle:
        return PromptBundle(
            meta_layer=load_template("refine_meta").format_map(
                {
                    "persona_name": persona.display_name,
                    "identity_prompt": persona.identity_prompt,
                }
            ),
            context_layer=(
                f"Story context:\n{history}\n\n"
                f"Segment to revise (segment {segment_index}):\n{segment.prose}\n\n"
                f"Revision instruction: {instruction}"
            ),
            constraint_layer=load_template("refine_constraint").format_map(
                {
                    "lower": lower,
                    "upper": upper,
                    "dialogue_ratio": f"{persona.dialogue_ratio_target:.2f}",
                    "lexical_diversity": f"{persona.lexical_diversity_target:.2f}",
                }
            ),
            params=GenerationParams(
                temperature=gateway.TEMP_EXPANSION,
                max_tokens=max(1024, upper * 3),
                model_id=profile.generation_model,
            ),
            tags=(
                ("stage", "refine"),
                ("segment", str(segment_index)),
                ("revision", str(len(segment.revisions))),
                ("attempt", str(attempt)),
            ),
        )

    new_prose, flags = _generate_with_retry(make_bundle, profile, backend, lower, upper)
    segment.revisions.append(Revision(instruction=instruction, prior_prose=segment.prose))
    segment.set_prose(new_prose)
    segment.flags = flags
    return segment


def edit_beat(
    session: StorySession,
    proposal: BeatProposal,
    edited_beat: StoryBeat,
) -> BeatProposal:
    """Replace a proposal's beat with the author's edit.

    The verdict resets to pending (the caller re-verifies and re-ranks); the
    edit is recorded in provenance even when it is a no-op.
    """
    current = session.current_round()
    if current is None or proposal not in current.proposals:
        raise IllegalState("proposal does not belong to the current round")
    if edited_beat.index != proposal.beat.index:
        edited_beat = replace(edited_beat, index=proposal.beat.index)
    changed = edited_beat != proposal.beat
    proposal.beat = edited_beat
    proposal.verdict = None
    proposal.rank = None
    proposal.provenance = proposal.provenance + (
        "beat-edited" if changed else "beat-edit-noop",
    )
    return proposal


def manual_edit(
    session: StorySession,
    segment_index: int,
    new_prose: str,
    index: SegmentIndex,
    backend,
) -> NarrativeSegment:
    """Directly replace a segment's prose and re-embed its index entry (the
    one sanctioned exception to the index's append-only rule)."""
    if not 0 <= segment_index < len(session.segments):
        raise UnknownSegment(segment_index)
    if not new_prose.strip():
        raise DomainError("replacement prose must be non-empty")
    segment = session.segments[segment_index]
    segment.revisions.append(Revision(instruction="manual", prior_prose=segment.prose))
    segment.set_prose(new_prose)
    key = segment_key(segment.beat_index)
    if index.get(key) is not None:
        index.supersede(key, backend.embed(new_prose), new_prose)
    return segment
