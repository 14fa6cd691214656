"""Blind variation: per-persona prompt assembly and the parallel fan-out.

Every roster persona proposes a beat for the current position, concurrently
and independently; partial failures are recorded, never fatal, as long as at
least one persona succeeds.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from importlib import resources

from . import gateway
from .domain import (
    BeatParseError,
    BeatProposal,
    DomainError,
    Persona,
    SessionStatus,
    Stage,
    StorySession,
    parse_beat,
    serialize_beat,
)
from .gateway import BackendProfile, GatewayError, GenerationParams, PromptBundle
from .roster import Roster


class IllegalStage(DomainError):
    def __init__(self, stage: Stage, reason: str):
        self.stage = stage
        super().__init__(f"stage {stage.value!r} not legal here: {reason}")


class AllPersonasFailed(DomainError):
    """Every fan-out leg failed; carries the per-persona error map."""

    def __init__(self, failures: dict[str, str]):
        self.failures = dict(failures)
        super().__init__(
            "all personas failed: "
            + "; ".join(f"{pid}: {msg}" for pid, msg in self.failures.items())
        )


def expected_event_range(beat_index: int, total_beats: int) -> tuple[int, int]:
    """Position-dependent event budget for a beat.

    The first half of the arc stays lean (3-4 events), the final third runs
    hot (4-5), the middle may use the full 3-5 band. A single-beat story is
    its own climax. Overlaps resolve toward the climactic band.
    """
    if not 0 <= beat_index < total_beats:
        raise ValueError(f"beat_index {beat_index} outside [0, {total_beats})")
    if total_beats == 1:
        return (4, 5)
    if beat_index >= total_beats - total_beats // 3:
        return (4, 5)
    if beat_index < math.ceil(total_beats / 2):
        return (3, 4)
    return (3, 5)


# ---------------------------------------------------------------------------
# Prompt assembly
# ---------------------------------------------------------------------------

_TEMPLATE_CACHE: dict[str, str] = {}


def load_template(name: str) -> str:
    if name not in _TEMPLATE_CACHE:
        _TEMPLATE_CACHE[name] = (
            resources.files("storyloom").joinpath(f"prompts/{name}.txt").read_text("utf-8")
        ).strip()
    return _TEMPLATE_CACHE[name]


_STAGE_TEMPERATURE = {
    Stage.INITIAL_BEAT: gateway.TEMP_VARIATION,
    Stage.NEXT_BEAT: gateway.TEMP_VARIATION,
    Stage.EXPANSION: gateway.TEMP_EXPANSION,
}


def _check_stage(session: StorySession, stage: Stage) -> None:
    if stage is Stage.INITIAL_BEAT:
        if session.beats or session.status not in (
            SessionStatus.IDEATION,
            SessionStatus.AWAITING_SELECTION,
        ):
            raise IllegalStage(stage, "session already has beats")
    elif stage is Stage.NEXT_BEAT:
        if not session.beats or session.status is not SessionStatus.AWAITING_SELECTION:
            raise IllegalStage(stage, "requires a prior beat and an open selection round")
    elif stage is Stage.EXPANSION:
        if session.status is not SessionStatus.EXPANDING:
            raise IllegalStage(stage, "session is not expanding a selected beat")


def assemble_prompt(
    persona: Persona,
    session: StorySession,
    stage: Stage,
    profile: BackendProfile,
    attempt: int = 1,
) -> PromptBundle:
    """Build the three-layer bundle for one persona at one stage."""
    _check_stage(session, stage)
    sparkle = session.sparkle
    total = sparkle.target_beat_count
    history = gateway.compress_history(session.segments, session.beats).text

    persona_fields = {
        "persona_name": persona.display_name,
        "specialization": persona.specialization,
        "identity_prompt": persona.identity_prompt,
        "dialogue_ratio": f"{persona.dialogue_ratio_target:.2f}",
        "lexical_diversity": f"{persona.lexical_diversity_target:.2f}",
    }

    if stage is Stage.EXPANSION:
        beat = session.beats[-1]
        lower, upper = sparkle.target_segment_words
        meta = load_template("meta_expansion").format_map(persona_fields)
        context = load_template("context_expansion").format_map(
            {
                "history": history,
                "beat_number": beat.index + 1,
                "total_beats": total,
                "beat_json": serialize_beat(beat),
            }
        )
        constraint = load_template("constraint_expansion").format_map(
            {
                "language": sparkle.language,
                "lower": lower,
                "upper": upper,
                **persona_fields,
            }
        )
        temperature = _STAGE_TEMPERATURE[stage]
        max_tokens = max(1024, upper * 3)
        beat_index = beat.index
    else:
        beat_index = len(session.beats)
        min_events, max_events = expected_event_range(beat_index, total)
        meta = load_template(f"meta_{stage.value}").format_map(persona_fields)
        if stage is Stage.INITIAL_BEAT:
            context = load_template("context_initial_beat").format_map(
                {
                    "language": sparkle.language,
                    "sparkle": sparkle.text,
                    "total_beats": total,
                }
            )
        else:
            previous = session.beats[-1]
            context = load_template("context_next_beat").format_map(
                {
                    "history": history,
                    "previous_number": previous.index + 1,
                    "total_beats": total,
                    "previous_beat": serialize_beat(previous),
                }
            )
        constraint = load_template(f"constraint_{stage.value}").format_map(
            {
                "beat_number": beat_index + 1,
                "total_beats": total,
                "min_events": min_events,
                "max_events": max_events,
                "language": sparkle.language,
            }
        )
        temperature = _STAGE_TEMPERATURE[stage]
        max_tokens = 1024

    return PromptBundle(
        meta_layer=meta,
        context_layer=context,
        constraint_layer=constraint,
        params=GenerationParams(
            temperature=temperature,
            max_tokens=max_tokens,
            model_id=profile.generation_model,
        ),
        tags=(
            ("persona_id", persona.id),
            ("stage", stage.value),
            ("beat_index", str(beat_index)),
            ("attempt", str(attempt)),
        ),
    )


# ---------------------------------------------------------------------------
# Parallel fan-out
# ---------------------------------------------------------------------------


def _propose(
    persona: Persona,
    session: StorySession,
    stage: Stage,
    profile: BackendProfile,
    backend,
    attempt: int = 1,
) -> BeatProposal:
    bundle = assemble_prompt(persona, session, stage, profile, attempt=attempt)
    text = gateway.complete(bundle, profile, backend=backend)
    parsed = parse_beat(text, index=len(session.beats))
    # A beat without a usable rationale is still a beat; never drop it.
    rationale = parsed.rationale.strip() or f"Proposed by {persona.display_name}."
    return BeatProposal(
        persona_id=persona.id,
        beat=parsed.beat,
        rationale=rationale,
        repairs=parsed.repairs,
    )


@dataclass
class FanOutResult:
    proposals: list[BeatProposal]
    failures: dict[str, str]


def generate_proposals(
    session: StorySession,
    stage: Stage,
    roster: Roster,
    profile: BackendProfile,
    backend,
    leg_timeout_s: float | None = None,
) -> FanOutResult:
    """One blind-variation round: every persona proposes concurrently.

    Each leg carries the complete story context and runs independently;
    failures are collected per persona. At least one success is required.
    """
    _check_stage(session, stage)
    timeout = leg_timeout_s if leg_timeout_s is not None else profile.timeout_s + 5.0
    proposals: dict[str, BeatProposal] = {}
    failures: dict[str, str] = {}
    pool = ThreadPoolExecutor(max_workers=len(roster))
    try:
        futures = {
            persona.id: pool.submit(_propose, persona, session, stage, profile, backend)
            for persona in roster
        }
        for persona_id, future in futures.items():
            try:
                proposals[persona_id] = future.result(timeout=timeout)
            except FutureTimeout:
                failures[persona_id] = "Timeout: leg exceeded the per-call timeout"
            except (GatewayError, BeatParseError) as exc:
                failures[persona_id] = f"{type(exc).__name__}: {exc}"
    finally:
        # Never block the round on a hung leg; stragglers are abandoned.
        pool.shutdown(wait=False, cancel_futures=True)
    if not proposals:
        raise AllPersonasFailed(failures)
    ordered = [proposals[p.id] for p in roster if p.id in proposals]
    return FanOutResult(proposals=ordered, failures=failures)


def regenerate_for_persona(
    session: StorySession,
    persona_id: str,
    stage: Stage,
    roster: Roster,
    profile: BackendProfile,
    backend,
    attempt: int = 1,
) -> BeatProposal:
    """Single-persona retry; same contract as one leg of the fan-out."""
    persona = roster.get(persona_id)
    return _propose(persona, session, stage, profile, backend, attempt=attempt)
