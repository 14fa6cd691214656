"""Core domain types, the session state machine, and beat serialization.

Everything else in the package depends on this module; it depends on
nothing but the standard library.
"""

from __future__ import annotations

import json
import math
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

MIN_EVENTS = 3  # global schema floor for key_events
MAX_EVENTS = 5  # global schema ceiling for key_events
EMBEDDING_DIM = 1536
DEFAULT_BEAT_COUNT = 6
DEFAULT_SEGMENT_WORDS = (800, 1000)

_LANGUAGE_TAG = re.compile(r"^[A-Za-z]{2,8}(-[A-Za-z0-9]{1,8})*$")


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class DomainError(Exception):
    """Base class for domain-level failures."""


class ValidationError(DomainError):
    """A value violates a type invariant. Carries field -> message paths."""

    def __init__(self, fields: dict[str, str]):
        self.fields = dict(fields)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.fields.items()))


class BeatParseError(DomainError):
    """Base class for unrecoverable beat-parsing failures."""


class MalformedJson(BeatParseError):
    def __init__(self, position: int):
        self.position = position
        super().__init__(f"malformed JSON at position {position}")


class MissingField(BeatParseError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing or empty required field: {name}")


class EventCountOutOfRange(BeatParseError):
    def __init__(self, count: int):
        self.count = count
        super().__init__(
            f"key_events must hold {MIN_EVENTS}..{MAX_EVENTS} events, got {count}"
        )


class IllegalTransition(DomainError):
    def __init__(self, status: "SessionStatus", event: "SessionEvent"):
        self.status = status
        self.event = event
        super().__init__(f"event {event.value!r} is not legal in status {status.value!r}")


# ---------------------------------------------------------------------------
# Canonical word tokenization
# ---------------------------------------------------------------------------


def _is_punctuation_only(token: str) -> bool:
    return all(unicodedata.category(ch).startswith("P") for ch in token)


def tokenize_words(text: str) -> list[str]:
    """Canonical tokenization shared by word counts and analytics.

    Splits on Unicode whitespace and drops tokens made entirely of
    punctuation, so quote marks and dashes never inflate word counts.
    """
    return [tok for tok in text.split() if not _is_punctuation_only(tok)]


def count_words(text: str) -> int:
    return len(tokenize_words(text))


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sparkle:
    """The user's free-text story seed plus generation parameters."""

    text: str
    language: str = "en"
    target_beat_count: int = DEFAULT_BEAT_COUNT
    target_segment_words: tuple[int, int] = DEFAULT_SEGMENT_WORDS

    def __post_init__(self) -> None:
        problems: dict[str, str] = {}
        if not self.text.strip():
            problems["text"] = "sparkle text must be non-empty"
        if not _LANGUAGE_TAG.match(self.language):
            problems["language"] = f"not an IETF-style language tag: {self.language!r}"
        if not 1 <= self.target_beat_count <= 10:
            problems["target_beat_count"] = (
                f"must be between 1 and 10, got {self.target_beat_count}"
            )
        lo, hi = self.target_segment_words
        if lo < 1 or lo > hi:
            problems["target_segment_words"] = f"invalid word range [{lo}, {hi}]"
        if problems:
            raise ValidationError(problems)


@dataclass(frozen=True)
class Persona:
    """A genre-specialized generator profile: identity prompt + parameters."""

    id: str
    display_name: str
    specialization: str
    identity_prompt: str
    parameters: dict[str, float]

    PARAMETER_BOUNDS = {
        # name: (low, high, low_inclusive)
        "dialogue_ratio_target": (0.0, 1.0, True),
        "lexical_diversity_target": (0.0, 1.0, False),
    }

    def __post_init__(self) -> None:
        problems: dict[str, str] = {}
        if not self.id.strip():
            problems["id"] = "persona id must be non-empty"
        if not self.identity_prompt.strip():
            problems["identity_prompt"] = "identity prompt must be non-empty"
        for name, (low, high, low_inclusive) in self.PARAMETER_BOUNDS.items():
            if name not in self.parameters:
                problems[f"parameters.{name}"] = "required parameter missing"
                continue
            value = self.parameters[name]
            ok = (value >= low if low_inclusive else value > low) and value <= high
            if not ok:
                problems[f"parameters.{name}"] = f"value {value} outside bounds"
        if problems:
            raise ValidationError(problems)

    @property
    def dialogue_ratio_target(self) -> float:
        return self.parameters["dialogue_ratio_target"]

    @property
    def lexical_diversity_target(self) -> float:
        return self.parameters["lexical_diversity_target"]


@dataclass(frozen=True)
class Setting:
    location: str
    time: str


@dataclass(frozen=True)
class StoryBeat:
    """One structured narrative unit: setting, characters, 3-5 key events."""

    index: int
    setting: Setting
    characters: tuple[str, ...]
    key_events: tuple[str, ...]

    def __post_init__(self) -> None:
        raise_beat_problems(
            index=self.index,
            location=self.setting.location,
            characters=self.characters,
            key_events=self.key_events,
        )


def raise_beat_problems(
    *,
    index: int,
    location: str,
    characters: Iterable[str],
    key_events: Iterable[str],
) -> None:
    """Validate beat invariants, raising ValidationError with field paths."""
    problems: dict[str, str] = {}
    characters = tuple(characters)
    key_events = tuple(key_events)
    if index < 0:
        problems["index"] = "beat index must be >= 0"
    if not location.strip():
        problems["setting.location"] = "location must be non-empty"
    if not characters or any(not c.strip() for c in characters):
        problems["characters"] = "at least one non-empty character name required"
    n = len(key_events)
    if not MIN_EVENTS <= n <= MAX_EVENTS:
        problems["key_events"] = f"expected {MIN_EVENTS}..{MAX_EVENTS} events, got {n}"
    elif any(not e.strip() for e in key_events):
        problems["key_events"] = "events must be non-empty strings"
    if problems:
        raise ValidationError(problems)


@dataclass(frozen=True)
class ConsistencyVerdict:
    """Retrieval-grounded yes/no logical-error judgment for one beat."""

    has_error: bool
    error_description: str = ""
    retrieved_segment_ids: tuple[str, ...] = ()
    similarity_scores: tuple[float, ...] = ()
    parse_warning: bool = False  # verifier reply could not be parsed; treated as clean

    def __post_init__(self) -> None:
        problems: dict[str, str] = {}
        if len(self.retrieved_segment_ids) != len(self.similarity_scores):
            problems["similarity_scores"] = "must align one-to-one with retrieved ids"
        if any(not -1.0 - 1e-9 <= s <= 1.0 + 1e-9 for s in self.similarity_scores):
            problems["similarity_scores"] = "scores must lie in [-1, 1]"
        if not self.has_error and self.error_description:
            problems["error_description"] = "must be empty when has_error is false"
        if problems:
            raise ValidationError(problems)


@dataclass
class BeatProposal:
    """One persona's candidate beat for the current round."""

    persona_id: str
    beat: StoryBeat
    rationale: str
    verdict: ConsistencyVerdict | None = None  # None == pending
    rank: int | None = None  # assigned by ranking once verdicts resolve
    repairs: tuple[str, ...] = ()  # parse-repair flags from parse_beat
    provenance: tuple[str, ...] = ()  # e.g. edit records

    def __post_init__(self) -> None:
        if not self.rationale.strip():
            raise ValidationError({"rationale": "rationale must be non-empty"})


@dataclass
class Revision:
    """One rewrite of a segment: the instruction used and the prose it replaced."""

    instruction: str  # "manual" for direct edits
    prior_prose: str


@dataclass
class NarrativeSegment:
    """The prose expansion of one selected beat."""

    beat_index: int
    persona_id: str
    prose: str
    word_count: int
    revisions: list[Revision] = field(default_factory=list)
    flags: tuple[str, ...] = ()  # e.g. word-count-out-of-range

    def __post_init__(self) -> None:
        if self.word_count != count_words(self.prose):
            raise ValidationError(
                {"word_count": "must equal the canonical word count of prose"}
            )

    def set_prose(self, prose: str) -> None:
        self.prose = prose
        self.word_count = count_words(prose)


class SessionStatus(Enum):
    IDEATION = "ideation"
    AWAITING_SELECTION = "awaiting_selection"
    EXPANDING = "expanding"
    COMPLETE = "complete"


class SessionEvent(Enum):
    SPARKLE_SUBMITTED = "sparkle_submitted"
    BEAT_SELECTED = "beat_selected"
    SEGMENT_ACCEPTED = "segment_accepted"
    FINISH_EARLY = "finish_early"


# Legal (status, event) pairs; targets that depend on session shape are
# resolved inside advance_status.
LEGAL_TRANSITIONS: dict[tuple[SessionStatus, SessionEvent], SessionStatus | None] = {
    (SessionStatus.IDEATION, SessionEvent.SPARKLE_SUBMITTED): SessionStatus.AWAITING_SELECTION,
    (SessionStatus.AWAITING_SELECTION, SessionEvent.BEAT_SELECTED): SessionStatus.EXPANDING,
    (SessionStatus.EXPANDING, SessionEvent.SEGMENT_ACCEPTED): None,  # shape-dependent
    (SessionStatus.AWAITING_SELECTION, SessionEvent.FINISH_EARLY): SessionStatus.COMPLETE,
}


class Stage(Enum):
    """Generation stages for prompt assembly."""

    INITIAL_BEAT = "initial_beat"
    NEXT_BEAT = "next_beat"
    EXPANSION = "expansion"


@dataclass
class ProposalRound:
    """One blind-variation round: all proposals plus per-persona failures."""

    beat_index: int
    stage: Stage
    proposals: list[BeatProposal] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)  # persona_id -> error


@dataclass
class StorySession:
    """Full mutable session state, advanced only through the state machine."""

    session_id: str
    sparkle: Sparkle
    status: SessionStatus = SessionStatus.IDEATION
    beats: list[StoryBeat] = field(default_factory=list)
    segments: list[NarrativeSegment] = field(default_factory=list)
    proposal_history: list[ProposalRound] = field(default_factory=list)
    selection_log: list[str] = field(default_factory=list)
    brainstorm_log: list[dict[str, str]] = field(default_factory=list)
    pending_persona: str | None = None  # selected, awaiting expansion

    def current_round(self) -> ProposalRound | None:
        if not self.proposal_history:
            return None
        latest = self.proposal_history[-1]
        return latest if latest.beat_index == len(self.beats) else None

    def story_text(self) -> str:
        return "\n\n".join(seg.prose for seg in self.segments)

    def check_invariants(self) -> None:
        assert len(self.segments) <= len(self.beats) <= self.sparkle.target_beat_count
        assert len(self.selection_log) == len(self.beats)


def advance_status(session: StorySession, event: SessionEvent) -> SessionStatus:
    """Apply one state-machine event; returns the new status or raises."""
    key = (session.status, event)
    if key not in LEGAL_TRANSITIONS:
        raise IllegalTransition(session.status, event)
    target = LEGAL_TRANSITIONS[key]
    if event is SessionEvent.SEGMENT_ACCEPTED:
        done = (
            len(session.beats) == session.sparkle.target_beat_count
            and len(session.segments) == len(session.beats)
        )
        target = SessionStatus.COMPLETE if done else SessionStatus.AWAITING_SELECTION
    elif event is SessionEvent.FINISH_EARLY:
        if not session.beats or len(session.segments) != len(session.beats):
            raise IllegalTransition(session.status, event)
    session.status = target  # type: ignore[assignment]
    return session.status


# ---------------------------------------------------------------------------
# Beat serialization
# ---------------------------------------------------------------------------

_BEAT_FIELDS = ("setting", "characters", "key_events")


def beat_to_dict(beat: StoryBeat) -> dict[str, Any]:
    """Beat as a plain dict with the canonical field order."""
    return {
        "setting": {"location": beat.setting.location, "time": beat.setting.time},
        "characters": list(beat.characters),
        "key_events": list(beat.key_events),
    }


def serialize_beat(beat: StoryBeat) -> str:
    """Canonical single-line JSON for a beat; field order is fixed so equal
    beats always serialize to identical bytes."""
    return json.dumps(beat_to_dict(beat), ensure_ascii=False, separators=(", ", ": "))


@dataclass(frozen=True)
class ParsedBeat:
    """Result of parse_beat: the beat, its companion rationale, repair flags."""

    beat: StoryBeat
    rationale: str
    repairs: tuple[str, ...] = ()

    @property
    def repaired(self) -> bool:
        return bool(self.repairs)


def parse_beat(json_text: str, index: int = 0) -> ParsedBeat:
    """Parse (possibly model-produced) beat JSON into a StoryBeat.

    Exactly two deviations are repaired, with flags: unknown extra fields are
    dropped, and key_events given as one semicolon-joined string is split.
    Anything else raises a structured error naming the first violated
    constraint.
    """
    try:
        raw = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise MalformedJson(exc.pos) from exc
    if not isinstance(raw, dict):
        raise MalformedJson(0)

    repairs: list[str] = []

    setting_raw = raw.get("setting")
    if not isinstance(setting_raw, dict):
        raise MissingField("setting")
    location = setting_raw.get("location")
    if not isinstance(location, str) or not location.strip():
        raise MissingField("setting.location")
    time = setting_raw.get("time")
    if not isinstance(time, str):
        raise MissingField("setting.time")
    extra_setting = sorted(set(setting_raw) - {"location", "time"})
    if extra_setting:
        repairs.append("extra-fields-dropped:" + ",".join(f"setting.{k}" for k in extra_setting))

    characters_raw = raw.get("characters")
    if (
        not isinstance(characters_raw, list)
        or not characters_raw
        or any(not isinstance(c, str) or not c.strip() for c in characters_raw)
    ):
        raise MissingField("characters")

    events_raw = raw.get("key_events")
    if isinstance(events_raw, str):
        events = [part.strip() for part in events_raw.split(";") if part.strip()]
        repairs.append("events-split-from-string")
    elif isinstance(events_raw, list):
        if any(not isinstance(e, str) or not e.strip() for e in events_raw):
            raise MissingField("key_events")
        events = [e.strip() for e in events_raw]
    else:
        raise MissingField("key_events")
    if not MIN_EVENTS <= len(events) <= MAX_EVENTS:
        raise EventCountOutOfRange(len(events))

    rationale = raw.get("rationale", "")
    if not isinstance(rationale, str):
        rationale = ""

    extra = sorted(set(raw) - {*_BEAT_FIELDS, "rationale"})
    if extra:
        repairs.append("extra-fields-dropped:" + ",".join(extra))

    beat = StoryBeat(
        index=index,
        setting=Setting(location=location.strip(), time=time.strip()),
        characters=tuple(c.strip() for c in characters_raw),
        key_events=tuple(events),
    )
    return ParsedBeat(beat=beat, rationale=rationale, repairs=tuple(repairs))


def beat_from_dict(data: dict[str, Any], index: int = 0) -> StoryBeat:
    """Build a beat from an already-parsed dict (API bodies, session files)."""
    return parse_beat(json.dumps(data), index=index).beat


# ---------------------------------------------------------------------------
# Embedding vector
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-dimension embedding with its Euclidean norm cached."""

    values: tuple[float, ...]
    norm: float

    def __post_init__(self) -> None:
        if len(self.values) != EMBEDDING_DIM:
            raise ValidationError(
                {"values": f"expected dimension {EMBEDDING_DIM}, got {len(self.values)}"}
            )

    @classmethod
    def from_values(cls, values: Iterable[float]) -> "EmbeddingVector":
        vals = tuple(float(v) for v in values)
        norm = math.sqrt(math.fsum(v * v for v in vals))
        return cls(values=vals, norm=norm)


__all__ = [
    "BeatParseError",
    "BeatProposal",
    "ConsistencyVerdict",
    "DEFAULT_BEAT_COUNT",
    "DEFAULT_SEGMENT_WORDS",
    "DomainError",
    "EMBEDDING_DIM",
    "EmbeddingVector",
    "EventCountOutOfRange",
    "IllegalTransition",
    "LEGAL_TRANSITIONS",
    "MalformedJson",
    "MAX_EVENTS",
    "MIN_EVENTS",
    "MissingField",
    "NarrativeSegment",
    "ParsedBeat",
    "Persona",
    "ProposalRound",
    "Revision",
    "Sparkle",
    "SessionEvent",
    "SessionStatus",
    "Setting",
    "Stage",
    "StoryBeat",
    "StorySession",
    "ValidationError",
    "advance_status",
    "beat_from_dict",
    "beat_to_dict",
    "count_words",
    "parse_beat",
    "raise_beat_problems",
    "serialize_beat",
    "tokenize_words",
]
