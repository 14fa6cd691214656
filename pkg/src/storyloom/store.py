"""Session serialization and the file-backed portfolio store.

One JSON file per session, written atomically (temp file + rename) so a
concurrent reader sees the old or the new snapshot, never a torn one. The
embedding index is persisted inline so sessions resume without re-embedding.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

from .domain import (
    BeatProposal,
    ConsistencyVerdict,
    DomainError,
    EmbeddingVector,
    NarrativeSegment,
    ProposalRound,
    Revision,
    SessionStatus,
    Setting,
    Sparkle,
    Stage,
    StoryBeat,
    StorySession,
    beat_to_dict,
)
from .plotctl import IndexEntry, SegmentIndex

FORMAT_VERSION = 1


class CorruptPortfolio(DomainError):
    def __init__(self, session_id: str, position: int, reason: str = ""):
        self.session_id = session_id
        self.position = position
        super().__init__(
            f"portfolio file for {session_id!r} is corrupt at position {position}"
            + (f": {reason}" if reason else "")
        )


class UnknownSession(DomainError):
    def __init__(self, session_id: str):
        self.session_id = session_id
        super().__init__(f"no session with id {session_id!r}")


@dataclass
class StoryState:
    """A session plus its plot-controller index; the unit of persistence."""

    session: StorySession
    index: SegmentIndex


# ---------------------------------------------------------------------------
# Dict round-trips (fixed key order for byte-stable persistence)
# ---------------------------------------------------------------------------


def _verdict_to_dict(verdict: ConsistencyVerdict | None) -> dict | None:
    if verdict is None:
        return None
    return {
        "has_error": verdict.has_error,
        "error_description": verdict.error_description,
        "retrieved_segment_ids": list(verdict.retrieved_segment_ids),
        "similarity_scores": list(verdict.similarity_scores),
        "parse_warning": verdict.parse_warning,
    }


def _verdict_from_dict(data: dict | None) -> ConsistencyVerdict | None:
    if data is None:
        return None
    return ConsistencyVerdict(
        has_error=data["has_error"],
        error_description=data["error_description"],
        retrieved_segment_ids=tuple(data["retrieved_segment_ids"]),
        similarity_scores=tuple(data["similarity_scores"]),
        parse_warning=data.get("parse_warning", False),
    )


def _proposal_to_dict(proposal: BeatProposal) -> dict:
    return {
        "persona_id": proposal.persona_id,
        "rank": proposal.rank,
        "beat": beat_to_dict(proposal.beat),
        "rationale": proposal.rationale,
        "verdict": _verdict_to_dict(proposal.verdict),
        "repairs": list(proposal.repairs),
        "provenance": list(proposal.provenance),
    }


def _beat_from_dict(data: dict, index: int) -> StoryBeat:
    return StoryBeat(
        index=index,
        setting=Setting(location=data["setting"]["location"], time=data["setting"]["time"]),
        characters=tuple(data["characters"]),
        key_events=tuple(data["key_events"]),
    )


def _proposal_from_dict(data: dict, beat_index: int) -> BeatProposal:
    return BeatProposal(
        persona_id=data["persona_id"],
        beat=_beat_from_dict(data["beat"], beat_index),
        rationale=data["rationale"],
        verdict=_verdict_from_dict(data["verdict"]),
        rank=data["rank"],
        repairs=tuple(data["repairs"]),
        provenance=tuple(data.get("provenance", [])),
    )


def _segment_to_dict(segment: NarrativeSegment) -> dict:
    return {
        "beat_index": segment.beat_index,
        "persona_id": segment.persona_id,
        "prose": segment.prose,
        "word_count": segment.word_count,
        "revisions": [
            {"instruction": rev.instruction, "prior_prose": rev.prior_prose}
            for rev in segment.revisions
        ],
        "flags": list(segment.flags),
    }


def _segment_from_dict(data: dict) -> NarrativeSegment:
    return NarrativeSegment(
        beat_index=data["beat_index"],
        persona_id=data["persona_id"],
        prose=data["prose"],
        word_count=data["word_count"],
        revisions=[
            Revision(instruction=rev["instruction"], prior_prose=rev["prior_prose"])
            for rev in data["revisions"]
        ],
        flags=tuple(data.get("flags", [])),
    )


def session_to_dict(session: StorySession, include_brainstorm: bool = True) -> dict:
    data: dict[str, Any] = {
        "session_id": session.session_id,
        "status": session.status.value,
        "sparkle": {
            "text": session.sparkle.text,
            "language": session.sparkle.language,
            "target_beat_count": session.sparkle.target_beat_count,
            "target_segment_words": list(session.sparkle.target_segment_words),
        },
        "beats": [beat_to_dict(beat) for beat in session.beats],
        "segments": [_segment_to_dict(segment) for segment in session.segments],
        "selection_log": list(session.selection_log),
        "pending_persona": session.pending_persona,
        "proposal_history": [
            {
                "beat_index": rnd.beat_index,
                "stage": rnd.stage.value,
                "proposals": [_proposal_to_dict(p) for p in rnd.proposals],
                "failures": dict(rnd.failures),
            }
            for rnd in session.proposal_history
        ],
    }
    if include_brainstorm:
        data["brainstorm_log"] = [dict(entry) for entry in session.brainstorm_log]
    return data


def session_from_dict(data: dict) -> StorySession:
    sparkle = Sparkle(
        text=data["sparkle"]["text"],
        language=data["sparkle"]["language"],
        target_beat_count=data["sparkle"]["target_beat_count"],
        target_segment_words=tuple(data["sparkle"]["target_segment_words"]),
    )
    session = StorySession(
        session_id=data["session_id"],
        sparkle=sparkle,
        status=SessionStatus(data["status"]),
        beats=[_beat_from_dict(b, i) for i, b in enumerate(data["beats"])],
        segments=[_segment_from_dict(s) for s in data["segments"]],
        selection_log=list(data["selection_log"]),
        brainstorm_log=[dict(entry) for entry in data.get("brainstorm_log", [])],
        pending_persona=data.get("pending_persona"),
    )
    for rnd in data["proposal_history"]:
        session.proposal_history.append(
            ProposalRound(
                beat_index=rnd["beat_index"],
                stage=Stage(rnd["stage"]),
                proposals=[_proposal_from_dict(p, rnd["beat_index"]) for p in rnd["proposals"]],
                failures=dict(rnd["failures"]),
            )
        )
    return session


def index_to_dict(index: SegmentIndex) -> dict:
    return {
        "entries": [
            {
                "segment_id": entry.segment_id,
                "text": entry.text,
                "superseded": entry.superseded,
                "values": list(entry.vector.values),
            }
            for entry in index.entries
        ]
    }


def index_from_dict(data: dict) -> SegmentIndex:
    index = SegmentIndex()
    for entry in data.get("entries", []):
        index.entries.append(
            IndexEntry(
                segment_id=entry["segment_id"],
                vector=EmbeddingVector.from_values(entry["values"]),
                text=entry["text"],
                superseded=entry.get("superseded", 0),
            )
        )
    return index


def state_to_json(state: StoryState) -> str:
    payload = {
        "format_version": FORMAT_VERSION,
        "session": session_to_dict(state.session),
        "index": index_to_dict(state.index),
    }
    return json.dumps(payload, ensure_ascii=False, indent=2) + "\n"


def state_from_json(text: str, session_id: str = "?") -> StoryState:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptPortfolio(session_id, exc.pos, exc.msg) from exc
    try:
        session = session_from_dict(payload["session"])
        index = index_from_dict(payload["index"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptPortfolio(session_id, 0, f"bad structure: {exc}") from exc
    return StoryState(session=session, index=index)


# ---------------------------------------------------------------------------
# Portfolio store
# ---------------------------------------------------------------------------


class PortfolioStore:
    """Directory of per-session JSON files; desk-scale, diffable, atomic."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.json"

    def save(self, state: StoryState) -> None:
        target = self.path_for(state.session.session_id)
        tmp = target.with_name(f".{target.name}.tmp-{os.getpid()}")
        tmp.write_text(state_to_json(state), encoding="utf-8")
        os.replace(tmp, target)

    def load(self, session_id: str) -> StoryState:
        path = self.path_for(session_id)
        if not path.exists():
            raise UnknownSession(session_id)
        return state_from_json(path.read_text("utf-8"), session_id=session_id)

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.json") if not p.name.startswith("."))

    def load_all(self) -> Iterator[StoryState]:
        for session_id in self.list_ids():
            yield self.load(session_id)
