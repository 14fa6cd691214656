"""Selective-retention support: the per-session vector index, retrieval,
consistency verification, and soft-constraint ranking.

Consistency never removes an option: inconsistent proposals are labeled and
sorted last, but every persona's output stays on the menu.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import gateway
from .domain import (
    BeatProposal,
    ConsistencyVerdict,
    DomainError,
    EmbeddingVector,
    NarrativeSegment,
    StoryBeat,
    serialize_beat,
)
from .gateway import BackendProfile, GatewayError, GenerationParams, PromptBundle
from .personas import load_template

DEFAULT_RETRIEVAL_K = 3  # contexts per verification; keeps the prompt small


class ZeroNorm(DomainError):
    pass


class DuplicateSegment(DomainError):
    def __init__(self, segment_id: str):
        self.segment_id = segment_id
        super().__init__(f"segment {segment_id!r} is already indexed")


@dataclass
class IndexEntry:
    segment_id: str
    vector: EmbeddingVector
    text: str
    superseded: int = 0  # times a manual edit replaced this entry's content


@dataclass
class SegmentIndex:
    """Append-only per-session vector store over completed segments.

    The one sanctioned mutation is superseding an entry when the human
    manually rewrites a segment: consistency checks must see the canonical
    text, and the supersede count records that the append-only rule was
    deliberately bent.
    """

    entries: list[IndexEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.segment_id for e in self.entries]

    def get(self, segment_id: str) -> IndexEntry | None:
        for entry in self.entries:
            if entry.segment_id == segment_id:
                return entry
        return None

    def add(self, segment_id: str, vector: EmbeddingVector, text: str) -> None:
        if self.get(segment_id) is not None:
            raise DuplicateSegment(segment_id)
        self.entries.append(IndexEntry(segment_id=segment_id, vector=vector, text=text))

    def supersede(self, segment_id: str, vector: EmbeddingVector, text: str) -> None:
        entry = self.get(segment_id)
        if entry is None:
            raise DomainError(f"segment {segment_id!r} is not indexed")
        entry.vector = vector
        entry.text = text
        entry.superseded += 1


def segment_key(beat_index: int) -> str:
    return f"seg-{beat_index}"


def index_segment(index: SegmentIndex, segment: NarrativeSegment, backend) -> SegmentIndex:
    """Embed a completed segment's full prose and append it to the index."""
    if not segment.prose.strip():
        raise DomainError("cannot index a segment with empty prose")
    vector = backend.embed(segment.prose)
    index.add(segment_key(segment.beat_index), vector, segment.prose)
    return index


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """dot(a, b) / (norm(a) * norm(b)), using the cached norms."""
    if a.norm <= 0.0 or b.norm <= 0.0:
        raise ZeroNorm("cosine similarity requires nonzero norms")
    dot = math.fsum(x * y for x, y in zip(a.values, b.values))
    return dot / (a.norm * b.norm)


def retrieve_context(
    index: SegmentIndex,
    beat: StoryBeat,
    backend,
    k: int = DEFAULT_RETRIEVAL_K,
) -> list[tuple[str, float]]:
    """Top-k indexed segments by cosine similarity to the serialized beat.

    Ties break toward older entries (insertion order); an empty index yields
    an empty list.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.entries:
        return []
    query = backend.embed(serialize_beat(beat))
    scored = [(entry.segment_id, cosine_similarity(query, entry.vector)) for entry in index.entries]
    scored.sort(key=lambda pair: -pair[1])  # stable: insertion order on ties
    return scored[:k]


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

_VERDICT_RE = re.compile(r"\s*\[?\s*(yes|no)\b\s*\]?\s*[.,:;!\-–]*\s*(.*)", re.IGNORECASE | re.DOTALL)


def parse_verifier_reply(reply: str) -> ConsistencyVerdict:
    """Parse a [Yes]/[No] judgment; anything unparseable is treated as
    consistent-with-warning so uncertainty never hides an option."""
    match = _VERDICT_RE.match(reply)
    if not match:
        return ConsistencyVerdict(has_error=False, parse_warning=True)
    has_error = match.group(1).lower() == "yes"
    description = match.group(2).strip() if has_error else ""
    return ConsistencyVerdict(has_error=has_error, error_description=description)


def check_consistency(
    index: SegmentIndex,
    beat: StoryBeat,
    profile: BackendProfile,
    backend,
    k: int = DEFAULT_RETRIEVAL_K,
) -> ConsistencyVerdict | None:
    """Retrieval-grounded logical-error judgment for one beat.

    An empty index is vacuously consistent (no model call). Verification
    backend failures return None (verdict stays pending); they are surfaced,
    never fatal.
    """
    if not index.entries:
        return ConsistencyVerdict(has_error=False)
    retrieved = retrieve_context(index, beat, backend, k=k)
    excerpts = []
    for segment_id, _score in retrieved:
        entry = index.get(segment_id)
        if entry is not None:
            excerpts.append(f"[{segment_id}] {entry.text}")
    bundle = PromptBundle(
        meta_layer=load_template("verify_meta"),
        context_layer=load_template("verify_context").format_map(
            {"contexts": "\n\n".join(excerpts)}
        ),
        constraint_layer=load_template("verify_constraint").format_map(
            {"beat_json": serialize_beat(beat)}
        ),
        params=GenerationParams(
            temperature=gateway.TEMP_VERIFICATION,
            max_tokens=256,
            model_id=profile.verification_model,
        ),
        tags=(("stage", "verify"), ("beat_index", str(beat.index))),
    )
    try:
        reply = gateway.complete(bundle, profile, backend=backend)
    except GatewayError:
        return None
    verdict = parse_verifier_reply(reply)
    ids = tuple(segment_id for segment_id, _ in retrieved)
    scores = tuple(score for _, score in retrieved)
    return ConsistencyVerdict(
        has_error=verdict.has_error,
        error_description=verdict.error_description,
        retrieved_segment_ids=ids,
        similarity_scores=scores,
        parse_warning=verdict.parse_warning,
    )


def verify_proposals(
    index: SegmentIndex,
    proposals: list[BeatProposal],
    profile: BackendProfile,
    backend,
    k: int = DEFAULT_RETRIEVAL_K,
) -> None:
    """Run consistency checks for a whole round concurrently (read-shared index)."""
    if not proposals:
        return
    pool = ThreadPoolExecutor(max_workers=len(proposals))
    try:
        futures = [
            pool.submit(check_consistency, index, proposal.beat, profile, backend, k)
            for proposal in proposals
        ]
        for proposal, future in zip(proposals, futures):
            proposal.verdict = future.result()
    finally:
        pool.shutdown(wait=False, cancel_futures=True)


def rank_proposals(proposals: list[BeatProposal]) -> list[BeatProposal]:
    """Stable three-way partition: consistent, then pending, then inconsistent.

    Roster order is preserved within each band, nothing is discarded, and
    1-based ranks are assigned across the full ordering.
    """

    def band(proposal: BeatProposal) -> int:
        if proposal.verdict is None:
            return 1
        return 2 if proposal.verdict.has_error else 0

    ordered = sorted(proposals, key=band)  # stable sort keeps roster order per band
    for position, proposal in enumerate(ordered, start=1):
        proposal.rank = position
    return ordered
