"""Backend abstraction for text generation and embeddings.

Two backends share one contract: a remote JSON-over-HTTP client (chat
completions + embeddings, OpenAI-compatible shapes) and a deterministic
offline mock whose output is a pure function of (seed, request). Token
accounting and narrative-history compression live here too, since both are
budget guards for backend calls.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import re
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Sequence

from .domain import (
    EMBEDDING_DIM,
    EmbeddingVector,
    NarrativeSegment,
    StoryBeat,
    serialize_beat,
    tokenize_words,
)

API_KEY_ENV = "STORYLOOM_API_KEY"
HISTORY_TOKEN_BUDGET = 8000  # narrative history carried into generation
HISTORY_JOINER = "\n\n"

# Temperatures by call intent: variation wants diversity, verification wants
# a stable judgment.
TEMP_VARIATION = 0.9
TEMP_EXPANSION = 0.7
TEMP_VERIFICATION = 0.0

# Markers the mock backend keys on to honor the declared output format.
# The prompt templates embed these exact phrases.
BEAT_FORMAT_MARKER = 'one JSON object with the fields "setting", "characters", "key_events", and "rationale"'
VERIFY_MARKER = "Answer briefly in [Yes] or [No]"
BRAINSTORM_MARKER = "conversational brainstorming partner"
REFINE_MARKER = "Rewrite the segment"
EVENT_RANGE_RE = re.compile(r"between (\d+) and (\d+) key events")
WORD_RANGE_RE = re.compile(r"between (\d+) and (\d+) words")
DIALOGUE_TARGET_RE = re.compile(r"dialogue share target: ([0-9.]+)")
INSTRUCTION_RE = re.compile(r"Revision instruction: (.*)")


class GatewayError(Exception):
    """Base class for backend failures."""


class Timeout(GatewayError):
    pass


class RateLimited(GatewayError):
    def __init__(self, retry_after: float = 0.0):
        self.retry_after = retry_after
        super().__init__(f"rate limited (retry after {retry_after:.1f}s)")


class BackendError(GatewayError):
    def __init__(self, status: int, detail: str = ""):
        self.status = status
        super().__init__(f"backend error {status}: {detail}")


class ContextLimitExceeded(GatewayError):
    def __init__(self, tokens: int, limit: int):
        self.tokens = tokens
        self.limit = limit
        super().__init__(f"prompt of {tokens} tokens exceeds context limit {limit}")


def count_tokens(text: str) -> int:
    """Offline token heuristic: ceil(chars / 4). Monotone in text length and
    conservative enough to serve as the budget guard everywhere."""
    return (len(text) + 3) // 4


@dataclass(frozen=True)
class GenerationParams:
    temperature: float
    max_tokens: int
    model_id: str


@dataclass(frozen=True)
class PromptBundle:
    """Three-layer prompt: collaborative framing, compressed context, and
    structural constraints, plus the sampling parameters for the call."""

    meta_layer: str
    context_layer: str
    constraint_layer: str
    params: GenerationParams
    tags: tuple[tuple[str, str], ...] = ()  # non-semantic routing metadata

    def __post_init__(self) -> None:
        if not self.meta_layer.strip() or not self.constraint_layer.strip():
            raise ValueError("meta and constraint layers must be non-empty")

    def tag(self, key: str, default: str = "") -> str:
        for k, v in self.tags:
            if k == key:
                return v
        return default

    @property
    def token_count(self) -> int:
        return count_tokens(self.meta_layer + self.context_layer + self.constraint_layer)

    def fingerprint(self) -> bytes:
        h = hashlib.sha256()
        for part in (
            self.meta_layer,
            self.context_layer,
            self.constraint_layer,
            repr(self.params),
            repr(self.tags),
        ):
            h.update(part.encode("utf-8"))
            h.update(b"\x1f")
        return h.digest()


@dataclass(frozen=True)
class BackendProfile:
    """Configuration for one backend: which models, limits and retries."""

    kind: str = "mock"  # "mock" or "remote"
    endpoint: str = ""
    generation_model: str = "gpt-4o"
    verification_model: str = "gpt-3.5-turbo"
    embedding_model: str = "text-embedding-ada-002"
    context_limit: int = 16000  # tokens, guard applied before any call
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_base_s: float = 0.5
    max_in_flight: int = 8
    seed: int = 0  # mock only
    mock_script: tuple[tuple[str, tuple[str, ...]], ...] = ()  # mode -> scripted replies

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"unknown backend kind: {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend requires an endpoint")


# ---------------------------------------------------------------------------
# Narrative history compression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompressedHistory:
    text: str
    flags: tuple[str, ...] = ()


def compress_history(
    segments: Sequence[NarrativeSegment],
    beats: Sequence[StoryBeat],
    budget: int = HISTORY_TOKEN_BUDGET,
) -> CompressedHistory:
    """Fit story history into a token budget.

    The most recent segments are kept verbatim, newest backward; older
    segments that no longer fit are replaced by their beat summaries
    (serialized beat JSON). Chronological order is preserved in the output.
    A single over-budget newest segment is tail-truncated and flagged.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    if not segments:
        return CompressedHistory("")

    beats_by_index = {b.index: b for b in beats}
    joiner_cost = count_tokens(HISTORY_JOINER)
    flags: list[str] = []

    def piece_cost(text: str) -> int:
        # Charging a joiner per piece over-counts by one joiner; the slack
        # keeps the guard conservative.
        return count_tokens(text) + joiner_cost

    verbatim: dict[int, str] = {}
    remaining = budget
    cutoff = len(segments)
    for i in range(len(segments) - 1, -1, -1):
        cost = piece_cost(segments[i].prose)
        if cost > remaining:
            break
        verbatim[i] = segments[i].prose
        remaining -= cost
        cutoff = i

    if not verbatim:
        # Even the newest segment alone is over budget: keep its head.
        newest = len(segments) - 1
        keep_chars = max((budget - joiner_cost) * 4, 0)
        text = segments[newest].prose[:keep_chars]
        flags.append("newest-segment-truncated")
        return CompressedHistory(text, tuple(flags))

    summaries: dict[int, str] = {}
    dropped = 0
    for i in range(cutoff - 1, -1, -1):
        beat = beats_by_index.get(segments[i].beat_index)
        summary = serialize_beat(beat) if beat is not None else ""
        cost = piece_cost(summary)
        if summary and cost <= remaining:
            summaries[i] = summary
            remaining -= cost
        else:
            dropped += 1
    if dropped:
        flags.append(f"history-dropped:{dropped}")

    ordered = [summaries[i] for i in sorted(summaries)] + [
        verbatim[i] for i in sorted(verbatim)
    ]
    return CompressedHistory(HISTORY_JOINER.join(ordered), tuple(flags))


# ---------------------------------------------------------------------------
# FIFO concurrency gate (shared remote rate limiting)
# ---------------------------------------------------------------------------


class ConcurrencyGate:
    """Bounds in-flight calls to a fixed limit with FIFO fairness."""

    def __init__(self, limit: int):
        if limit < 1:
            raise ValueError("limit must be >= 1")
        self._limit = limit
        self._lock = threading.Lock()
        self._active = 0
        self._waiters: deque[threading.Event] = deque()

    def acquire(self) -> None:
        with self._lock:
            if self._active < self._limit and not self._waiters:
                self._active += 1
                return
            event = threading.Event()
            self._waiters.append(event)
        event.wait()

    def release(self) -> None:
        with self._lock:
            if self._waiters:
                self._waiters.popleft().set()  # hand the slot to the next waiter
            else:
                self._active -= 1

    @property
    def active(self) -> int:
        return self._active

    def __enter__(self) -> "ConcurrencyGate":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()


# ---------------------------------------------------------------------------
# Deterministic mock backend
# ---------------------------------------------------------------------------

_ROOTS = (
    "amber", "anchor", "ash", "bell", "bird", "blade", "bloom", "boat", "bone",
    "breeze", "bridge", "brook", "candle", "chart", "cliff", "cloak", "cloud",
    "coal", "coast", "coin", "cord", "crane", "crest", "crow", "dawn", "door",
    "drift", "dune", "dusk", "echo", "ember", "fern", "field", "flame", "flock",
    "fog", "ford", "forge", "frost", "gate", "glass", "gleam", "glen", "grain",
    "grove", "gull", "harbor", "hatch", "hearth", "hill", "hollow", "hour",
    "hush", "ink", "iron", "isle", "keel", "key", "knot", "lamp", "lane",
    "lantern", "leaf", "ledge", "light", "lock", "loft", "loom", "map", "marsh",
    "mast", "meadow", "mist", "moon", "moor", "moss", "night", "north", "oak",
    "oar", "orchard", "paper", "path", "pearl", "pier", "pine", "plume", "pond",
    "quay", "quill", "rain", "reef", "ridge", "ring", "river", "road", "rook",
    "root", "rope", "rose", "sail", "salt", "sand", "sea", "shade", "shell",
    "shore", "sky", "slate", "smoke", "snow", "song", "spark", "spire", "spring",
    "star", "stone", "storm", "stream", "tide", "timber", "torch", "tower",
    "trail", "vale", "vane", "vault", "vine", "wave", "well", "wharf", "willow",
    "wind", "wing", "wood", "wren",
)
_SUFFIXES = ("s", "ed", "ing", "er", "ly")
LEXICON_SIZE = 2000


def _build_lexicon() -> tuple[str, ...]:
    words: list[str] = []
    seen: set[str] = set()

    def add(word: str) -> None:
        if word not in seen:
            seen.add(word)
            words.append(word)

    for root in _ROOTS:
        add(root)
    for suffix in _SUFFIXES:
        for root in _ROOTS:
            stem = root[:-1] if root.endswith("e") and suffix[0] in "ei" else root
            add(stem + suffix)
    for a in _ROOTS:
        for b in _ROOTS:
            if len(words) >= LEXICON_SIZE:
                return tuple(words[:LEXICON_SIZE])
            if a != b:
                add(a + b)
    return tuple(words[:LEXICON_SIZE])


LEXICON = _build_lexicon()

_NAMES = (
    "Mara", "Elio", "Sana", "Taro", "Nessa", "Orin", "Lua", "Petra", "Idris",
    "Vera", "Colm", "Ayla", "Rune", "Sable", "Theo", "Wren",
)
_PLACES = (
    "the salt-worn lighthouse", "the midnight harbor", "the paper archive",
    "the drowned orchard", "the signal tower", "the low tide flats",
    "the old observatory", "the night market", "the ferry landing",
    "the glass conservatory", "the northern causeway", "the shuttered theater",
    "the river lock", "the cliff stair", "the telegraph office", "the moor road",
)
_TIMES = (
    "just past midnight", "at first light", "in the late afternoon",
    "under a waning moon", "during the storm watch", "on market morning",
    "at the turn of the tide", "in the blue hour",
)
_EVENT_VERBS = (
    "uncovers", "follows", "confronts", "loses", "deciphers", "barters for",
    "repairs", "conceals", "witnesses", "abandons", "recovers", "questions",
)
_EVENT_OBJECTS = (
    "the sealed letter", "a stranger's ledger", "the broken signal lamp",
    "an unmarked key", "the tide charts", "a debt long denied",
    "the keeper's logbook", "a rumor of wreckage", "the locked cellar",
    "an old promise", "the missing skiff", "a coded timetable",
)
_RATIONALE_ANGLES = (
    "raises the stakes while keeping the throughline intact",
    "turns an earlier detail into the engine of this beat",
    "trades exposition for a concrete, playable complication",
    "lets the characters act on what they now know",
    "opens a door the next beat can walk through",
    "tightens cause and effect around the central tension",
)


def _derive_rng(seed: int, fingerprint: bytes) -> random.Random:
    digest = hashlib.sha256(seed.to_bytes(8, "big", signed=True) + fingerprint).digest()
    return random.Random(int.from_bytes(digest, "big"))


def synthetic_prose(rng: random.Random, word_target: int, dialogue_ratio: float) -> str:
    """Emit exactly word_target canonical words, with quoted dialogue covering
    round(word_target * dialogue_ratio) of them."""
    if word_target <= 0:
        return ""
    dialogue_budget = min(word_target, round(word_target * dialogue_ratio))
    narration_budget = word_target - dialogue_budget

    def draw(n: int) -> list[str]:
        return [LEXICON[rng.randrange(LEXICON_SIZE)] for _ in range(n)]

    sentences: list[str] = []
    pending_dialogue = dialogue_budget
    pending_narration = narration_budget
    while pending_dialogue or pending_narration:
        want_dialogue = pending_dialogue and (
            not pending_narration or rng.random() < dialogue_budget / max(word_target, 1)
        )
        if want_dialogue:
            n = min(pending_dialogue, rng.randint(5, 10))
            words = draw(n)
            words[0] = words[0].capitalize()
            sentences.append('"' + " ".join(words) + '."')
            pending_dialogue -= n
        else:
            n = min(pending_narration, rng.randint(8, 15))
            words = draw(n)
            words[0] = words[0].capitalize()
            sentences.append(" ".join(words) + ".")
            pending_narration -= n

    paragraphs: list[str] = []
    start = 0
    while start < len(sentences):
        size = rng.randint(4, 6)
        paragraphs.append(" ".join(sentences[start : start + size]))
        start += size
    return "\n\n".join(paragraphs)


def _synthetic_beat_json(rng: random.Random, min_events: int, max_events: int, persona_id: str) -> str:
    n_events = rng.randint(min_events, max_events)
    characters = rng.sample(_NAMES, rng.randint(2, 3))
    events = []
    for _ in range(n_events):
        actor = characters[rng.randrange(len(characters))]
        events.append(
            f"{actor} {_EVENT_VERBS[rng.randrange(len(_EVENT_VERBS))]} "
            f"{_EVENT_OBJECTS[rng.randrange(len(_EVENT_OBJECTS))]}"
        )
    payload = {
        "setting": {
            "location": _PLACES[rng.randrange(len(_PLACES))],
            "time": _TIMES[rng.randrange(len(_TIMES))],
        },
        "characters": characters,
        "key_events": events,
        "rationale": (
            f"From the {persona_id or 'ensemble'} angle, this beat "
            f"{_RATIONALE_ANGLES[rng.randrange(len(_RATIONALE_ANGLES))]}."
        ),
    }
    return json.dumps(payload, ensure_ascii=False)


def mock_embedding(text: str) -> EmbeddingVector:
    """Hashed bag-of-words projection to the embedding dimension, L2-normalized.
    Depends only on the word multiset, so word order never changes the vector."""
    words = tokenize_words(text.lower())
    counts = Counter(words) if words else Counter({"\x00" + text: 1})
    acc = [0.0] * EMBEDDING_DIM
    for word, count in counts.items():
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        for slot in range(3):
            idx = int.from_bytes(digest[4 * slot : 4 * slot + 3], "big") % EMBEDDING_DIM
            sign = 1.0 if digest[12 + slot] % 2 == 0 else -1.0
            acc[idx] += sign * count
    norm = math.sqrt(math.fsum(v * v for v in acc))
    if norm == 0.0:
        acc[0] = 1.0
        norm = 1.0
    return EmbeddingVector.from_values(v / norm for v in acc)


@dataclass
class FaultRule:
    """Injected failure for a persona's calls (testing and drills)."""

    kind: str  # "timeout" | "error" | "rate_limit" | "delay"
    delay_ms: int = 0
    times: int | None = None  # None = every call


class MockBackend:
    """Offline backend: a pure function of (seed, request).

    The reply format honors whatever the constraint layer declares: beat JSON
    when a beat is requested, an exact-word-count synthetic segment when a
    word range is requested, a [Yes]/[No] judgment for verification prompts.
    Scripted replies (per mode) and injected faults make failure paths and
    verifier behavior drivable from tests and config.
    """

    def __init__(
        self,
        seed: int = 0,
        script: dict[str, Sequence[str]] | None = None,
        faults: dict[str, FaultRule] | None = None,
    ):
        self.seed = seed
        self._script = {mode: deque(replies) for mode, replies in (script or {}).items()}
        self._faults = dict(faults or {})
        self._lock = threading.Lock()

    # -- fault / script plumbing -------------------------------------------

    def _maybe_fault(self, bundle: PromptBundle) -> None:
        persona = bundle.tag("persona_id")
        rule = self._faults.get(persona)
        if rule is None:
            return
        with self._lock:
            if rule.times is not None:
                if rule.times <= 0:
                    return
                rule.times -= 1
        if rule.kind == "delay":
            time.sleep(rule.delay_ms / 1000.0)
            return
        if rule.kind == "timeout":
            raise Timeout(f"injected timeout for {persona}")
        if rule.kind == "rate_limit":
            raise RateLimited(retry_after=0.0)
        raise BackendError(500, f"injected failure for {persona}")

    def _scripted(self, mode: str) -> str | None:
        with self._lock:
            queue = self._script.get(mode)
            if queue:
                return queue.popleft()
        return None

    # -- contract ------------------------------------------------------------

    def complete(self, bundle: PromptBundle) -> str:
        constraint = bundle.constraint_layer
        rng = _derive_rng(self.seed, bundle.fingerprint())
        self._maybe_fault(bundle)

        if VERIFY_MARKER in constraint or VERIFY_MARKER in bundle.context_layer:
            return self._scripted("verify") or "[No]"

        if REFINE_MARKER in constraint:
            scripted = self._scripted("refine")
            if scripted is not None:
                return scripted
            match = WORD_RANGE_RE.search(constraint)
            lower, upper = (int(match.group(1)), int(match.group(2))) if match else (800, 1000)
            ratio_match = DIALOGUE_TARGET_RE.search(constraint)
            ratio = float(ratio_match.group(1)) if ratio_match else 0.2
            instruction_match = INSTRUCTION_RE.search(bundle.context_layer)
            instruction = instruction_match.group(1) if instruction_match else ""
            if "dialogue" in instruction.lower():
                ratio = min(1.0, ratio + 0.10)  # scripted refine delta
            return synthetic_prose(rng, (lower + upper) // 2, ratio)

        if BRAINSTORM_MARKER in bundle.meta_layer:
            scripted = self._scripted("brainstorm")
            if scripted is not None:
                return scripted
            seedling = LEXICON[rng.randrange(LEXICON_SIZE)]
            return (
                f"One direction worth testing: let the {seedling} motif carry the "
                f"next complication, then pay it off against what the story has "
                f"already promised."
            )

        event_match = EVENT_RANGE_RE.search(constraint)
        if event_match and BEAT_FORMAT_MARKER in constraint:
            scripted = self._scripted("beat")
            if scripted is not None:
                return scripted
            return _synthetic_beat_json(
                rng,
                int(event_match.group(1)),
                int(event_match.group(2)),
                bundle.tag("persona_id"),
            )

        word_match = WORD_RANGE_RE.search(constraint)
        if word_match:
            scripted = self._scripted("prose")
            if scripted is not None:
                return scripted
            lower, upper = int(word_match.group(1)), int(word_match.group(2))
            ratio_match = DIALOGUE_TARGET_RE.search(constraint)
            ratio = float(ratio_match.group(1)) if ratio_match else 0.2
            return synthetic_prose(rng, (lower + upper) // 2, ratio)

        return self._scripted("generic") or "Understood."

    def embed(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("cannot embed empty text")
        return mock_embedding(text)

    def healthy(self) -> bool:
        return True


# ---------------------------------------------------------------------------
# Remote backend
# ---------------------------------------------------------------------------


class RemoteBackend:
    """JSON-over-HTTP chat-completion/embedding client with bounded retries.

    Credentials come from the environment; concurrency is bounded by a shared
    FIFO gate so parallel fan-out cannot exceed the configured in-flight cap.
    """

    def __init__(self, profile: BackendProfile, client=None, gate: ConcurrencyGate | None = None):
        import httpx  # deferred so offline use never needs it at import time

        self.profile = profile
        api_key = os.environ.get(API_KEY_ENV, "")
        if client is None and not api_key:
            raise GatewayError(f"remote backend requires {API_KEY_ENV} in the environment")
        self._client = client or httpx.Client(
            base_url=profile.endpoint,
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=profile.timeout_s,
        )
        self._gate = gate or ConcurrencyGate(profile.max_in_flight)

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        retries = 0
        while True:
            try:
                with self._gate:
                    response = self._client.post(path, json=payload)
            except httpx.TimeoutException as exc:
                raise Timeout(str(exc)) from exc
            except httpx.HTTPError as exc:
                raise BackendError(0, str(exc)) from exc
            if response.status_code == 429:
                retry_after = float(response.headers.get("Retry-After", "0") or 0)
                if retries >= self.profile.max_retries:
                    raise RateLimited(retry_after)
                delay = max(retry_after, self.profile.backoff_base_s * (2**retries))
                time.sleep(delay)
                retries += 1
                continue
            if response.status_code >= 400:
                raise BackendError(response.status_code, response.text[:200])
            return response.json()

    def complete(self, bundle: PromptBundle) -> str:
        payload = {
            "model": bundle.params.model_id,
            "temperature": bundle.params.temperature,
            "max_tokens": bundle.params.max_tokens,
            "messages": [
                {"role": "system", "content": bundle.meta_layer},
                {
                    "role": "user",
                    "content": bundle.context_layer + "\n\n" + bundle.constraint_layer,
                },
            ],
        }
        data = self._post("/chat/completions", payload)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(0, f"malformed completion response: {exc}") from exc

    def embed(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("cannot embed empty text")
        data = self._post(
            "/embeddings", {"model": self.profile.embedding_model, "input": text}
        )
        try:
            values = data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(0, f"malformed embedding response: {exc}") from exc
        return EmbeddingVector.from_values(values)

    def healthy(self) -> bool:
        try:
            response = self._client.get("/models")
            return response.status_code < 500
        except Exception:
            return False


def backend_for_profile(profile: BackendProfile):
    if profile.kind == "mock":
        script = {mode: list(replies) for mode, replies in profile.mock_script}
        return MockBackend(seed=profile.seed, script=script)
    return RemoteBackend(profile)


def complete(bundle: PromptBundle, profile: BackendProfile, backend=None) -> str:
    """Run one completion through the profile's backend, guarding the
    context limit before any network activity."""
    tokens = bundle.token_count
    if tokens > profile.context_limit:
        raise ContextLimitExceeded(tokens, profile.context_limit)
    backend = backend or backend_for_profile(profile)
    return backend.complete(bundle)


def embed(text: str, profile: BackendProfile, backend=None) -> EmbeddingVector:
    backend = backend or backend_for_profile(profile)
    return backend.embed(text)
