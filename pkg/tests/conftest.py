"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import pytest

from storyloom.domain import (
    Setting,
    Sparkle,
    StoryBeat,
    StorySession,
)
from storyloom.gateway import BackendProfile, MockBackend
from storyloom.roster import load_roster
from storyloom.store import PortfolioStore
from storyloom.workflow import StoryEngine


def make_beat(
    index: int = 0,
    location: str = "the salt-worn lighthouse",
    time: str = "just past midnight",
    characters: tuple[str, ...] = ("Mara", "Elio"),
    key_events: tuple[str, ...] = (
        "Mara uncovers the sealed letter",
        "Elio questions the keeper's logbook",
        "Mara conceals an unmarked key",
    ),
) -> StoryBeat:
    return StoryBeat(
        index=index,
        setting=Setting(location=location, time=time),
        characters=characters,
        key_events=key_events,
    )


def make_sparkle(text: str = "A lighthouse keeper finds a door in the sea.", beats: int = 6,
                 words: tuple[int, int] = (800, 1000)) -> Sparkle:
    return Sparkle(text=text, target_beat_count=beats, target_segment_words=words)


class CountingBackend:
    """Wraps a backend and counts complete/embed calls."""

    def __init__(self, inner):
        self.inner = inner
        self.completions = 0
        self.embeddings = 0

    def complete(self, bundle):
        self.completions += 1
        return self.inner.complete(bundle)

    def embed(self, text):
        self.embeddings += 1
        return self.inner.embed(text)

    def healthy(self):
        return True


@pytest.fixture
def roster():
    return load_roster()


@pytest.fixture
def mock_profile():
    return BackendProfile(kind="mock", seed=7)


def make_engine(
    seed: int = 7,
    store: PortfolioStore | None = None,
    backend=None,
    script: dict | None = None,
    faults: dict | None = None,
) -> StoryEngine:
    profile = BackendProfile(kind="mock", seed=seed)
    if backend is None:
        backend = MockBackend(seed=seed, script=script, faults=faults)
    return StoryEngine(profile=profile, backend=backend, store=store)


@pytest.fixture
def engine():
    return make_engine()


def fresh_session(beats: int = 6) -> StorySession:
    return StorySession(session_id="test-session", sparkle=make_sparkle(beats=beats))
