"""Multi-persona co-creative storytelling engine.

Ten genre personas propose story beats in parallel; a retrieval-backed plot
controller ranks them by consistency; the human selects, edits, and expands
beats into prose; analytics quantify the resulting narratives.
"""

from .domain import (
    BeatProposal,
    ConsistencyVerdict,
    NarrativeSegment,
    Persona,
    Sparkle,
    StoryBeat,
    StorySession,
)
from .gateway import BackendProfile, MockBackend
from .roster import load_roster
from .store import PortfolioStore, StoryState
from .workflow import StoryEngine, run_replay

__version__ = "0.1.0"

__all__ = [
    "BackendProfile",
    "BeatProposal",
    "ConsistencyVerdict",
    "MockBackend",
    "NarrativeSegment",
    "Persona",
    "PortfolioStore",
    "Sparkle",
    "StoryBeat",
    "StoryEngine",
    "StorySession",
    "StoryState",
    "load_roster",
    "run_replay",
    "__version__",
]
