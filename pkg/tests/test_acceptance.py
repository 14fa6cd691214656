"""Acceptance suite: one test per release criterion, each at its stated
tolerance, printing one PASS line on success (run with -s or check captured
stdout). Failures surface as ordinary pytest assertions naming the criterion.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import random
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import make_beat, make_engine, make_sparkle
from storyloom import analytics
from storyloom.domain import (
    BeatProposal,
    ConsistencyVerdict,
    EmbeddingVector,
    EventCountOutOfRange,
    NarrativeSegment,
    SessionEvent,
    Stage,
    advance_status,
    count_words,
    parse_beat,
    serialize_beat,
)
from storyloom.gateway import (
    FaultRule,
    MockBackend,
    compress_history,
    count_tokens,
)
from storyloom.personas import (
    AllPersonasFailed,
    expected_event_range,
    generate_proposals,
)
from storyloom.plotctl import cosine_similarity, rank_proposals
from storyloom.roster import load_roster
from storyloom.service import create_app
from storyloom.store import CorruptPortfolio, PortfolioStore, state_to_json
from storyloom.workflow import deterministic_session_id, run_replay

ROSTER = load_roster()
PICKS_6 = ["mystery", "romance", "horror", "comedy", "dystopian", "magical"]
SPARKLE_TEXT = "A lighthouse keeper finds a door in the sea."


def passline(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


def _script_file(tmp_path: Path, **extra) -> Path:
    script = {
        "seed": 7,
        "sparkle": {"text": SPARKLE_TEXT, "target_beat_count": 6},
        "picks": PICKS_6,
    }
    script.update(extra)
    path = tmp_path / "replay.json"
    path.write_text(json.dumps(script), encoding="utf-8")
    return path


# -- 1. deterministic end-to-end through the CLI ------------------------------------


def test_criterion_deterministic_end_to_end(tmp_path):
    script = _script_file(tmp_path)

    def run(fmt: str, tag: str) -> tuple[bytes, float]:
        started = time.perf_counter()
        result = subprocess.run(
            [sys.executable, "-m", "storyloom.cli", "replay", str(script),
             "--mock", "--seed", "7", "--portfolio", str(tmp_path / tag),
             "--format", fmt],
            capture_output=True, check=True,
        )
        return result.stdout, time.perf_counter() - started

    txt1, wall1 = run("txt", "p1")
    txt2, wall2 = run("txt", "p2")
    json1, _ = run("json", "p3")
    json2, _ = run("json", "p4")
    assert txt1 == txt2, "replay txt exports differ between identical runs"
    assert json1 == json2, "replay json exports differ between identical runs"
    assert wall1 < 10.0 and wall2 < 10.0, "replay exceeded the 10 s budget"

    session = json.loads(json1)
    assert len(session["beats"]) == 6
    assert len(session["segments"]) == 6
    for segment in session["segments"]:
        assert 800 <= segment["word_count"] <= 1000
    total = count_words(txt1.decode("utf-8"))
    assert 4800 <= total <= 6000
    passline("deterministic end-to-end replay (6 beats, 6 segments, byte-identical)")


# -- 2. roster and fan-out -------------------------------------------------------------


def _open_session():
    from conftest import fresh_session

    session = fresh_session(beats=6)
    advance_status(session, SessionEvent.SPARKLE_SUBMITTED)
    return session


def test_criterion_roster_and_fanout(mock_profile):
    session = _open_session()
    healthy = generate_proposals(session, Stage.INITIAL_BEAT, ROSTER, mock_profile,
                                 MockBackend(seed=7))
    assert len(healthy.proposals) == 10 and not healthy.failures

    three_down = MockBackend(seed=7, faults={
        pid: FaultRule(kind="timeout") for pid in ("fantasy", "romance", "dystopian")
    })
    partial = generate_proposals(session, Stage.INITIAL_BEAT, ROSTER, mock_profile, three_down)
    assert len(partial.proposals) == 7
    assert sorted(partial.failures) == ["dystopian", "fantasy", "romance"]
    for message in partial.failures.values():
        assert message  # itemized, human-readable

    all_down = MockBackend(seed=7, faults={
        pid: FaultRule(kind="error") for pid in ROSTER.ids
    })
    with pytest.raises(AllPersonasFailed) as excinfo:
        generate_proposals(session, Stage.INITIAL_BEAT, ROSTER, mock_profile, all_down)
    assert len(excinfo.value.failures) == 10

    delayed = MockBackend(seed=7, faults={
        "fantasy": FaultRule(kind="delay", delay_ms=50),
        "mystery": FaultRule(kind="delay", delay_ms=100),
        "magical": FaultRule(kind="delay", delay_ms=150),
    })
    started = time.perf_counter()
    result = generate_proposals(session, Stage.INITIAL_BEAT, ROSTER, mock_profile, delayed)
    elapsed = time.perf_counter() - started
    assert len(result.proposals) == 10
    assert elapsed < 0.25, f"fan-out wall time {elapsed:.3f}s suggests sequential legs"
    passline("roster fan-out (10 healthy, 7+3 partial, quorum failure, parallel wall time)")


# -- 3. cosine similarity ---------------------------------------------------------------


def test_criterion_cosine_similarity():
    rng = random.Random(2024)

    def random_vector() -> EmbeddingVector:
        return EmbeddingVector.from_values(rng.random() + 0.05 for _ in range(1536))

    for _ in range(1000):
        a, b = random_vector(), random_vector()
        ours = cosine_similarity(a, b)
        va, vb = np.asarray(a.values), np.asarray(b.values)
        oracle = float(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb)))
        assert abs(ours - oracle) <= 1e-12 * abs(oracle)
        assert cosine_similarity(a, b) == cosine_similarity(b, a)  # exact symmetry
    for _ in range(50):
        v = random_vector()
        assert abs(cosine_similarity(v, v) - 1.0) <= 1e-9
    passline("cosine similarity (1e-12 vs oracle over 1000 pairs, identity, symmetry)")


# -- 4. ranking soft constraint ------------------------------------------------------------


def test_criterion_ranking_soft_constraint():
    def proposal(pid: str, consistent: bool) -> BeatProposal:
        verdict = ConsistencyVerdict(has_error=not consistent,
                                     error_description="" if consistent else "broken")
        return BeatProposal(persona_id=pid, beat=make_beat(), rationale="because",
                            verdict=verdict)

    checked = 0
    for pattern in itertools.product((True, False), repeat=4):
        proposals = [proposal(f"p{i}", ok) for i, ok in enumerate(pattern)]
        ranked = rank_proposals(list(proposals))
        oracle = [p for p in proposals if not p.verdict.has_error] + [
            p for p in proposals if p.verdict.has_error
        ]
        assert [p.persona_id for p in ranked] == [p.persona_id for p in oracle]
        assert len(ranked) == 4, "ranking discarded a proposal"
        checked += 1
    assert checked == 16
    passline("ranking equals stable-partition oracle on all 16 verdict patterns")


# -- 5. consistency labeling through API and CLI ----------------------------------------------


def test_criterion_consistency_labeling(tmp_path, capsys):
    description = "Character Mara died in segment 2."

    # API path: scripted verifier drives round 2 of a live session
    engine = make_engine(store=PortfolioStore(tmp_path / "api"),
                         script={"verify": [f"[Yes] {description}"] * 10})
    client = TestClient(create_app(engine=engine))
    client.post("/sessions", json={
        "sparkle": {"text": SPARKLE_TEXT, "target_beat_count": 2}, "session_id": "acc",
    })
    client.post("/sessions/acc/select", json={"persona_id": "mystery"})
    client.post("/sessions/acc/expand")
    proposals = client.post("/sessions/acc/proposals").json()["round"]["proposals"]
    assert len(proposals) == 10, "a flagged proposal was dropped"
    assert all(p["verdict"]["has_error"] for p in proposals)
    assert proposals[0]["verdict"]["error_description"] == description

    # CLI path: same scripted verifier via the config file
    portfolio = tmp_path / "cli"
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "backend": {"kind": "mock", "seed": 3,
                    "mock_script": {"verify": [f"[Yes] {description}"] * 10}},
        "portfolio_dir": str(portfolio),
    }))
    from storyloom.cli import main

    sparkle = tmp_path / "sparkle.txt"
    sparkle.write_text(SPARKLE_TEXT)
    assert main(["new", "--sparkle-file", str(sparkle), "--beats", "2",
                 "--session-id", "acc-cli", "--config", str(config)]) == 0
    assert main(["pick", "acc-cli", "mystery", "--config", str(config)]) == 0
    capsys.readouterr()
    assert main(["beats", "acc-cli", "--config", str(config)]) == 0
    out = capsys.readouterr().out
    assert description in out, "verifier description not surfaced verbatim via CLI"
    assert "inconsistent" in out

    # [No] and garbage replies
    clean_engine = make_engine(script={"verify": ["[No]"] * 10 + ["?? unparseable ??"] * 10})
    state = clean_engine.create_session(make_sparkle(beats=3), session_id="s")
    clean_engine.select(state, "mystery")
    clean_engine.expand(state)
    rnd = clean_engine.run_round(state)
    assert all(p.verdict is not None and not p.verdict.has_error for p in rnd.proposals)
    clean_engine.select(state, "romance")
    clean_engine.expand(state)
    garbage_round = clean_engine.run_round(state)
    assert len(garbage_round.proposals) == 10, "garbage reply dropped a proposal"
    assert all(
        p.verdict is not None and not p.verdict.has_error and p.verdict.parse_warning
        for p in garbage_round.proposals
    )
    passline("consistency labeling ([Yes] verbatim via API+CLI, [No] clean, garbage=warning)")


# -- 6. history budget ----------------------------------------------------------------------


def test_criterion_history_budget():
    rng = random.Random(31337)

    def seg(i: int, chars: int) -> NarrativeSegment:
        unit = f"s{i:02d}x "
        prose = unit * max(1, chars // len(unit))
        return NarrativeSegment(beat_index=i, persona_id="mystery", prose=prose,
                                word_count=count_words(prose))

    for _ in range(1000):
        n = rng.randrange(0, 9)
        segments = [seg(i, rng.randrange(5, 5000)) for i in range(n)]
        beats = [make_beat(index=i) for i in range(n)]
        budget = rng.choice((8000, rng.randrange(1, 2000)))
        out = compress_history(segments, beats, budget=budget)
        assert count_tokens(out.text) <= budget, "compressed history exceeded its budget"

    segments = [seg(i, 6000) for i in range(10)]  # 1500 heuristic tokens each
    beats = [make_beat(index=i, time=f"hour {i}") for i in range(10)]
    out = compress_history(segments, beats, budget=8000)
    for s in segments[5:]:
        assert s.prose in out.text, "a recent segment lost verbatim inclusion"
    for s in segments[:5]:
        assert s.prose not in out.text, "an old segment stayed verbatim over budget"
    for b in beats[:5]:
        assert serialize_beat(b) in out.text, "an old segment lost its beat summary"
    passline("history budget (1000 fuzz cases <= 8000 tokens; newest 5 verbatim)")


# -- 7. event-count bands -----------------------------------------------------------------------


def test_criterion_event_count_bands():
    assert [expected_event_range(i, 6) for i in range(3)] == [(3, 4)] * 3
    assert [expected_event_range(i, 6) for i in (4, 5)] == [(4, 5)] * 2

    def beat_json(n: int) -> str:
        return json.dumps({
            "setting": {"location": "the pier", "time": "dawn"},
            "characters": ["Mara"],
            "key_events": [f"event {k} happens" for k in range(n)],
        })

    for n in (2, 6):
        with pytest.raises(EventCountOutOfRange):
            parse_beat(beat_json(n))
    for n in (3, 4, 5):
        assert len(parse_beat(beat_json(n)).beat.key_events) == n
    passline("event-count bands (N=6 anchors; parse rejects 2 and 6 events)")


# -- 8. analytics oracles ---------------------------------------------------------------------------


def test_criterion_analytics_oracles():
    from test_analytics import FOG_FIXTURE

    assert analytics.compute_metrics(FOG_FIXTURE).gunning_fog == 12.0
    assert analytics.dialogue_ratio('"entirely spoken words live here."') == 1.0
    assert analytics.dialogue_ratio("nothing spoken here at all") == 0.0

    logs = [["mystery", "romance"]] * 5 + [["romance", "mystery"]] * 2
    matrix = analytics.build_transition_matrix(logs, ROSTER.ids)
    assert matrix.cell("mystery", "romance") == 5
    assert matrix.cell("romance", "mystery") == 2
    stats = analytics.asymmetry_stats(matrix)
    assert [p.diff for p in stats.pairs] == [3]

    hand = analytics.asymmetry_stats(analytics.build_transition_matrix(
        [["mystery", "romance"]] * 3 + [["horror", "comedy"]], ROSTER.ids))
    assert hand.mean == pytest.approx(2.0)
    assert hand.df == 1
    assert hand.t_stat == pytest.approx(2.0)

    corpus = [(f"p{i}", analytics.NarrativeMetrics(900 + i, 8.0, 0.2, 3)) for i in range(4)]
    for comparison in analytics.compare_corpora(corpus, list(corpus)).values():
        assert comparison.t_stat == 0.0
    passline("analytics oracles (fog 12.0, dialogue 0/1, transitions 5/2, t fixtures)")


# -- 9. persistence ------------------------------------------------------------------------------------


def test_criterion_persistence(tmp_path):
    portfolio = tmp_path / "pf"
    store = PortfolioStore(portfolio)
    engine = make_engine(store=store)
    sparkle = make_sparkle(beats=3)

    snapshots: list[bytes] = []

    def checkpoint():
        snapshots.append(store.path_for("acc").read_bytes())

    state = engine.create_session(sparkle, session_id="acc")
    checkpoint()
    for persona in ("mystery", "romance", "horror"):
        if state.session.current_round() is None:
            engine.run_round(state)
            checkpoint()
        engine.select(state, persona)
        checkpoint()
        engine.expand(state)
        checkpoint()

    # killing between any two steps: every snapshot reloads byte-identically
    for i, blob in enumerate(snapshots):
        fresh = tmp_path / f"restore-{i}"
        fresh_store = PortfolioStore(fresh)
        fresh_store.path_for("acc").write_bytes(blob)
        reloaded = fresh_store.load("acc")
        assert state_to_json(reloaded).encode() == blob, f"snapshot {i} not byte-identical"

    # a truncated portfolio file isolates to that session id
    engine.create_session(make_sparkle(beats=2), session_id="other")
    broken = store.path_for("other")
    broken.write_bytes(broken.read_bytes()[:200])
    with pytest.raises(CorruptPortfolio) as excinfo:
        store.load("other")
    assert excinfo.value.session_id == "other"
    assert store.load("acc").session.session_id == "acc"
    passline("persistence (kill/restart byte-identical at every step; corruption isolated)")


# -- 10. brainstorm non-mutation ---------------------------------------------------------------------------


def test_criterion_brainstorm_non_mutation():
    script = {"seed": 7, "sparkle": {"text": SPARKLE_TEXT, "target_beat_count": 6},
              "picks": PICKS_6}
    baseline_engine = make_engine()
    baseline = run_replay(baseline_engine, script)
    baseline_txt = hashlib.sha256(baseline_engine.export_text(baseline).encode()).hexdigest()
    baseline_json = hashlib.sha256(baseline_engine.export_json(baseline).encode()).hexdigest()

    rng = random.Random(404)
    engine = make_engine()
    state = engine.create_session(
        make_sparkle(beats=6),
        session_id=deterministic_session_id(7, SPARKLE_TEXT),
    )
    brainstorms = 0

    def maybe_brainstorm():
        nonlocal brainstorms
        while brainstorms < 100 and rng.random() < 0.75:
            engine.brainstorm(state, f"random interleaved thought #{brainstorms}")
            brainstorms += 1

    for ordinal, persona in enumerate(PICKS_6):
        if ordinal > 0:
            maybe_brainstorm()
            engine.run_round(state)
        maybe_brainstorm()
        engine.select(state, persona)
        maybe_brainstorm()
        engine.expand(state)
        maybe_brainstorm()
    while brainstorms < 100:
        engine.brainstorm(state, f"random interleaved thought #{brainstorms}")
        brainstorms += 1

    assert brainstorms == 100
    assert hashlib.sha256(engine.export_text(state).encode()).hexdigest() == baseline_txt
    assert hashlib.sha256(engine.export_json(state).encode()).hexdigest() == baseline_json
    passline("brainstorm non-mutation (100 interleavings, export hashes unchanged)")
