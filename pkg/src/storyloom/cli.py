"""`loom`: the scriptable front door to the storytelling engine.

A thin client over the same workflow paths the HTTP service uses. Exit codes
mirror the service's error classes: 2 validation, 3 not found, 4 illegal
state, 5 backend failure, 6 rate limited, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import analytics
from .config import AppConfig, load_config
from .domain import (
    BeatParseError,
    DomainError,
    IllegalTransition,
    ValidationError,
)
from .expander import IllegalState, UnknownSegment
from .gateway import GatewayError, RateLimited
from .personas import AllPersonasFailed
from .store import CorruptPortfolio, PortfolioStore, UnknownSession
from .workflow import SelectionError, StateError, StoryEngine, run_replay, sparkle_from_dict

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_NOT_FOUND = 3
EXIT_STATE = 4
EXIT_BACKEND = 5
EXIT_RATE_LIMITED = 6


class CliError(Exception):
    def __init__(self, code: int, error_code: str, message: str, detail: dict | None = None):
        self.code = code
        self.error_code = error_code
        self.detail = detail or {}
        super().__init__(message)


def _classify(exc: Exception) -> CliError:
    if isinstance(exc, ValidationError):
        return CliError(EXIT_VALIDATION, "validation", str(exc), {"fields": exc.fields})
    if isinstance(exc, BeatParseError):
        return CliError(EXIT_VALIDATION, "invalid_beat", str(exc))
    if isinstance(exc, (UnknownSession, UnknownSegment)):
        return CliError(EXIT_NOT_FOUND, "not_found", str(exc))
    if isinstance(exc, (IllegalTransition, StateError, SelectionError, IllegalState)):
        return CliError(EXIT_STATE, "illegal_state", str(exc))
    if isinstance(exc, RateLimited):
        return CliError(EXIT_RATE_LIMITED, "rate_limited", str(exc))
    if isinstance(exc, AllPersonasFailed):
        return CliError(EXIT_BACKEND, "all_personas_failed", str(exc), {"failures": exc.failures})
    if isinstance(exc, GatewayError):
        return CliError(EXIT_BACKEND, "backend_error", str(exc))
    if isinstance(exc, CorruptPortfolio):
        return CliError(
            EXIT_ERROR, "corrupt_portfolio", str(exc),
            {"session_id": exc.session_id, "position": exc.position},
        )
    if isinstance(exc, DomainError):
        return CliError(EXIT_VALIDATION, "domain_error", str(exc))
    return CliError(EXIT_ERROR, "error", str(exc))


def _build_engine(args) -> StoryEngine:
    config = _build_config(args)
    store = PortfolioStore(config.portfolio_dir)
    return StoryEngine(profile=config.profile, store=store, retrieval_k=config.retrieval_k)


def _build_config(args) -> AppConfig:
    config = load_config(path=getattr(args, "config", None))
    profile = config.profile
    if getattr(args, "mock", False):
        profile = replace(profile, kind="mock")
    if getattr(args, "seed", None) is not None:
        profile = replace(profile, seed=args.seed, kind="mock")
    if getattr(args, "portfolio", None):
        config = replace(config, portfolio_dir=Path(args.portfolio))
    return replace(config, profile=profile)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_new(args) -> int:
    engine = _build_engine(args)
    sparkle_text = Path(args.sparkle_file).read_text("utf-8").strip()
    sparkle_data = {"text": sparkle_text}
    if args.beats is not None:
        sparkle_data["target_beat_count"] = args.beats
    if args.language:
        sparkle_data["language"] = args.language
    if args.words:
        sparkle_data["target_segment_words"] = args.words
    state = engine.create_session(sparkle_from_dict(sparkle_data), session_id=args.session_id)
    if args.json:
        print(json.dumps({"session_id": state.session.session_id}))
    else:
        print(state.session.session_id)
    return EXIT_OK


def _verdict_label(proposal_dict: dict) -> str:
    verdict = proposal_dict["verdict"]
    if verdict is None:
        return "pending"
    if verdict["has_error"]:
        return "inconsistent"
    return "consistent*" if verdict.get("parse_warning") else "consistent"


def cmd_beats(args) -> int:
    engine = _build_engine(args)
    state = engine.load(args.session_id)
    if state.session.current_round() is None:
        engine.run_round(state)  # raises StateError when no round can open
    from . import report
    from .store import session_to_dict

    round_dict = session_to_dict(state.session)["proposal_history"][-1]
    if args.json:
        print(json.dumps(round_dict, ensure_ascii=False, indent=2))
        return EXIT_OK
    rows = []
    for proposal in round_dict["proposals"]:
        verdict = proposal["verdict"]
        note = verdict["error_description"] if verdict and verdict["has_error"] else ""
        rows.append(
            [
                proposal["rank"],
                proposal["persona_id"],
                _verdict_label(proposal),
                " | ".join(proposal["beat"]["key_events"]),
                note,
            ]
        )
    print(report.format_table(["rank", "persona", "verdict", "key events", "note"], rows), end="")
    for persona_id, error in round_dict["failures"].items():
        print(f"FAILED {persona_id}: {error}")
    return EXIT_OK


def cmd_pick(args) -> int:
    engine = _build_engine(args)
    state = engine.load(args.session_id)
    if args.edit_file:
        edited = json.loads(Path(args.edit_file).read_text("utf-8"))
        engine.edit_proposal(state, args.persona_id, edited)
    engine.select(state, args.persona_id)
    segment = engine.expand(state)
    if args.json:
        print(
            json.dumps(
                {
                    "session_id": state.session.session_id,
                    "status": state.session.status.value,
                    "beat_index": segment.beat_index,
                    "word_count": segment.word_count,
                    "prose": segment.prose,
                },
                ensure_ascii=False,
            )
        )
    else:
        print(segment.prose)
    return EXIT_OK


def cmd_refine(args) -> int:
    engine = _build_engine(args)
    state = engine.load(args.session_id)
    segment = engine.refine(state, args.segment, args.instruction)
    print(json.dumps({"segment": args.segment, "word_count": segment.word_count,
                      "prose": segment.prose}, ensure_ascii=False) if args.json else segment.prose)
    return EXIT_OK


def cmd_brainstorm(args) -> int:
    engine = _build_engine(args)
    state = engine.load(args.session_id)
    reply = engine.brainstorm(state, args.message)
    print(json.dumps({"reply": reply}, ensure_ascii=False) if args.json else reply)
    return EXIT_OK


def cmd_export(args) -> int:
    engine = _build_engine(args)
    state = engine.load(args.session_id)
    output = engine.export_json(state) if args.format == "json" else engine.export_text(state)
    sys.stdout.write(output)
    return EXIT_OK


def cmd_replay(args) -> int:
    script = json.loads(Path(args.script).read_text("utf-8"))
    if args.seed is not None:
        script["seed"] = args.seed
    engine = _build_engine(args)
    state = run_replay(engine, script)
    output = engine.export_json(state) if args.format == "json" else engine.export_text(state)
    sys.stdout.write(output)
    return EXIT_OK


# -- analytics commands ------------------------------------------------------


def _read_story_dir(path: Path) -> tuple[str, analytics.NarrativeMetrics]:
    story_file = path / "story.txt" if path.is_dir() else path
    text = story_file.read_text("utf-8")
    beats = []
    session_file = (path if path.is_dir() else path.parent) / "session.json"
    if session_file.exists():
        from .domain import beat_from_dict

        session_data = json.loads(session_file.read_text("utf-8"))
        beats = [
            beat_from_dict(b, index=i) for i, b in enumerate(session_data.get("beats", []))
        ]
    name = path.stem if path.is_file() else path.name
    return name, analytics.compute_metrics(text, beats)


def _read_corpus(path: Path) -> list[tuple[str, analytics.NarrativeMetrics]]:
    entries = sorted(p for p in path.iterdir() if p.is_dir() and (p / "story.txt").exists())
    if not entries:
        raise DomainError(f"no story directories (story.txt) under {path}")
    return [_read_story_dir(p) for p in entries]


def cmd_metrics(args) -> int:
    from . import report

    path = Path(args.path)
    if not path.exists():
        raise UnknownSession(str(path))
    single = path.is_file() or (path / "story.txt").exists()
    if single:
        name, metrics = _read_story_dir(path)
        payload = {"story": name, "metrics": metrics.as_dict()}
        table = report.metrics_table(metrics)
        figures = {"metrics.png": lambda p: report.save_metrics_figure(metrics, p)}
    else:
        records = _read_corpus(path)
        payload = {
            "corpus": path.name,
            "stories": [{"story": n, "metrics": m.as_dict()} for n, m in records],
        }
        table = report.corpus_metrics_table(records)
        figures = {"metrics.png": lambda p: report.save_corpus_metrics_figure(records, p)}
    if args.json:
        print(json.dumps(payload, ensure_ascii=False, indent=2))
    else:
        print(table, end="")
    if args.out:
        written = report.write_report(Path(args.out), "metrics", payload, table, figures)
        print("\n".join(f"wrote {p}" for p in written), file=sys.stderr)
    return EXIT_OK


def cmd_compare(args) -> int:
    from . import report

    corpus_a = _read_corpus(Path(args.dir_a))
    corpus_b = _read_corpus(Path(args.dir_b))
    results = analytics.compare_corpora(corpus_a, corpus_b)
    payload = {
        "corpus_a": str(args.dir_a),
        "corpus_b": str(args.dir_b),
        "results": {name: comparison.as_dict() for name, comparison in results.items()},
    }
    table = report.compare_table(results)
    if args.json:
        print(json.dumps(payload, ensure_ascii=False, indent=2))
    else:
        print(table, end="")
    if args.out:
        figures = {"compare.png": lambda p: report.save_compare_figure(results, p)}
        written = report.write_report(Path(args.out), "compare", payload, table, figures)
        print("\n".join(f"wrote {p}" for p in written), file=sys.stderr)
    return EXIT_OK


def cmd_transitions(args) -> int:
    from . import report

    store = PortfolioStore(args.portfolio)
    engine = _build_engine(args)
    logs = [state.session.selection_log for state in store.load_all()]
    matrix = analytics.build_transition_matrix(logs, engine.roster.ids)
    try:
        stats = analytics.asymmetry_stats(matrix)
    except analytics.NoTransitions:
        stats = None
    payload = {
        "transition_matrix": matrix.as_dict(),
        "asymmetry": stats.as_dict() if stats else None,
    }
    table = report.transitions_table(matrix)
    if stats:
        table += "\n" + report.asymmetry_table(stats)
    if args.json:
        print(json.dumps(payload, ensure_ascii=False, indent=2))
    else:
        print(table, end="")
    if args.out:
        figures = {"transitions.png": lambda p: report.save_transitions_figure(matrix, p)}
        written = report.write_report(Path(args.out), "transitions", payload, table, figures)
        print("\n".join(f"wrote {p}" for p in written), file=sys.stderr)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _build_config(args)
    if args.host:
        config = replace(config, host=args.host)
    if args.port:
        config = replace(config, port=args.port)
    if args.ui:
        config = replace(config, ui_dir=Path(args.ui))
    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file (JSON)")
    parser.add_argument("--portfolio", help="portfolio directory")
    parser.add_argument("--mock", action="store_true", help="use the offline mock backend")
    parser.add_argument("--seed", type=int, help="mock seed (implies --mock)")
    parser.add_argument("--json", action="store_true", help="machine-readable output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loom", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("new", help="create a session from a sparkle file")
    p.add_argument("--sparkle-file", required=True)
    p.add_argument("--beats", type=int)
    p.add_argument("--language")
    p.add_argument("--words", type=int, nargs=2, metavar=("LOWER", "UPPER"))
    p.add_argument("--session-id")
    _add_common(p)
    p.set_defaults(func=cmd_new)

    p = sub.add_parser("beats", help="show the current round's ranked proposals")
    p.add_argument("session_id")
    _add_common(p)
    p.set_defaults(func=cmd_beats)

    p = sub.add_parser("pick", help="select a persona's beat (optionally edited) and expand it")
    p.add_argument("session_id")
    p.add_argument("persona_id")
    p.add_argument("--edit-file", help="JSON file with the edited beat")
    _add_common(p)
    p.set_defaults(func=cmd_pick)

    p = sub.add_parser("refine", help="rewrite a segment under an instruction")
    p.add_argument("session_id")
    p.add_argument("segment", type=int)
    p.add_argument("--instruction", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("brainstorm", help="chat about the story without touching the draft")
    p.add_argument("session_id")
    p.add_argument("--message", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_brainstorm)

    p = sub.add_parser("export", help="write the story text or session JSON to stdout")
    p.add_argument("session_id")
    p.add_argument("--format", choices=("txt", "json"), default="txt")
    _add_common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("replay", help="run a scripted selection sequence end-to-end")
    p.add_argument("script")
    p.add_argument("--format", choices=("txt", "json"), default="txt")
    _add_common(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("metrics", help="narrative metrics for a story or corpus directory")
    p.add_argument("path")
    p.add_argument("--out", help="directory for the report files (json, table, figures)")
    _add_common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("compare", help="paired metric comparison of two corpora")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--out", help="directory for the report files")
    _add_common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("transitions", help="persona transition analytics over a portfolio")
    p.add_argument("portfolio")
    p.add_argument("--out", help="directory for the report files")
    _add_common(p)
    p.set_defaults(func=cmd_transitions)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--ui", help="directory with the built web UI to serve at /ui")
    _add_common(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _emit_error(args, exc)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - single translation point
        cli_error = _classify(exc)
        _emit_error(args, cli_error)
        return cli_error.code


def _emit_error(args, exc: CliError) -> None:
    if getattr(args, "json", False):
        envelope = {"error": {"code": exc.error_code, "message": str(exc), **exc.detail}}
        print(json.dumps(envelope, ensure_ascii=False), file=sys.stderr)
    else:
        print(f"loom: {exc.error_code}: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
