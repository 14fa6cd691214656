"""Regenerate flow.json by driving the real service with the mock backend.

Run from the repo root with the package installed:
    python frontend/tests/fixtures/generate_fixtures.py
"""

import json
from pathlib import Path

from fastapi.testclient import TestClient

from storyloom.gateway import BackendProfile, MockBackend
from storyloom.service import create_app
from storyloom.workflow import StoryEngine

OUT = Path(__file__).parent / "flow.json"


def main() -> None:
    profile = BackendProfile(kind="mock", seed=7)
    engine = StoryEngine(profile=profile, backend=MockBackend(seed=7))
    client = TestClient(create_app(engine=engine))

    fixture = {}
    created = client.post("/sessions", json={
        "sparkle": {"text": "A lighthouse keeper finds a door in the sea.",
                    "target_beat_count": 2},
        "session_id": "ui-demo",
    })
    fixture["fresh"] = created.json()
    fixture["summary_list"] = client.get("/sessions").json()

    first = fixture["fresh"]["proposal_history"][0]["proposals"][0]
    fixture["pick_persona"] = first["persona_id"]
    edited_beat = dict(first["beat"])
    edited_beat["setting"] = dict(edited_beat["setting"], location="the river lock")
    fixture["edit_body"] = {"beat": edited_beat}
    fixture["after_edit"] = client.put(
        f"/sessions/ui-demo/proposals/{first['persona_id']}/beat",
        json={"beat": edited_beat},
    ).json()

    fixture["select_response"] = client.post(
        "/sessions/ui-demo/select", json={"persona_id": first["persona_id"]}
    ).json()
    fixture["session_selected"] = client.get("/sessions/ui-demo").json()
    fixture["expand_response"] = client.post("/sessions/ui-demo/expand").json()
    fixture["session_expanded"] = client.get("/sessions/ui-demo").json()
    fixture["metrics"] = client.get("/sessions/ui-demo/metrics").json()
    fixture["refine_response"] = client.post(
        "/sessions/ui-demo/segments/0/refine", json={"instruction": "more dialogue"}
    ).json()
    fixture["session_refined"] = client.get("/sessions/ui-demo").json()
    fixture["metrics_refined"] = client.get("/sessions/ui-demo/metrics").json()
    fixture["brainstorm_response"] = client.post(
        "/sessions/ui-demo/brainstorm", json={"message": "could the door sing?"}
    ).json()

    OUT.write_text(json.dumps(fixture, ensure_ascii=False, indent=2) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
