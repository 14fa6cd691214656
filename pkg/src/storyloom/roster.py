"""Persona roster loading.

The roster is data, not code: a versioned JSON config file carrying the ten
default personas. Alternative rosters can be supplied at load time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .domain import DomainError, Persona, ValidationError


class RosterError(DomainError):
    pass


@dataclass(frozen=True)
class Roster:
    """Ordered persona roster; order is the canonical display/tie-break order."""

    version: int
    personas: tuple[Persona, ...]

    def __len__(self) -> int:
        return len(self.personas)

    def __iter__(self):
        return iter(self.personas)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.personas)

    def get(self, persona_id: str) -> Persona:
        for persona in self.personas:
            if persona.id == persona_id:
                return persona
        raise RosterError(f"unknown persona id: {persona_id!r}")

    def __contains__(self, persona_id: str) -> bool:
        return any(p.id == persona_id for p in self.personas)


def roster_from_dict(data: dict) -> Roster:
    try:
        entries = data["personas"]
        version = int(data.get("version", 1))
    except (KeyError, TypeError) as exc:
        raise RosterError(f"roster config missing required structure: {exc}") from exc
    personas = []
    seen: set[str] = set()
    for entry in entries:
        try:
            persona = Persona(
                id=entry["id"],
                display_name=entry["display_name"],
                specialization=entry.get("specialization", ""),
                identity_prompt=entry["identity_prompt"],
                parameters={k: float(v) for k, v in entry["parameters"].items()},
            )
        except (KeyError, TypeError, ValidationError) as exc:
            raise RosterError(f"invalid persona entry {entry.get('id')!r}: {exc}") from exc
        if persona.id in seen:
            raise RosterError(f"duplicate persona id: {persona.id!r}")
        seen.add(persona.id)
        personas.append(persona)
    if not personas:
        raise RosterError("roster must contain at least one persona")
    return Roster(version=version, personas=tuple(personas))


def load_roster(path: str | Path | None = None) -> Roster:
    """Load a roster config; defaults to the packaged ten-persona roster."""
    if path is None:
        text = resources.files("storyloom").joinpath("data/personas.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RosterError(f"roster config is not valid JSON: {exc}") from exc
    return roster_from_dict(data)
