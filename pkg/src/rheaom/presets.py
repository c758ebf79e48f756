"""Named experiment bundles run by ``rheaom reproduce``.

A preset is a plain JSON-able document::

    {"name": ..., "characters": [...], "matchups": [[p1, p2], ...],
     "experiment": {ExperimentConfig fields except agents/character}}

Each (character, matchup) pair is one cell; every cell is an independent
``ExperimentConfig`` run with the same master seed.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

from .harness import ExperimentConfig

CHARACTERS = ["fast", "balanced", "strong"]
RHEA_VARIANTS = ["rhea", "rhea:random", "rhea:sl", "rhea:q", "rhea:pg"]
LEARNED_VARIANTS = ["rhea:sl", "rhea:q", "rhea:pg"]


def _pairings(variants: list[str]) -> list[list[str]]:
    return [[a, b] for i, a in enumerate(variants) for b in variants[i + 1:]]


_PRESETS: dict[str, dict] = {
    # every RHEA variant against every other, learned models listed first
    "self-comparison": {
        "characters": CHARACTERS,
        "matchups": _pairings(["rhea:pg", "rhea:sl", "rhea:q", "rhea:random", "rhea"]),
        "experiment": {"rounds": 100, "repeats": 2, "warmup": 50},
    },
    "vs-baselines": {
        "characters": CHARACTERS,
        "matchups": [[v, b] for v in RHEA_VARIANTS for b in ("scripted", "mcts", "random")],
        "experiment": {"rounds": 100, "repeats": 2, "warmup": 50},
    },
    "mcts-om": {
        "characters": CHARACTERS,
        "matchups": [["mcts:pg", "mcts"], ["mcts:sl", "mcts"],
                     ["rhea:pg", "mcts:pg"], ["rhea:sl", "mcts:sl"], ["rhea", "mcts"]],
        "experiment": {"rounds": 100, "repeats": 2, "warmup": 50},
    },
    # learning curves from a fresh model: vs Scripted, and against vanilla RHEA
    "convergence": {
        "characters": ["balanced"],
        "matchups": [[v, "scripted"] for v in ["rhea"] + LEARNED_VARIANTS]
        + [[v, "rhea"] for v in LEARNED_VARIANTS],
        "experiment": {"rounds": 300, "repeats": 5, "warmup": 0},
    },
}


def names() -> list[str]:
    return sorted(_PRESETS)


def get(name: str) -> dict:
    if name not in _PRESETS:
        raise KeyError(name)
    d = copy.deepcopy(_PRESETS[name])
    d["name"] = name
    return d


@dataclass(frozen=True)
class Cell:
    matchup: str
    character: str
    config: ExperimentConfig


def cells(preset: dict) -> list[Cell]:
    """Expand a preset document into experiment cells (validates every field)."""
    extra = set(preset) - {"name", "characters", "matchups", "experiment"}
    if extra:
        raise KeyError(sorted(extra)[0])
    out = []
    for ch in preset["characters"]:
        for p1, p2 in preset["matchups"]:
            exp = dict(preset.get("experiment", {}))
            exp.pop("agents", None)
            exp["character"] = ch
            cfg = ExperimentConfig.from_dict({**exp, "agents": [p1, p2]})
            out.append(Cell(f"{cfg.agents[0].label}_vs_{cfg.agents[1].label}", ch, cfg))
    return out
