"""Rolling-horizon evolution with learned opponent models for a small fighting game."""

from ._backend import NAME as BACKEND
from .engine import (
    ActionSpec,
    Character,
    FighterState,
    GameState,
    Player,
    Stage,
    Status,
    load_character,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ActionSpec",
    "Character",
    "FighterState",
    "GameState",
    "Player",
    "Stage",
    "Status",
    "load_character",
    "__version__",
]
