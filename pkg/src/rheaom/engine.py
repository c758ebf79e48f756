"""Deterministic frame-stepped fighting game.

The same dynamics serve as the live environment and as the planners'
forward model.  Public functions take and return :class:`GameState`
values; the kernels underneath work on flat int tuples (see
:meth:`GameState.packed`), which is what the harness and planners pass
around in their inner loops.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from enum import IntEnum
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend, _pycore
from ._pycore import N_FEATURES, NF

PRESETS = ("balanced", "fast", "strong")
DEFAULT_DELAY = 15


class Player(IntEnum):
    P1 = 0
    P2 = 1

    @property
    def other(self) -> "Player":
        return Player(1 - self)


class Stage(IntEnum):
    STAND = 0
    CROUCH = 1
    AIR = 2
    DOWN = 3


class Domain(IntEnum):
    GROUND = 0
    AIR = 1


class Status(IntEnum):
    ONGOING = 0
    P1_WIN = 1
    P2_WIN = 2
    DRAW = 3


class CharacterError(ValueError):
    pass


@dataclass(frozen=True)
class ActionSpec:
    id: int
    name: str
    domain: Domain
    startup: int
    active: int = 0
    recover: int = 0
    damage: int = 0
    energy_cost: int = 0
    energy_gain_on_hit: int = 0
    reach_x: int = 0
    reach_y: int = 0
    move_dx: int = 0
    move_dy: int = 0
    guard: bool = False
    crouch: bool = False

    @property
    def total(self) -> int:
        return self.startup + self.active + self.recover

    @property
    def is_attack(self) -> bool:
        return self.damage > 0

    def validate(self) -> None:
        if min(self.startup, self.active, self.recover, self.damage, self.energy_cost,
               self.energy_gain_on_hit, self.reach_x, self.reach_y) < 0:
            raise CharacterError(f"{self.name}: negative frame data")
        if self.total < 1:
            raise CharacterError(f"{self.name}: total duration must be >= 1")
        if self.is_attack and self.active < 1:
            raise CharacterError(f"{self.name}: attacks need at least one active frame")

    def row(self) -> tuple[int, ...]:
        return (int(self.domain), self.startup, self.active, self.recover, self.damage,
                self.energy_cost, self.energy_gain_on_hit, self.reach_x, self.reach_y,
                self.move_dx, self.move_dy, int(self.guard), int(self.crouch))

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSpec":
        d = dict(d)
        dom = d.pop("domain")
        domain = Domain[dom.upper()] if isinstance(dom, str) else Domain(dom)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise CharacterError(f"unknown action fields: {sorted(unknown)}")
        return cls(domain=domain, **d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain"] = self.domain.name.capitalize()
        return d


@dataclass(frozen=True)
class Character:
    """A roster of frame data plus arena and round constants.

    The last action must be ``RECOVER``, the forced action of a knocked-down
    fighter; every other action is selectable.  ``STAND`` is the neutral
    one-frame no-op.
    """

    name: str
    actions: tuple[ActionSpec, ...]
    max_hp: int = 400
    max_energy: int = 100
    arena_width: int = 480
    arena_height: int = 160
    round_limit: int = 3600
    gravity: int = 4
    knockback: int = 30
    down_duration: int = 20
    gene_frame_cap: int = 60
    start_gap: int = 200
    description: str = ""

    def __post_init__(self):
        if len(self.actions) < 3:
            raise CharacterError("roster needs STAND, RECOVER and at least one more action")
        for i, a in enumerate(self.actions):
            if a.id != i:
                raise CharacterError(f"action ids must be 0..R-1 in order (got {a.id} at {i})")
            a.validate()
        if self.actions[-1].name != "RECOVER":
            raise CharacterError("last action must be RECOVER")
        rec = self.actions[-1]
        if rec.total != self.down_duration or rec.is_attack:
            raise CharacterError("RECOVER must be a 0-damage action lasting down_duration frames")
        if "STAND" not in self.names:
            raise CharacterError("roster needs a STAND no-op")
        if self.actions[self.noop_id].total != 1:
            raise CharacterError("STAND must last exactly one frame")
        free = sum(1 for a in self.actions if a.energy_cost == 0)
        if 2 * free < len(self.actions):
            raise CharacterError("at least half the roster must cost no energy")
        if not (0 < self.start_gap < self.arena_width):
            raise CharacterError("start_gap must fit in the arena")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.actions)

    @property
    def n_actions(self) -> int:
        """Selectable actions (the genes' alphabet and the model output size)."""
        return len(self.actions) - 1

    @property
    def noop_id(self) -> int:
        return self.names.index("STAND")

    @property
    def recover_id(self) -> int:
        return len(self.actions) - 1

    def action_id(self, name: str) -> int:
        return self.names.index(name)

    @cached_property
    def rules(self):
        return self.rules_for(_backend.core)

    @cached_property
    def py_rules(self):
        return self.rules_for(_pycore)

    def rules_for(self, core):
        return core.Rules(self.max_hp, self.max_energy, self.arena_width, self.arena_height,
                          self.round_limit, self.gravity, self.knockback, self.gene_frame_cap,
                          self.noop_id, self.recover_id, self.n_actions,
                          [a.row() for a in self.actions])

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "character": self.name,
            "description": self.description,
            "max_hp": self.max_hp,
            "max_energy": self.max_energy,
            "arena": {"width": self.arena_width, "height": self.arena_height},
            "round_limit": self.round_limit,
            "gravity": self.gravity,
            "knockback": self.knockback,
            "down_duration": self.down_duration,
            "gene_frame_cap": self.gene_frame_cap,
            "start_gap": self.start_gap,
            "actions": [a.to_dict() for a in self.actions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Character":
        try:
            arena = d.get("arena", {})
            return cls(
                name=d["character"],
                actions=tuple(ActionSpec.from_dict(a) for a in d["actions"]),
                max_hp=int(d.get("max_hp", 400)),
                max_energy=int(d.get("max_energy", 100)),
                arena_width=int(arena.get("width", 480)),
                arena_height=int(arena.get("height", 160)),
                round_limit=int(d.get("round_limit", 3600)),
                gravity=int(d.get("gravity", 4)),
                knockback=int(d.get("knockback", 30)),
                down_duration=int(d.get("down_duration", 20)),
                gene_frame_cap=int(d.get("gene_frame_cap", 60)),
                start_gap=int(d.get("start_gap", 200)),
                description=d.get("description", ""),
            )
        except KeyError as exc:
            raise CharacterError(f"missing key {exc}") from None

    def with_round_limit(self, frames: int) -> "Character":
        return replace(self, round_limit=frames)


def load_character(name_or_path: str | Path = "balanced") -> Character:
    """Load a shipped preset by name, or a JSON asset from a path."""
    if isinstance(name_or_path, str) and name_or_path in PRESETS:
        text = resources.files("rheaom").joinpath("data", f"{name_or_path}.json").read_text()
    else:
        text = Path(name_or_path).read_text()
    return Character.from_dict(json.loads(text))


def expand_roster(char: Character, size: int) -> Character:
    """Pad the selectable roster to ``size`` with attack variants.

    Variants cycle through the existing attacks with shifted startup and
    reach, so larger action spaces keep the same dynamics family.
    """
    base = list(char.actions[:-1])
    if size < len(base):
        raise CharacterError(f"cannot shrink a {len(base)}-action roster to {size}")
    attacks = [a for a in base if a.is_attack and a.energy_cost == 0]
    out = list(base)
    i = 0
    while len(out) < size:
        src = attacks[i % len(attacks)]
        tier = i // len(attacks) + 1
        out.append(replace(src, id=len(out), name=f"{src.name}_{tier}",
                           startup=src.startup + tier % 3,
                           reach_x=src.reach_x + 5 * tier,
                           damage=max(1, src.damage + (tier % 2) * 2 - 1)))
        i += 1
    rec = replace(char.actions[-1], id=len(out))
    return replace(char, actions=tuple(out) + (rec,), name=f"{char.name}{size}")


@dataclass(frozen=True)
class FighterState:
    hp: int
    energy: int
    x: int
    y: int
    stage: Stage = Stage.STAND
    current_action: int | None = None
    action_frame: int = 0
    facing: int = 1
    hit_landed: bool = False

    def packed(self) -> tuple[int, ...]:
        return (self.hp, self.energy, self.x, self.y, int(self.stage),
                -1 if self.current_action is None else self.current_action,
                self.action_frame, self.facing, int(self.hit_landed))

    @classmethod
    def from_packed(cls, t: Sequence[int]) -> "FighterState":
        return cls(hp=t[0], energy=t[1], x=t[2], y=t[3], stage=Stage(t[4]),
                   current_action=None if t[5] < 0 else t[5], action_frame=t[6],
                   facing=t[7], hit_landed=bool(t[8]))

    @property
    def idle(self) -> bool:
        return self.current_action is None


@dataclass(frozen=True)
class GameState:
    frame: int
    p1: FighterState
    p2: FighterState

    def packed(self) -> tuple[int, ...]:
        return (self.frame, *self.p1.packed(), *self.p2.packed())

    @classmethod
    def from_packed(cls, t: Sequence[int]) -> "GameState":
        return cls(frame=t[0], p1=FighterState.from_packed(t[1:1 + NF]),
                   p2=FighterState.from_packed(t[1 + NF:1 + 2 * NF]))

    def fighter(self, player: int) -> FighterState:
        return self.p1 if player == Player.P1 else self.p2

    def to_dict(self) -> dict:
        def fd(f: FighterState):
            return {"hp": f.hp, "energy": f.energy, "x": f.x, "y": f.y,
                    "stage": f.stage.name, "action": f.current_action,
                    "action_frame": f.action_frame, "facing": f.facing}
        return {"frame": self.frame, "p1": fd(self.p1), "p2": fd(self.p2)}


@dataclass(frozen=True)
class Observation:
    snapshot: GameState
    delay: int = DEFAULT_DELAY


def _packed(state) -> tuple[int, ...]:
    return state.packed() if isinstance(state, GameState) else tuple(state)


def initial_state(char: Character) -> GameState:
    left = (char.arena_width - char.start_gap) // 2
    right = left + char.start_gap
    return GameState(
        frame=0,
        p1=FighterState(hp=char.max_hp, energy=0, x=left, y=0, facing=1),
        p2=FighterState(hp=char.max_hp, energy=0, x=right, y=0, facing=-1),
    )


def legal_actions(char: Character, state: GameState, player: int) -> frozenset[int]:
    return frozenset(_backend.core.legal_actions(char.rules, _packed(state), int(player)))


def step(char: Character, state: GameState, a1: int, a2: int) -> GameState:
    """Advance one frame with simultaneous inputs.

    Inputs of fighters that are mid-action are ignored, as are inputs that
    are illegal for an idle fighter (it stays idle for the frame).  Raises
    ``ValueError`` for ids outside the roster.
    """
    return GameState.from_packed(_backend.core.step(char.rules, _packed(state), int(a1), int(a2)))


def advance_gene(char: Character, state: GameState, a_self: int, a_opp: int,
                 player: int = Player.P1) -> GameState:
    s, _ = _backend.core.advance_gene(char.rules, _packed(state), int(a_self), int(a_opp),
                                      int(player))
    return GameState.from_packed(s)


def round_status(char: Character, state: GameState) -> Status:
    return Status(_backend.core.status(char.rules, _packed(state)))


def observe(history: Sequence, player: int = Player.P1, delay: int = DEFAULT_DELAY) -> Observation:
    """The snapshot ``delay`` frames back; early frames see the initial state."""
    if not history:
        raise ValueError("history is empty")
    snap = history[max(0, len(history) - 1 - delay)]
    if not isinstance(snap, GameState):
        snap = GameState.from_packed(snap)
    return Observation(snapshot=snap, delay=delay)


def extract_features(char: Character, state: GameState, perspective: int) -> np.ndarray:
    """18 normalized features with ``perspective``'s fighter first.

    Order: hp, hp, energy, energy, x, y (self), x, y (opponent), stage
    one-hot (self), stage one-hot (opponent), |dx|, |dy|.
    """
    out = np.array(_backend.core.features(char.rules, _packed(state), int(perspective)))
    assert out.shape == (N_FEATURES,)
    return out


def mirror(char: Character, state: GameState) -> GameState:
    """Swap the fighters and reflect the arena horizontally."""
    def m(f: FighterState) -> FighterState:
        return replace(f, x=char.arena_width - f.x, facing=-f.facing)
    return GameState(frame=state.frame, p1=m(state.p2), p2=m(state.p1))


def mirror_packed(char: Character, s: Sequence[int]) -> tuple[int, ...]:
    w = char.arena_width
    a = list(s[1 + NF:1 + 2 * NF])
    b = list(s[1:1 + NF])
    for f in (a, b):
        f[2] = w - f[2]
        f[7] = -f[7]
    return (s[0], *a, *b)


@dataclass
class RoundTranscript:
    """Per-frame record of a round, written as JSON lines."""

    frames: list = field(default_factory=list)

    def append(self, state: Sequence[int], a1: int, a2: int) -> None:
        self.frames.append((tuple(state), a1, a2))

    def records(self):
        for s, a1, a2 in self.frames:
            d = GameState.from_packed(s).to_dict()
            d["a1"] = a1
            d["a2"] = a2
            yield d

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.records())
