"""Agents: Noop, Random, Scripted, MCTS and RHEA.

Every agent sees the game through the delayed observation.  The two
planning agents first roll the delayed snapshot forward to an estimate of
the present by replaying their own per-frame inputs, with the opponent
model filling in the opponent's side, then search from that estimate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Sequence

import numpy as np

from . import _backend, _pycore
from .engine import DEFAULT_DELAY, Character, Domain, GameState, Observation, Player, Stage, _packed
from .opponent_model import ModelKind, OpponentModel, RoundDataset, TrainConfig
from .planner import BudgetMode, DecisionBudget, EvolutionConfig, RheaPlanner

NF = _pycore.NF


class AgentKind(str, Enum):
    NOOP = "noop"
    RANDOM = "random"
    SCRIPTED = "scripted"
    MCTS = "mcts"
    RHEA = "rhea"

    @property
    def plans(self) -> bool:
        return self in (AgentKind.MCTS, AgentKind.RHEA)


@dataclass(frozen=True)
class Decision:
    action: int
    forward_calls: int = 0
    generations: int = 0
    elapsed_ms: float = 0.0


@dataclass(frozen=True)
class MctsConfig:
    uct_c: float = 1.414
    max_depth: int = 4
    budget: DecisionBudget = field(default_factory=DecisionBudget)
    rollout_policy: str = "random_legal"

    def __post_init__(self):
        if self.uct_c <= 0:
            raise ValueError("uct_c must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.rollout_policy != "random_legal":
            raise ValueError("only the random_legal rollout policy is supported")

    def params(self, limit: int | None = None) -> tuple:
        return (self.uct_c, self.max_depth, self.budget.mode.code,
                self.budget.limit if limit is None else limit)


@dataclass(frozen=True)
class ScriptParams:
    attack_range: int = 65
    guard_frames: int = 12
    compensate: bool = True  # replay own inputs over the delayed snapshot


# --------------------------------------------------------------------------
# scripted rules


def scripted_policy(char: Character, observation: Observation | GameState, player: int,
                    params: ScriptParams = ScriptParams(),
                    frames_since_down: int | None = None) -> int:
    """Finite-state fighter.

    Priority: guard for a while after getting up, walk in when out of
    range, spend energy on the special when it can, otherwise throw the
    strongest affordable ground attack that reaches.
    """
    snap = observation.snapshot if isinstance(observation, Observation) else observation
    me = snap.fighter(player)
    op = snap.fighter(1 - player)
    names = char.names
    if me.stage == Stage.AIR:
        return char.noop_id
    if frames_since_down is not None and frames_since_down < params.guard_frames:
        return names.index("GUARD")
    gap = abs(op.x - me.x)
    if gap > params.attack_range:
        return names.index("WALK_FORWARD")
    if "SPECIAL" in names:
        sp = char.actions[names.index("SPECIAL")]
        if me.energy >= sp.energy_cost and gap <= sp.reach_x:
            return sp.id
    attacks = [a for a in char.actions[:-1]
               if a.is_attack and a.domain == Domain.GROUND and a.energy_cost <= me.energy
               and a.name != "SPECIAL"]
    reach = [a for a in attacks if a.reach_x >= gap] or attacks
    best = max(reach, key=lambda a: (a.damage, -a.id))
    return best.id


# --------------------------------------------------------------------------
# agents


class Agent:
    kind: AgentKind = AgentKind.NOOP
    om: OpponentModel | None = None

    def __init__(self, char: Character, player: int, delay: int = DEFAULT_DELAY):
        self.char = char
        self.player = int(player)
        self.delay = delay
        self.dataset = RoundDataset()

    @property
    def learns(self) -> bool:
        return self.om is not None and self.om.kind.learned

    @property
    def budget(self) -> DecisionBudget | None:
        return None

    def reset_round(self) -> None:
        self.dataset.clear()

    def snapshot(self, history: Sequence) -> tuple[int, ...]:
        return tuple(history[max(0, len(history) - 1 - self.delay)])

    def act(self, history: Sequence, inputs: Sequence[int], rng) -> Decision:
        return Decision(self.char.noop_id)


class NoopAgent(Agent):
    kind = AgentKind.NOOP


class RandomAgent(Agent):
    kind = AgentKind.RANDOM

    def act(self, history, inputs, rng):
        s = self.snapshot(history)
        legal = _backend.core.legal_actions(self.char.rules, s, self.player)
        legal = [a for a in legal if a < self.char.n_actions] or [self.char.noop_id]
        return Decision(legal[int(rng.random() * len(legal))])


class ScriptedAgent(Agent):
    kind = AgentKind.SCRIPTED

    def __init__(self, char, player, delay=DEFAULT_DELAY, params: ScriptParams = ScriptParams()):
        super().__init__(char, player, delay)
        self.params = params

    def act(self, history, inputs, rng):
        s = self.snapshot(history)
        # frames since the fighter last left Down, as seen through the delay
        since = None
        end = len(history) - 1 - self.delay
        if end > 0:
            off = 1 + NF * self.player + _pycore.STG
            for back in range(self.params.guard_frames + 1):
                i = end - back
                if i < 1:
                    break
                if history[i - 1][off] == _pycore.DOWN and history[i][off] != _pycore.DOWN:
                    since = back
                    break
        if self.params.compensate:
            j = max(0, len(history) - 1 - self.delay)
            own = list(inputs[j:len(history) - 1])
            if own:
                s = _backend.core.compensate(self.char.rules, s, self.player, own,
                                             (_pycore.OM_NONE, None, None), rng)
        return Decision(scripted_policy(self.char, GameState.from_packed(s), self.player,
                                        self.params, since))


class _PlanningAgent(Agent):
    def __init__(self, char, player, om: OpponentModel, delay=DEFAULT_DELAY,
                 train_cfg: TrainConfig = TrainConfig()):
        super().__init__(char, player, delay)
        self.om = om
        self.train_cfg = train_cfg

    def estimate_present(self, history, inputs, rng) -> tuple[int, ...]:
        j = max(0, len(history) - 1 - self.delay)
        own = list(inputs[j:len(history) - 1])
        if not own:
            return tuple(history[j])
        return _backend.core.compensate(self.char.rules, tuple(history[j]), self.player, own,
                                        self.om.packed(), rng)

    def _remaining(self, t0: float) -> int | None:
        b = self.budget
        if b.mode is BudgetMode.MS:
            return max(1, int(b.limit - (time.perf_counter() - t0) * 1000.0))
        return None


class RheaAgent(_PlanningAgent):
    kind = AgentKind.RHEA

    def __init__(self, char, player, om, cfg: EvolutionConfig = EvolutionConfig(),
                 delay=DEFAULT_DELAY, train_cfg: TrainConfig = TrainConfig()):
        super().__init__(char, player, om, delay, train_cfg)
        self.cfg = cfg
        self.planner = RheaPlanner(char, cfg, player)

    @property
    def budget(self):
        return self.cfg.budget

    def reset_round(self):
        super().reset_round()
        self.planner.reset()

    def act(self, history, inputs, rng):
        t0 = time.perf_counter()
        s = self.estimate_present(history, inputs, rng)
        rem = self._remaining(t0)
        if rem is not None:
            self.planner.cfg = replace(self.cfg, budget=DecisionBudget(BudgetMode.MS, rem))
        res = self.planner.decide(s, self.om, rng)
        return Decision(res.action, res.forward_calls, res.generations,
                        (time.perf_counter() - t0) * 1000.0)


class MctsAgent(_PlanningAgent):
    kind = AgentKind.MCTS

    def __init__(self, char, player, om, cfg: MctsConfig = MctsConfig(),
                 delay=DEFAULT_DELAY, train_cfg: TrainConfig = TrainConfig()):
        super().__init__(char, player, om, delay, train_cfg)
        self.cfg = cfg

    @property
    def budget(self):
        return self.cfg.budget

    def act(self, history, inputs, rng):
        t0 = time.perf_counter()
        s = self.estimate_present(history, inputs, rng)
        a, iters, calls = mcts_plan(self.char, s, self.om, self.cfg, rng, self.player,
                                    limit=self._remaining(t0))
        return Decision(a, calls, iters, (time.perf_counter() - t0) * 1000.0)


def mcts_plan(char: Character, state, om: OpponentModel, cfg: MctsConfig,
              rng: np.random.Generator, perspective: int = Player.P1,
              limit: int | None = None, backend=None) -> tuple[int, int, int]:
    """Open-loop UCT decision; returns ``(action, iterations, forward_calls)``."""
    core = backend or _backend.core
    R = char.rules if core is _backend.core else char.rules_for(core)
    a, iters, calls = core.mcts_plan(R, _packed(state), int(perspective), om.packed(),
                                     cfg.params(limit), rng)
    return int(a), iters, calls


# --------------------------------------------------------------------------
# agent handles


@dataclass
class AgentHandle:
    """Declarative agent description, as it appears in experiment configs."""

    kind: AgentKind
    model: str | None = None  # opponent-model kind for planners, or a snapshot path
    params: dict[str, Any] = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        self.kind = AgentKind(self.kind)
        if self.model is not None and not self.kind.plans:
            raise ValueError(f"{self.kind.value} agents take no opponent model")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind.plans and self.model not in (None, "none"):
            return f"{self.kind.value.upper()}OM-{str(self.model).upper()}"
        return self.kind.value.upper() if self.kind.plans else self.kind.value.capitalize()

    def model_kind(self) -> ModelKind:
        if self.model is None:
            return ModelKind.NONE
        try:
            return ModelKind(self.model)
        except ValueError:
            from .persistence import load_model
            return load_model(self.model).kind

    def build(self, char: Character, player: int, rng: np.random.Generator,
              delay: int = DEFAULT_DELAY, budget: DecisionBudget | None = None,
              train_cfg: TrainConfig | None = None) -> Agent:
        p = dict(self.params)
        if self.kind == AgentKind.NOOP:
            return NoopAgent(char, player, delay)
        if self.kind == AgentKind.RANDOM:
            return RandomAgent(char, player, delay)
        if self.kind == AgentKind.SCRIPTED:
            return ScriptedAgent(char, player, delay, ScriptParams(**p))
        om = self._make_om(char, rng)
        tc = train_cfg or TrainConfig()
        if "budget" in p:
            b = p.pop("budget")
            budget = b if isinstance(b, DecisionBudget) else DecisionBudget(**b)
        if self.kind == AgentKind.RHEA:
            cfg = EvolutionConfig.from_dict(p)
            if budget is not None:
                cfg = replace(cfg, budget=budget)
            return RheaAgent(char, player, om, cfg, delay, tc)
        cfg = MctsConfig(**p)
        if budget is not None:
            cfg = replace(cfg, budget=budget)
        return MctsAgent(char, player, om, cfg, delay, tc)

    def _make_om(self, char: Character, rng) -> OpponentModel:
        if self.model is None:
            return OpponentModel(ModelKind.NONE)
        try:
            kind = ModelKind(self.model)
        except ValueError:
            from .persistence import load_model
            m = load_model(self.model)
            if m.n_actions != char.n_actions:
                raise ValueError(f"model {self.model} has {m.n_actions} outputs, "
                                 f"character has {char.n_actions} actions") from None
            return OpponentModel(m.kind, m)
        return OpponentModel.create(kind, char.n_actions, rng)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "model": self.model, "params": self.params}
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgentHandle":
        d = dict(d)
        known = {"kind", "model", "params", "name"}
        extra = {k: d.pop(k) for k in list(d) if k not in known}
        params = {**d.get("params", {}), **extra}
        return cls(d["kind"], d.get("model"), params, d.get("name"))

    @classmethod
    def parse(cls, text: str) -> "AgentHandle":
        """Short form: ``rhea``, ``rhea:pg``, ``mcts:sl``, ``scripted``, ``random``."""
        kind, _, model = text.partition(":")
        return cls(kind, model or None)
