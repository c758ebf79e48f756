"""Rolling-horizon evolutionary planner.

``plan`` runs the full decision in the active kernel backend.  The
component operations (``score_fitness``, ``diversity``,
``evaluate_population``, ``evolve_generation``) run the same code in the
pure-Python kernel and are what ``plan`` is built from; the tests check
that composing them by hand reproduces ``plan`` exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import _backend, _pycore
from .engine import Character, GameState, Player, _packed
from .opponent_model import OpponentModel


class BudgetMode(str, Enum):
    CALLS = "calls"
    MS = "ms"

    @property
    def code(self) -> int:
        return _pycore.MODE_CALLS if self is BudgetMode.CALLS else _pycore.MODE_MS


DEFAULT_LIMITS = {BudgetMode.CALLS: 280, BudgetMode.MS: 16}


@dataclass(frozen=True)
class DecisionBudget:
    mode: BudgetMode = BudgetMode.CALLS
    limit: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", BudgetMode(self.mode))
        if self.limit is None:
            object.__setattr__(self, "limit", DEFAULT_LIMITS[self.mode])
        if self.limit <= 0:
            raise ValueError("budget limit must be positive")

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "limit": self.limit}


@dataclass(frozen=True)
class EvolutionConfig:
    n: int = 7
    k: int = 1
    l: int = 4
    p_m: float = 0.85
    lam: float = 0.5
    budget: DecisionBudget = field(default_factory=DecisionBudget)
    shift_buffer: bool = False

    def __post_init__(self):
        if not 1 <= self.k < self.n:
            raise ValueError("need 1 <= k < n")
        if self.l < 1:
            raise ValueError("sequence length must be >= 1")
        if not 0 < self.p_m < 1:
            raise ValueError("p_m must be in (0, 1)")
        if not 0 <= self.lam < 1:
            raise ValueError("lambda must be in [0, 1)")

    def params(self) -> tuple:
        return (self.n, self.k, self.l, self.p_m, self.lam, self.budget.mode.code,
                self.budget.limit)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["budget"] = self.budget.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvolutionConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if isinstance(d.get("budget"), dict):
            d["budget"] = DecisionBudget(**d["budget"])
        return cls(**d)


@dataclass
class Individual:
    genes: list[int]
    fitness: float | None = None


@dataclass
class Population:
    individuals: list[Individual]

    @property
    def genes(self) -> list[list[int]]:
        return [ind.genes for ind in self.individuals]

    @property
    def fitness(self) -> list[float | None]:
        return [ind.fitness for ind in self.individuals]

    @classmethod
    def from_lists(cls, genes, fitness=None) -> "Population":
        fitness = fitness if fitness is not None else [None] * len(genes)
        return cls([Individual(list(g), f) for g, f in zip(genes, fitness)])

    def sorted(self) -> "Population":
        g, f = _pycore.sort_population(self.genes, self.fitness)
        return Population.from_lists(g, f)

    def __len__(self) -> int:
        return len(self.individuals)


@dataclass(frozen=True)
class PlanResult:
    action: int
    genes: tuple[int, ...]
    fitness: float | None
    generations: int
    forward_calls: int


def score_fitness(char: Character, state: GameState, perspective: int) -> float:
    return _pycore.score(char.py_rules, _packed(state), int(perspective))


def diversity(individual, population) -> float:
    """Position-wise gene diversity of ``individual`` within ``population``."""
    genes = population.genes if isinstance(population, Population) else [list(g) for g in population]
    target = individual.genes if isinstance(individual, Individual) else list(individual)
    try:
        i = genes.index(list(target))
    except ValueError:
        raise ValueError("individual is not in the population") from None
    return _pycore.diversity(genes, i)


def evaluate_population(char: Character, population: Population, state: GameState,
                        om: OpponentModel, cfg: EvolutionConfig, rng: np.random.Generator,
                        perspective: int = Player.P1, calls: int = 0,
                        enforce_budget: bool = False) -> tuple[list[float | None], int]:
    """Fill unset fitness values in place.

    Returns ``(fitness, forward_calls)``.  With ``enforce_budget`` the
    remaining individuals are skipped once the next rollout would overrun
    the budget.
    """
    genes = population.genes
    fit = population.fitness
    budget = _pycore._Budget(cfg.budget.mode.code, cfg.budget.limit) if enforce_budget else None
    calls = _pycore.evaluate(char.py_rules, _packed(state), int(perspective),
                             _pycore._Om(om.packed()), rng, genes, fit, cfg.lam, calls, budget)
    for ind, f in zip(population.individuals, fit):
        ind.fitness = f
    return fit, calls


def evolve_generation(char: Character, population: Population, cfg: EvolutionConfig,
                      legal0: Sequence[int], rng: np.random.Generator) -> Population:
    """Elites plus crossover offspring; ``population`` must be sorted best-first."""
    g, f = _pycore.evolve(population.genes, population.fitness, cfg.k, cfg.p_m,
                          char.n_actions, list(legal0), rng)
    return Population.from_lists(g, f)


def plan(char: Character, state: GameState, om: OpponentModel, cfg: EvolutionConfig,
         rng: np.random.Generator, perspective: int = Player.P1,
         seed_genes: Sequence[int] | None = None, backend=None) -> PlanResult:
    core = backend or _backend.core
    R = char.rules if core is _backend.core else char.rules_for(core)
    a, genes, fit, gens, calls = core.rhea_plan(R, _packed(state), int(perspective),
                                                om.packed(), cfg.params(), rng,
                                                None if seed_genes is None else list(seed_genes))
    return PlanResult(int(a), tuple(genes), fit, gens, calls)


class RheaPlanner:
    """Stateful wrapper that threads the shift buffer and records a trace."""

    def __init__(self, char: Character, cfg: EvolutionConfig, perspective: int = Player.P1,
                 trace: bool = False):
        self.char = char
        self.cfg = cfg
        self.perspective = int(perspective)
        self.last_best: tuple[int, ...] | None = None
        self.trace: list[dict] | None = [] if trace else None

    def reset(self) -> None:
        self.last_best = None

    def decide(self, state, om: OpponentModel, rng: np.random.Generator) -> PlanResult:
        seed = self.last_best if self.cfg.shift_buffer else None
        res = plan(self.char, state, om, self.cfg, rng, self.perspective, seed)
        self.last_best = res.genes
        if self.trace is not None:
            frame = state.frame if isinstance(state, GameState) else state[0]
            self.trace.append({"frame": int(frame), "generations": res.generations,
                               "forward_calls": res.forward_calls,
                               "best_fitness": res.fitness, "chosen_action": res.action})
        return res

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.trace or [])
