"""Rounds, series, aggregation and artifacts.

Seeds are derived by key, never by position in a stream: the generator for
(master seed, repeat r, round i, slot j) is
``SeedSequence(master, spawn_key=(r, i, j))``, so a round's randomness does
not depend on how many rounds run before or after it.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend, _pycore
from .agents import Agent, AgentHandle, Decision
from .engine import (
    DEFAULT_DELAY,
    Character,
    RoundTranscript,
    Status,
    expand_roster,
    initial_state,
    load_character,
)
from .opponent_model import TrainConfig, TransitionRecord, end_of_round, reward_signal
from .persistence import dumps
from .planner import BudgetMode, DecisionBudget

log = logging.getLogger(__name__)

NF = _pycore.NF
ACT = _pycore.ACT
HP = _pycore.HP

# spawn-key slots within a round
SLOT_ACT = (0, 1)
SLOT_TRAIN = (2, 3)
INIT_ROUND = -1  # round index used for per-repeat model initialization


def stream(seed: int, *key: int) -> np.random.Generator:
    keys = tuple(k % (1 << 32) for k in key)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=keys))


def ci95(p: float, n: int) -> float:
    return 1.96 * math.sqrt(p * (1.0 - p) / n) if n > 0 else float("nan")


# --------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class DecisionRecord:
    frame: int
    player: int
    action: int
    forward_calls: int
    generations: int
    elapsed_ms: float
    violation: bool = False


@dataclass
class RoundResult:
    winner: str  # "P1", "P2" or "Draw"
    hp_diff: int
    frames: int
    fwd_calls: tuple[int, int] = (0, 0)
    decisions: tuple[int, int] = (0, 0)
    mean_generations: tuple[float, float] = (0.0, 0.0)
    max_calls: tuple[int, int] = (0, 0)
    violations: int = 0
    repeat: int = 0
    round: int = 0
    train_seconds: tuple[float, float] = (0.0, 0.0)

    @property
    def p1_score(self) -> float:
        return {"P1": 1.0, "P2": 0.0, "Draw": 0.5}[self.winner]

    @property
    def mean_calls(self) -> tuple[float, float]:
        return tuple(c / d if d else 0.0 for c, d in zip(self.fwd_calls, self.decisions))

    def csv_row(self) -> list:
        return [self.repeat, self.round, self.winner, self.hp_diff, self.frames,
                self.fwd_calls[0], self.fwd_calls[1]]


CSV_HEADER = ["repeat", "round", "winner", "hp_diff", "frames", "fwd_calls_p1", "fwd_calls_p2"]


@dataclass
class RoundLog:
    seed: tuple
    decisions: list[DecisionRecord] = field(default_factory=list)
    transcript: RoundTranscript | None = None

    def to_jsonl(self, include_timing: bool = False) -> str:
        out = io.StringIO()
        out.write(json.dumps({"seed": list(self.seed)}) + "\n")
        for d in self.decisions:
            rec = asdict(d)
            if not include_timing:
                rec.pop("elapsed_ms")
            out.write(json.dumps(rec, separators=(",", ":")) + "\n")
        if self.transcript is not None:
            out.write(self.transcript.to_jsonl())
        return out.getvalue()


def _winner(st: int) -> str:
    return {Status.P1_WIN: "P1", Status.P2_WIN: "P2", Status.DRAW: "Draw"}[Status(st)]


# --------------------------------------------------------------------------
# one round


def _violates(agent: Agent, dec: Decision) -> bool:
    b = agent.budget
    if b is None:
        return dec.forward_calls > 0
    if b.mode is BudgetMode.CALLS:
        return dec.forward_calls > b.limit
    return dec.elapsed_ms > b.limit


def run_round(char: Character, agents: Sequence[Agent], rngs: Sequence[np.random.Generator],
              seed_key: tuple = (), transcript: bool = False, reward: str = "absolute",
              ) -> tuple[RoundResult, RoundLog]:
    """Play one round to completion.

    ``rngs[p]`` drives agent ``p``'s decisions.  Learning agents get one
    transition per opponent action commit, with the reward attached at the
    opponent's next commit (or at round end).
    """
    core = _backend.core
    R = char.rules
    noop = char.noop_id
    A = char.n_actions
    for ag in agents:
        if len(ag.dataset):
            raise RuntimeError("learning agent dataset must be empty at round start")
    s = initial_state(char).packed()
    history = [s]
    inputs: tuple[list[int], list[int]] = ([], [])
    rlog = RoundLog(seed=tuple(seed_key), transcript=RoundTranscript() if transcript else None)
    calls = [0, 0]
    ndec = [0, 0]
    gens = [0, 0]
    maxc = [0, 0]
    violations = 0
    learners = [p for p in (0, 1) if agents[p].learns]
    pending: dict[int, tuple] = {}  # learner -> (features, action, legal, hp_before)

    def close(p, state, terminal):
        feats, a, legal, before = pending.pop(p)
        q = 1 - p
        hq, hp_ = state[1 + NF * q + HP], state[1 + NF * p + HP]
        prev = before if reward == "delta" else None
        r = reward_signal(char.max_hp, hq, hp_, prev)
        agents[p].dataset.append(TransitionRecord(feats, a, r, terminal, legal))

    while core.status(R, s) == _pycore.ONGOING:
        acts = [noop, noop]
        for p in (0, 1):
            if s[1 + NF * p + ACT] < 0:
                dec = agents[p].act(history, inputs[p], rngs[p])
                bad = _violates(agents[p], dec)
                if bad:
                    violations += 1
                    log.warning("budget violation: P%d frame %d used %d calls / %.2f ms",
                                p + 1, s[0], dec.forward_calls, dec.elapsed_ms)
                acts[p] = noop if bad else int(dec.action)
                calls[p] += dec.forward_calls
                ndec[p] += 1
                gens[p] += dec.generations
                maxc[p] = max(maxc[p], dec.forward_calls)
                rlog.decisions.append(DecisionRecord(s[0], p, acts[p], dec.forward_calls,
                                                     dec.generations, dec.elapsed_ms, bad))
        for p in learners:
            q = 1 - p
            if s[1 + NF * q + ACT] < 0:
                legal = core.legal_actions(R, s, q)
                if acts[q] in legal:
                    if p in pending:
                        close(p, s, False)
                    pending[p] = (np.array(core.features(R, s, q)), acts[q],
                                  tuple(a for a in legal if a < A),
                                  (s[1 + NF * q + HP], s[1 + NF * p + HP]))
        if rlog.transcript is not None:
            rlog.transcript.append(s, acts[0], acts[1])
        inputs[0].append(acts[0])
        inputs[1].append(acts[1])
        s = core.step(R, s, acts[0], acts[1])
        history.append(s)

    for p in learners:
        if p in pending:
            close(p, s, True)
    if rlog.transcript is not None:
        rlog.transcript.append(s, noop, noop)
    st = core.status(R, s)
    hp1, hp2 = s[1 + HP], s[1 + NF + HP]
    res = RoundResult(
        winner=_winner(st), hp_diff=hp1 - hp2, frames=s[0],
        fwd_calls=(calls[0], calls[1]), decisions=(ndec[0], ndec[1]),
        mean_generations=tuple(g / d if d else 0.0 for g, d in zip(gens, ndec)),
        max_calls=(maxc[0], maxc[1]), violations=violations,
    )
    return res, rlog


# --------------------------------------------------------------------------
# series


@dataclass
class ExperimentConfig:
    agents: tuple[AgentHandle, AgentHandle]
    character: str = "balanced"
    rounds: int = 200
    repeats: int = 5
    seed: int = 0
    warmup: int = 0
    delay: int = DEFAULT_DELAY
    round_limit: int | None = None
    roster_size: int | None = None
    budget: DecisionBudget = field(default_factory=DecisionBudget)
    train: TrainConfig = field(default_factory=TrainConfig)
    window: int = 50
    record_decisions: bool = False
    save_models: bool = True
    name: str = ""

    def __post_init__(self):
        self.agents = tuple(a if isinstance(a, AgentHandle) else AgentHandle.from_dict(a)
                            if isinstance(a, dict) else AgentHandle.parse(a) for a in self.agents)
        if len(self.agents) != 2:
            raise ValueError("an experiment needs exactly two agents")
        if isinstance(self.budget, dict):
            self.budget = DecisionBudget(**self.budget)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if self.rounds < 1 or self.repeats < 1:
            raise ValueError("rounds and repeats must be >= 1")
        if self.warmup < 0 or self.delay < 0:
            raise ValueError("warmup and delay must be >= 0")

    def load_character(self) -> Character:
        char = load_character(self.character)
        if self.roster_size is not None and self.roster_size != char.n_actions:
            char = expand_roster(char, self.roster_size)
        if self.round_limit is not None:
            char = char.with_round_limit(self.round_limit)
        return char

    @property
    def label(self) -> str:
        return self.name or f"{self.agents[0].label}_vs_{self.agents[1].label}"

    def to_dict(self) -> dict:
        return {
            "name": self.name, "agents": [a.to_dict() for a in self.agents],
            "character": self.character, "rounds": self.rounds, "repeats": self.repeats,
            "seed": self.seed, "warmup": self.warmup, "delay": self.delay,
            "round_limit": self.round_limit, "roster_size": self.roster_size,
            "budget": self.budget.to_dict(), "train": asdict(self.train),
            "window": self.window, "record_decisions": self.record_decisions,
            "save_models": self.save_models,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(sorted(unknown)[0])
        return cls(**d)


@dataclass
class RepeatOutput:
    repeat: int
    results: list[RoundResult]
    warmup: list[RoundResult]
    decisions: list[DecisionRecord]
    models: dict


@dataclass
class SeriesResult:
    config: ExperimentConfig
    results: list[RoundResult]
    warmup_results: list[RoundResult] = field(default_factory=list)
    decisions: list[DecisionRecord] = field(default_factory=list)
    train_seconds_max: float = 0.0

    @property
    def n(self) -> int:
        return len(self.results)

    @property
    def win_rate(self) -> float:
        return sum(r.p1_score for r in self.results) / self.n

    @property
    def ci95(self) -> float:
        return ci95(self.win_rate, self.n)

    @property
    def mean_hp_diff(self) -> float:
        return float(np.mean([r.hp_diff for r in self.results]))

    @property
    def violations(self) -> int:
        return sum(r.violations for r in self.results + self.warmup_results)

    def by_repeat(self) -> list[list[RoundResult]]:
        out: dict[int, list[RoundResult]] = {}
        for r in self.results:
            out.setdefault(r.repeat, []).append(r)
        return [out[k] for k in sorted(out)]

    def summary(self) -> dict:
        res = self.results
        counts = {w: sum(r.winner == w for r in res) for w in ("P1", "P2", "Draw")}
        return {
            "label": self.config.label,
            "p1": self.config.agents[0].label,
            "p2": self.config.agents[1].label,
            "character": self.config.character,
            "rounds": self.n,
            "win_rate": self.win_rate,
            "ci95": self.ci95,
            "wins": counts,
            "mean_hp_diff": self.mean_hp_diff,
            "mean_frames": float(np.mean([r.frames for r in res])),
            "fwd_calls_p1": sum(r.fwd_calls[0] for r in res),
            "fwd_calls_p2": sum(r.fwd_calls[1] for r in res),
            "max_calls_per_decision": [max(r.max_calls[0] for r in res),
                                       max(r.max_calls[1] for r in res)],
            "budget_violations": self.violations,
            "train_seconds_max": self.train_seconds_max,
        }


def _run_repeat(cfg: ExperimentConfig, r: int) -> RepeatOutput:
    char = cfg.load_character()
    agents = [h.build(char, p, stream(cfg.seed, r, INIT_ROUND, p), cfg.delay,
                      cfg.budget, cfg.train) for p, h in enumerate(cfg.agents)]
    results: list[RoundResult] = []
    warm: list[RoundResult] = []
    decisions: list[DecisionRecord] = []
    total = cfg.warmup + cfg.rounds
    for i in range(total):
        for ag in agents:
            ag.reset_round()
        key = (cfg.seed, r, i)
        rngs = [stream(cfg.seed, r, i, SLOT_ACT[p]) for p in (0, 1)]
        res, rlog = run_round(char, agents, rngs, key, reward=cfg.train.reward)
        tsec = [0.0, 0.0]
        for p, ag in enumerate(agents):
            if ag.om is not None:
                tsec[p] = end_of_round(ag.om, ag.dataset, ag.train_cfg,
                                       stream(cfg.seed, r, i, SLOT_TRAIN[p]))
        res.repeat = r
        res.train_seconds = (tsec[0], tsec[1])
        if i < cfg.warmup:
            res.round = i - cfg.warmup
            warm.append(res)
        else:
            res.round = i - cfg.warmup
            results.append(res)
        if cfg.record_decisions:
            decisions.extend(rlog.decisions)
    models = {p: ag.om.model for p, ag in enumerate(agents)
              if ag.om is not None and ag.om.model is not None}
    return RepeatOutput(r, results, warm, decisions, models)


def replay_round(cfg: ExperimentConfig, repeat: int, index: int,
                 transcript: bool = False) -> tuple[RoundResult, RoundLog]:
    """Re-run round ``index`` (warm-up rounds included) of ``repeat`` from its seeds.

    Without learners a round depends only on its own streams; learning
    agents also need the models trained on the preceding rounds, so those
    are replayed first.
    """
    if not 0 <= index < cfg.warmup + cfg.rounds or not 0 <= repeat < cfg.repeats:
        raise IndexError(f"no round {index} in repeat {repeat}")
    char = cfg.load_character()
    agents = [h.build(char, p, stream(cfg.seed, repeat, INIT_ROUND, p), cfg.delay,
                      cfg.budget, cfg.train) for p, h in enumerate(cfg.agents)]
    start = 0 if any(ag.learns for ag in agents) else index
    for i in range(start, index + 1):
        for ag in agents:
            ag.reset_round()
        rngs = [stream(cfg.seed, repeat, i, SLOT_ACT[p]) for p in (0, 1)]
        out = run_round(char, agents, rngs, (cfg.seed, repeat, i),
                        transcript=transcript and i == index, reward=cfg.train.reward)
        if i < index:
            for p, ag in enumerate(agents):
                if ag.om is not None:
                    end_of_round(ag.om, ag.dataset, ag.train_cfg,
                                 stream(cfg.seed, repeat, i, SLOT_TRAIN[p]))
    return out


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("RHEAOM_THREADS")
    n = requested if requested is not None else 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_series(cfg: ExperimentConfig, out_dir: str | Path | None = None,
               workers: int | None = None) -> SeriesResult:
    """All repeats of one matchup; repeats may run in parallel processes."""
    nw = min(worker_count(workers), cfg.repeats)
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            outs = list(ex.map(_run_repeat, [cfg] * cfg.repeats, range(cfg.repeats)))
    else:
        outs = [_run_repeat(cfg, r) for r in range(cfg.repeats)]
    series = SeriesResult(
        config=cfg,
        results=[x for o in outs for x in o.results],
        warmup_results=[x for o in outs for x in o.warmup],
        decisions=[d for o in outs for d in o.decisions],
    )
    series.train_seconds_max = max((max(x.train_seconds) for o in outs
                                    for x in o.results + o.warmup), default=0.0)
    if out_dir is not None:
        write_artifacts(series, Path(out_dir), {o.repeat: o.models for o in outs})
    return series


# --------------------------------------------------------------------------
# curves and artifacts


def trailing_mean(x: Sequence[float], window: int) -> np.ndarray:
    """Mean of the latest ``window`` values at each index (shorter at the start)."""
    x = np.asarray(x, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    c = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(1, len(x) + 1)
    lo = np.maximum(0, i - window)
    return (c[i] - c[lo]) / (i - lo)


@dataclass
class Curves:
    window: int
    win_rate: np.ndarray  # (repeats, rounds)
    hp_diff: np.ndarray

    @property
    def mean_win_rate(self) -> np.ndarray:
        return self.win_rate.mean(axis=0)

    @property
    def mean_hp_diff(self) -> np.ndarray:
        return self.hp_diff.mean(axis=0)

    def to_csv(self, label: str = "") -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["round", "win_rate", "hp_diff"])
        for i, (a, b) in enumerate(zip(self.mean_win_rate, self.mean_hp_diff)):
            w.writerow([i, _fmt(a), _fmt(b)])
        return out.getvalue()


def convergence_curves(series: SeriesResult, window: int = 50) -> Curves:
    reps = series.by_repeat()
    rounds = min(len(r) for r in reps)
    if window > rounds:
        raise ValueError(f"window {window} exceeds the {rounds} rounds per repeat")
    wr = np.array([trailing_mean([x.p1_score for x in r[:rounds]], window) for r in reps])
    hd = np.array([trailing_mean([x.hp_diff for x in r[:rounds]], window) for r in reps])
    return Curves(window, wr, hd)


def _fmt(v: float) -> str:
    return repr(float(v))


def results_csv(results: Sequence[RoundResult]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in results:
        w.writerow(r.csv_row())
    return out.getvalue()


def read_results_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_artifacts(series: SeriesResult, out: Path, models: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(series.results))
    if series.warmup_results:
        (out / "warmup.csv").write_text(results_csv(series.warmup_results))
    summary = series.summary()
    summary["config"] = series.config.to_dict()
    (out / "series.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    rounds = min(len(r) for r in series.by_repeat())
    window = min(series.config.window, rounds)
    (out / "curves.csv").write_text(convergence_curves(series, window).to_csv())
    if series.decisions:
        with open(out / "decisions.jsonl", "w") as fh:
            for d in series.decisions:
                rec = asdict(d)
                rec.pop("elapsed_ms")
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    if models and series.config.save_models:
        for r, ms in sorted(models.items()):
            for p, m in sorted(ms.items()):
                save_model_det(m, out / "models" / f"repeat{r}_p{p + 1}.model")


def save_model_det(model, path: Path) -> None:
    """Snapshot with a fixed creation stamp so reruns are byte-identical."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(model, created="1970-01-01T00:00:00+00:00"))
