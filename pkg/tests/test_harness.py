from dataclasses import asdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rheaom.agents import AgentHandle, NoopAgent, RandomAgent
from rheaom.harness import (
    SLOT_ACT,
    ExperimentConfig,
    RoundResult,
    SeriesResult,
    ci95,
    convergence_curves,
    read_results_csv,
    replay_round,
    run_round,
    run_series,
    stream,
    trailing_mean,
    worker_count,
)


def cfg(p1="rhea", p2="random", **kw):
    base = {"agents": [p1, p2], "rounds": 3, "repeats": 1, "seed": 3, "round_limit": 300}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def test_noop_round_is_a_full_length_draw(char):
    agents = [NoopAgent(char, 0), NoopAgent(char, 1)]
    res, _ = run_round(char, agents, [np.random.default_rng(0)] * 2)
    assert res.winner == "Draw" and res.hp_diff == 0
    assert res.frames == char.round_limit


def test_scripted_beats_random_over_100_rounds():
    s = run_series(ExperimentConfig.from_dict(
        {"agents": ["scripted", "random"], "rounds": 100, "repeats": 1, "seed": 0}))
    wins = sum(r.winner == "P1" for r in s.results)
    print(f"Scripted vs Random: {wins}/100 wins")
    assert wins > 50


def test_round_log_bytes_are_deterministic(char):
    def once():
        agents = [RandomAgent(char, 0), RandomAgent(char, 1)]
        rngs = [stream(9, 0, 0, p) for p in SLOT_ACT]
        return run_round(char, agents, rngs, (9, 0, 0), transcript=True)[1].to_jsonl()
    assert once() == once()


def test_series_counts_and_determinism():
    c = cfg(rounds=4, repeats=2, warmup=1)
    a, b = run_series(c), run_series(c)
    assert len(a.results) == 8 and len(a.warmup_results) == 2
    assert [asdict(r) | {"train_seconds": 0} for r in a.results] == \
        [asdict(r) | {"train_seconds": 0} for r in b.results]


def test_default_protocol_size():
    c = ExperimentConfig(agents=(AgentHandle("noop"), AgentHandle("noop")), round_limit=1)
    assert (c.rounds, c.repeats) == (200, 5)
    assert len(run_series(c).results) == 1000


def test_ci_formula():
    assert ci95(0.5, 400) == pytest.approx(0.049, abs=1e-12)
    assert ci95(1.0, 50) == 0.0


def test_win_rate_counts_draws_half():
    rows = [RoundResult("P1", 5, 10), RoundResult("Draw", 0, 10), RoundResult("P2", -5, 10),
            RoundResult("P1", 1, 10)]
    s = SeriesResult(cfg(), rows)
    assert s.win_rate == 0.625
    assert s.ci95 == ci95(0.625, 4)


def test_win_rate_recomputable_from_csv(tmp_path):
    s = run_series(cfg(rounds=6), out_dir=tmp_path)
    rows = read_results_csv(tmp_path / "results.csv")
    score = {"P1": 1.0, "Draw": 0.5, "P2": 0.0}
    assert np.mean([score[r["winner"]] for r in rows]) == s.win_rate
    assert list(rows[0]) == ["repeat", "round", "winner", "hp_diff", "frames",
                             "fwd_calls_p1", "fwd_calls_p2"]
    assert (tmp_path / "curves.csv").exists() and (tmp_path / "series.json").exists()


# --------------------------------------------------------------------------
# curves


def _series(scores):
    res = []
    for i, x in enumerate(scores):
        w = {1.0: "P1", 0.5: "Draw", 0.0: "P2"}[x]
        res.append(RoundResult(w, int(10 * (x - 0.5)), 100, round=i))
    return SeriesResult(cfg(), res)


def test_constant_wins_give_flat_curve():
    c = convergence_curves(_series([1.0] * 60), 50)
    assert (c.mean_win_rate == 1.0).all()


def test_window_one_is_raw_series():
    x = [1.0, 0.0, 0.5, 1.0, 0.0]
    c = convergence_curves(_series(x), 1)
    assert list(c.mean_win_rate) == x


def test_window_larger_than_rounds_rejected():
    with pytest.raises(ValueError):
        convergence_curves(_series([1.0] * 10), 50)


def test_trailing_mean_against_direct():
    x = np.random.default_rng(0).normal(size=40)
    want = [x[max(0, i - 6):i + 1].mean() for i in range(40)]
    assert np.allclose(trailing_mean(x, 7), want, atol=1e-12)


# --------------------------------------------------------------------------
# invariants


def test_seed_isolation():
    short = run_series(cfg("rhea:pg", "scripted", rounds=3))
    long = run_series(cfg("rhea:pg", "scripted", rounds=6))
    key = lambda r: (r.winner, r.hp_diff, r.frames, r.fwd_calls)  # noqa: E731
    assert [key(r) for r in short.results] == [key(r) for r in long.results[:3]]


def test_forward_call_conservation():
    s = run_series(cfg("rhea", "mcts", rounds=2, record_decisions=True))
    per_player = [sum(d.forward_calls for d in s.decisions if d.player == p) for p in (0, 1)]
    assert per_player == [sum(r.fwd_calls[p] for r in s.results) for p in (0, 1)]
    assert s.violations == 0


def test_datasets_must_start_empty(char):
    from rheaom.opponent_model import TransitionRecord
    agents = [NoopAgent(char, 0), NoopAgent(char, 1)]
    agents[0].dataset.append(TransitionRecord(np.zeros(18), 0, 0.0))
    with pytest.raises(RuntimeError):
        run_round(char, agents, [np.random.default_rng(0)] * 2)


def test_learner_records_opponent_commits(char):
    h = AgentHandle.parse("rhea:sl")
    learner = h.build(char, 0, np.random.default_rng(0))
    opp = RandomAgent(char, 1)
    res, log = run_round(char, [learner, opp], [np.random.default_rng(1), np.random.default_rng(2)])
    ds = learner.dataset
    assert 0 < len(ds) <= res.decisions[1]
    assert ds[len(ds) - 1].terminal and not any(r.terminal for r in list(ds)[:-1])
    # decisions that were illegal in the present state never commit
    moves = iter(d.action for d in log.decisions if d.player == 1)
    assert all(any(r.action == m for m in moves) for r in ds)
    assert all(-1.0 <= r.reward <= 1.0 for r in ds)


def test_replay_reproduces_round_log():
    c = cfg("rhea:pg", "random", rounds=3, record_decisions=True)
    s = run_series(c)
    n0 = sum(s.results[0].decisions) + sum(s.results[1].decisions)
    n = sum(s.results[2].decisions)
    res, log = replay_round(c, 0, 2)
    strip = lambda d: {k: v for k, v in asdict(d).items() if k != "elapsed_ms"}  # noqa: E731
    assert [strip(d) for d in log.decisions] == [strip(d) for d in s.decisions[n0:n0 + n]]
    assert (res.winner, res.hp_diff, res.frames) == \
        (s.results[2].winner, s.results[2].hp_diff, s.results[2].frames)
    assert replay_round(c, 0, 2)[1].to_jsonl() == log.to_jsonl()
    with pytest.raises(IndexError):
        replay_round(c, 0, 3)


def test_parallel_repeats_match_serial():
    c = cfg("rhea:q", "random", rounds=2, repeats=2)
    a, b = run_series(c, workers=1), run_series(c, workers=2)
    assert [(r.winner, r.hp_diff) for r in a.results] == [(r.winner, r.hp_diff) for r in b.results]


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("RHEAOM_THREADS", "2")
    assert worker_count(8) == 2
    monkeypatch.delenv("RHEAOM_THREADS")
    assert worker_count(None) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        cfg(rounds=0)
    with pytest.raises(ValueError):
        cfg(repeats=0)
    c = cfg("rhea:pg", "mcts", rounds=5)
    assert ExperimentConfig.from_dict(c.to_dict()) == c


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["random", "scripted", "noop"]))
def test_round_result_consistency(seed, opp):
    s = run_series(cfg("random", opp, rounds=1, seed=seed, round_limit=600))
    r = s.results[0]
    assert r.frames <= 600
    if r.winner == "P1":
        assert r.hp_diff > 0 or r.frames < 600
    if r.winner == "Draw":
        assert r.hp_diff == 0
