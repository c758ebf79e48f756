import json
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rheaom import _backend, _pycore
from rheaom.engine import Stage, initial_state, load_character
from rheaom.opponent_model import ModelKind, OpponentModel
from rheaom.planner import (
    BudgetMode,
    DecisionBudget,
    EvolutionConfig,
    Individual,
    Population,
    RheaPlanner,
    diversity,
    evaluate_population,
    evolve_generation,
    plan,
    score_fitness,
)

from helpers import placed, random_state

NONE = OpponentModel(ModelKind.NONE)
_CHAR = load_character("balanced")


# --------------------------------------------------------------------------
# score and diversity


def test_score_cases(char):
    s = initial_state(char)
    lost = replace(s, p1=replace(s.p1, hp=0))
    assert score_fitness(char, lost, 0) == -1.0
    assert score_fitness(char, lost, 1) == 1.0
    mid = replace(s, p1=replace(s.p1, hp=300), p2=replace(s.p2, hp=100))
    assert score_fitness(char, mid, 0) == 0.5
    assert score_fitness(char, mid, 1) == -0.5
    assert score_fitness(char, s, 0) == 0.0
    timeout_win = replace(mid, frame=char.round_limit)
    assert score_fitness(char, timeout_win, 0) == 1.0


def test_diversity_extremes():
    same = [[3, 1, 4, 1]] * 7
    assert diversity(same[0], same) == 0.0
    unique = [[i, i, i, i] for i in range(7)]
    assert diversity(unique[2], unique) == pytest.approx(6 / 7, abs=1e-15)


def test_diversity_hand_example():
    a, b, c, d = 0, 1, 2, 3
    pop = Population.from_lists([(a, b), (a, c), (d, c)])
    assert diversity(Individual([a, b]), pop) == 0.5


def test_diversity_requires_membership():
    with pytest.raises(ValueError):
        diversity([9, 9], [[0, 0], [1, 1]])


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 9), st.integers(1, 5), st.data())
def test_diversity_range(n, l, data):
    genes = data.draw(st.lists(st.lists(st.integers(0, 5), min_size=l, max_size=l),
                               min_size=n, max_size=n))
    i = data.draw(st.integers(0, n - 1))
    d = _pycore.diversity(genes, i)
    assert 0.0 <= d <= 1.0 - 1.0 / n + 1e-12


# --------------------------------------------------------------------------
# evaluation


def test_two_identical_one_gene_individuals(char):
    s = placed(char, 100, 400, hp2=320)  # one STAND gene keeps the 0.2 hp gap
    pop = Population.from_lists([[0], [0]])
    cfg = EvolutionConfig(n=2, k=1, l=1, lam=0.5)
    fit, calls = evaluate_population(char, pop, s, NONE, cfg, np.random.default_rng(0))
    assert fit == [0.1, 0.1]
    assert calls == 2


@pytest.mark.parametrize("lam", [0.0, 0.3, 0.5, 0.9, 1.0])
def test_fitness_is_linear_in_lambda(char, lam):
    rng = np.random.default_rng(7)
    s = placed(char, 200, 260)
    genes = [[int(rng.integers(16)) for _ in range(4)] for _ in range(7)]
    cfg = SimpleNamespace(lam=lam, budget=DecisionBudget())  # lambda = 1 is test-only
    pop = Population.from_lists(genes)
    fit, _ = evaluate_population(char, pop, s, NONE, cfg, np.random.default_rng(3))
    r = np.random.default_rng(3)
    for i, g in enumerate(genes):
        sc, _, _ = _pycore.rollout(char.py_rules, s.packed(), g, 0, NONE.packed(), r)
        d = _pycore.diversity(genes, i)
        assert fit[i] == (1.0 - lam) * sc + lam * d
    assert [ind.fitness for ind in pop.individuals] == fit


def test_evaluation_skips_when_budget_runs_out(char):
    s = placed(char, 200, 260)
    genes = [[1, 2, 3, 4]] * 5
    pop = Population.from_lists(genes, [None, 0.3, None, None, None])
    cfg = EvolutionConfig(n=5, k=1, budget=DecisionBudget(BudgetMode.CALLS, 10))
    fit, calls = evaluate_population(char, pop, s, NONE, cfg, np.random.default_rng(0),
                                     calls=0, enforce_budget=True)
    assert fit[1] == 0.3  # already evaluated, kept
    assert fit[0] is not None and fit[2] is not None
    assert fit[3] is None and fit[4] is None
    assert calls == 8


def test_sort_is_stable_and_unset_last():
    pop = Population.from_lists([[0], [1], [2], [3], [4]], [0.5, None, 0.7, 0.5, 0.7])
    out = pop.sorted()
    assert out.genes == [[2], [4], [0], [3], [1]]
    assert out.fitness == [0.7, 0.7, 0.5, 0.5, None]


# --------------------------------------------------------------------------
# evolution


def test_elites_preserved_and_offspring_unset(char):
    pop = Population.from_lists([[1, 2, 3, 4], [5, 6, 7, 8], [9, 10, 11, 12]], [0.9, 0.4, 0.1])
    cfg = EvolutionConfig(n=3, k=1)
    out = evolve_generation(char, pop, cfg, [0, 1], np.random.default_rng(1))
    assert out.genes[0] == [1, 2, 3, 4] and out.fitness[0] == 0.9
    assert out.fitness[1:] == [None, None]
    assert len(out) == 3


def test_crossover_takes_each_gene_from_either_parent_half_the_time(char):
    pop = Population.from_lists([[1] * 4, [2] * 4], [1.0, 0.0])
    cfg = SimpleNamespace(k=1, p_m=0.0)
    rng = np.random.default_rng(5)
    from_elite = 0
    trials = 4000
    for _ in range(trials):
        child = evolve_generation(char, pop, cfg, [0], rng).genes[1]
        assert set(child) <= {1, 2}
        from_elite += child.count(1)
    frac = from_elite / (4 * trials)
    assert abs(frac - 0.5) < 4 * np.sqrt(0.25 / (4 * trials))


def test_identical_parents_without_mutation_reproduce(char):
    pop = Population.from_lists([[3, 1, 4, 1]] * 4, [0.2, 0.1, 0.0, -0.1])
    out = evolve_generation(char, pop, SimpleNamespace(k=2, p_m=0.0), [0], np.random.default_rng(0))
    assert out.genes == [[3, 1, 4, 1]] * 4


def test_mutation_changes_at_most_one_gene(char):
    rng = np.random.default_rng(11)
    legal0 = [0, 1, 2]
    for _ in range(300):
        pop = Population.from_lists([[5] * 4, [5] * 4], [1.0, 0.0])
        child = evolve_generation(char, pop, EvolutionConfig(n=2, k=1, p_m=0.85), legal0,
                                  rng).genes[1]
        diff = [j for j in range(4) if child[j] != 5]
        assert len(diff) <= 1
        if diff == [0]:
            assert child[0] in legal0
        for g in child:
            assert 0 <= g < char.n_actions


# --------------------------------------------------------------------------
# plan


def test_plan_matches_manual_composition(char):
    """plan == init -> evaluate -> sort -> (evolve -> evaluate -> sort)* in the reference kernel."""
    s = placed(char, 180, 250)
    cfg = EvolutionConfig()
    res = plan(char, s, NONE, cfg, np.random.default_rng(42))

    R = char.py_rules
    rng = np.random.default_rng(42)
    legal0 = _pycore.legal_actions(R, s.packed(), 0)
    genes = _pycore.init_population(R, cfg.n, cfg.l, legal0, rng)
    pop = Population.from_lists(genes)
    _, calls = evaluate_population(char, pop, s, NONE, cfg, rng)
    pop = pop.sorted()
    best = [pop.fitness[0]]
    gens = 0
    while calls + cfg.l <= cfg.budget.limit:
        pop = evolve_generation(char, pop, cfg, legal0, rng)
        _, calls = evaluate_population(char, pop, s, NONE, cfg, rng, calls=calls,
                                       enforce_budget=True)
        pop = pop.sorted()
        best.append(pop.fitness[0])
        gens += 1
    assert (res.action, list(res.genes), res.fitness) == (pop.genes[0][0], pop.genes[0],
                                                          pop.fitness[0])
    assert (res.generations, res.forward_calls) == (gens, calls)
    # elitism: the best fitness never drops
    assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))


def test_plan_finds_unique_one_gene_win(char):
    # only KICK reaches at distance 60, and the opponent has one hp left
    s = placed(char, 200, 260, hp2=1)
    R = char.py_rules
    legal = _pycore.legal_actions(R, s.packed(), 0)
    winners = [a for a in legal
               if _pycore.status(R, _pycore.advance_gene(R, s.packed(), a, 0, 0)[0]) == _pycore.P1_WIN]
    assert winners == [char.action_id("KICK")]
    cfg = EvolutionConfig(l=1)
    for seed in range(30):
        assert plan(char, s, NONE, cfg, np.random.default_rng(seed)).action == winners[0]


def test_plan_is_deterministic(char):
    s = placed(char, 150, 300)
    a = plan(char, s, NONE, EvolutionConfig(), np.random.default_rng(9))
    b = plan(char, s, NONE, EvolutionConfig(), np.random.default_rng(9))
    assert a == b


def test_zero_budget_keeps_initial_evaluation(char):
    s = placed(char, 150, 300)
    params = (7, 1, 4, 0.85, 0.5, _pycore.MODE_CALLS, 0)
    a, genes, fit, gens, calls = _backend.core.rhea_plan(char.rules, s.packed(), 0,
                                                         NONE.packed(), params,
                                                         np.random.default_rng(1), None)
    assert gens == 0 and calls == 28
    rng = np.random.default_rng(1)
    R = char.py_rules
    init = _pycore.init_population(R, 7, 4, _pycore.legal_actions(R, s.packed(), 0), rng)
    f = [None] * 7
    _pycore.evaluate(R, s.packed(), 0, _pycore._Om(NONE.packed()), rng, init, f, 0.5)
    g, f = _pycore.sort_population(init, f)
    assert (a, genes, fit) == (g[0][0], g[0], f[0])


def test_plan_on_finished_round_returns(char):
    s = placed(char, 150, 300, hp2=0)
    res = plan(char, s, NONE, EvolutionConfig(), np.random.default_rng(0))
    assert res.generations == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(5, 400), st.integers(1, 400))
def test_budget_never_exceeded(seed, frames, limit):
    s = random_state(_CHAR, seed, frames)
    cfg = EvolutionConfig(budget=DecisionBudget(BudgetMode.CALLS, limit))
    res = plan(_CHAR, s, OpponentModel.create(ModelKind.SL, 16, np.random.default_rng(seed)),
               cfg, np.random.default_rng(seed))
    # the initial evaluation (n*l calls) is always granted
    assert res.forward_calls <= max(limit, cfg.n * cfg.l)
    assert res.action in _pycore.legal_actions(_CHAR.rules, s, 0) or \
        s[1 + _pycore.STG] == Stage.DOWN or res.action == _CHAR.noop_id


def test_seed_genes_are_shifted(char):
    s = placed(char, 150, 300)
    R = char.py_rules
    legal0 = _pycore.legal_actions(R, s.packed(), 0)
    g = _pycore.init_population(R, 3, 4, legal0, np.random.default_rng(0), seed_genes=[9, 1, 2, 3])
    assert g[0][:3] == [1, 2, 3]
    with pytest.raises(ValueError):
        plan(char, s, NONE, EvolutionConfig(), np.random.default_rng(0), seed_genes=[1, 2])


def test_shift_buffer_planner_and_trace(char):
    s = placed(char, 150, 300)
    cfg = EvolutionConfig(shift_buffer=True)
    pl = RheaPlanner(char, cfg, trace=True)
    r1 = pl.decide(s, NONE, np.random.default_rng(0))
    assert pl.last_best == r1.genes
    pl.decide(s, NONE, np.random.default_rng(1))
    lines = [json.loads(x) for x in pl.trace_jsonl().splitlines()]
    assert len(lines) == 2
    assert set(lines[0]) == {"frame", "generations", "forward_calls", "best_fitness",
                             "chosen_action"}
    pl.reset()
    assert pl.last_best is None


# --------------------------------------------------------------------------
# configuration


@pytest.mark.parametrize("kw", [dict(k=0), dict(k=7), dict(l=0), dict(p_m=0.0), dict(p_m=1.0),
                                dict(lam=1.0), dict(lam=-0.1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        EvolutionConfig(**kw)


def test_budget_validation_and_defaults():
    assert DecisionBudget().limit == 280
    assert DecisionBudget(BudgetMode.MS).limit == 16
    with pytest.raises(ValueError):
        DecisionBudget(BudgetMode.CALLS, 0)


def test_config_dict_round_trip():
    cfg = EvolutionConfig(n=9, k=2, lam=0.25, budget=DecisionBudget("ms", 10))
    d = cfg.to_dict()
    assert d["lambda"] == 0.25 and "lam" not in d
    assert EvolutionConfig.from_dict(json.loads(json.dumps(d))) == cfg


def test_wall_clock_mode_plans(char):
    cfg = EvolutionConfig(budget=DecisionBudget(BudgetMode.MS, 5))
    res = plan(char, placed(char, 150, 300), NONE, cfg, np.random.default_rng(0))
    assert res.generations >= 0 and res.forward_calls >= cfg.n * cfg.l
