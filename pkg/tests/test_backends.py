"""The compiled and pure-Python kernels must agree bit for bit."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rheaom import _backend
from rheaom.engine import load_character
from rheaom.opponent_model import LinearSoftmaxModel, ModelKind, OpponentModel

from helpers import random_state

pytestmark = pytest.mark.skipif("cython" not in _backend.available(),
                                reason="compiled core not built")

CHAR = load_character("balanced")
PY, CY = _backend.get("python"), _backend.get("cython") if "cython" in _backend.available() else None


def _rules():
    return CHAR.rules_for(PY), CHAR.rules_for(CY)


def _oms():
    m = LinearSoftmaxModel.create("pg", CHAR.n_actions, np.random.default_rng(1))
    q = LinearSoftmaxModel.create("q", CHAR.n_actions, np.random.default_rng(2))
    return [OpponentModel(ModelKind.NONE).packed(), OpponentModel(ModelKind.RANDOM).packed(),
            m.packed(), q.packed()]


def _rng(seed):
    return np.random.default_rng(seed)


states = st.builds(lambda seed, n: random_state(CHAR, seed, n),
                   st.integers(0, 2**31), st.integers(0, 500))


@settings(max_examples=150, deadline=None)
@given(states, st.integers(0, 16), st.integers(0, 16))
def test_step_parity(s, a1, a2):
    rp, rc = _rules()
    assert PY.step(rp, s, a1, a2) == CY.step(rc, s, a1, a2)
    for p in (0, 1):
        assert PY.legal_actions(rp, s, p) == CY.legal_actions(rc, s, p)
        assert tuple(PY.features(rp, s, p)) == tuple(CY.features(rc, s, p))
        assert PY.score(rp, s, p) == CY.score(rc, s, p)
    assert PY.status(rp, s) == CY.status(rc, s)
    assert PY.advance_gene(rp, s, a1 % 16, a2 % 16, 0) == CY.advance_gene(rc, s, a1 % 16, a2 % 16, 0)


@settings(max_examples=30, deadline=None)
@given(states, st.integers(0, 3), st.integers(0, 2**31))
def test_rhea_plan_parity(s, om_i, seed):
    rp, rc = _rules()
    om = _oms()[om_i]
    params = (7, 1, 4, 0.85, 0.5, 0, 280)
    a = PY.rhea_plan(rp, s, 0, om, params, _rng(seed), None)
    b = CY.rhea_plan(rc, s, 0, om, params, _rng(seed), None)
    assert a[0] == b[0] and tuple(a[1]) == tuple(b[1]) and a[2:] == b[2:]


@settings(max_examples=30, deadline=None)
@given(states, st.integers(0, 3), st.integers(0, 2**31), st.sampled_from([0, 1]))
def test_mcts_plan_parity(s, om_i, seed, p):
    rp, rc = _rules()
    om = _oms()[om_i]
    params = (1.414, 4, 0, 280)
    assert PY.mcts_plan(rp, s, p, om, params, _rng(seed)) == CY.mcts_plan(rc, s, p, om, params, _rng(seed))


@settings(max_examples=40, deadline=None)
@given(states, st.integers(0, 3), st.integers(0, 2**31),
       st.lists(st.integers(0, 15), min_size=0, max_size=15))
def test_compensate_and_rollout_parity(s, om_i, seed, own):
    rp, rc = _rules()
    om = _oms()[om_i]
    assert PY.compensate(rp, s, 0, own, om, _rng(seed)) == CY.compensate(rc, s, 0, own, om, _rng(seed))
    genes = own[:4] or [0]
    ra = PY.rollout(rp, s, genes, 1, om, _rng(seed))
    rb = CY.rollout(rc, s, genes, 1, om, _rng(seed))
    assert ra == rb
    assert PY.predict(rp, s, 1, om, _rng(seed)) == CY.predict(rc, s, 1, om, _rng(seed))


def test_backend_selection():
    assert _backend.get() is _backend.core
    with pytest.raises(ValueError):
        _backend.get("fortran")
    env = dict(os.environ, RHEAOM_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import rheaom; print(rheaom.BACKEND)"],
                         capture_output=True, text=True, env=env)
    assert out.stdout.strip() == "python"
