import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rheaom.opponent_model import (
    EPS,
    LinearSoftmaxModel,
    ModelKind,
    OpponentModel,
    RoundDataset,
    TrainConfig,
    TransitionRecord,
    adam_step,
    discounted_returns,
    end_of_round,
    log_prob_grad,
    n_step_return,
    pg_loss_and_grad,
    policy_distribution,
    predict_action,
    q_loss_and_grad,
    reward_signal,
    sl_loss_and_grad,
    softmax,
    train_pg,
    train_q,
    train_sl,
    xavier_init,
)


def model(kind="sl", A=4, F=3, seed=0):
    return LinearSoftmaxModel.create(kind, A, np.random.default_rng(seed), n_features=F)


def zero_model(kind="sl", A=4, F=3):
    m = model(kind, A, F)
    m.W[:] = 0.0
    return m


def dataset(rows):
    """rows: (features, action, reward[, terminal[, legal]])"""
    return RoundDataset([TransitionRecord(np.asarray(r[0], float), *r[1:]) for r in rows])


# --------------------------------------------------------------------------
# init and inference


def test_xavier_bound():
    assert np.sqrt(6 / 74) == pytest.approx(0.28475, abs=1e-5)
    W = xavier_init(18, 56, np.random.default_rng(3))
    assert W.shape == (56, 18)
    assert np.abs(W).max() <= np.sqrt(6 / 74)
    assert np.array_equal(W, xavier_init(18, 56, np.random.default_rng(3)))
    with pytest.raises(ValueError):
        xavier_init(0, 4, np.random.default_rng(0))


def test_create_has_zero_bias_and_moments():
    m = model(A=56, F=18)
    assert not m.b.any() and not m.m_W.any() and not m.v_b.any() and m.t == 0


def test_policy_distribution_cases():
    m = zero_model()
    assert np.allclose(policy_distribution(m, [0.2, 0.4, 0.9]), 0.25)
    z = np.random.default_rng(1).normal(size=9)
    assert np.allclose(softmax(z), softmax(z + 123.0), atol=1e-15)
    for A in (2, 16, 56):
        z = np.zeros(A)
        z[A // 2] = 10.0
        assert softmax(z)[A // 2] > 0.99


def test_predict_action_rules():
    f = np.ones(3)
    assert predict_action(zero_model(), f, {3, 1, 2}) == 1
    assert predict_action(model(seed=5), f, {2}) == 2
    assert predict_action(ModelKind.NONE, f, {1, 2}, noop=0) == 0
    r1, r2 = np.random.default_rng(4), np.random.default_rng(4)
    a = [predict_action(ModelKind.RANDOM, f, range(6), r1) for _ in range(30)]
    b = [predict_action(ModelKind.RANDOM, f, range(6), r2) for _ in range(30)]
    assert a == b and set(a) <= set(range(6))
    with pytest.raises(ValueError):
        predict_action(ModelKind.RANDOM, f, range(3))
    with pytest.raises(ValueError):
        predict_action(zero_model(), f, [])


def test_q_inference_uses_raw_outputs():
    m = zero_model("q")
    m.b[:] = [0.0, -1.0, 0.5, 0.5]
    assert predict_action(m, np.zeros(3), {0, 1, 2, 3}) == 2
    assert predict_action(m, np.zeros(3), {0, 1}) == 0


def test_learned_kind_needs_parameters():
    with pytest.raises(ValueError):
        OpponentModel(ModelKind.PG)
    assert OpponentModel.create("random", 16, np.random.default_rng(0)).model is None


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-50, 50)),
       arrays(np.float64, 3, elements=st.floats(0, 1)), st.floats(-1e3, 1e3))
def test_prediction_invariant_to_logit_shift(W, f, c):
    m = zero_model()
    m.W = np.vstack([W, np.zeros((1, 3))])[:4]
    legal = {0, 1, 2, 3}
    a = predict_action(m, f, legal)
    m.b = m.b + c
    z = m.logits(f)
    # the shifted argmax is the same unless rounding created a new tie
    assert a == predict_action(m, f, legal) or np.isclose(z[a], z.max())


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(-700, 700)))
def test_softmax_is_a_distribution(z):
    p = softmax(z)
    assert (p >= 0).all()
    assert abs(p.sum() - 1.0) < 1e-9


# --------------------------------------------------------------------------
# Adam


def test_first_adam_step_closed_form():
    for g in (0.3, -2.5):
        m = zero_model(A=1, F=1)
        before = m.b.copy()
        assert adam_step(m, np.zeros((1, 1)), np.array([g]), 1e-4)
        delta = m.b - before
        assert delta[0] == pytest.approx(-1e-4 * g / (abs(g) + EPS), rel=1e-12)
        assert m.t == 1


def test_zero_gradient_leaves_parameters():
    m = model()
    W, b = m.W.copy(), m.b.copy()
    adam_step(m, np.zeros_like(W), np.zeros_like(b), 1e-4)
    assert np.array_equal(W, m.W) and np.array_equal(b, m.b)


def test_adam_is_deterministic():
    g = np.random.default_rng(2).normal(size=(4, 3))
    a, b = model(), model()
    for m in (a, b):
        for _ in range(2):
            adam_step(m, g, g[:, 0], 1e-3)
    assert np.array_equal(a.W, b.W) and np.array_equal(a.v_b, b.v_b)


def test_non_finite_gradient_is_skipped(caplog):
    m = model()
    W = m.W.copy()
    g = np.zeros_like(W)
    g[1, 1] = np.nan
    with caplog.at_level(logging.WARNING, logger="rheaom.opponent_model"):
        assert not adam_step(m, g, np.zeros(4), 1e-4)
    assert np.array_equal(W, m.W) and m.t == 0
    assert "non-finite" in caplog.text
    with pytest.raises(ValueError):
        adam_step(m, np.zeros((2, 2)), np.zeros(4), 1e-4)


# --------------------------------------------------------------------------
# returns and rewards


def test_n_step_hand_trajectory():
    q = zero_model("q")
    q.b[:] = [0.5, 0.1, 0.9, -1.0]
    ds = dataset([([0, 0, 0], 0, 0.1), ([0, 0, 0], 1, -0.2), ([0, 0, 0], 0, 0.0, False, (0, 1))])
    # 0.9 is only reachable through an illegal action
    assert abs(n_step_return(ds, 0, 2, 0.9, q) - 0.325) < 1e-12


def test_n_step_truncation():
    q = zero_model("q")
    q.b[:] = 7.0
    ds = dataset([([0, 0, 0], 0, 1.0, True), ([0, 0, 0], 0, 5.0)])
    assert n_step_return(ds, 0, 1, 0.9, q) == 1.0
    ds = dataset([([0, 0, 0], 0, 0.3), ([0, 0, 0], 0, 5.0)])
    assert n_step_return(ds, 0, 1, 0.0, q) == 0.3
    with pytest.raises(IndexError):
        n_step_return(ds, 2, 1, 0.9, q)


def test_discounted_return_hand_value():
    assert abs(discounted_returns([1, 0, 1], 0.9)[0] - 1.81) < 1e-12


def test_reward_signal_cases():
    assert abs(reward_signal(400, 350, 300) - 0.125) < 1e-12
    assert reward_signal(400, 200, 200) == 0.0
    assert reward_signal(400, 0, 400) == -1.0
    assert reward_signal(400, 390, 400, prev=(400, 400)) == -10 / 400


# --------------------------------------------------------------------------
# gradients against central differences


def _fd(loss, W, b, h=1e-6):
    gW, gb = np.zeros_like(W), np.zeros_like(b)
    for P, G in ((W, gW), (b, gb)):
        for i in np.ndindex(P.shape):
            old = P[i]
            P[i] = old + h
            up = loss()
            P[i] = old - h
            dn = loss()
            P[i] = old
            G[i] = (up - dn) / (2 * h)
    return gW, gb


def _rel(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-8)


@pytest.mark.parametrize("which", ["sl", "q", "pg"])
def test_gradient_matches_finite_differences(which):
    rng = np.random.default_rng(11)
    for _ in range(20):
        W, b = rng.normal(size=(4, 3)), rng.normal(size=4)
        F, a = rng.random((6, 3)), rng.integers(0, 4, 6)
        y = rng.normal(size=6)
        fn = {"sl": lambda: sl_loss_and_grad(W, b, F, a),
              "q": lambda: q_loss_and_grad(W, b, F, a, y),
              "pg": lambda: pg_loss_and_grad(W, b, F, a, y)}[which]
        _, gW, gb = fn()
        nW, nb = _fd(lambda: fn()[0], W, b)
        assert _rel(gW, nW) < 1e-5 and _rel(gb, nb) < 1e-5


def test_log_prob_gradient():
    rng = np.random.default_rng(4)
    W, b, f = rng.normal(size=(4, 3)), rng.normal(size=4), rng.random(3)
    gW, gb = log_prob_grad(W, b, f, 2)
    nW, nb = _fd(lambda: np.log(softmax(W @ f + b)[2]), W, b)
    assert _rel(gW, nW) < 1e-5 and _rel(gb, nb) < 1e-5


def test_loss_identities():
    m = model()
    f = np.array([[0.1, 0.5, 0.9]])
    loss, _, _ = sl_loss_and_grad(m.W, m.b, f, [2])
    assert loss == pytest.approx(-np.log(policy_distribution(m, f[0])[2]), rel=1e-12)
    q = m.logits(f[0])[1]
    assert q_loss_and_grad(m.W, m.b, f, [1], [q])[0] == 0.0


# --------------------------------------------------------------------------
# trainers


def test_sl_single_pattern():
    # the pattern is learned at a faster rate than the default online one
    f = np.array([1.0, 1.0, 0.0, 0.0, 0.7, 0.0, 0.3, 0.0, 1, 0, 0, 0, 1, 0, 0, 0, 0.4, 0.5])
    m = LinearSoftmaxModel.create("sl", 16, np.random.default_rng(0))
    train_sl(m, dataset([(f, 5, 0.0)]), TrainConfig(lr=1e-3, epochs_per_round=2000),
             np.random.default_rng(0))
    assert m.t == 2000
    p = policy_distribution(m, f)
    assert int(np.argmax(p)) == 5 and p[5] >= 0.95


def test_q_single_transition_converges():
    m = model("q")
    f = [0.3, 0.6, 0.2]
    ds = dataset([(f, 1, 0.4, True)])
    train_q(m, ds, TrainConfig(epochs_per_round=30000), np.random.default_rng(0))
    assert abs(m.logits(f)[1] - 0.4) < 1e-3


def test_q_targets_frozen_per_epoch():
    ds = dataset([([0.2, 0.1, 0.5], 0, 0.1), ([0.9, 0.3, 0.1], 2, -0.1), ([0.4, 0.4, 0.4], 3, 0.2)])
    cfg = TrainConfig(lr=1e-2, n_step=2, gamma=0.9, minibatch=1, epochs_per_round=3)
    a = model("q")
    train_q(a, ds, cfg, np.random.default_rng(1))
    b = model("q")
    rng = np.random.default_rng(1)
    F, acts, _ = ds.arrays()
    for _ in range(3):
        snap = b.copy()
        y = [n_step_return(ds, t, 2, 0.9, snap) for t in range(3)]
        for i in rng.permutation(3):
            _, gW, gb = q_loss_and_grad(b.W, b.b, F[[i]], acts[[i]], [y[i]])
            adam_step(b, gW, gb, 1e-2)
    assert np.array_equal(a.W, b.W)


def test_pg_positive_return_raises_probability():
    m = model("pg")
    f = [0.5, 0.2, 0.8]
    before = policy_distribution(m, f)[3]
    train_pg(m, dataset([(f, 3, 0.5, True)]), TrainConfig(epochs_per_round=1), np.random.default_rng(0))
    assert policy_distribution(m, f)[3] > before


def test_empty_dataset_is_noop():
    for kind, fn in (("sl", train_sl), ("q", train_q), ("pg", train_pg)):
        m = model(kind)
        W = m.W.copy()
        fn(m, RoundDataset(), TrainConfig(), np.random.default_rng(0))
        assert np.array_equal(W, m.W) and m.t == 0


def test_end_of_round_dispatch_and_clear():
    rows = [([0.1, 0.2, 0.3], 1, 0.0), ([0.3, 0.2, 0.1], 2, 0.0)]
    cfg = TrainConfig(epochs_per_round=3)
    om = OpponentModel(ModelKind.SL, model())
    ds = dataset(rows)
    secs = end_of_round(om, ds, cfg, np.random.default_rng(8))
    assert len(ds) == 0 and secs >= 0
    direct = train_sl(model(), dataset(rows), cfg, np.random.default_rng(8))
    assert np.array_equal(om.model.W, direct.W)
    for kind in ("none", "random"):
        ds = dataset(rows)
        end_of_round(OpponentModel(kind), ds, cfg, np.random.default_rng(0))
        assert len(ds) == 0


def test_end_of_round_logs_time(caplog):
    with caplog.at_level(logging.DEBUG, logger="rheaom.opponent_model"):
        end_of_round(OpponentModel(ModelKind.PG, model("pg")), dataset([([0, 0, 1], 0, 0.1)]),
                     TrainConfig(epochs_per_round=1), np.random.default_rng(0))
    assert "training" in caplog.text


def test_train_config_validation():
    c = TrainConfig()
    assert (c.lr, c.gamma, c.n_step, c.minibatch) == (1e-4, 0.95, 5, 32)
    for bad in ({"gamma": 0.0}, {"gamma": 1.5}, {"n_step": 0}, {"minibatch": 0},
                {"lr": 0.0}, {"reward": "score"}, {"epochs_per_round": -1}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["sl", "q", "pg"]), st.integers(0, 2**31),
       st.lists(st.floats(-1, 1), min_size=1, max_size=40))
def test_training_keeps_parameters_finite(kind, seed, rewards):
    rng = np.random.default_rng(seed)
    om = OpponentModel(kind, LinearSoftmaxModel.create(kind, 16, rng))
    cfg = TrainConfig(lr=1e-2, epochs_per_round=5)
    for _ in range(3):
        ds = RoundDataset([TransitionRecord(rng.random(18), int(rng.integers(16)), r,
                                            i == len(rewards) - 1)
                           for i, r in enumerate(rewards)])
        end_of_round(om, ds, cfg, rng)
    assert om.model.is_finite()
