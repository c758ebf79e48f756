"""Linear opponent models and their round-end trainers.

A model maps the 18 state features (seen from the modeled fighter) to one
output per selectable action.  SL and PG read the outputs as softmax
logits, Q reads them as action values; all three predict by argmax over
legal actions, which is the same computation, so the planners only ever
see ``(kind_code, W, b)``.

All training math is float64.  Losses and gradients are exposed as plain
functions of ``(W, b, batch)`` so they can be checked numerically.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from ._pycore import N_FEATURES, OM_LINEAR, OM_NONE, OM_RANDOM

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class ModelKind(str, Enum):
    NONE = "none"
    RANDOM = "random"
    SL = "sl"
    Q = "q"
    PG = "pg"

    @property
    def learned(self) -> bool:
        return self in (ModelKind.SL, ModelKind.Q, ModelKind.PG)


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    gamma: float = 0.95
    n_step: int = 5
    minibatch: int = 32
    epochs_per_round: int = 128
    reward: str = "absolute"  # or "delta"

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.n_step < 1 or self.minibatch < 1 or self.epochs_per_round < 0:
            raise ValueError("n_step and minibatch must be >= 1, epochs >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.reward not in ("absolute", "delta"):
            raise ValueError("reward must be 'absolute' or 'delta'")


@dataclass(frozen=True)
class TransitionRecord:
    features: np.ndarray
    action: int
    reward: float
    terminal: bool = False
    legal: tuple[int, ...] | None = None  # legal ids at this state, for the Q bootstrap


@dataclass
class RoundDataset:
    records: list[TransitionRecord] = field(default_factory=list)

    def append(self, rec: TransitionRecord) -> None:
        self.records.append(rec)

    def clear(self) -> None:
        self.records.clear()

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __iter__(self):
        return iter(self.records)

    def arrays(self):
        f = np.array([r.features for r in self.records], dtype=np.float64)
        a = np.array([r.action for r in self.records], dtype=np.int64)
        r = np.array([r.reward for r in self.records], dtype=np.float64)
        return f, a, r


def xavier_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """``(fan_out, fan_in)`` matrix, uniform on +-sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("dimensions must be positive")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class LinearSoftmaxModel:
    kind: ModelKind
    W: np.ndarray
    b: np.ndarray
    m_W: np.ndarray
    m_b: np.ndarray
    v_W: np.ndarray
    v_b: np.ndarray
    t: int = 0

    @classmethod
    def create(cls, kind: ModelKind | str, n_actions: int, rng: np.random.Generator,
               n_features: int = N_FEATURES) -> "LinearSoftmaxModel":
        kind = ModelKind(kind)
        W = xavier_init(n_features, n_actions, rng)
        b = np.zeros(n_actions)
        return cls(kind, W, b, np.zeros_like(W), np.zeros_like(b),
                   np.zeros_like(W), np.zeros_like(b))

    @property
    def n_actions(self) -> int:
        return self.W.shape[0]

    @property
    def n_features(self) -> int:
        return self.W.shape[1]

    def logits(self, features) -> np.ndarray:
        return self.W @ np.asarray(features, dtype=np.float64) + self.b

    def copy(self) -> "LinearSoftmaxModel":
        return LinearSoftmaxModel(self.kind, self.W.copy(), self.b.copy(), self.m_W.copy(),
                                  self.m_b.copy(), self.v_W.copy(), self.v_b.copy(), self.t)

    def is_finite(self) -> bool:
        return all(np.isfinite(x).all() for x in
                   (self.W, self.b, self.m_W, self.m_b, self.v_W, self.v_b))

    def packed(self):
        return (OM_LINEAR, self.W, self.b)


@dataclass
class OpponentModel:
    """The slot a planner plugs in: a kind plus parameters for learned kinds."""

    kind: ModelKind = ModelKind.NONE
    model: LinearSoftmaxModel | None = None

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        if self.kind.learned and self.model is None:
            raise ValueError(f"{self.kind.value} model needs parameters")

    @classmethod
    def create(cls, kind, n_actions: int, rng: np.random.Generator) -> "OpponentModel":
        kind = ModelKind(kind)
        model = LinearSoftmaxModel.create(kind, n_actions, rng) if kind.learned else None
        return cls(kind, model)

    def packed(self):
        if self.kind == ModelKind.NONE:
            return (OM_NONE, None, None)
        if self.kind == ModelKind.RANDOM:
            return (OM_RANDOM, None, None)
        return self.model.packed()


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def policy_distribution(model: LinearSoftmaxModel, features) -> np.ndarray:
    return softmax(model.logits(features))


def predict_action(om, features, legal: Sequence[int], rng: np.random.Generator | None = None,
                   noop: int = 0) -> int:
    """One predicted opponent action among ``legal``.

    ``om`` is an :class:`OpponentModel`, a bare :class:`LinearSoftmaxModel`
    or a :class:`ModelKind`.
    """
    legal = sorted(int(a) for a in legal)
    if not legal:
        raise ValueError("legal set is empty")
    if isinstance(om, LinearSoftmaxModel):
        kind, model = om.kind, om
    elif isinstance(om, OpponentModel):
        kind, model = om.kind, om.model
    else:
        kind, model = ModelKind(om), None
    if kind == ModelKind.NONE:
        return noop
    if kind == ModelKind.RANDOM:
        if rng is None:
            raise ValueError("Random model needs an rng")
        return legal[int(rng.random() * len(legal))]
    z = model.logits(features)
    cand = [a for a in legal if a < len(z)]
    if not cand:
        return legal[0]
    # argmax keeps the first maximum, so ascending ids give the lowest-id tie-break
    return cand[int(np.argmax(z[cand]))]


# --------------------------------------------------------------------------
# losses and gradients (batch means)


def sl_loss_and_grad(W, b, features, actions):
    """Cross-entropy against one-hot targets."""
    F = np.atleast_2d(features)
    a = np.asarray(actions)
    z = F @ W.T + b
    lp = log_softmax(z)
    B = len(a)
    loss = -lp[np.arange(B), a].mean()
    dz = np.exp(lp)
    dz[np.arange(B), a] -= 1.0
    dz /= B
    return loss, dz.T @ F, dz.sum(axis=0)


def q_loss_and_grad(W, b, features, actions, targets):
    """Squared error between the taken action's value and its target."""
    F = np.atleast_2d(features)
    a = np.asarray(actions)
    y = np.asarray(targets, dtype=np.float64)
    B = len(a)
    q = (F @ W.T + b)[np.arange(B), a]
    err = q - y
    loss = np.mean(err ** 2)
    dz = np.zeros((B, W.shape[0]))
    dz[np.arange(B), a] = 2.0 * err / B
    return loss, dz.T @ F, dz.sum(axis=0)


def pg_loss_and_grad(W, b, features, actions, returns):
    """Negative return-weighted log-likelihood; descending it ascends the REINFORCE estimate."""
    F = np.atleast_2d(features)
    a = np.asarray(actions)
    R = np.asarray(returns, dtype=np.float64)
    B = len(a)
    lp = log_softmax(F @ W.T + b)
    loss = -(R * lp[np.arange(B), a]).mean()
    dz = np.exp(lp)
    dz[np.arange(B), a] -= 1.0
    dz *= (R / B)[:, None]
    return loss, dz.T @ F, dz.sum(axis=0)


def log_prob_grad(W, b, feature, action):
    """Gradient of log pi(action | feature) with respect to (W, b)."""
    f = np.asarray(feature, dtype=np.float64)
    p = softmax(W @ f + b)
    dz = -p
    dz[action] += 1.0
    return np.outer(dz, f), dz


# --------------------------------------------------------------------------
# optimiser


def adam_step(model: LinearSoftmaxModel, grad_W, grad_b, lr: float) -> bool:
    """In-place Adam update; returns False (and logs) if the gradient is not finite."""
    grad_W = np.asarray(grad_W, dtype=np.float64)
    grad_b = np.asarray(grad_b, dtype=np.float64)
    if grad_W.shape != model.W.shape or grad_b.shape != model.b.shape:
        raise ValueError("gradient shapes do not match the model")
    if not (np.isfinite(grad_W).all() and np.isfinite(grad_b).all()):
        log.warning("non-finite gradient at adam step %d; update skipped", model.t)
        return False
    model.t += 1
    c1 = 1.0 - BETA1 ** model.t
    c2 = 1.0 - BETA2 ** model.t
    for p, g, m, v in ((model.W, grad_W, model.m_W, model.v_W),
                       (model.b, grad_b, model.m_b, model.v_b)):
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + EPS)
    return True


# --------------------------------------------------------------------------
# returns


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def n_step_return(dataset, t: int, N: int, gamma: float, model: LinearSoftmaxModel) -> float:
    """N-step target for record ``t``, bootstrapped with max over legal values.

    Record ``i`` carries the reward observed after its action, so the sum
    runs over records ``t .. t+N-1`` and the bootstrap reads record
    ``t+N``.  A terminal record ends the sum and drops the bootstrap; so
    does running off the end of the dataset.
    """
    recs = dataset.records if isinstance(dataset, RoundDataset) else dataset
    if not 0 <= t < len(recs):
        raise IndexError(f"t={t} outside dataset of length {len(recs)}")
    G = 0.0
    disc = 1.0
    for i in range(t, t + N):
        if i >= len(recs):
            return G
        G += disc * recs[i].reward
        disc *= gamma
        if recs[i].terminal:
            return G
    if t + N >= len(recs):
        return G
    nxt = recs[t + N]
    q = model.logits(nxt.features)
    legal = nxt.legal if nxt.legal is not None else range(len(q))
    return G + disc * max(q[a] for a in legal)


# --------------------------------------------------------------------------
# trainers


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, size):
        yield order[i:i + size]


def train_sl(model, dataset, cfg: TrainConfig, rng: np.random.Generator):
    if len(dataset) == 0:
        return model
    F, a, _ = dataset.arrays()
    for _ in range(cfg.epochs_per_round):
        for idx in _batches(len(a), cfg.minibatch, rng):
            _, gW, gb = sl_loss_and_grad(model.W, model.b, F[idx], a[idx])
            adam_step(model, gW, gb, cfg.lr)
    return model


def train_q(model, dataset, cfg: TrainConfig, rng: np.random.Generator):
    if len(dataset) == 0:
        return model
    F, a, _ = dataset.arrays()
    for _ in range(cfg.epochs_per_round):
        target = model.copy()
        y = np.array([n_step_return(dataset, t, cfg.n_step, cfg.gamma, target)
                      for t in range(len(a))])
        for idx in _batches(len(a), cfg.minibatch, rng):
            _, gW, gb = q_loss_and_grad(model.W, model.b, F[idx], a[idx], y[idx])
            adam_step(model, gW, gb, cfg.lr)
    return model


def train_pg(model, dataset, cfg: TrainConfig, rng: np.random.Generator):
    if len(dataset) == 0:
        return model
    F, a, r = dataset.arrays()
    R = discounted_returns(r, cfg.gamma)
    for _ in range(cfg.epochs_per_round):
        for idx in _batches(len(a), cfg.minibatch, rng):
            _, gW, gb = pg_loss_and_grad(model.W, model.b, F[idx], a[idx], R[idx])
            adam_step(model, gW, gb, cfg.lr)
    return model


TRAINERS = {ModelKind.SL: train_sl, ModelKind.Q: train_q, ModelKind.PG: train_pg}


def reward_signal(max_hp: int, hp_modeled: int, hp_other: int,
                  prev: tuple[int, int] | None = None) -> float:
    """hp-gap reward seen by the modeled fighter.

    With ``prev = (hp_modeled, hp_other)`` from before the transition, the
    per-step change in the gap is returned instead.
    """
    if prev is None:
        return (hp_modeled - hp_other) / float(max_hp)
    return ((hp_modeled - prev[0]) - (hp_other - prev[1])) / float(max_hp)


def end_of_round(om: OpponentModel, dataset: RoundDataset, cfg: TrainConfig,
                 rng: np.random.Generator) -> float:
    """Train a learned model on the round just played, then clear the dataset.

    Returns the training wall-clock in seconds.
    """
    t0 = time.perf_counter()
    n = len(dataset)
    if om.kind.learned:
        TRAINERS[om.kind](om.model, dataset, cfg, rng)
    dataset.clear()
    elapsed = time.perf_counter() - t0
    log.debug("round-end training (%s, %d records) took %.4fs", om.kind.value, n, elapsed)
    return elapsed
