"""Pure-Python kernels.

Reference implementation of every hot loop: frame stepping, gene-level
advancement, opponent-model inference, rollouts, the rolling-horizon
planner and the open-loop MCTS planner.  ``rheaom._core`` (Cython) mirrors
this module function for function and must return bit-identical results
for the same inputs and the same ``numpy.random.Generator`` state; the only
random draws either module makes are ``rng.random()`` doubles.

States are flat tuples of 19 ints::

    (frame, hp, energy, x, y, stage, action, action_frame, facing, landed,   # p1
            hp, energy, x, y, stage, action, action_frame, facing, landed)   # p2

``action`` is -1 when the fighter is idle.
"""

from __future__ import annotations

import math
import time

BACKEND = "python"

STAND, CROUCH, AIR, DOWN = 0, 1, 2, 3
GROUND_D, AIR_D = 0, 1
ONGOING, P1_WIN, P2_WIN, DRAW = 0, 1, 2, 3

NF = 9
HP, EN, X, Y, STG, ACT, AF, FACE, LAND = range(NF)
STATE_LEN = 1 + 2 * NF

# frame-data table columns
(C_DOMAIN, C_STARTUP, C_ACTIVE, C_RECOVER, C_DAMAGE, C_COST, C_GAIN,
 C_RX, C_RY, C_DX, C_DY, C_GUARD, C_CROUCH) = range(13)
N_COLS = 13
MAX_ROWS = 128

OM_NONE, OM_RANDOM, OM_LINEAR = 0, 1, 2
MODE_CALLS, MODE_MS = 0, 1
N_FEATURES = 18


class Rules:
    """Frame data and arena constants packed for the kernels."""

    def __init__(self, max_hp, max_energy, width, height, round_limit, gravity,
                 knockback, gene_cap, noop, recover, n_select, table):
        if not 0 < len(table) <= MAX_ROWS:
            raise ValueError(f"roster size must be in 1..{MAX_ROWS}")
        self.max_hp = int(max_hp)
        self.max_energy = int(max_energy)
        self.width = int(width)
        self.height = int(height)
        self.round_limit = int(round_limit)
        self.gravity = int(gravity)
        self.knockback = int(knockback)
        self.gene_cap = int(gene_cap)
        self.noop = int(noop)
        self.recover = int(recover)
        self.n_select = int(n_select)
        self.table = tuple(tuple(int(v) for v in row) for row in table)
        if any(len(row) != N_COLS for row in self.table):
            raise ValueError(f"frame-data rows need {N_COLS} columns")
        self.n_rows = len(self.table)
        self.total = tuple(r[C_STARTUP] + r[C_ACTIVE] + r[C_RECOVER] for r in self.table)


def _clamp(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


def _fighter_legal(R, me, a):
    stage = me[STG]
    if stage == DOWN:
        return a == R.recover
    if a == R.recover:
        return False
    row = R.table[a]
    if row[C_COST] > me[EN]:
        return False
    return row[C_DOMAIN] == (AIR_D if stage == AIR else GROUND_D)


def _guarding(R, me):
    a = me[ACT]
    if a < 0:
        return False
    row = R.table[a]
    return bool(row[C_GUARD]) and row[C_STARTUP] <= me[AF] < row[C_STARTUP] + row[C_ACTIVE]


def status(R, s):
    hp1 = s[1 + HP]
    hp2 = s[1 + NF + HP]
    if hp1 == 0 and hp2 == 0:
        return DRAW
    if hp2 == 0:
        return P1_WIN
    if hp1 == 0:
        return P2_WIN
    if s[0] >= R.round_limit:
        if hp1 > hp2:
            return P1_WIN
        if hp2 > hp1:
            return P2_WIN
        return DRAW
    return ONGOING


def is_idle(s, p):
    return s[1 + NF * p + ACT] < 0


def legal_actions(R, s, p):
    me = s[1 + NF * p: 1 + NF * (p + 1)]
    return [a for a in range(R.n_rows) if _fighter_legal(R, me, a)]


def step(R, s, a1, a2):
    n = R.n_rows
    if not (0 <= a1 < n and 0 <= a2 < n):
        raise ValueError(f"action id out of range [0, {n}): {a1}, {a2}")
    if status(R, s) != ONGOING:
        return tuple(s)
    T = R.table
    f = (list(s[1:1 + NF]), list(s[1 + NF:1 + 2 * NF]))
    acts = (a1, a2)

    for p in (0, 1):
        me, op = f[p], f[1 - p]
        if me[ACT] < 0:
            if op[X] > me[X]:
                me[FACE] = 1
            elif op[X] < me[X]:
                me[FACE] = -1
            a = acts[p]
            if _fighter_legal(R, me, a):
                me[ACT] = a
                me[AF] = 0
                me[EN] -= T[a][C_COST]
                me[LAND] = 0
        else:
            me[AF] += 1

    for p in (0, 1):
        me = f[p]
        a = me[ACT]
        rising = False
        if a >= 0:
            row = T[a]
            me[X] += row[C_DX] * me[FACE]
            me[Y] += row[C_DY]
            rising = row[C_DY] > 0
        if me[Y] > 0 and not rising:
            me[Y] -= R.gravity
        me[X] = _clamp(me[X], 0, R.width)
        me[Y] = _clamp(me[Y], 0, R.height)
        if a >= 0 and me[Y] == 0 and T[a][C_DOMAIN] == AIR_D:
            me[ACT] = -1
            me[AF] = 0

    hits = [False, False]
    for p in (0, 1):
        A, D = f[p], f[1 - p]
        a = A[ACT]
        if a < 0 or A[LAND]:
            continue
        row = T[a]
        if row[C_DAMAGE] <= 0 or not (row[C_STARTUP] <= A[AF] < row[C_STARTUP] + row[C_ACTIVE]):
            continue
        if D[ACT] == R.recover or _guarding(R, D):
            continue
        rel = (D[X] - A[X]) * A[FACE]
        if 0 <= rel <= row[C_RX] and abs(D[Y] - A[Y]) <= row[C_RY]:
            hits[p] = True

    dmg = [T[f[p][ACT]][C_DAMAGE] if hits[p] else 0 for p in (0, 1)]
    for p in (0, 1):
        if hits[p]:
            A = f[p]
            A[LAND] = 1
            A[EN] = min(R.max_energy, A[EN] + T[A[ACT]][C_GAIN])
    for p in (0, 1):
        if hits[p]:
            D = f[1 - p]
            D[HP] = max(0, D[HP] - dmg[p])
            D[ACT] = R.recover
            D[AF] = 0
            D[Y] = 0
            D[X] = _clamp(D[X] + R.knockback * f[p][FACE], 0, R.width)
            D[LAND] = 0

    for p in (0, 1):
        me = f[p]
        a = me[ACT]
        if a >= 0 and me[AF] >= R.total[a] - 1:
            me[ACT] = -1
            me[AF] = 0
        a = me[ACT]
        if a == R.recover:
            me[STG] = DOWN
        elif me[Y] > 0:
            me[STG] = AIR
        elif a >= 0 and T[a][C_CROUCH]:
            me[STG] = CROUCH
        else:
            me[STG] = STAND

    return (s[0] + 1, *f[0], *f[1])


def advance_gene(R, s, a_self, a_opp, p):
    if p == 0:
        s = step(R, s, a_self, a_opp)
    else:
        s = step(R, s, a_opp, a_self)
    frames = 1
    noop = R.noop
    while (frames < R.gene_cap and status(R, s) == ONGOING
           and not (s[1 + ACT] < 0 and s[1 + NF + ACT] < 0)):
        s = step(R, s, noop, noop)
        frames += 1
    return s, frames


def features(R, s, p):
    me = s[1 + NF * p: 1 + NF * (p + 1)]
    op = s[1 + NF * (1 - p): 1 + NF * (2 - p)]
    mh = float(R.max_hp)
    me_ = float(R.max_energy)
    w = float(R.width)
    h = float(R.height)
    out = [
        me[HP] / mh, op[HP] / mh,
        me[EN] / me_, op[EN] / me_,
        me[X] / w, me[Y] / h, op[X] / w, op[Y] / h,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        abs(me[X] - op[X]) / w, abs(me[Y] - op[Y]) / h,
    ]
    out[8 + me[STG]] = 1.0
    out[12 + op[STG]] = 1.0
    return [0.0 if v < 0.0 else 1.0 if v > 1.0 else v for v in out]


def score(R, s, p):
    st = status(R, s)
    if st == P1_WIN:
        return 1.0 if p == 0 else -1.0
    if st == P2_WIN:
        return 1.0 if p == 1 else -1.0
    me = s[1 + NF * p + HP]
    op = s[1 + NF * (1 - p) + HP]
    return (me - op) / float(R.max_hp)


class _Om:
    """Unpacked opponent model: kind code plus weight rows as Python lists."""

    __slots__ = ("kind", "W", "b", "n_out")

    def __init__(self, om):
        kind, W, b = om
        self.kind = int(kind)
        if self.kind == OM_LINEAR:
            self.W = [list(map(float, row)) for row in W]
            self.b = list(map(float, b))
            self.n_out = len(self.b)
        else:
            self.W = self.b = None
            self.n_out = 0


def _predict(R, s, p, om, rng):
    if om.kind == OM_NONE:
        return R.noop
    legal = legal_actions(R, s, p)
    if not legal:
        return R.noop
    if om.kind == OM_RANDOM:
        return legal[int(rng.random() * len(legal))]
    f = features(R, s, p)
    best = -1
    best_z = -math.inf
    for a in legal:
        if a >= om.n_out:
            continue
        row = om.W[a]
        z = om.b[a]
        for j in range(N_FEATURES):
            z += row[j] * f[j]
        if z > best_z:
            best_z = z
            best = a
    return best if best >= 0 else legal[0]


def predict(R, s, p, om, rng):
    """Action the model expects fighter ``p`` to commit from ``s``."""
    return _predict(R, s, p, _Om(om), rng)


def _rollout(R, s, genes, p, om, rng):
    q = 1 - p
    calls = 0
    noop = R.noop
    for g in genes:
        if status(R, s) != ONGOING:
            break
        ao = _predict(R, s, q, om, rng) if is_idle(s, q) else noop
        if is_idle(s, p):
            legal = legal_actions(R, s, p)
            if g not in legal:
                g = legal[int(rng.random() * len(legal))] if legal else noop
        else:
            g = noop
        s, _ = advance_gene(R, s, g, ao, p)
        calls += 1
    return score(R, s, p), calls, s


def rollout(R, s, genes, p, om, rng):
    """Score of ``genes`` played from ``s`` against the model's replies.

    Returns ``(score, forward_calls, final_state)``.
    """
    return _rollout(R, s, genes, p, _Om(om), rng)


def compensate(R, s, p, own_actions, om, rng):
    """Replay ``own_actions`` (one per elapsed frame) over a delayed snapshot."""
    om = _Om(om)
    q = 1 - p
    noop = R.noop
    for a in own_actions:
        if status(R, s) != ONGOING:
            break
        ao = _predict(R, s, q, om, rng) if is_idle(s, q) else noop
        s = step(R, s, a, ao) if p == 0 else step(R, s, ao, a)
    return s


# --------------------------------------------------------------------------
# rolling horizon evolution


def diversity(genes, i):
    n = len(genes)
    l = len(genes[i])
    total = 0
    for j in range(l):
        gj = genes[i][j]
        for other in genes:
            if other[j] == gj:
                total += 1
    return 1.0 - total / float(n * l)


def sort_population(genes, fit):
    key = [-math.inf if v is None else v for v in fit]
    order = sorted(range(len(genes)), key=key.__getitem__, reverse=True)
    return [genes[i] for i in order], [fit[i] for i in order]


class _Budget:
    __slots__ = ("mode", "limit", "deadline")

    def __init__(self, mode, limit):
        self.mode = mode
        self.limit = limit
        self.deadline = time.perf_counter() + limit / 1000.0 if mode == MODE_MS else 0.0

    def allows(self, calls, cost):
        if self.mode == MODE_CALLS:
            return calls + cost <= self.limit
        return time.perf_counter() < self.deadline


def evaluate(R, s, p, om, rng, genes, fit, lam, calls=0, budget=None):
    """Fill unset fitness entries in place; returns the updated call count.

    When ``budget`` is given, evaluation stops at the first individual it
    cannot afford and the remaining entries stay unset.
    """
    l = len(genes[0])
    for i in range(len(genes)):
        if fit[i] is not None:
            continue
        if budget is not None and not budget.allows(calls, l):
            break
        sc, c, _ = _rollout(R, s, genes[i], p, om, rng)
        calls += c
        fit[i] = (1.0 - lam) * sc + lam * diversity(genes, i)
    return calls


def evolve(genes, fit, k, p_m, n_select, legal0, rng):
    """One generation of elitism, uniform crossover and single-gene mutation.

    ``genes``/``fit`` must already be sorted best-first.  Gene position 0 is
    only ever resampled from ``legal0`` so the committed action stays legal.
    """
    n = len(genes)
    l = len(genes[0])
    elites = genes[:k]
    rest = genes[k:]
    new_genes = [list(g) for g in elites]
    new_fit = list(fit[:k])
    for _ in range(n - k):
        a = elites[int(rng.random() * k)]
        b = rest[int(rng.random() * (n - k))]
        child = [a[j] if rng.random() < 0.5 else b[j] for j in range(l)]
        if rng.random() < p_m:
            pos = int(rng.random() * l)
            if pos == 0:
                child[0] = legal0[int(rng.random() * len(legal0))]
            else:
                child[pos] = int(rng.random() * n_select)
        new_genes.append(child)
        new_fit.append(None)
    return new_genes, new_fit


def init_population(R, n, l, legal0, rng, seed_genes=None):
    A = R.n_select
    genes = []
    for i in range(n):
        if i == 0 and seed_genes is not None:
            g = [int(v) for v in seed_genes[1:]] + [int(rng.random() * A)]
            if g[0] not in legal0:
                g[0] = legal0[int(rng.random() * len(legal0))]
        else:
            g = [legal0[int(rng.random() * len(legal0))]]
            g += [int(rng.random() * A) for _ in range(l - 1)]
        genes.append(g)
    return genes


def rhea_plan(R, s, p, om, params, rng, seed_genes=None):
    """Full rolling-horizon decision.

    ``params`` is ``(n, k, l, p_m, lam, mode, limit)``.  Returns
    ``(action, best_genes, best_fitness, generations, forward_calls)``.
    """
    n, k, l, p_m, lam, mode, limit = params
    if n < 2 or k < 1 or k >= n or l < 1:
        raise ValueError("need 1 <= k < n and l >= 1")
    if seed_genes is not None and len(seed_genes) != l:
        raise ValueError("seed sequence length must equal l")
    budget = _Budget(mode, limit)
    om = _Om(om)
    legal0 = legal_actions(R, s, p) or [R.noop]
    genes = init_population(R, n, l, legal0, rng, seed_genes)
    fit = [None] * n
    calls = evaluate(R, s, p, om, rng, genes, fit, lam)
    genes, fit = sort_population(genes, fit)
    gens = 0
    # a finished round makes every rollout free, so there is nothing to search
    while status(R, s) == ONGOING and budget.allows(calls, l):
        genes, fit = evolve(genes, fit, k, p_m, R.n_select, legal0, rng)
        calls = evaluate(R, s, p, om, rng, genes, fit, lam, calls, budget)
        genes, fit = sort_population(genes, fit)
        gens += 1
    return genes[0][0], list(genes[0]), fit[0], gens, calls


# --------------------------------------------------------------------------
# open-loop MCTS


def mcts_plan(R, s, p, om, params, rng):
    """Open-loop UCT over self action sequences.

    ``params`` is ``(uct_c, max_depth, mode, limit)``.  Returns
    ``(action, iterations, forward_calls)``.
    """
    uct_c, max_depth, mode, limit = params
    budget = _Budget(mode, limit)
    om = _Om(om)
    q = 1 - p
    noop = R.noop
    root_legal = legal_actions(R, s, p) or [noop]
    if status(R, s) != ONGOING or not budget.allows(0, max_depth):
        return root_legal[int(rng.random() * len(root_legal))], 0, 0

    visits = [0]
    totals = [0.0]
    children = [{}]
    calls = 0
    iters = 0
    while budget.allows(calls, max_depth):
        st = s
        node = 0
        path = [0]
        depth = 0
        while depth < max_depth and status(R, st) == ONGOING:
            legal = (legal_actions(R, st, p) or [noop]) if is_idle(st, p) else [noop]
            kids = children[node]
            untried = [a for a in legal if a not in kids]
            expanded = False
            if untried:
                a = untried[int(rng.random() * len(untried))]
                kids[a] = len(visits)
                visits.append(0)
                totals.append(0.0)
                children.append({})
                expanded = True
            else:
                log_n = math.log(visits[node])
                a = -1
                best = -math.inf
                for b in legal:
                    c = kids[b]
                    u = totals[c] / visits[c] + uct_c * math.sqrt(log_n / visits[c])
                    if u > best:
                        best = u
                        a = b
            ao = _predict(R, st, q, om, rng) if is_idle(st, q) else noop
            st, _ = advance_gene(R, st, a, ao, p)
            calls += 1
            depth += 1
            node = kids[a]
            path.append(node)
            if expanded:
                break
        while depth < max_depth and status(R, st) == ONGOING:
            if is_idle(st, p):
                legal = legal_actions(R, st, p) or [noop]
                a = legal[int(rng.random() * len(legal))]
            else:
                a = noop
            ao = _predict(R, st, q, om, rng) if is_idle(st, q) else noop
            st, _ = advance_gene(R, st, a, ao, p)
            calls += 1
            depth += 1
        v = score(R, st, p)
        for nd in path:
            visits[nd] += 1
            totals[nd] += v
        iters += 1

    # most visited root child; ties go to the higher mean, then the lower id
    best_a = -1
    best_v = -1
    best_m = -math.inf
    for a in sorted(children[0]):
        c = children[0][a]
        m = totals[c] / visits[c] if visits[c] > 0 else -math.inf
        if visits[c] > best_v or (visits[c] == best_v and m > best_m):
            best_v = visits[c]
            best_m = m
            best_a = a
    return best_a, iters, calls
