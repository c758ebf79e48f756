# cython: language_level=3
"""Compiled kernels; a line-for-line port of ``rheaom._pycore``.

Every public function takes and returns the same Python objects as its
pure-Python twin and consumes the same ``rng.random()`` stream, read here
straight from the generator's ``bitgen_t``.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport fabs, log, sqrt, INFINITY
from libc.stdlib cimport malloc, realloc, free
from posix.time cimport clock_gettime, timespec, CLOCK_MONOTONIC
from numpy.random cimport bitgen_t

import numpy as np

cdef extern from "stdlib.h":
    long labs(long) nogil

BACKEND = "cython"

DEF NF = 9
DEF NCOLS = 13
DEF MAXR = 128
DEF NFEAT = 18

cdef enum:
    STAND = 0
    CROUCH = 1
    AIR = 2
    DOWN = 3

cdef enum:
    GROUND_D = 0
    AIR_D = 1

cdef enum:
    ONGOING = 0
    P1_WIN = 1
    P2_WIN = 2
    DRAW = 3

cdef enum:
    C_DOMAIN = 0
    C_STARTUP = 1
    C_ACTIVE = 2
    C_RECOVER = 3
    C_DAMAGE = 4
    C_COST = 5
    C_GAIN = 6
    C_RX = 7
    C_RY = 8
    C_DX = 9
    C_DY = 10
    C_GUARD = 11
    C_CROUCH = 12

cdef enum:
    OM_NONE = 0
    OM_RANDOM = 1
    OM_LINEAR = 2

cdef enum:
    MODE_CALLS = 0
    MODE_MS = 1

cdef struct Ftr:
    long hp
    long en
    long x
    long y
    long stg
    long act
    long af
    long face
    long land

cdef struct St:
    long frame
    Ftr f[2]

cdef struct Om:
    int kind
    int n_out
    double* W
    double* b


cdef class Rules:
    cdef public long max_hp, max_energy, width, height, round_limit, gravity
    cdef public long knockback, gene_cap, noop, recover, n_select, n_rows
    cdef public tuple table
    cdef long tab[MAXR][NCOLS]
    cdef long tot[MAXR]

    def __init__(self, max_hp, max_energy, width, height, round_limit, gravity,
                 knockback, gene_cap, noop, recover, n_select, table):
        if not 0 < len(table) <= MAXR:
            raise ValueError(f"roster size must be in 1..{MAXR}")
        self.max_hp = max_hp
        self.max_energy = max_energy
        self.width = width
        self.height = height
        self.round_limit = round_limit
        self.gravity = gravity
        self.knockback = knockback
        self.gene_cap = gene_cap
        self.noop = noop
        self.recover = recover
        self.n_select = n_select
        self.table = tuple(tuple(int(v) for v in row) for row in table)
        self.n_rows = len(self.table)
        cdef int i, j
        for i in range(self.n_rows):
            if len(self.table[i]) != NCOLS:
                raise ValueError(f"frame-data rows need {NCOLS} columns")
            for j in range(NCOLS):
                self.tab[i][j] = self.table[i][j]
            self.tot[i] = self.tab[i][C_STARTUP] + self.tab[i][C_ACTIVE] + self.tab[i][C_RECOVER]

    @property
    def total(self):
        return tuple(self.tot[i] for i in range(self.n_rows))


# --------------------------------------------------------------------------
# state packing


cdef St unpack(object s) except *:
    cdef St st
    cdef int p, b
    if len(s) != 1 + 2 * NF:
        raise ValueError("state must have 19 entries")
    st.frame = s[0]
    for p in range(2):
        b = 1 + NF * p
        st.f[p].hp = s[b]
        st.f[p].en = s[b + 1]
        st.f[p].x = s[b + 2]
        st.f[p].y = s[b + 3]
        st.f[p].stg = s[b + 4]
        st.f[p].act = s[b + 5]
        st.f[p].af = s[b + 6]
        st.f[p].face = s[b + 7]
        st.f[p].land = s[b + 8]
    return st


cdef tuple pack(St* st):
    cdef Ftr* a = &st.f[0]
    cdef Ftr* b = &st.f[1]
    return (st.frame,
            a.hp, a.en, a.x, a.y, a.stg, a.act, a.af, a.face, a.land,
            b.hp, b.en, b.x, b.y, b.stg, b.act, b.af, b.face, b.land)


cdef bitgen_t* get_bitgen(object rng) except NULL:
    return <bitgen_t*> PyCapsule_GetPointer(rng.bit_generator.capsule, "BitGenerator")


cdef inline double urand(bitgen_t* bg) noexcept:
    return bg.next_double(bg.state)


cdef double now_s() noexcept:
    cdef timespec ts
    clock_gettime(CLOCK_MONOTONIC, &ts)
    return ts.tv_sec + ts.tv_nsec * 1e-9


# --------------------------------------------------------------------------
# rules


cdef inline long clampl(long v, long lo, long hi) noexcept:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef bint c_legal(Rules R, Ftr* me, long a) noexcept:
    if me.stg == DOWN:
        return a == R.recover
    if a == R.recover:
        return False
    if R.tab[a][C_COST] > me.en:
        return False
    if me.stg == AIR:
        return R.tab[a][C_DOMAIN] == AIR_D
    return R.tab[a][C_DOMAIN] == GROUND_D


cdef bint c_guarding(Rules R, Ftr* me) noexcept:
    cdef long a = me.act
    if a < 0:
        return False
    if not R.tab[a][C_GUARD]:
        return False
    return R.tab[a][C_STARTUP] <= me.af < R.tab[a][C_STARTUP] + R.tab[a][C_ACTIVE]


cdef int c_status(Rules R, St* s) noexcept:
    cdef long hp1 = s.f[0].hp
    cdef long hp2 = s.f[1].hp
    if hp1 == 0 and hp2 == 0:
        return DRAW
    if hp2 == 0:
        return P1_WIN
    if hp1 == 0:
        return P2_WIN
    if s.frame >= R.round_limit:
        if hp1 > hp2:
            return P1_WIN
        if hp2 > hp1:
            return P2_WIN
        return DRAW
    return ONGOING


cdef int c_legal_list(Rules R, St* s, int p, long* out) noexcept:
    cdef int n = 0
    cdef long a
    for a in range(R.n_rows):
        if c_legal(R, &s.f[p], a):
            out[n] = a
            n += 1
    return n


cdef bint c_in(long* arr, int n, long v) noexcept:
    cdef int i
    for i in range(n):
        if arr[i] == v:
            return True
    return False


cdef void c_step(Rules R, St* s, long a1, long a2) noexcept:
    # caller validates action ids
    cdef int p
    cdef long a, rel, acts[2]
    cdef long dmg[2]
    cdef bint hits[2]
    cdef bint rising
    cdef Ftr* me
    cdef Ftr* op
    if c_status(R, s) != ONGOING:
        return
    acts[0] = a1
    acts[1] = a2

    for p in range(2):
        me = &s.f[p]
        op = &s.f[1 - p]
        if me.act < 0:
            if op.x > me.x:
                me.face = 1
            elif op.x < me.x:
                me.face = -1
            a = acts[p]
            if c_legal(R, me, a):
                me.act = a
                me.af = 0
                me.en -= R.tab[a][C_COST]
                me.land = 0
        else:
            me.af += 1

    for p in range(2):
        me = &s.f[p]
        a = me.act
        rising = False
        if a >= 0:
            me.x += R.tab[a][C_DX] * me.face
            me.y += R.tab[a][C_DY]
            rising = R.tab[a][C_DY] > 0
        if me.y > 0 and not rising:
            me.y -= R.gravity
        me.x = clampl(me.x, 0, R.width)
        me.y = clampl(me.y, 0, R.height)
        if a >= 0 and me.y == 0 and R.tab[a][C_DOMAIN] == AIR_D:
            me.act = -1
            me.af = 0

    for p in range(2):
        hits[p] = False
        me = &s.f[p]
        op = &s.f[1 - p]
        a = me.act
        if a < 0 or me.land:
            continue
        if R.tab[a][C_DAMAGE] <= 0:
            continue
        if not (R.tab[a][C_STARTUP] <= me.af < R.tab[a][C_STARTUP] + R.tab[a][C_ACTIVE]):
            continue
        if op.act == R.recover or c_guarding(R, op):
            continue
        rel = (op.x - me.x) * me.face
        if 0 <= rel <= R.tab[a][C_RX] and labs(op.y - me.y) <= R.tab[a][C_RY]:
            hits[p] = True

    for p in range(2):
        dmg[p] = R.tab[s.f[p].act][C_DAMAGE] if hits[p] else 0
    for p in range(2):
        if hits[p]:
            me = &s.f[p]
            me.land = 1
            me.en = min(R.max_energy, me.en + R.tab[me.act][C_GAIN])
    for p in range(2):
        if hits[p]:
            op = &s.f[1 - p]
            op.hp = max(0, op.hp - dmg[p])
            op.act = R.recover
            op.af = 0
            op.y = 0
            op.x = clampl(op.x + R.knockback * s.f[p].face, 0, R.width)
            op.land = 0

    for p in range(2):
        me = &s.f[p]
        a = me.act
        if a >= 0 and me.af >= R.tot[a] - 1:
            me.act = -1
            me.af = 0
        a = me.act
        if a == R.recover:
            me.stg = DOWN
        elif me.y > 0:
            me.stg = AIR
        elif a >= 0 and R.tab[a][C_CROUCH]:
            me.stg = CROUCH
        else:
            me.stg = STAND
    s.frame += 1


cdef int c_advance(Rules R, St* s, long a_self, long a_opp, int p) noexcept:
    if p == 0:
        c_step(R, s, a_self, a_opp)
    else:
        c_step(R, s, a_opp, a_self)
    cdef int frames = 1
    while (frames < R.gene_cap and c_status(R, s) == ONGOING
           and not (s.f[0].act < 0 and s.f[1].act < 0)):
        c_step(R, s, R.noop, R.noop)
        frames += 1
    return frames


cdef inline double clamp01(double v) noexcept:
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


cdef void c_features(Rules R, St* s, int p, double* out) noexcept:
    cdef Ftr* me = &s.f[p]
    cdef Ftr* op = &s.f[1 - p]
    cdef double mh = <double> R.max_hp
    cdef double mx = <double> R.max_energy
    cdef double w = <double> R.width
    cdef double h = <double> R.height
    cdef int j
    out[0] = me.hp / mh
    out[1] = op.hp / mh
    out[2] = me.en / mx
    out[3] = op.en / mx
    out[4] = me.x / w
    out[5] = me.y / h
    out[6] = op.x / w
    out[7] = op.y / h
    for j in range(8, 16):
        out[j] = 0.0
    out[8 + me.stg] = 1.0
    out[12 + op.stg] = 1.0
    out[16] = labs(me.x - op.x) / w
    out[17] = labs(me.y - op.y) / h
    for j in range(NFEAT):
        out[j] = clamp01(out[j])


cdef double c_score(Rules R, St* s, int p) noexcept:
    cdef int st = c_status(R, s)
    if st == P1_WIN:
        return 1.0 if p == 0 else -1.0
    if st == P2_WIN:
        return 1.0 if p == 1 else -1.0
    return (s.f[p].hp - s.f[1 - p].hp) / <double> R.max_hp


cdef long c_predict(Rules R, St* s, int p, Om* om, bitgen_t* bg) noexcept:
    cdef long legal[MAXR]
    cdef double f[NFEAT]
    cdef int n, i, j
    cdef long a, best
    cdef double z, best_z
    if om.kind == OM_NONE:
        return R.noop
    n = c_legal_list(R, s, p, legal)
    if n == 0:
        return R.noop
    if om.kind == OM_RANDOM:
        return legal[<int> (urand(bg) * n)]
    c_features(R, s, p, f)
    best = -1
    best_z = -INFINITY
    for i in range(n):
        a = legal[i]
        if a >= om.n_out:
            continue
        z = om.b[a]
        for j in range(NFEAT):
            z += om.W[a * NFEAT + j] * f[j]
        if z > best_z:
            best_z = z
            best = a
    if best >= 0:
        return best
    return legal[0]


cdef double c_rollout(Rules R, St* s0, long* genes, int l, int p, Om* om,
                      bitgen_t* bg, int* calls, St* out) noexcept:
    cdef St s = s0[0]
    cdef int q = 1 - p
    cdef int j, n
    cdef long g, ao
    cdef long legal[MAXR]
    calls[0] = 0
    for j in range(l):
        if c_status(R, &s) != ONGOING:
            break
        if s.f[q].act < 0:
            ao = c_predict(R, &s, q, om, bg)
        else:
            ao = R.noop
        g = genes[j]
        if s.f[p].act < 0:
            n = c_legal_list(R, &s, p, legal)
            if not c_in(legal, n, g):
                if n > 0:
                    g = legal[<int> (urand(bg) * n)]
                else:
                    g = R.noop
        else:
            g = R.noop
        c_advance(R, &s, g, ao, p)
        calls[0] += 1
    if out != NULL:
        out[0] = s
    return c_score(R, &s, p)


# --------------------------------------------------------------------------
# opponent model plumbing


cdef class OmHolder:
    cdef Om om
    cdef object W_keep
    cdef object b_keep

    def __init__(self, om):
        kind, W, b = om
        self.om.kind = kind
        self.om.n_out = 0
        self.om.W = NULL
        self.om.b = NULL
        cdef double[:, ::1] Wv
        cdef double[::1] bv
        if kind == OM_LINEAR:
            self.W_keep = np.ascontiguousarray(W, dtype=np.float64)
            self.b_keep = np.ascontiguousarray(b, dtype=np.float64)
            if self.W_keep.ndim != 2 or self.W_keep.shape[1] != NFEAT:
                raise ValueError("weights must have shape (A, 18)")
            if self.b_keep.shape[0] != self.W_keep.shape[0]:
                raise ValueError("bias length must match weight rows")
            Wv = self.W_keep
            bv = self.b_keep
            self.om.n_out = self.W_keep.shape[0]
            if self.om.n_out > 0:
                self.om.W = &Wv[0, 0]
                self.om.b = &bv[0]


# --------------------------------------------------------------------------
# Python-facing wrappers


def _check_action(Rules R, long a):
    if a < 0 or a >= R.n_rows:
        raise ValueError(f"action id out of range [0, {R.n_rows}): {a}")


def status(Rules R, s):
    cdef St st = unpack(s)
    return c_status(R, &st)


def is_idle(s, int p):
    return s[1 + NF * p + 5] < 0


def legal_actions(Rules R, s, int p):
    cdef St st = unpack(s)
    cdef long legal[MAXR]
    cdef int n = c_legal_list(R, &st, p, legal)
    return [legal[i] for i in range(n)]


def step(Rules R, s, long a1, long a2):
    if a1 < 0 or a1 >= R.n_rows or a2 < 0 or a2 >= R.n_rows:
        raise ValueError(f"action id out of range [0, {R.n_rows}): {a1}, {a2}")
    cdef St st = unpack(s)
    c_step(R, &st, a1, a2)
    return pack(&st)


def advance_gene(Rules R, s, long a_self, long a_opp, int p):
    _check_action(R, a_self)
    _check_action(R, a_opp)
    cdef St st = unpack(s)
    cdef int frames = c_advance(R, &st, a_self, a_opp, p)
    return pack(&st), frames


def features(Rules R, s, int p):
    cdef St st = unpack(s)
    cdef double f[NFEAT]
    c_features(R, &st, p, f)
    return [f[j] for j in range(NFEAT)]


def score(Rules R, s, int p):
    cdef St st = unpack(s)
    return c_score(R, &st, p)


def predict(Rules R, s, int p, om, rng):
    cdef St st = unpack(s)
    cdef OmHolder h = OmHolder(om)
    cdef bitgen_t* bg = get_bitgen(rng)
    return c_predict(R, &st, p, &h.om, bg)


def rollout(Rules R, s, genes, int p, om, rng):
    cdef St st = unpack(s)
    cdef St out
    cdef OmHolder h = OmHolder(om)
    cdef bitgen_t* bg = get_bitgen(rng)
    cdef int l = len(genes)
    cdef long* g = <long*> malloc(max(l, 1) * sizeof(long))
    cdef int calls = 0
    cdef double sc
    try:
        for j in range(l):
            g[j] = genes[j]
        sc = c_rollout(R, &st, g, l, p, &h.om, bg, &calls, &out)
    finally:
        free(g)
    return sc, calls, pack(&out)


def compensate(Rules R, s, int p, own_actions, om, rng):
    cdef St st = unpack(s)
    cdef OmHolder h = OmHolder(om)
    cdef bitgen_t* bg = get_bitgen(rng)
    cdef int q = 1 - p
    cdef long a, ao
    for a_obj in own_actions:
        a = a_obj
        _check_action(R, a)
        if c_status(R, &st) != ONGOING:
            break
        if st.f[q].act < 0:
            ao = c_predict(R, &st, q, &h.om, bg)
        else:
            ao = R.noop
        if p == 0:
            c_step(R, &st, a, ao)
        else:
            c_step(R, &st, ao, a)
    return pack(&st)


# --------------------------------------------------------------------------
# rolling horizon evolution


cdef double c_diversity(long* genes, int n, int l, int i) noexcept:
    cdef long total = 0
    cdef int j, o
    cdef long gj
    for j in range(l):
        gj = genes[i * l + j]
        for o in range(n):
            if genes[o * l + j] == gj:
                total += 1
    return 1.0 - total / <double> (n * l)


cdef void c_sort(long* genes, double* fit, int n, int l, long* tmp) noexcept:
    # stable insertion sort, best first; unset fitness is -inf
    cdef int i, j, c
    cdef double key
    for i in range(1, n):
        key = fit[i]
        for c in range(l):
            tmp[c] = genes[i * l + c]
        j = i - 1
        while j >= 0 and fit[j] < key:
            fit[j + 1] = fit[j]
            for c in range(l):
                genes[(j + 1) * l + c] = genes[j * l + c]
            j -= 1
        fit[j + 1] = key
        for c in range(l):
            genes[(j + 1) * l + c] = tmp[c]


cdef inline bint budget_allows(int mode, long limit, double deadline, long calls, long cost) noexcept:
    if mode == MODE_CALLS:
        return calls + cost <= limit
    return now_s() < deadline


def rhea_plan(Rules R, s, int p, om, params, rng, seed_genes=None):
    n, k, l, p_m, lam, mode, limit = params
    cdef int cn = n, ck = k, cl = l, cmode = mode
    cdef long climit = limit
    cdef double cpm = p_m, clam = lam
    cdef double deadline = now_s() + climit / 1000.0 if cmode == MODE_MS else 0.0
    cdef St st = unpack(s)
    cdef OmHolder h = OmHolder(om)
    cdef bitgen_t* bg = get_bitgen(rng)
    cdef long A = R.n_select
    cdef long legal0[MAXR]
    cdef int n0 = c_legal_list(R, &st, p, legal0)
    cdef int i, j, c, pos, calls1
    cdef long calls = 0
    cdef long gens = 0
    cdef double sc
    cdef bint unset
    if n0 == 0:
        legal0[0] = R.noop
        n0 = 1
    if cn < 2 or ck < 1 or ck >= cn or cl < 1:
        raise ValueError("need 1 <= k < n and l >= 1")
    if seed_genes is not None and len(seed_genes) != cl:
        raise ValueError("seed sequence length must equal l")

    cdef long* genes = <long*> malloc(cn * cl * sizeof(long))
    cdef long* nxt = <long*> malloc(cn * cl * sizeof(long))
    cdef double* fit = <double*> malloc(cn * sizeof(double))
    cdef double* nfit = <double*> malloc(cn * sizeof(double))
    cdef bint* has = <bint*> malloc(cn * sizeof(bint))
    cdef long* tmp = <long*> malloc(cl * sizeof(long))
    cdef long* swap_g
    cdef double* swap_f
    cdef long* pa
    cdef long* pb
    try:
        # initial population
        for i in range(cn):
            if i == 0 and seed_genes is not None:
                for j in range(cl - 1):
                    genes[j] = seed_genes[j + 1]
                genes[cl - 1] = <long> (urand(bg) * A)
                if not c_in(legal0, n0, genes[0]):
                    genes[0] = legal0[<int> (urand(bg) * n0)]
            else:
                genes[i * cl] = legal0[<int> (urand(bg) * n0)]
                for j in range(1, cl):
                    genes[i * cl + j] = <long> (urand(bg) * A)
            has[i] = False

        for i in range(cn):
            sc = c_rollout(R, &st, &genes[i * cl], cl, p, &h.om, bg, &calls1, NULL)
            calls += calls1
            fit[i] = (1.0 - clam) * sc + clam * c_diversity(genes, cn, cl, i)
            has[i] = True
        c_sort(genes, fit, cn, cl, tmp)

        # a finished round makes every rollout free, so there is nothing to search
        while c_status(R, &st) == ONGOING and budget_allows(cmode, climit, deadline, calls, cl):
            for i in range(ck):
                for j in range(cl):
                    nxt[i * cl + j] = genes[i * cl + j]
                nfit[i] = fit[i]
                has[i] = True
            for c in range(cn - ck):
                i = ck + c
                pa = &genes[(<int> (urand(bg) * ck)) * cl]
                pb = &genes[(ck + <int> (urand(bg) * (cn - ck))) * cl]
                for j in range(cl):
                    if urand(bg) < 0.5:
                        nxt[i * cl + j] = pa[j]
                    else:
                        nxt[i * cl + j] = pb[j]
                if urand(bg) < cpm:
                    pos = <int> (urand(bg) * cl)
                    if pos == 0:
                        nxt[i * cl] = legal0[<int> (urand(bg) * n0)]
                    else:
                        nxt[i * cl + pos] = <long> (urand(bg) * A)
                nfit[i] = -INFINITY
                has[i] = False
            swap_g = genes
            genes = nxt
            nxt = swap_g
            swap_f = fit
            fit = nfit
            nfit = swap_f

            for i in range(cn):
                if has[i]:
                    continue
                if not budget_allows(cmode, climit, deadline, calls, cl):
                    break
                sc = c_rollout(R, &st, &genes[i * cl], cl, p, &h.om, bg, &calls1, NULL)
                calls += calls1
                fit[i] = (1.0 - clam) * sc + clam * c_diversity(genes, cn, cl, i)
                has[i] = True
            c_sort(genes, fit, cn, cl, tmp)
            gens += 1

        best = [genes[j] for j in range(cl)]
        best_fit = fit[0] if fit[0] != -INFINITY else None
        return best[0], best, best_fit, gens, calls
    finally:
        free(genes)
        free(nxt)
        free(fit)
        free(nfit)
        free(has)
        free(tmp)


# --------------------------------------------------------------------------
# open-loop MCTS


def mcts_plan(Rules R, s, int p, om, params, rng):
    uct_c, max_depth, mode, limit = params
    cdef double cc = uct_c
    cdef int cdepth = max_depth, cmode = mode
    cdef long climit = limit
    cdef double deadline = now_s() + climit / 1000.0 if cmode == MODE_MS else 0.0
    cdef St root = unpack(s)
    cdef St st
    cdef OmHolder h = OmHolder(om)
    cdef bitgen_t* bg = get_bitgen(rng)
    cdef int q = 1 - p
    cdef long R_ = R.n_rows
    cdef long legal[MAXR]
    cdef long untried[MAXR]
    cdef long root_legal[MAXR]
    cdef int nroot = c_legal_list(R, &root, p, root_legal)
    cdef int nl, nu, depth, i, cap, npath
    cdef long a, b, ao, node, nd, kid, calls = 0, iters = 0, n_nodes = 1
    cdef double u, best, log_n, v
    cdef bint expanded
    if nroot == 0:
        root_legal[0] = R.noop
        nroot = 1
    if c_status(R, &root) != ONGOING or not budget_allows(cmode, climit, deadline, 0, cdepth):
        return root_legal[<int> (urand(bg) * nroot)], 0, 0

    cap = 1024
    cdef long* child = <long*> malloc(cap * R_ * sizeof(long))
    cdef long* visits = <long*> malloc(cap * sizeof(long))
    cdef double* totals = <double*> malloc(cap * sizeof(double))
    cdef long* path = <long*> malloc((cdepth + 1) * sizeof(long))
    cdef void* grown
    try:
        for i in range(R_):
            child[i] = -1
        visits[0] = 0
        totals[0] = 0.0
        while budget_allows(cmode, climit, deadline, calls, cdepth):
            if n_nodes + 1 > cap:
                cap *= 2
                grown = realloc(child, cap * R_ * sizeof(long))
                if grown is NULL:
                    raise MemoryError()
                child = <long*> grown
                grown = realloc(visits, cap * sizeof(long))
                if grown is NULL:
                    raise MemoryError()
                visits = <long*> grown
                grown = realloc(totals, cap * sizeof(double))
                if grown is NULL:
                    raise MemoryError()
                totals = <double*> grown
            st = root
            node = 0
            path[0] = 0
            npath = 1
            depth = 0
            while depth < cdepth and c_status(R, &st) == ONGOING:
                if st.f[p].act < 0:
                    nl = c_legal_list(R, &st, p, legal)
                    if nl == 0:
                        legal[0] = R.noop
                        nl = 1
                else:
                    legal[0] = R.noop
                    nl = 1
                nu = 0
                for i in range(nl):
                    if child[node * R_ + legal[i]] < 0:
                        untried[nu] = legal[i]
                        nu += 1
                expanded = False
                if nu > 0:
                    a = untried[<int> (urand(bg) * nu)]
                    child[node * R_ + a] = n_nodes
                    for i in range(R_):
                        child[n_nodes * R_ + i] = -1
                    visits[n_nodes] = 0
                    totals[n_nodes] = 0.0
                    n_nodes += 1
                    expanded = True
                else:
                    log_n = log(<double> visits[node])
                    a = -1
                    best = -INFINITY
                    for i in range(nl):
                        b = legal[i]
                        kid = child[node * R_ + b]
                        u = totals[kid] / visits[kid] + cc * sqrt(log_n / visits[kid])
                        if u > best:
                            best = u
                            a = b
                if st.f[q].act < 0:
                    ao = c_predict(R, &st, q, &h.om, bg)
                else:
                    ao = R.noop
                c_advance(R, &st, a, ao, p)
                calls += 1
                depth += 1
                node = child[node * R_ + a]
                path[npath] = node
                npath += 1
                if expanded:
                    break
            while depth < cdepth and c_status(R, &st) == ONGOING:
                if st.f[p].act < 0:
                    nl = c_legal_list(R, &st, p, legal)
                    if nl == 0:
                        a = R.noop
                    else:
                        a = legal[<int> (urand(bg) * nl)]
                else:
                    a = R.noop
                if st.f[q].act < 0:
                    ao = c_predict(R, &st, q, &h.om, bg)
                else:
                    ao = R.noop
                c_advance(R, &st, a, ao, p)
                calls += 1
                depth += 1
            v = c_score(R, &st, p)
            for i in range(npath):
                nd = path[i]
                visits[nd] += 1
                totals[nd] += v
            iters += 1

        # most visited root child; ties go to the higher mean, then the lower id
        best_a = -1
        best_v = -1
        best = -INFINITY
        for a in range(R_):
            kid = child[a]
            if kid < 0:
                continue
            u = totals[kid] / visits[kid] if visits[kid] > 0 else -INFINITY
            if visits[kid] > best_v or (visits[kid] == best_v and u > best):
                best_v = visits[kid]
                best = u
                best_a = a
        return best_a, iters, calls
    finally:
        free(child)
        free(visits)
        free(totals)
        free(path)
