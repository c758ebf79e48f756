"""Compiled core vs pure-Python kernels.

    python3 benchmarks/bench_backends.py [--number N] [--repeat R] [--json]

Each kernel runs on the same inputs under both backends; the best of
``--repeat`` timings is reported per call, with the speedup.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from rheaom import _backend, _pycore
from rheaom.engine import initial_state, load_character
from rheaom.opponent_model import LinearSoftmaxModel


def _midgame(char, R, core, frames=240, seed=0):
    rng = np.random.default_rng(seed)
    s = initial_state(char).packed()
    for _ in range(frames):
        acts = [core.legal_actions(R, s, p) for p in (0, 1)]
        s = core.step(R, s, *(int(rng.choice(a)) for a in acts))
    return s


def cases(char, core):
    R = char.rules_for(core)
    s = _midgame(char, R, core)
    none = (_pycore.OM_NONE, None, None)
    pg = LinearSoftmaxModel.create("pg", char.n_actions, np.random.default_rng(1)).packed()
    rhea = (7, 1, 4, 0.85, 0.5, _pycore.MODE_CALLS, 280)
    mcts = (1.414, 4, _pycore.MODE_CALLS, 280)
    punch = char.action_id("PUNCH")
    return {
        "step": (lambda: core.step(R, s, punch, 0), 1000),
        "advance_gene": (lambda: core.advance_gene(R, s, punch, 0, 0), 500),
        "features": (lambda: core.features(R, s, 0), 1000),
        "compensate_15": (lambda: core.compensate(R, s, 0, [0] * 15, pg, np.random.default_rng(0)), 100),
        "rhea_plan (none)": (lambda: core.rhea_plan(R, s, 0, none, rhea, np.random.default_rng(0), None), 5),
        "rhea_plan (pg)": (lambda: core.rhea_plan(R, s, 0, pg, rhea, np.random.default_rng(0), None), 5),
        "mcts_plan (pg)": (lambda: core.mcts_plan(R, s, 0, pg, mcts, np.random.default_rng(0)), 5),
    }


def bench(number_scale: float, repeat: int) -> list[dict]:
    char = load_character("balanced")
    backends = _backend.available()
    table = {name: cases(char, _backend.get(name)) for name in backends}
    rows = []
    for kernel in table["python"]:
        row = {"kernel": kernel}
        for name in backends:
            fn, n = table[name][kernel]
            n = max(1, int(n * number_scale))
            best = min(timeit.repeat(fn, number=n, repeat=repeat)) / n
            row[f"{name}_us"] = best * 1e6
        if "cython_us" in row:
            row["speedup"] = row["python_us"] / row["cython_us"]
        rows.append(row)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--number", type=float, default=1.0, help="scale the per-kernel call counts")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true", help="print rows as JSON")
    args = ap.parse_args(argv)
    if "cython" not in _backend.available():
        print("note: compiled core not built; timing the Python kernels only", file=sys.stderr)
    rows = bench(args.number, args.repeat)
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    cols = [c for c in ("python_us", "cython_us", "speedup") if c in rows[0]]
    print(f"{'kernel':<18}" + "".join(f"{c:>14}" for c in cols))
    for r in rows:
        print(f"{r['kernel']:<18}" + "".join(f"{r[c]:>14.2f}" for c in cols))
    return 0


if __name__ == "__main__":
    sys.exit(main())
