"""Shared test utilities."""

from dataclasses import replace

import numpy as np

from rheaom import _backend, _pycore
from rheaom.engine import initial_state


def random_state(char, seed, n_frames):
    """Packed state reached by ``n_frames`` of uniformly random legal play."""
    rng = np.random.default_rng(seed)
    R = char.rules
    s = initial_state(char).packed()
    for _ in range(n_frames):
        if _backend.core.status(R, s) != _pycore.ONGOING:
            break
        a = [int(rng.choice(_backend.core.legal_actions(R, s, p))) for p in (0, 1)]
        s = _backend.core.step(R, s, a[0], a[1])
    return s


def placed(char, x1, x2, hp1=400, hp2=400, **p1):
    """Idle grounded fighters at the given positions and hp."""
    s = initial_state(char)
    return replace(s, p1=replace(s.p1, x=x1, hp=hp1, **p1), p2=replace(s.p2, x=x2, hp=hp2))


CRITERIA: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> None:
    """Record and print one acceptance line, then assert it."""
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA[n] = line
    print(line, flush=True)
    assert ok, line
