"""Command-line entry point.

    rheaom play      [--p1 SPEC --p2 SPEC --character NAME] one verbose round
    rheaom series    --config PATH                          one matchup, all repeats
    rheaom reproduce NAME                                   a named preset
    rheaom plot      CURVES.csv [CURVES.csv ...]            SVG line plot
    rheaom inspect   MODEL                                  snapshot summary

Configs are single JSON documents; ``--set key=value`` overrides win over
file values.  Keys are dotted paths (``budget.limit``, ``train.lr``,
``agents.0.model``) and must already exist in the config.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import BACKEND, __version__, presets
from .agents import AgentHandle
from .harness import (
    CSV_HEADER,
    INIT_ROUND,
    SLOT_ACT,
    ExperimentConfig,
    run_round,
    run_series,
    stream,
)
from .persistence import SnapshotError, load_model, summary
from .planner import DEFAULT_LIMITS, BudgetMode
from .plotting import plot_curves

log = logging.getLogger("rheaom")


class ConfigError(Exception):
    """Invalid configuration; ``key`` names the offending field."""

    def __init__(self, key: str, msg: str = ""):
        super().__init__(key)
        self.key = key
        self.msg = msg

    def __str__(self):
        return f"invalid config key {self.key!r}" + (f": {self.msg}" if self.msg else "")


# --------------------------------------------------------------------------
# config documents and overrides


def _default_experiment() -> dict:
    d = ExperimentConfig(agents=("rhea", "rhea")).to_dict()
    d.pop("agents")
    return d


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, key: str, value, free: tuple[str, ...] = ("params",)) -> None:
    """Set dotted ``key`` in ``doc``; every path component must already exist,
    except directly under a free-form mapping such as an agent's ``params``."""
    parts = key.split(".")
    node = doc
    for depth, part in enumerate(parts):
        last = depth == len(parts) - 1
        if isinstance(node, list):
            try:
                idx = int(part)
                node[idx]
            except (ValueError, IndexError):
                raise ConfigError(key, f"no element {part!r}") from None
            if last:
                node[idx] = value
                return
            node = node[idx]
            continue
        if not isinstance(node, dict):
            raise ConfigError(key, f"{'.'.join(parts[:depth])} is not a mapping")
        open_map = depth > 0 and parts[depth - 1] in free
        if part not in node and not open_map:
            raise ConfigError(key, "unknown key")
        if last:
            node[part] = value
            return
        if node.get(part) is None and open_map:
            node[part] = {}
        node = node[part]


def _agent_dict(spec) -> dict:
    h = spec if isinstance(spec, AgentHandle) else (
        AgentHandle.from_dict(spec) if isinstance(spec, dict) else AgentHandle.parse(spec))
    return h.to_dict()


def experiment_doc(raw: dict) -> dict:
    """Fully populated experiment document (every valid key present)."""
    doc = _default_experiment()
    unknown = set(raw) - set(doc) - {"agents"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    for k, v in raw.items():
        if k in ("budget", "train") and isinstance(v, dict):
            bad = set(v) - set(doc[k])
            if bad:
                raise ConfigError(f"{k}.{sorted(bad)[0]}", "unknown key")
            doc[k] = {**doc[k], **v}
        elif k != "agents":
            doc[k] = v
    if "agents" not in raw:
        raise ConfigError("agents", "missing")
    doc["agents"] = [_agent_dict(a) for a in raw["agents"]]
    return doc


def set_budget_mode(doc: dict, mode: str, explicit_limit: bool) -> None:
    doc["budget"]["mode"] = mode
    if not explicit_limit:
        doc["budget"]["limit"] = DEFAULT_LIMITS[BudgetMode(mode)]


def build_experiment(doc: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_dict(doc)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0]), "unknown key") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(_guess_key(exc, doc), str(exc)) from None


def _guess_key(exc: Exception, doc: dict) -> str:
    msg = str(exc)
    for k in ("budget", "train", "agents", "rounds", "repeats", "warmup", "delay",
              "character", "roster_size", "round_limit", "window"):
        if k in msg:
            return k
    for k, v in doc.items():
        if isinstance(v, dict):
            for sub in v:
                if sub in msg:
                    return f"{k}.{sub}"
    return "config"


# --------------------------------------------------------------------------
# subcommands


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config document")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--budget-mode", choices=[m.value for m in BudgetMode])
    p.add_argument("--workers", type=int, help="worker processes (capped by RHEAOM_THREADS)")
    p.add_argument("-q", "--quiet", action="store_true")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rheaom", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"rheaom {__version__} ({BACKEND})")
    sub = ap.add_subparsers(dest="command", metavar="{play,series,reproduce,plot,inspect}")

    p = sub.add_parser("play", help="run one verbose round")
    _common(p)
    p.add_argument("--p1", default="rhea:pg")
    p.add_argument("--p2", default="scripted")
    p.add_argument("--character")
    p.add_argument("--transcript", action="store_true", help="write the per-frame transcript")

    p = sub.add_parser("series", help="run one experiment config")
    _common(p)

    p = sub.add_parser("reproduce", help="run a named preset: " + ", ".join(presets.names()))
    _common(p)
    p.add_argument("name")

    p = sub.add_parser("plot", help="render curves.csv files to SVG")
    p.add_argument("curves", nargs="+", type=Path)
    p.add_argument("--column", default="win_rate")
    p.add_argument("--title", default="")
    p.add_argument("--out", type=Path, help="SVG path, or a directory for plot.svg")

    p = sub.add_parser("inspect", help="print a model snapshot summary")
    p.add_argument("model", type=Path)
    return ap


def _load_json(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("--config", "top level must be an object")
    return d


def _overrides(args) -> list[tuple[str, object]]:
    out = []
    for item in args.overrides:
        key, eq, val = item.partition("=")
        if not eq or not key:
            raise ConfigError(item, "expected KEY=VALUE")
        out.append((key.strip(), parse_value(val)))
    return out


def _apply_common(doc: dict, args, exp: dict) -> None:
    """Overrides, seed and budget mode onto ``doc`` whose experiment part is ``exp``."""
    ov = _overrides(args)
    for k, v in ov:
        apply_override(doc, k, v)
    if args.seed is not None:
        exp["seed"] = args.seed
    if args.budget_mode:
        limit_set = any(k.endswith("budget.limit") for k, _ in ov)
        set_budget_mode(exp, args.budget_mode, limit_set)


def _say(args, *msg) -> None:
    if not getattr(args, "quiet", False):
        print(*msg, flush=True)


def _format_summary(s: dict) -> str:
    return (f"{s['label']:<28} {s['character']:<9} n={s['rounds']:<5} "
            f"win={100 * s['win_rate']:5.1f}% ±{100 * s['ci95']:4.1f}  "
            f"hp_diff={s['mean_hp_diff']:+7.1f}  violations={s['budget_violations']}")


def cmd_series(args) -> int:
    doc = experiment_doc(_load_json(args.config))
    _apply_common(doc, args, doc)
    cfg = build_experiment(doc)
    out = args.out or Path("rheaom-out") / cfg.label
    t0 = time.perf_counter()
    series = run_series(cfg, out, workers=args.workers or os.cpu_count())
    _say(args, _format_summary(series.summary()))
    _say(args, f"wrote {out} ({time.perf_counter() - t0:.1f}s)")
    return 0


def cmd_reproduce(args) -> int:
    try:
        preset = presets.get(args.name)
    except KeyError:
        print(f"rheaom: unknown preset {args.name!r}; choose from {', '.join(presets.names())}",
              file=sys.stderr)
        return 2
    file_doc = _load_json(args.config)
    for k in file_doc:
        if k not in preset:
            raise ConfigError(k, "unknown key")
    preset.update(file_doc)
    exp_raw = dict(preset.get("experiment", {}))
    bad = set(exp_raw) - set(_default_experiment())
    if bad:
        raise ConfigError(f"experiment.{sorted(bad)[0]}", "unknown key")
    exp = experiment_doc({**exp_raw, "agents": ["rhea", "rhea"]})
    exp.pop("agents")
    preset["experiment"] = exp
    # bare experiment keys (``rounds=10``) are accepted as shorthand
    for i, item in enumerate(args.overrides):
        key = item.partition("=")[0].strip()
        head = key.split(".")[0]
        if head not in preset and head in exp:
            args.overrides[i] = "experiment." + item.strip()
    _apply_common(preset, args, exp)
    try:
        cells = presets.cells(preset)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0]), "unknown key") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError("experiment", str(exc)) from None

    out = args.out or Path("rheaom-out") / args.name
    out.mkdir(parents=True, exist_ok=True)
    combined = io.StringIO()
    w = csv.writer(combined, lineterminator="\n")
    w.writerow(["character", "matchup"] + CSV_HEADER)
    summaries = []
    t0 = time.perf_counter()
    for c in cells:
        series = run_series(c.config, out / c.character / c.matchup,
                            workers=args.workers or os.cpu_count())
        for r in series.results:
            w.writerow([c.character, c.matchup] + r.csv_row())
        s = series.summary()
        summaries.append(s)
        _say(args, _format_summary(s))
    (out / "results.csv").write_text(combined.getvalue())
    (out / "summary.json").write_text(json.dumps(
        {"preset": preset, "cells": summaries}, indent=2, sort_keys=True, default=str) + "\n")
    _say(args, f"wrote {out} ({len(cells)} cells, {time.perf_counter() - t0:.1f}s)")
    return 0


def cmd_play(args) -> int:
    raw = _load_json(args.config)
    if "agents" not in raw:
        raw["agents"] = [args.p1, args.p2]
    if args.character:
        raw["character"] = args.character
    doc = experiment_doc(raw)
    _apply_common(doc, args, doc)
    cfg = build_experiment(doc)
    char = cfg.load_character()
    agents = [h.build(char, p, stream(cfg.seed, 0, INIT_ROUND, p), cfg.delay, cfg.budget,
                      cfg.train) for p, h in enumerate(cfg.agents)]
    rngs = [stream(cfg.seed, 0, 0, SLOT_ACT[p]) for p in (0, 1)]
    res, rlog = run_round(char, agents, rngs, (cfg.seed, 0, 0), transcript=args.transcript,
                          reward=cfg.train.reward)
    names = char.names
    if not args.quiet:
        for d in rlog.decisions:
            print(f"frame {d.frame:5d}  P{d.player + 1} {cfg.agents[d.player].label:<12} "
                  f"{names[d.action]:<13} calls={d.forward_calls:4d} gens={d.generations:3d}")
    print(f"{cfg.agents[0].label} vs {cfg.agents[1].label} on {char.name}: winner {res.winner}, "
          f"hp_diff {res.hp_diff:+d}, {res.frames} frames, "
          f"calls P1={res.fwd_calls[0]} P2={res.fwd_calls[1]}, violations {res.violations}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "round.jsonl").write_text(rlog.to_jsonl())
    return 0


def cmd_plot(args) -> int:
    for p in args.curves:
        if not p.is_file():
            raise ConfigError(str(p), "no such curves file")
    svg = plot_curves(args.curves, column=args.column, title=args.title)
    if args.out is None:
        sys.stdout.write(svg)
        return 0
    dest = args.out
    if dest.suffix.lower() != ".svg":
        dest.mkdir(parents=True, exist_ok=True)
        dest = dest / "plot.svg"
    else:
        dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(svg)
    print(f"wrote {dest}")
    return 0


def cmd_inspect(args) -> int:
    try:
        m = load_model(args.model)
    except OSError as exc:
        print(f"rheaom: {exc}", file=sys.stderr)
        return 1
    except SnapshotError as exc:
        print(f"rheaom: {args.model}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary(m), indent=2))
    return 0


COMMANDS = {"play": cmd_play, "series": cmd_series, "reproduce": cmd_reproduce,
            "plot": cmd_plot, "inspect": cmd_inspect}


def main(argv: list[str] | None = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors
        return int(exc.code or 0)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"rheaom: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"rheaom: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
