"""Command-line entry point: ``planreal plan | realize | replay | plot``.

Exit codes: 0 success, 1 input error, 2 symbolic task unsolvable,
3 no feasible realization (realize) or goal not reached (replay).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from planreal import __version__, ce, sim, svg, symbolic
from planreal.world import ScenarioError, load_scenario_file

EXIT_OK, EXIT_INPUT, EXIT_UNSOLVABLE, EXIT_INFEASIBLE = 0, 1, 2, 3


class InputError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None


def _task(args):
    try:
        return symbolic.load_task(_read(args.domain), _read(args.problem))
    except symbolic.PDDLError as exc:
        raise InputError(f"PDDL: {exc}") from None


def _scenario(path):
    try:
        return load_scenario_file(path)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except ScenarioError as exc:
        raise InputError(f"scenario {path}: {exc}") from None


def _config(args) -> ce.CEConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(_read(args.config))
        except json.JSONDecodeError as exc:
            raise InputError(f"config {args.config}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise InputError(f"config {args.config}: expected a JSON object")
    if args.seed is not None:
        data["master_seed"] = args.seed
    try:
        return ce.CEConfig.from_dict(data)
    except ce.ConfigError as exc:
        raise InputError(f"config: {exc}") from None


def _bound_plan(args, scenario):
    dom, prob = _task(args)
    try:
        p = symbolic.plan(dom, prob)
    except (symbolic.Unsolvable, symbolic.NodeLimit):
        raise
    try:
        return symbolic.bind(p, scenario)
    except symbolic.BindingError as exc:
        raise InputError(str(exc)) from None


def cmd_plan(args) -> int:
    dom, prob = _task(args)
    p = symbolic.plan(dom, prob)
    for line in p.lines():
        print(line)
    return EXIT_OK


def cmd_realize(args) -> int:
    scenario = _scenario(args.scenario)
    config = _config(args)
    plan = _bound_plan(args, scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    layout = sim.plan_layout(plan)
    header = ce.history_header(config, layout, plan.lines(), scenario.name)
    hist_path, best_path = out / "history.jsonl", out / "best.json"

    def progress(rec):
        print(f"iter {rec.iter:2d}  n={rec.n_sampled:5d}  goal-feasible={rec.n_goal_feasible:5d}  "
              f"actions-ok={rec.n_actions_ok:5d}  best={rec.best_cost_so_far}", file=sys.stderr)

    try:
        res = ce.optimize(scenario, plan, config, on_iteration=None if args.quiet else progress)
    except ce.NoFeasibleRealization as exc:
        final = {"status": "no_feasible_realization", "best_effort": None}
        if exc.best_effort is not None:
            z, r = exc.best_effort
            final["best_effort"] = {"values": [float(v) for v in z.values], **r.summary()}
        ce.write_history(hist_path, header, exc.history, final)
        _manifest(args, out, config, [hist_path])
        print("no goal-feasible realization found", file=sys.stderr)
        return EXIT_INFEASIBLE
    final = {"status": "feasible", "converged": res.converged,
             "values": [float(v) for v in res.best.values], **res.best_result.summary()}
    ce.write_history(hist_path, header, res.history, final)
    best = {"plan": plan.lines(), "layout": header["layout"],
            "values": [float(v) for v in res.best.values], "result": res.best_result.summary()}
    best_path.write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    _manifest(args, out, config, [hist_path, best_path])
    print(json.dumps({"total_cost": res.best_result.total_cost, "iterations": len(res.history),
                      "converged": res.converged}))
    return EXIT_OK


def _manifest(args, out: Path, config: ce.CEConfig, outputs) -> None:
    m = {
        "tool": "planreal", "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "command": "realize",
        "inputs": {k: {"path": str(Path(p).resolve()), "sha256": _sha256(p)}
                   for k, p in (("scenario", args.scenario), ("domain", args.domain),
                                ("problem", args.problem))},
        "config": config.to_dict(),
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    (out / "manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")


def cmd_replay(args) -> int:
    scenario = _scenario(args.scenario)
    plan = _bound_plan(args, scenario)
    try:
        data = json.loads(_read(args.sample))
        values = np.asarray(data["values"], dtype=float)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        raise InputError(f"{args.sample}: expected a JSON object with a 'values' list") from None
    layout = sim.plan_layout(plan)
    if values.shape != (layout.size,):
        raise InputError(f"{args.sample}: plan needs {layout.size} values, file has {values.size}")
    stride = args.stride if args.trace else 0
    r = sim.rollout(scenario, plan, values, stride=stride)
    report = r.summary()
    report["actions"] = [{"action": name, "success": ok, "cost": c}
                         for name, ok, c in zip(plan.lines(), r.action_success, r.action_cost)]
    print(json.dumps(report, indent=2))
    if args.trace:
        sim.write_trace(args.trace, scenario, r, plan.lines(), stride)
    return EXIT_OK if r.goal_ok else EXIT_INFEASIBLE


def cmd_plot(args) -> int:
    scenario = _scenario(args.scenario)
    try:
        lines = [json.loads(l) for l in _read(args.input).splitlines() if l.strip()]
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.input}: line {exc.lineno}: {exc.msg}") from None
    head = lines[0] if lines else {}
    if head.get("schema") == ce.HISTORY_SCHEMA:
        iters = [l for l in lines[1:] if l.get("record") == "iteration"]
        if not iters:
            raise InputError(f"{args.input}: history has no iterations")
        k = args.iteration if args.iteration is not None else len(iters) - 1
        if not 0 <= k < len(iters):
            raise InputError(f"--iteration must be in [0, {len(iters) - 1}]")
        text = svg.history_figure(scenario, head, iters[k])
    elif head.get("schema") == sim.TRACE_SCHEMA:
        if head.get("version") != sim.TRACE_VERSION:
            raise InputError(f"{args.input}: unsupported trace version {head.get('version')}")
        text = svg.trace_figure(scenario, lines[1:])
    else:
        raise InputError(f"{args.input}: neither a run history nor a trace")
    Path(args.out).write_text(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="planreal", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="print a shortest symbolic plan")
    p.add_argument("--domain", required=True)
    p.add_argument("--problem", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("realize", help="search continuous parameters for the plan")
    for flag in ("--scenario", "--domain", "--problem"):
        p.add_argument(flag, required=True)
    p.add_argument("--config", help="JSON object of optimizer settings")
    p.add_argument("--seed", type=int, help="overrides master_seed from the config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quiet", action="store_true", help="no per-iteration progress on stderr")
    p.set_defaults(func=cmd_realize)

    p = sub.add_parser("replay", help="re-run one parameter vector")
    for flag in ("--scenario", "--domain", "--problem"):
        p.add_argument(flag, required=True)
    p.add_argument("sample", help="JSON file with a 'values' list (e.g. best.json)")
    p.add_argument("--trace", help="write a JSON-lines state trace here")
    p.add_argument("--stride", type=int, default=5, help="steps between trace rows")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("plot", help="render a run history or trace as SVG")
    p.add_argument("input", help="history.jsonl or trace file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iteration", type=int, help="history iteration to draw (default: last)")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "stride", 1) < 1:
        print("error: --stride must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except symbolic.Unsolvable as exc:
        print(f"unsolvable: {exc}", file=sys.stderr)
        return EXIT_UNSOLVABLE
    except symbolic.NodeLimit as exc:
        print(f"unsolvable within limits: {exc}", file=sys.stderr)
        return EXIT_UNSOLVABLE


if __name__ == "__main__":
    sys.exit(main())
