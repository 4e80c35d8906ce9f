"""Cross-entropy search over a plan's continuous parameters.

Each iteration samples a batch, rolls it out, keeps the cheapest samples of
the best available feasibility tier and refits independent normals to them.
The best goal-feasible sample ever seen is tracked outside the distribution.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from planreal import sim
from planreal.params import (
    DEFAULT_NOISE_STD, DEFAULT_STD_FLOOR, DistributionState, Layout, ParamVector, fit_elites,
    initial_distribution, sample,
)

HISTORY_SCHEMA = "planreal.history"
HISTORY_VERSION = 1


class ConfigError(ValueError):
    pass


class NoElites(RuntimeError):
    """Neither goal-feasible nor all-actions-ok samples in the batch."""


class NoFeasibleRealization(RuntimeError):
    """No goal-feasible sample was found in any iteration."""

    def __init__(self, history, best_effort=None):
        super().__init__(f"no goal-feasible sample in {len(history)} iterations")
        self.history = history
        self.best_effort = best_effort  # (ParamVector, result) of the best tier-2 sample, or None


@dataclass(frozen=True)
class CEConfig:
    n_start: int = 3000
    n_end: int = 300
    ramp_iters: int = 10
    n_elite: int = 50
    max_iters: int = 30
    convergence_std_tol: float = 0.01
    std_floor: float = DEFAULT_STD_FLOOR
    noise_injection_std: float = DEFAULT_NOISE_STD
    master_seed: int = 0
    workers: int = 1
    log_samples: int = 24  # per iteration, with base paths, for plotting
    trace_stride: int = 25

    def __post_init__(self):
        if not self.n_start >= self.n_end >= self.n_elite >= 1:
            raise ConfigError("need n_start >= n_end >= n_elite >= 1")
        if self.ramp_iters < 1 or self.max_iters < 1:
            raise ConfigError("ramp_iters and max_iters must be at least 1")
        if min(self.convergence_std_tol, self.std_floor, self.noise_injection_std) <= 0:
            raise ConfigError("tolerances must be positive")
        if self.workers < 1 or self.log_samples < 0 or self.trace_stride < 1:
            raise ConfigError("workers and trace_stride must be positive, log_samples non-negative")

    def n_env(self, j: int) -> int:
        return int(round(self.n_start + (self.n_end - self.n_start) * min(j, self.ramp_iters)
                         / self.ramp_iters))

    @classmethod
    def from_dict(cls, d: dict) -> "CEConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


class Outcome(Protocol):
    goal_ok: bool
    all_actions_ok: bool
    total_cost: float


def _goal_feasible(r) -> bool:
    return bool(r.goal_ok and r.all_actions_ok)


@dataclass(frozen=True)
class EliteSelection:
    indices: tuple[int, ...]
    tier: int  # 1 goal-feasible, 2 all actions ok
    noise_injection: bool


def select_elites(results: Sequence[Outcome], params_list: Sequence, n_elite: int) -> EliteSelection:
    """Cheapest ``n_elite`` samples of the best non-empty feasibility tier.

    Ties in cost go to the lower sample index. Raises :class:`NoElites` when
    no sample has every action succeed.
    """
    if len(results) != len(params_list):
        raise ValueError("results and params_list differ in length")
    tier1 = [i for i, r in enumerate(results) if _goal_feasible(r)]
    if tier1:
        pool, tier = tier1, 1
    else:
        pool, tier = [i for i, r in enumerate(results) if r.all_actions_ok], 2
    if not pool:
        raise NoElites("no feasible samples")
    pool.sort(key=lambda i: (results[i].total_cost, i))
    chosen = tuple(pool[:n_elite])
    return EliteSelection(chosen, tier, len(pool) == 1)


@dataclass
class IterationRecord:
    iter: int
    n_sampled: int
    n_goal_feasible: int
    n_actions_ok: int
    best_cost_so_far: Optional[float]
    elite_tier: Optional[int]
    n_elites: int
    noise_injection: bool
    theta: dict  # distribution the batch was drawn from
    samples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def feasible_fraction(self) -> float:
        return self.n_goal_feasible / self.n_sampled


@dataclass
class OptimizeResult:
    best: ParamVector
    best_result: object
    history: list
    final: DistributionState
    converged: bool


class Evaluator(Protocol):
    def __call__(self, values: np.ndarray, iteration: int) -> Sequence[Outcome]: ...


class RolloutEvaluator:
    """Evaluates parameter batches by simulation rollouts of a plan."""

    def __init__(self, scenario, plan, master_seed: int = 0, workers: int = 1,
                 trace_stride: int = 25):
        self.scenario = scenario
        self.plan = sim.compile_plan(scenario, plan)
        self.master_seed = master_seed
        self.workers = workers
        self.trace_stride = trace_stride

    @property
    def layout(self) -> Layout:
        return self.plan.layout

    def __call__(self, values: np.ndarray, iteration: int):
        seed = sim.sample_seed(self.master_seed, iteration)
        return sim.rollout_batch(self.scenario, self.plan, list(values), seed, self.workers)

    def base_path(self, z: np.ndarray) -> list:
        r = sim.rollout(self.scenario, self.plan, z, stride=self.trace_stride)
        return [[round(float(x), 4), round(float(y), 4)] for x, y in r.trace[:, [sim.T_BX, sim.T_BY]]]


def _draw(dist: DistributionState, rng: np.random.Generator, n: int) -> np.ndarray:
    if n == 0:
        return np.zeros((0, dist.layout.size))
    return np.stack([sample(dist, rng).values for _ in range(n)])


def _logged(idx: Sequence[int], best_i: Optional[int], k: int) -> list[int]:
    if k <= 0:
        return []
    picks = [best_i] if best_i is not None else []
    for i in idx:
        if len(picks) >= k:
            break
        if i != best_i:
            picks.append(i)
    return sorted(picks)


def optimize_with(evaluate: Evaluator, layout: Layout, config: CEConfig,
                  on_iteration: Optional[Callable[[IterationRecord], None]] = None) -> OptimizeResult:
    """Run the cross-entropy loop against any batch evaluator."""
    dist = initial_distribution(layout, config.std_floor)
    history: list[IterationRecord] = []
    best = None  # (cost, values, result)
    effort = None
    converged = False
    tracer = getattr(evaluate, "base_path", None)
    for j in range(config.max_iters):
        rng = np.random.default_rng([config.master_seed, j])
        n = config.n_env(j)
        Z = _draw(dist, rng, n)
        results = list(evaluate(Z, j))
        feas = [i for i, r in enumerate(results) if _goal_feasible(r)]
        ok = [i for i, r in enumerate(results) if r.all_actions_ok]
        it_best = min(feas, key=lambda i: (results[i].total_cost, i)) if feas else None
        if it_best is not None and (best is None or results[it_best].total_cost < best[0]):
            best = (results[it_best].total_cost, Z[it_best].copy(), results[it_best])
        if not feas and ok:
            e = min(ok, key=lambda i: (results[i].total_cost, i))
            if effort is None or results[e].total_cost < effort[0]:
                effort = (results[e].total_cost, Z[e].copy(), results[e])
        try:
            sel = select_elites(results, Z, config.n_elite)
        except NoElites:
            sel = None
        logged = []
        for i in _logged(range(n), it_best, config.log_samples):
            entry = {"index": i, "values": [float(v) for v in Z[i]],
                     "goal_feasible": _goal_feasible(results[i]),
                     "all_actions_ok": bool(results[i].all_actions_ok),
                     "total_cost": float(results[i].total_cost), "best": i == it_best}
            if tracer is not None:
                entry["base_path"] = tracer(Z[i])
            logged.append(entry)
        rec = IterationRecord(
            iter=j, n_sampled=n, n_goal_feasible=len(feas), n_actions_ok=len(ok),
            best_cost_so_far=None if best is None else float(best[0]),
            elite_tier=None if sel is None else sel.tier,
            n_elites=0 if sel is None else len(sel.indices),
            noise_injection=bool(sel is not None and sel.noise_injection),
            theta=dist.to_dict(), samples=logged,
        )
        history.append(rec)
        if on_iteration is not None:
            on_iteration(rec)
        if sel is None:
            dist = initial_distribution(layout, config.std_floor)
            continue
        elites = [ParamVector(Z[i], layout) for i in sel.indices]
        dist = fit_elites(elites, dist, config.noise_injection_std)
        if float(np.max(dist.std, initial=0.0)) <= config.convergence_std_tol:
            converged = True
            break
    if best is None:
        be = None if effort is None else (ParamVector(effort[1], layout), effort[2])
        raise NoFeasibleRealization(history, be)
    return OptimizeResult(ParamVector(best[1], layout), best[2], history, dist, converged)


def optimize(scenario, plan, config: CEConfig, on_iteration=None) -> OptimizeResult:
    """Realize ``plan`` (bound to ``scenario``'s parameters) by cross-entropy search."""
    ev = RolloutEvaluator(scenario, plan, config.master_seed, config.workers, config.trace_stride)
    return optimize_with(ev, ev.layout, config, on_iteration)


# ---------------------------------------------------------------------------
# History file (JSON-lines, no timestamps so equal runs give equal bytes)


def history_header(config: CEConfig, layout: Layout, plan_lines: Sequence[str], scenario_name: str) -> dict:
    return {
        "schema": HISTORY_SCHEMA, "version": HISTORY_VERSION, "scenario": scenario_name,
        "plan": list(plan_lines), "config": config.to_dict(),
        "layout": [{"id": s.id, "kind": s.kind, "offset": off, "dim": dim}
                   for s, (_, off, dim) in zip(layout.specs, layout.offsets)],
    }


def _line(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False) + "\n"


def write_history(path, header: dict, history: Sequence[IterationRecord], final: dict) -> None:
    with open(path, "w") as f:
        f.write(_line(header))
        for rec in history:
            f.write(_line({"record": "iteration", **rec.to_dict()}))
        f.write(_line({"record": "final", **final}))


def read_history(path) -> tuple[dict, list[dict], Optional[dict]]:
    with open(path) as f:
        lines = [json.loads(l) for l in f if l.strip()]
    if not lines or lines[0].get("schema") != HISTORY_SCHEMA:
        raise ValueError("not a run-history file")
    iters = [l for l in lines[1:] if l.get("record") == "iteration"]
    finals = [l for l in lines[1:] if l.get("record") == "final"]
    return lines[0], iters, finals[-1] if finals else None


def best_cost_monotone(history: Sequence) -> bool:
    """best_cost_so_far never increases (missing values count as +inf)."""
    prev = math.inf
    for rec in history:
        c = rec["best_cost_so_far"] if isinstance(rec, dict) else rec.best_cost_so_far
        c = math.inf if c is None else c
        if c > prev:
            return False
        prev = c
    return True
