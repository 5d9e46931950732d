"""Search for minimum-cost feasible strategies, using replay as a black-box oracle."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cost import CostConfig, all_off, all_on, feasibility_slack, total_cost
from .engine import ReplayConfig, Replayer, StrategyMatrix
from .grid import RoadGrid
from .mobility import ContactTrace


class NoFeasibleSolutionError(RuntimeError):
    """The all-on benchmark misses the success-ratio target on this trace."""


class SearchSpaceError(ValueError):
    """Exhaustive enumeration would exceed the evaluation cap."""


@dataclass(frozen=True)
class AnnealParams:
    initial_temp: float | None = None  # None: 5% of the all-on cost
    cooling_rate: float = 0.95
    moves_per_temp: int = 20

    def __post_init__(self):
        if not 0 < self.cooling_rate < 1:
            raise ValueError("cooling_rate must lie in (0, 1)")


@dataclass(frozen=True)
class SearchConfig:
    method: str = "greedy"  # "greedy" | "anneal"
    max_oracle_calls: int = 600
    anneal: AnnealParams = field(default_factory=AnnealParams)
    monte_carlo_runs: int = 3
    rng_seed: int = 0
    quantization_levels: int = 11
    feasibility_margin: float = 0.01  # guard against Monte Carlo luck
    revalidation_factor: int = 4

    def __post_init__(self):
        if self.method not in ("greedy", "anneal"):
            raise ValueError(f"unknown search method {self.method!r}")
        if self.max_oracle_calls < 1:
            raise ValueError("max_oracle_calls must be >= 1")


class _Oracle:
    """Cached strategy evaluations with common random numbers across candidates."""

    def __init__(self, replayer: Replayer, cost_cfg: CostConfig, search_cfg: SearchConfig):
        self.replayer = replayer
        self.cost_cfg = cost_cfg
        self.cfg = search_cfg
        self.cache: dict[str, tuple[float, float]] = {}  # digest -> (cost, slack)
        self.calls = 0
        self.log: list[dict] = []

    def evaluate(self, strategy: StrategyMatrix) -> tuple[float, float]:
        key = strategy.digest()
        if key in self.cache:
            return self.cache[key]
        result = self.replayer.run(
            strategy, runs=self.cfg.monte_carlo_runs, rng_seed=self.cfg.rng_seed
        )
        cost = total_cost(result.features, self.replayer.cfg.intervals, self.cost_cfg)
        slack = feasibility_slack(result, self.cost_cfg)
        self.calls += 1
        self.cache[key] = (cost, slack)
        self.log.append(
            {
                "step": self.calls,
                "candidate": key,
                "cost": cost,
                "feasible": bool(slack >= 0),
            }
        )
        return cost, slack

    @property
    def exhausted(self) -> bool:
        return self.calls >= self.cfg.max_oracle_calls


def _revalidate(strategy: StrategyMatrix, replayer: Replayer, cost_cfg: CostConfig,
                search_cfg: SearchConfig):
    """Fresh replay with a different seed and more runs; returns (result, ok)."""
    result = replayer.run(
        strategy,
        runs=search_cfg.monte_carlo_runs * search_cfg.revalidation_factor,
        rng_seed=search_cfg.rng_seed + 1,
    )
    result.cost = total_cost(result.features, replayer.cfg.intervals, cost_cfg)
    slack = feasibility_slack(result, cost_cfg)
    result.feasible = slack >= 0
    return result, result.feasible


def optimize(trace: ContactTrace, grid: RoadGrid, replay_cfg: ReplayConfig,
             cost_cfg: CostConfig, search_cfg: SearchConfig,
             log_path: str | None = None):
    """Minimize replication cost subject to the success-ratio constraint.

    Starts from the all-on benchmark (which must be feasible), walks the
    quantization lattice downward, and re-validates the winner on a fresh
    seed before returning (strategy, evaluation).
    """
    replayer = Replayer(trace, grid, replay_cfg)
    oracle = _Oracle(replayer, cost_cfg, search_cfg)
    L, T = grid.num_links, len(replay_cfg.intervals)
    q = search_cfg.quantization_levels
    start = all_on(L, T, quantization_levels=q)
    base = replayer.run(start, runs=search_cfg.monte_carlo_runs, rng_seed=search_cfg.rng_seed)
    start_cost = total_cost(base.features, replay_cfg.intervals, cost_cfg)
    start_slack = feasibility_slack(base, cost_cfg)
    oracle.cache[start.digest()] = (start_cost, start_slack)
    oracle.calls = 1
    oracle.log.append(
        {"step": 1, "candidate": start.digest(), "cost": start_cost,
         "feasible": bool(start_slack >= 0)}
    )

    if base.empty_zoi_warning:
        # nothing to serve: the empty strategy is feasible at zero cost
        zero = all_off(L, T, quantization_levels=q)
        result, _ = _revalidate(zero, replayer, cost_cfg, search_cfg)
        _write_log(oracle, log_path)
        return zero, result

    if start_slack < 0:
        _write_log(oracle, log_path)
        raise NoFeasibleSolutionError(
            f"all-on strategy misses the target (slack {start_slack:.4f})"
        )

    if search_cfg.method == "greedy":
        history = _greedy_descent(start, start_cost, oracle, search_cfg)
    else:
        history = _anneal(start, start_cost, start_slack, oracle, search_cfg)

    # walk candidates from best to start until one survives re-validation
    for candidate in reversed(history):
        result, ok = _revalidate(candidate, replayer, cost_cfg, search_cfg)
        if ok:
            _write_log(oracle, log_path)
            return candidate, result
    result, _ = _revalidate(start, replayer, cost_cfg, search_cfg)
    _write_log(oracle, log_path)
    return start, result


def _greedy_descent(start: StrategyMatrix, start_cost: float, oracle: _Oracle,
                    cfg: SearchConfig) -> list[StrategyMatrix]:
    """Repeatedly apply the non-worsening feasible one-step decrement with the
    largest cost reduction; ties resolve to the lowest (link, interval, param).

    Zero-reduction moves are taken too (they shed quantization levels that do
    not pay for themselves), so termination comes from the finite lattice.
    """
    current = start
    cost = start_cost
    history = [start]
    while not oracle.exhausted:
        a_lv, b_lv = current.levels()
        best = None  # (cost, order_index, candidate)
        order = 0
        stop = False
        for l in range(a_lv.shape[0]):
            for t in range(a_lv.shape[1]):
                for param, lv in (("a", a_lv), ("b", b_lv)):
                    if lv[l, t] == 0:
                        order += 1
                        continue
                    if oracle.exhausted:
                        stop = True
                        break
                    cand = current.with_level(l, t, param, int(lv[l, t]) - 1)
                    c_cost, c_slack = oracle.evaluate(cand)
                    if c_slack >= cfg.feasibility_margin and c_cost <= cost:
                        if best is None or c_cost < best[0]:
                            best = (c_cost, order, cand)
                    order += 1
                if stop:
                    break
            if stop:
                break
        if best is None:
            break
        cost, _, current = best
        history.append(current)
        if stop:
            break
    return history


def _anneal(start: StrategyMatrix, start_cost: float, start_slack: float,
            oracle: _Oracle, cfg: SearchConfig) -> list[StrategyMatrix]:
    """Metropolis walk over single-entry one-step moves; infeasible states
    are rejected outright. Returns feasible candidates ordered worst-to-best."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.rng_seed, 77])))
    params = cfg.anneal
    temp = params.initial_temp if params.initial_temp is not None else 0.05 * max(start_cost, 1e-12)
    current, cur_cost = start, start_cost
    best = [(start_cost, start)]
    move = 0
    L, T = start.a.shape
    while not oracle.exhausted:
        l = int(rng.integers(L))
        t = int(rng.integers(T))
        param = "a" if rng.integers(2) == 0 else "b"
        step = 1 if rng.integers(2) == 0 else -1
        a_lv, b_lv = current.levels()
        lv = a_lv if param == "a" else b_lv
        new_level = int(lv[l, t]) + step
        if not 0 <= new_level <= cfg.quantization_levels - 1:
            continue
        cand = current.with_level(l, t, param, new_level)
        c_cost, c_slack = oracle.evaluate(cand)
        move += 1
        if move % params.moves_per_temp == 0:
            temp *= params.cooling_rate
        if c_slack < cfg.feasibility_margin:
            continue
        delta = c_cost - cur_cost
        if delta <= 0 or rng.random() < math.exp(-delta / max(temp, 1e-12)):
            current, cur_cost = cand, c_cost
            if c_cost < best[-1][0]:
                best.append((c_cost, cand))
    return [s for _, s in best]


def _write_log(oracle: _Oracle, log_path: str | None):
    if log_path is None:
        return
    with open(log_path, "w") as fh:
        for row in oracle.log:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def exhaustive_solve(trace: ContactTrace, grid: RoadGrid, replay_cfg: ReplayConfig,
                     cost_cfg: CostConfig, monte_carlo_runs: int = 3, rng_seed: int = 0,
                     max_links: int = 3, max_intervals: int = 2,
                     eval_cap: int = 10_000_000) -> StrategyMatrix:
    """Globally optimal strategy on the coarsened 3-level lattice, by enumeration.

    Only for oracle-scale problems; refuses when the candidate count times
    the Monte Carlo runs would exceed the evaluation cap.
    """
    L, T = grid.num_links, len(replay_cfg.intervals)
    if L > max_links or T > max_intervals:
        raise SearchSpaceError(f"{L} links x {T} intervals exceeds ({max_links}, {max_intervals})")
    n_entries = 2 * L * T
    n_candidates = 3 ** n_entries
    if n_candidates * monte_carlo_runs > eval_cap:
        raise SearchSpaceError(
            f"{n_candidates} candidates x {monte_carlo_runs} runs exceeds cap {eval_cap}"
        )
    replayer = Replayer(trace, grid, replay_cfg)
    best = None  # (cost, strategy)
    for levels in itertools.product((0, 1, 2), repeat=n_entries):
        half = n_entries // 2
        a_lv = np.array(levels[:half]).reshape(L, T)
        b_lv = np.array(levels[half:]).reshape(L, T)
        cand = StrategyMatrix.from_levels(a_lv, b_lv, quantization_levels=3)
        result = replayer.run(cand, runs=monte_carlo_runs, rng_seed=rng_seed)
        slack = feasibility_slack(result, cost_cfg)
        if slack < 0:
            continue
        cost = total_cost(result.features, replay_cfg.intervals, cost_cfg)
        if best is None or cost < best[0]:
            best = (cost, cand)
    if best is None:
        raise NoFeasibleSolutionError("no feasible strategy exists on the coarsened lattice")
    return best[1]
