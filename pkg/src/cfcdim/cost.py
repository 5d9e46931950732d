"""Resource cost of a replication strategy and the success-ratio constraint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import (
    EvaluationResult,
    LinkFeatures,
    ReplayConfig,
    Replayer,
    StrategyMatrix,
    replay_cfc,
)
from .grid import RoadGrid
from .mobility import ContactTrace


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class CostConfig:
    content_size: float = 32e6  # bits
    beta: float = 1.0  # bandwidth-vs-memory weight
    alpha_target: float = 0.9

    def __post_init__(self):
        if self.content_size <= 0:
            raise CostError("content_size must be > 0")
        if self.beta < 0:
            raise CostError("beta must be >= 0")
        if not 0 <= self.alpha_target <= 1:
            raise CostError("alpha_target must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "content_size": self.content_size,
            "beta": self.beta,
            "alpha_target": self.alpha_target,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "CostConfig":
        return CostConfig(
            content_size=doc["content_size"],
            beta=doc["beta"],
            alpha_target=doc["alpha_target"],
        )


def total_cost(features: LinkFeatures, durations, cfg: CostConfig) -> float:
    """Duration-weighted memory + bandwidth cost:

    sum over links and intervals of (D * holders + beta * transmissions) * d_t,
    normalized by the window length sum(d_t).
    """
    d = np.asarray(durations, dtype=float)
    nc = features.mean_content_holders
    gamma = features.mean_concurrent_transmissions
    if nc.shape[1] != len(d):
        raise CostError(f"{nc.shape[1]} feature intervals vs {len(d)} durations")
    per_interval = cfg.content_size * nc.sum(axis=0) + cfg.beta * gamma.sum(axis=0)
    return float((per_interval * d).sum() / d.sum())


def is_feasible(result: EvaluationResult, cfg: CostConfig) -> bool:
    """True iff every defined success ratio meets the target."""
    return all(
        s >= cfg.alpha_target for s in result.success_ratios if s is not None
    )


def feasibility_slack(result: EvaluationResult, cfg: CostConfig) -> float:
    """min_t (alpha_t - alpha_0) over defined intervals; +inf if none defined."""
    defined = [s for s in result.success_ratios if s is not None]
    if not defined:
        return float("inf")
    return min(defined) - cfg.alpha_target


def all_on(num_links: int, num_intervals: int, quantization_levels: int = 11,
           b_value: float = 1.0) -> StrategyMatrix:
    """Maximal-resource benchmark: replicate at every opportunity, keep everywhere.

    b_value=1 is the retention-maximal reading used as the cost benchmark;
    b_value=0 (replicate always, never store on entry/receipt) is exposed for
    comparison but floats nothing.
    """
    if num_links < 1 or num_intervals < 1:
        raise CostError("dimensions must be positive")
    return StrategyMatrix.uniform(
        num_links, num_intervals, a=1.0, b=b_value, quantization_levels=quantization_levels
    )


def all_off(num_links: int, num_intervals: int, quantization_levels: int = 11) -> StrategyMatrix:
    return StrategyMatrix.uniform(
        num_links, num_intervals, a=0.0, b=0.0, quantization_levels=quantization_levels
    )


def resource_savings(candidate_cost: float, all_on_cost: float) -> float:
    """Fraction of the benchmark cost avoided by the candidate."""
    if all_on_cost <= 0:
        raise CostError("savings undefined: benchmark cost is zero")
    return 1.0 - candidate_cost / all_on_cost


def evaluate_strategy(trace: ContactTrace, strategy: StrategyMatrix, replay_cfg: ReplayConfig,
                      grid: RoadGrid, cost_cfg: CostConfig,
                      replayer: Replayer | None = None, runs: int | None = None,
                      rng_seed: int | None = None) -> EvaluationResult:
    """Replay a strategy and attach cost and feasibility."""
    if replayer is None:
        result = replay_cfc(trace, strategy, replay_cfg, grid)
    else:
        result = replayer.run(strategy, runs=runs, rng_seed=rng_seed)
    result.cost = total_cost(result.features, replay_cfg.intervals, cost_cfg)
    result.feasible = is_feasible(result, cost_cfg)
    return result


def cost_report(result: EvaluationResult, all_on_cost: float | None = None) -> dict:
    """JSON-ready cost/feasibility summary for one evaluated strategy."""
    report = {
        "cost": result.cost,
        "alpha": [None if s is None else float(s) for s in result.success_ratios],
        "feasible": result.feasible,
        "undefined_intervals": list(result.undefined_intervals),
    }
    if all_on_cost is not None and all_on_cost > 0:
        report["savings_vs_all_on"] = resource_savings(result.cost, all_on_cost)
    else:
        report["savings_vs_all_on"] = None
    return report
