"""Training-set construction: labeled (features, strategy) records per interval.

Each record pairs one interval's flattened per-link features with the
per-link strategy levels used in that replay. Replays that miss the
success-ratio target anywhere in the window are relabeled all-off, which
teaches learners which inputs admit no usable strategy.
"""

from __future__ import annotations

import dataclasses
import gzip
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .cost import CostConfig, all_off, feasibility_slack, total_cost
from .engine import FEATURE_ORDER, MOBILITY_FEATURES, ReplayConfig, Replayer, StrategyMatrix
from .grid import RoadGrid, grid_layout
from .mobility import ContactTrace, MobilityConfig, save_trace, simulate_mobility
from .optimize import NoFeasibleSolutionError, SearchConfig, optimize

SCHEMA_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    record_id: str
    episode_id: str
    trace_ref: str
    interval: int
    features: tuple[float, ...]  # per link, FEATURE_ORDER flattened
    a_levels: tuple[int, ...]
    b_levels: tuple[int, ...]
    feasible: bool
    meta: dict

    def to_json_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "episode_id": self.episode_id,
            "trace_ref": self.trace_ref,
            "interval": self.interval,
            "features": list(self.features),
            "a_levels": list(self.a_levels),
            "b_levels": list(self.b_levels),
            "feasible": self.feasible,
            "meta": self.meta,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "DatasetRecord":
        return DatasetRecord(
            record_id=doc["record_id"],
            episode_id=doc["episode_id"],
            trace_ref=doc["trace_ref"],
            interval=doc["interval"],
            features=tuple(doc["features"]),
            a_levels=tuple(doc["a_levels"]),
            b_levels=tuple(doc["b_levels"]),
            feasible=doc["feasible"],
            meta=doc["meta"],
        )


@dataclass
class Dataset:
    header: dict
    records: list[DatasetRecord]
    traces: dict[str, ContactTrace] = field(default_factory=dict)

    @property
    def num_links(self) -> int:
        return self.header["num_links"]

    def feature_matrix(self, mobility_only: bool = False) -> np.ndarray:
        """Record features as [n_records x (links * features)]; optionally only
        the mobility columns available before a strategy is chosen."""
        X = np.array([r.features for r in self.records], dtype=float)
        if not mobility_only:
            return X
        keep = mobility_column_indices(self.num_links)
        return X[:, keep]

    def label_matrix(self) -> np.ndarray:
        """[n_records x (2 * links)]: a levels then b levels per record."""
        return np.array(
            [list(r.a_levels) + list(r.b_levels) for r in self.records], dtype=int
        )


def mobility_column_indices(num_links: int) -> list[int]:
    per_link = len(FEATURE_ORDER)
    pm = len(MOBILITY_FEATURES)
    return [l * per_link + j for l in range(num_links) for j in range(pm)]


class StrategySampler:
    """Draws candidate strategies: a mix of optimizer outputs (one per trace,
    cached) and random draws on the quantization lattice.

    random_mode "uniform" samples every entry uniformly; "retention" keeps
    the keep-probability levels at b_floor_level or above, which matters at
    tight success-ratio targets where survival decays exponentially in the
    number of link crossings and uniform keep levels float nothing.
    """

    def __init__(self, quantization_levels: int = 11, optimizer_share: float = 0.5,
                 search_cfg: SearchConfig | None = None, random_mode: str = "uniform",
                 b_floor_level: int = 9):
        if random_mode not in ("uniform", "retention"):
            raise DatasetError(f"unknown random_mode {random_mode!r}")
        self.q = quantization_levels
        self.optimizer_share = optimizer_share
        self.random_mode = random_mode
        self.b_floor_level = min(b_floor_level, quantization_levels - 1)
        self.search_cfg = search_cfg or SearchConfig(
            max_oracle_calls=150, monte_carlo_runs=2, quantization_levels=quantization_levels
        )
        self._opt_cache: dict[str, StrategyMatrix | None] = {}

    def sample(self, rng: np.random.Generator, trace_ref: str, trace: ContactTrace,
               grid: RoadGrid, replay_cfg: ReplayConfig, cost_cfg: CostConfig) -> StrategyMatrix:
        L, T = grid.num_links, len(replay_cfg.intervals)
        if rng.random() < self.optimizer_share:
            cached = self._optimizer_strategy(trace_ref, trace, grid, replay_cfg, cost_cfg)
            if cached is not None:
                return cached
        a_lv = rng.integers(0, self.q, size=(L, T))
        b_lo = self.b_floor_level if self.random_mode == "retention" else 0
        b_lv = rng.integers(b_lo, self.q, size=(L, T))
        return StrategyMatrix.from_levels(a_lv, b_lv, self.q)

    def _optimizer_strategy(self, trace_ref, trace, grid, replay_cfg, cost_cfg):
        if trace_ref not in self._opt_cache:
            try:
                strategy, _ = optimize(trace, grid, replay_cfg, cost_cfg, self.search_cfg)
                self._opt_cache[trace_ref] = strategy
            except NoFeasibleSolutionError:
                self._opt_cache[trace_ref] = None
        return self._opt_cache[trace_ref]


def build_dataset(grid: RoadGrid, mobility_cfgs: list[MobilityConfig],
                  replay_cfg: ReplayConfig, cost_cfg: CostConfig,
                  strategy_sampler: StrategySampler, n_records: int,
                  rng_seed: int = 0, episodes_per_trace: int = 8,
                  n_jobs: int = 1) -> Dataset:
    """Simulate, replay and label until n_records interval-records exist.

    Episodes reuse a pool of simulated traces (episodes_per_trace draws per
    trace). With n_jobs > 1, whole traces are built in parallel workers;
    per-episode seeds keep the result independent of the worker split.
    """
    if n_records < 0:
        raise DatasetError("n_records must be >= 0")
    T = len(replay_cfg.intervals)
    n_episodes = math.ceil(n_records / T) if n_records else 0
    n_traces = math.ceil(n_episodes / episodes_per_trace) if n_episodes else 0
    if n_jobs > 1 and n_traces > 1:
        from joblib import Parallel, delayed

        chunks = Parallel(n_jobs=n_jobs)(
            delayed(_build_trace_episodes)(
                grid, mobility_cfgs, replay_cfg, cost_cfg, strategy_sampler,
                n_records, rng_seed, episodes_per_trace, trace_idx,
            )
            for trace_idx in range(n_traces)
        )
    else:
        chunks = [
            _build_trace_episodes(
                grid, mobility_cfgs, replay_cfg, cost_cfg, strategy_sampler,
                n_records, rng_seed, episodes_per_trace, trace_idx,
            )
            for trace_idx in range(n_traces)
        ]
    records: list[DatasetRecord] = []
    traces: dict[str, ContactTrace] = {}
    for chunk_records, ref, trace in chunks:
        records.extend(chunk_records)
        traces[ref] = trace
    records = records[:n_records]
    header = _dataset_header(grid, replay_cfg, cost_cfg, strategy_sampler, rng_seed)
    return Dataset(header=header, records=records, traces=traces)


def _build_trace_episodes(grid, mobility_cfgs, replay_cfg, cost_cfg, strategy_sampler,
                          n_records, rng_seed, episodes_per_trace, trace_idx):
    T = len(replay_cfg.intervals)
    L = grid.num_links
    n_episodes = math.ceil(n_records / T)
    mob = mobility_cfgs[trace_idx % len(mobility_cfgs)]
    trace_ref = f"trace{trace_idx:05d}"
    seeded = dataclasses.replace(mob, rng_seed=_mix_seed(rng_seed, trace_idx))
    trace = simulate_mobility(grid, seeded)
    replayer = Replayer(trace, grid, replay_cfg)
    records: list[DatasetRecord] = []
    first_ep = trace_idx * episodes_per_trace
    for ep in range(first_ep, min(first_ep + episodes_per_trace, n_episodes)):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([rng_seed, 2, ep])))
        strategy = strategy_sampler.sample(rng, trace_ref, trace, grid, replay_cfg, cost_cfg)
        result = replayer.run(strategy, rng_seed=_mix_seed(rng_seed, ep) + 1)
        feasible = feasibility_slack(result, cost_cfg) >= 0
        label = strategy if feasible else all_off(L, T, strategy.quantization_levels)
        a_lv, b_lv = label.levels()
        slack = feasibility_slack(result, cost_cfg)
        meta = {
            "tx_radius": trace.cfg.tx_radius,
            "speed_model": trace.cfg.speed_model.to_json_dict(),
            "seed": trace.cfg.rng_seed,
            "cost": total_cost(result.features, replay_cfg.intervals, cost_cfg),
            "slack": None if math.isinf(slack) else round(slack, 6),
        }
        for t in range(T):
            feats = tuple(
                float(result.features.matrix(name)[l, t])
                for l in range(L)
                for name in FEATURE_ORDER
            )
            records.append(
                DatasetRecord(
                    record_id=f"e{ep:06d}t{t}",
                    episode_id=f"e{ep:06d}",
                    trace_ref=trace_ref,
                    interval=t,
                    features=feats,
                    a_levels=tuple(int(v) for v in a_lv[:, t]),
                    b_levels=tuple(int(v) for v in b_lv[:, t]),
                    feasible=feasible,
                    meta=meta,
                )
            )
    return records, trace_ref, trace


def _dataset_header(grid, replay_cfg, cost_cfg, strategy_sampler, rng_seed) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "feature_order": list(FEATURE_ORDER),
        "pm_features": list(MOBILITY_FEATURES),
        "grid_layout": grid_layout(grid),
        "alpha_target": cost_cfg.alpha_target,
        "quantization_levels": strategy_sampler.q,
        "num_links": grid.num_links,
        "num_intervals": len(replay_cfg.intervals),
        "grid": grid.to_json_dict(),
        "replay_cfg": replay_cfg.to_json_dict(),
        "cost_cfg": cost_cfg.to_json_dict(),
        "rng_seed": rng_seed,
    }


def _mix_seed(seed: int, k: int) -> int:
    return (seed * 1_000_003 + k * 7919 + 17) % (2**63)


def collapse_to_cheapest(dataset: Dataset, min_slack: float = 0.0) -> Dataset:
    """Relabel each trace's feasible episodes with the cheapest feasible
    strategy sampled for that trace.

    Episodes of one trace share the mobility features a learner sees at
    inference, so conflicting labels for the same input collapse onto the
    cost-minimizing one. Infeasible episodes keep the all-off label.
    min_slack prefers labels with success-ratio headroom over razor-thin
    ones (falling back to plain feasibility when no episode clears it).
    """
    best: dict[str, tuple[float, DatasetRecord]] = {}
    fallback: dict[str, tuple[float, DatasetRecord]] = {}
    for r in dataset.records:
        if not r.feasible:
            continue
        cost = r.meta.get("cost")
        if cost is None:
            raise DatasetError("records lack a cost in meta; rebuild the dataset")
        slack = r.meta.get("slack")
        pools = [fallback]
        if slack is None or slack >= min_slack:
            pools.append(best)
        for pool in pools:
            cur = pool.get(r.trace_ref)
            if cur is None or cost < cur[0]:
                pool[r.trace_ref] = (cost, r)
    for ref, entry in fallback.items():
        best.setdefault(ref, entry)
    labels_by_key: dict[tuple[str, int], tuple] = {}
    for r in dataset.records:
        entry = best.get(r.trace_ref)
        if entry is not None and entry[1].episode_id == r.episode_id:
            labels_by_key[(r.trace_ref, r.interval)] = (r.a_levels, r.b_levels)
    new_records = []
    for r in dataset.records:
        key = (r.trace_ref, r.interval)
        if r.feasible and key in labels_by_key:
            a_lv, b_lv = labels_by_key[key]
            new_records.append(dataclasses.replace(r, a_levels=a_lv, b_levels=b_lv))
        else:
            new_records.append(r)
    return Dataset(header=dict(dataset.header), records=new_records, traces=dataset.traces)


def kfold_split(dataset: Dataset, k: int, seed: int = 0) -> list[tuple[list[int], list[int]]]:
    """k disjoint shuffled folds of near-equal size; returns (train, validation) pairs."""
    n = len(dataset.records)
    if k < 2 or k > n:
        raise DatasetError(f"k must satisfy 2 <= k <= {n}, got {k}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    idx = rng.permutation(n).tolist()
    base, extra = divmod(n, k)
    folds, pos = [], 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        folds.append(idx[pos : pos + size])
        pos += size
    splits = []
    for f in range(k):
        val = sorted(folds[f])
        train = sorted(i for g, fold in enumerate(folds) if g != f for i in fold)
        splits.append((train, val))
    return splits


# --- serialization -----------------------------------------------------------

def dataset_to_ndjson(dataset: Dataset) -> str:
    lines = [json.dumps(dataset.header, sort_keys=True, separators=(",", ":"))]
    for r in dataset.records:
        lines.append(json.dumps(r.to_json_dict(), sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def save_dataset(dataset: Dataset, path: str, traces_dir: str | None = None) -> None:
    """Write the ndjson dataset; optionally a sidecar directory of traces so
    evaluation can replay predicted strategies."""
    if traces_dir is not None:
        os.makedirs(traces_dir, exist_ok=True)
        trace_files = {}
        for ref in sorted(dataset.traces):
            fname = f"{ref}.ndjson.gz"
            save_trace(dataset.traces[ref], os.path.join(traces_dir, fname))
            trace_files[ref] = fname
        dataset.header["trace_files"] = trace_files
        dataset.header["traces_dir"] = os.path.basename(os.path.normpath(traces_dir))
    data = dataset_to_ndjson(dataset).encode()
    if str(path).endswith(".gz"):
        buf = io.BytesIO()
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
            gz.write(data)
        data = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(data)


def load_dataset(path: str, load_traces: bool = False) -> Dataset:
    from .mobility import load_trace

    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    lines = [ln for ln in data.decode().splitlines() if ln.strip()]
    if not lines:
        raise DatasetError("dataset file is empty")
    header = json.loads(lines[0])
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(f"unsupported dataset schema: {header.get('schema_version')!r}")
    records = [DatasetRecord.from_json_dict(json.loads(ln)) for ln in lines[1:]]
    ds = Dataset(header=header, records=records)
    if load_traces and "trace_files" in header:
        base = os.path.join(os.path.dirname(os.path.abspath(path)), header["traces_dir"])
        for ref, fname in header["trace_files"].items():
            ds.traces[ref] = load_trace(os.path.join(base, fname))
    return ds


def dataset_to_csv(dataset: Dataset) -> str:
    L = dataset.num_links
    cols = ["record_id", "episode_id", "trace_ref", "interval", "feasible"]
    cols += [f"l{l}_{name}" for l in range(L) for name in FEATURE_ORDER]
    cols += [f"l{l}_a" for l in range(L)] + [f"l{l}_b" for l in range(L)]
    out = [",".join(cols)]
    for r in dataset.records:
        row = [r.record_id, r.episode_id, r.trace_ref, str(r.interval), str(r.feasible).lower()]
        row += [repr(v) for v in r.features]
        row += [str(v) for v in r.a_levels] + [str(v) for v in r.b_levels]
        out.append(",".join(row))
    return "\n".join(out) + "\n"


def audit_labels(dataset: Dataset, fraction: float = 0.01, rng_seed: int = 123) -> list[str]:
    """Spot-check: replaying a stored feasible (trace, strategy) pair must
    reproduce feasibility. Returns ids of violating episodes."""
    if not dataset.traces:
        raise DatasetError("audit requires loaded traces")
    grid = RoadGrid.from_json_dict(dataset.header["grid"])
    replay_cfg = ReplayConfig.from_json_dict(dataset.header["replay_cfg"])
    cost_cfg = CostConfig.from_json_dict(dataset.header["cost_cfg"])
    q = dataset.header["quantization_levels"]
    episodes: dict[str, list[DatasetRecord]] = {}
    for r in dataset.records:
        episodes.setdefault(r.episode_id, []).append(r)
    eligible = [
        ep for ep, recs in sorted(episodes.items())
        if recs[0].feasible and any(v > 0 for r in recs for v in r.a_levels)
    ]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([rng_seed])))
    n_check = max(1, int(len(eligible) * fraction)) if eligible else 0
    picked = rng.choice(len(eligible), size=n_check, replace=False) if n_check else []
    bad = []
    for i in picked:
        recs = sorted(episodes[eligible[i]], key=lambda r: r.interval)
        a_lv = np.array([r.a_levels for r in recs]).T
        b_lv = np.array([r.b_levels for r in recs]).T
        strategy = StrategyMatrix.from_levels(a_lv, b_lv, q)
        trace = dataset.traces[recs[0].trace_ref]
        result = Replayer(trace, grid, replay_cfg).run(strategy)
        if feasibility_slack(result, cost_cfg) < 0:
            bad.append(eligible[i])
    return bad
