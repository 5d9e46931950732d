"""Replay of contact traces under a per-link/per-interval replication strategy.

The engine seeds content, executes probabilistic transfers on contacts
(capacity-limited), applies keep/drop decisions on receipt and on link
entry, and measures per-link per-interval features and ZOI success ratios.
All stochastic decisions happen at sampling resolution in a deterministic
processing order, so a fixed seed reproduces the run exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import RoadGrid
from .mobility import ContactTrace

FEATURE_ORDER = (
    "mean_speed",
    "mean_node_count",
    "contact_rate",
    "mean_contact_duration",
    "mean_content_holders",
    "mean_concurrent_transmissions",
)
MOBILITY_FEATURES = FEATURE_ORDER[:2]  # available before choosing a strategy
COMM_FEATURES = FEATURE_ORDER[2:]


class ReplayError(ValueError):
    """Dimension mismatch or trace too short for the replay window."""


@dataclass(frozen=True)
class StrategyMatrix:
    """Infectivity a[l,t] and keep probability b[l,t] on a quantized lattice."""

    a: np.ndarray
    b: np.ndarray
    quantization_levels: int = 11

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if a.shape != b.shape or a.ndim != 2:
            raise ReplayError("a and b must be matrices of identical [links x intervals] shape")
        if self.quantization_levels < 2:
            raise ReplayError("quantization_levels must be >= 2")
        for m in (a, b):
            if np.any(m < 0) or np.any(m > 1):
                raise ReplayError("strategy entries must lie in [0, 1]")
            lv = m * (self.quantization_levels - 1)
            if not np.allclose(lv, np.round(lv), atol=1e-9):
                raise ReplayError("strategy entries must lie on the quantization lattice")

    @property
    def num_links(self) -> int:
        return self.a.shape[0]

    @property
    def num_intervals(self) -> int:
        return self.a.shape[1]

    def levels(self) -> tuple[np.ndarray, np.ndarray]:
        q = self.quantization_levels - 1
        return (
            np.round(self.a * q).astype(int),
            np.round(self.b * q).astype(int),
        )

    @staticmethod
    def from_levels(a_levels, b_levels, quantization_levels: int = 11) -> "StrategyMatrix":
        q = quantization_levels - 1
        return StrategyMatrix(
            a=np.asarray(a_levels, dtype=float) / q,
            b=np.asarray(b_levels, dtype=float) / q,
            quantization_levels=quantization_levels,
        )

    @staticmethod
    def uniform(num_links: int, num_intervals: int, a: float, b: float,
                quantization_levels: int = 11) -> "StrategyMatrix":
        return StrategyMatrix(
            a=np.full((num_links, num_intervals), float(a)),
            b=np.full((num_links, num_intervals), float(b)),
            quantization_levels=quantization_levels,
        )

    def with_level(self, link: int, interval: int, param: str, level: int) -> "StrategyMatrix":
        a_lv, b_lv = self.levels()
        target = a_lv if param == "a" else b_lv
        target[link, interval] = level
        return StrategyMatrix.from_levels(a_lv, b_lv, self.quantization_levels)

    def digest(self) -> str:
        a_lv, b_lv = self.levels()
        payload = json.dumps(
            {"a": a_lv.tolist(), "b": b_lv.tolist(), "q": self.quantization_levels},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_json_dict(self) -> dict:
        return {
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "quantization_levels": self.quantization_levels,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "StrategyMatrix":
        return StrategyMatrix(
            a=np.array(doc["a"], dtype=float),
            b=np.array(doc["b"], dtype=float),
            quantization_levels=doc.get("quantization_levels", 11),
        )


@dataclass(frozen=True)
class FixedSNR:
    snr_linear: float = 10.0  # 10 dB default

    def capacity(self, bandwidth_hz: float, distance_m: float) -> float:
        return bandwidth_hz * math.log2(1.0 + self.snr_linear)

    def to_json_dict(self) -> dict:
        return {"kind": "fixed", "snr_linear": self.snr_linear}


@dataclass(frozen=True)
class PathLossSNR:
    snr_at_1m: float
    exponent: float = 2.0

    def capacity(self, bandwidth_hz: float, distance_m: float) -> float:
        snr = self.snr_at_1m / max(distance_m, 1.0) ** self.exponent
        return bandwidth_hz * math.log2(1.0 + snr)

    def to_json_dict(self) -> dict:
        return {"kind": "pathloss", "snr_at_1m": self.snr_at_1m, "exponent": self.exponent}


def snr_model_from_json(doc: dict):
    if doc["kind"] == "fixed":
        return FixedSNR(snr_linear=doc["snr_linear"])
    if doc["kind"] == "pathloss":
        return PathLossSNR(snr_at_1m=doc["snr_at_1m"], exponent=doc.get("exponent", 2.0))
    raise ReplayError(f"unknown snr model kind: {doc['kind']!r}")


@dataclass(frozen=True)
class ReplayConfig:
    intervals: tuple[float, ...]  # durations d_t, seconds
    content_size: float = 32e6  # bits (4 MB)
    channel_bandwidth: float = 4e6  # Hz
    snr_model: FixedSNR | PathLossSNR = field(default_factory=FixedSNR)
    rng_seed: int = 0
    monte_carlo_runs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple(float(d) for d in self.intervals))
        if len(self.intervals) < 1 or any(d <= 0 for d in self.intervals):
            raise ReplayError("need at least one interval, all durations > 0")
        if self.content_size <= 0 or self.channel_bandwidth <= 0:
            raise ReplayError("content_size and channel_bandwidth must be > 0")
        if self.monte_carlo_runs < 1:
            raise ReplayError("monte_carlo_runs must be >= 1")

    @property
    def window(self) -> float:
        return float(sum(self.intervals))

    def to_json_dict(self) -> dict:
        return {
            "intervals": list(self.intervals),
            "content_size": self.content_size,
            "channel_bandwidth": self.channel_bandwidth,
            "snr_model": self.snr_model.to_json_dict(),
            "rng_seed": self.rng_seed,
            "monte_carlo_runs": self.monte_carlo_runs,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "ReplayConfig":
        return ReplayConfig(
            intervals=tuple(doc["intervals"]),
            content_size=doc["content_size"],
            channel_bandwidth=doc["channel_bandwidth"],
            snr_model=snr_model_from_json(doc["snr_model"]),
            rng_seed=doc.get("rng_seed", 0),
            monte_carlo_runs=doc.get("monte_carlo_runs", 1),
        )


@dataclass
class LinkFeatures:
    """Per-link per-interval statistics, [num_links x num_intervals] each."""

    mean_speed: np.ndarray
    mean_node_count: np.ndarray
    contact_rate: np.ndarray
    mean_contact_duration: np.ndarray
    mean_content_holders: np.ndarray
    mean_concurrent_transmissions: np.ndarray

    def matrix(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def to_json_dict(self) -> dict:
        return {name: self.matrix(name).tolist() for name in FEATURE_ORDER}

    @staticmethod
    def from_json_dict(doc: dict) -> "LinkFeatures":
        return LinkFeatures(**{k: np.array(doc[k], dtype=float) for k in FEATURE_ORDER})

    def to_csv(self) -> str:
        links, T = self.mean_node_count.shape
        header = ["link"] + [f"{name}_t{t}" for t in range(T) for name in FEATURE_ORDER]
        rows = [",".join(header)]
        for l in range(links):
            vals = [repr(float(self.matrix(name)[l, t])) for t in range(T) for name in FEATURE_ORDER]
            rows.append(",".join([str(l)] + vals))
        return "\n".join(rows) + "\n"


@dataclass
class RunLedger:
    """Event counts for the copy-count balance check, per Monte Carlo run."""

    seeds: int = 0
    kept_transfers: int = 0
    drops: int = 0
    exits_holding: int = 0
    final_holders: int = 0

    def balances(self) -> bool:
        return self.final_holders == self.seeds + self.kept_transfers - self.drops - self.exits_holding


@dataclass
class EvaluationResult:
    features: LinkFeatures
    success_ratios: tuple  # float per interval, None where undefined
    undefined_intervals: tuple
    runs_aggregated: int
    cost: float | None = None
    feasible: bool | None = None
    empty_zoi_warning: bool = False
    ledgers: tuple = ()

    def to_json_dict(self) -> dict:
        return {
            "features": self.features.to_json_dict(),
            "success_ratios": [None if s is None else float(s) for s in self.success_ratios],
            "undefined_intervals": list(self.undefined_intervals),
            "runs_aggregated": self.runs_aggregated,
            "cost": self.cost,
            "feasible": self.feasible,
            "empty_zoi_warning": self.empty_zoi_warning,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "EvaluationResult":
        return EvaluationResult(
            features=LinkFeatures.from_json_dict(doc["features"]),
            success_ratios=tuple(doc["success_ratios"]),
            undefined_intervals=tuple(doc["undefined_intervals"]),
            runs_aggregated=doc["runs_aggregated"],
            cost=doc.get("cost"),
            feasible=doc.get("feasible"),
            empty_zoi_warning=doc.get("empty_zoi_warning", False),
        )


def success_ratio(features: LinkFeatures, zoi, t: int):
    """Holders over population across ZOI links in interval t; None if unpopulated."""
    if t >= features.mean_node_count.shape[1]:
        raise ReplayError(f"interval index {t} out of range")
    ids = sorted(zoi)
    denom = float(features.mean_node_count[ids, t].sum()) if ids else 0.0
    if denom == 0.0:
        return None
    return float(features.mean_content_holders[ids, t].sum()) / denom


class Replayer:
    """Reusable replay context for one (trace, grid, replay config).

    Trace preprocessing (sample indexing, contact schedules, mobility-only
    features) happens once; `run` evaluates any strategy against it.
    """

    def __init__(self, trace: ContactTrace, grid: RoadGrid, cfg: ReplayConfig):
        self.trace = trace
        self.grid = grid
        self.cfg = cfg
        window = cfg.window
        times = [s.time for s in trace.samples]
        if not times or times[-1] + 1e-9 < window:
            raise ReplayError(
                f"trace covers {times[-1] if times else 0:.1f}s but window needs {window:.1f}s"
            )
        self.samples = [s for s in trace.samples if s.time <= window + 1e-9]
        self.times = np.array([s.time for s in self.samples])
        bounds = np.cumsum(cfg.intervals)
        idx = np.searchsorted(bounds, self.times + 1e-9, side="right")
        self.interval_of = np.minimum(idx, len(cfg.intervals) - 1)
        self.T = len(cfg.intervals)
        self.L = grid.num_links

        self.link_of: list[dict[int, int]] = []
        self.pos_of: list[dict[int, tuple[float, float]]] = []
        for s in self.samples:
            self.link_of.append(
                {int(n): int(l) for n, l in zip(s.node_ids, s.link_ids)}
            )
            self.pos_of.append(
                {int(n): (float(x), float(y)) for n, x, y in zip(s.node_ids, s.x, s.y)}
            )
        self.link_changes: list[list[tuple[int, int]]] = [[]]
        self.exits: list[list[int]] = [[]]
        for i in range(1, len(self.samples)):
            prev, cur = self.link_of[i - 1], self.link_of[i]
            self.link_changes.append(
                sorted((n, l) for n, l in cur.items() if n in prev and prev[n] != l)
            )
            self.exits.append(sorted(n for n in prev if n not in cur))

        self.contacts = [
            c for c in trace.contacts if c.start_time <= self.times[-1] + 1e-9
        ]
        self.contacts_at: list[list[int]] = [[] for _ in self.samples]
        for ci, c in enumerate(self.contacts):
            lo = int(np.searchsorted(self.times, c.start_time - 1e-9))
            hi = int(np.searchsorted(self.times, c.end_time + 1e-9))
            for i in range(lo, min(hi, len(self.samples))):
                self.contacts_at[i].append(ci)

        # earliest populated instant per link inside the first interval (seeding)
        self.first_visit: list[tuple[int, int] | None] = [None] * self.L
        for i in range(len(self.samples)):
            if self.interval_of[i] != 0:
                break
            for n, l in self.link_of[i].items():
                if self.first_visit[l] is None:
                    self.first_visit[l] = (i, n)
                elif self.first_visit[l][0] == i and n < self.first_visit[l][1]:
                    self.first_visit[l] = (i, n)

        self.samples_per_interval = np.zeros(self.T)
        for i in range(len(self.samples)):
            self.samples_per_interval[self.interval_of[i]] += 1
        if np.any(self.samples_per_interval == 0):
            raise ReplayError("every interval must contain at least one sample instant")
        self._static_features()

    def _static_features(self):
        L, T = self.L, self.T
        count = np.zeros((L, T))
        speed_sum = np.zeros((L, T))
        for i, s in enumerate(self.samples):
            t = self.interval_of[i]
            for l, v in zip(s.link_ids, s.speed):
                count[l, t] += 1
                speed_sum[l, t] += v
        n_contacts = np.zeros((L, T))
        dur_sum = np.zeros((L, T))
        bounds = np.cumsum(self.cfg.intervals)
        for c in self.contacts:
            t = min(int(np.searchsorted(bounds, c.start_time, side="right")), T - 1)
            dur = c.end_time - c.start_time
            for l in {c.link_a, c.link_b}:
                n_contacts[l, t] += 1
                dur_sum[l, t] += dur
        with np.errstate(invalid="ignore", divide="ignore"):
            self.mean_node_count = count / self.samples_per_interval
            self.mean_speed = np.where(count > 0, speed_sum / np.maximum(count, 1), 0.0)
            self.contact_rate = n_contacts / np.array(self.cfg.intervals)
            self.mean_contact_duration = np.where(
                n_contacts > 0, dur_sum / np.maximum(n_contacts, 1), 0.0
            )

    def run(self, strategy: StrategyMatrix, runs: int | None = None,
            rng_seed: int | None = None, record_events: bool = False) -> EvaluationResult:
        if strategy.num_links != self.L or strategy.num_intervals != self.T:
            raise ReplayError(
                f"strategy shape {strategy.a.shape} does not match "
                f"({self.L} links, {self.T} intervals)"
            )
        runs = self.cfg.monte_carlo_runs if runs is None else runs
        seed = self.cfg.rng_seed if rng_seed is None else rng_seed
        nc_total = np.zeros((self.L, self.T))
        gamma_total = np.zeros((self.L, self.T))
        ledgers = []
        for r in range(runs):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, r])))
            nc, gamma, ledger = self._run_once(strategy, rng)
            nc_total += nc
            gamma_total += gamma
            if record_events:
                ledgers.append(ledger)
        nc_mean = nc_total / runs / self.samples_per_interval
        gamma_mean = gamma_total / runs / self.samples_per_interval
        features = LinkFeatures(
            mean_speed=self.mean_speed.copy(),
            mean_node_count=self.mean_node_count.copy(),
            contact_rate=self.contact_rate.copy(),
            mean_contact_duration=self.mean_contact_duration.copy(),
            mean_content_holders=nc_mean,
            mean_concurrent_transmissions=gamma_mean,
        )
        ratios = [success_ratio(features, self.grid.zoi, t) for t in range(self.T)]
        undefined = tuple(t for t, s in enumerate(ratios) if s is None)
        return EvaluationResult(
            features=features,
            success_ratios=tuple(ratios),
            undefined_intervals=undefined,
            runs_aggregated=runs,
            empty_zoi_warning=len(undefined) == self.T,
            ledgers=tuple(ledgers),
        )

    def _run_once(self, strategy: StrategyMatrix, rng: np.random.Generator):
        a_m, b_m = strategy.a, strategy.b
        D = self.cfg.content_size
        bw = self.cfg.channel_bandwidth
        snr = self.cfg.snr_model
        holders: set[int] = set()
        busy: dict[int, float] = {}
        pending: list[tuple[float, int, int, int]] = []  # (completion, seq, receiver, sender)
        seq = 0
        attempted = bytearray(len(self.contacts))
        seed_links = sorted(l for l in range(self.L) if a_m[l, 0] > 0)
        seed_done = set()
        ledger = RunLedger()
        nc = np.zeros((self.L, self.T))
        gamma = np.zeros((self.L, self.T))

        for i in range(len(self.samples)):
            t = float(self.times[i])
            tv = int(self.interval_of[i])
            link_of = self.link_of[i]

            if pending:
                pending.sort()
                while pending and pending[0][0] <= t + 1e-9:
                    _, _, recv, sender = pending.pop(0)
                    busy.pop(recv, None)
                    busy.pop(sender, None)
                    if recv in link_of and recv not in holders:
                        if rng.random() < b_m[link_of[recv], tv]:
                            holders.add(recv)
                            ledger.kept_transfers += 1

            for n in self.exits[i]:
                if n in holders:
                    holders.discard(n)
                    ledger.exits_holding += 1
                busy.pop(n, None)

            for n, new_link in self.link_changes[i]:
                if n in holders:
                    if rng.random() < b_m[new_link, tv]:
                        continue
                    holders.discard(n)
                    ledger.drops += 1

            if tv == 0:
                for l in seed_links:
                    if l in seed_done:
                        continue
                    fv = self.first_visit[l]
                    if fv is not None and fv[0] == i:
                        seed_done.add(l)
                        if fv[1] not in holders:
                            holders.add(fv[1])
                            ledger.seeds += 1

            for ci in self.contacts_at[i]:
                if attempted[ci]:
                    continue
                c = self.contacts[ci]
                ha, hb = c.node_a in holders, c.node_b in holders
                if ha == hb or c.node_a in busy or c.node_b in busy:
                    continue
                sender, receiver = (c.node_a, c.node_b) if ha else (c.node_b, c.node_a)
                sender_link = c.link_a if sender == c.node_a else c.link_b
                attempted[ci] = 1
                if rng.random() >= a_m[sender_link, tv]:
                    continue
                pos = self.pos_of[i]
                dist = math.dist(pos[sender], pos[receiver])
                needed = D / snr.capacity(bw, dist)
                if needed <= (c.end_time - t) + 1e-9:
                    completion = t + needed
                    busy[sender] = completion
                    busy[receiver] = completion
                    pending.append((completion, seq, receiver, sender))
                    seq += 1

            for n in holders:
                nc[link_of[n], tv] += 1
            for n in busy:
                gamma[link_of[n], tv] += 1

        ledger.final_holders = len(holders)
        return nc, gamma, ledger


def replay_cfc(trace: ContactTrace, strategy: StrategyMatrix, cfg: ReplayConfig,
               grid: RoadGrid, record_events: bool = False) -> EvaluationResult:
    """One-shot replay; builds a context and averages over cfg.monte_carlo_runs."""
    return Replayer(trace, grid, cfg).run(strategy, record_events=record_events)
