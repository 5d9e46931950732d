"""Node mobility on a road grid and contact-trace generation.

Nodes arrive at border links as per-link Poisson processes, traverse the
grid turning uniformly at random at intersections, and exit at boundary
endpoints. Contacts are detected at sampling resolution: two nodes are in
contact while their distance stays within the transmission radius.
"""

from __future__ import annotations

import gzip
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .grid import GridError, RoadGrid

KMH_TO_MS = 1000.0 / 3600.0


class TraceError(ValueError):
    """Invalid mobility configuration or inconsistent trace records."""


@dataclass(frozen=True)
class ConstantSpeed:
    kmh: float

    def draw_ms(self, rng: np.random.Generator) -> float:
        return self.kmh * KMH_TO_MS

    def to_json_dict(self) -> dict:
        return {"kind": "constant", "kmh": self.kmh}


@dataclass(frozen=True)
class UniformSpeed:
    lo_kmh: float
    hi_kmh: float

    def draw_ms(self, rng: np.random.Generator) -> float:
        return rng.uniform(self.lo_kmh, self.hi_kmh) * KMH_TO_MS

    def to_json_dict(self) -> dict:
        return {"kind": "uniform", "lo_kmh": self.lo_kmh, "hi_kmh": self.hi_kmh}


def speed_model_from_json(doc: dict):
    if doc["kind"] == "constant":
        return ConstantSpeed(kmh=doc["kmh"])
    if doc["kind"] == "uniform":
        return UniformSpeed(lo_kmh=doc["lo_kmh"], hi_kmh=doc["hi_kmh"])
    raise TraceError(f"unknown speed model kind: {doc['kind']!r}")


@dataclass(frozen=True)
class MobilityConfig:
    arrival_rate: float  # nodes/second per border link
    speed_model: ConstantSpeed | UniformSpeed
    tx_radius: float  # meters
    duration: float  # seconds
    sample_dt: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.arrival_rate < 0:
            raise TraceError("arrival_rate must be >= 0")
        if self.tx_radius <= 0 or self.duration <= 0 or self.sample_dt <= 0:
            raise TraceError("tx_radius, duration and sample_dt must be > 0")
        sm = self.speed_model
        if isinstance(sm, UniformSpeed) and not (0 <= sm.lo_kmh <= sm.hi_kmh):
            raise TraceError("speed range must satisfy 0 <= lo <= hi")
        if isinstance(sm, ConstantSpeed) and sm.kmh < 0:
            raise TraceError("constant speed must be >= 0")

    def to_json_dict(self) -> dict:
        return {
            "arrival_rate": self.arrival_rate,
            "speed_model": self.speed_model.to_json_dict(),
            "tx_radius": self.tx_radius,
            "duration": self.duration,
            "sample_dt": self.sample_dt,
            "rng_seed": self.rng_seed,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "MobilityConfig":
        return MobilityConfig(
            arrival_rate=doc["arrival_rate"],
            speed_model=speed_model_from_json(doc["speed_model"]),
            tx_radius=doc["tx_radius"],
            duration=doc["duration"],
            sample_dt=doc["sample_dt"],
            rng_seed=doc["rng_seed"],
        )


@dataclass(frozen=True)
class Sample:
    """Snapshot of all present nodes at one sample instant."""

    time: float
    node_ids: np.ndarray  # int64 [n]
    link_ids: np.ndarray  # int64 [n]
    x: np.ndarray
    y: np.ndarray
    speed: np.ndarray  # m/s


@dataclass(frozen=True)
class Contact:
    node_a: int
    node_b: int
    start_time: float
    end_time: float
    link_a: int  # link of node_a at contact start
    link_b: int

    def __post_init__(self):
        if self.end_time < self.start_time:
            raise TraceError("contact end_time must be >= start_time")


@dataclass(frozen=True)
class ContactTrace:
    cfg: MobilityConfig
    samples: tuple[Sample, ...]
    contacts: tuple[Contact, ...]
    entries: tuple[tuple[int, int, float], ...]  # (node, link, time)

    @property
    def sample_times(self) -> np.ndarray:
        return np.array([s.time for s in self.samples])

    @property
    def duration(self) -> float:
        return self.cfg.duration

    def num_present(self) -> int:
        return int(sum(len(s.node_ids) for s in self.samples))


def _exit_slots(grid: RoadGrid) -> dict[tuple[float, float], int]:
    """Exit options per intersection: missing lattice directions at boundary points.

    An intersection offers exits only if it touches a border link; it then has
    4 - degree exit directions (the lattice directions that leave the grid).
    """
    deg = grid.endpoint_degree()
    border_points = set()
    for ln in grid.links:
        if ln.is_border:
            border_points.update(ln.endpoints)
    return {
        p: max(0, 4 - d) if p in border_points else 0 for p, d in deg.items()
    }


def simulate_mobility(grid: RoadGrid, cfg: MobilityConfig) -> ContactTrace:
    """Generate trajectories and the resulting contact trace.

    Deterministic for fixed (grid, cfg) including rng_seed.
    """
    border = [grid.links[i] for i in grid.border_link_ids()]
    slots = _exit_slots(grid)
    incident: dict[tuple[float, float], list[int]] = {}
    for ln in grid.links:
        for p in ln.endpoints:
            incident.setdefault(p, []).append(ln.id)
    for ids in incident.values():
        ids.sort()
    for ln in border:
        if not any(slots.get(p, 0) > 0 for p in ln.endpoints):
            raise GridError(f"border link {ln.id} has no boundary endpoint")

    # per-border-link Poisson arrivals, then global node ids by arrival order
    arrivals: list[tuple[float, int]] = []
    for ln in border:
        if cfg.arrival_rate == 0:
            break
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([cfg.rng_seed, 0, ln.id]))
        )
        t = rng.exponential(1.0 / cfg.arrival_rate)
        while t < cfg.duration:
            arrivals.append((t, ln.id))
            t += rng.exponential(1.0 / cfg.arrival_rate)
    arrivals.sort()

    paths = []  # per node: list of (t0, t1, link, p0, p1)
    exit_times = []
    entries: list[tuple[int, int, float]] = []
    for node_id, (t_enter, link_id) in enumerate(arrivals):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([cfg.rng_seed, 1, node_id]))
        )
        speed = cfg.speed_model.draw_ms(rng)
        if speed == 0.0:
            speed = cfg.speed_model.draw_ms(rng)
        if speed == 0.0:
            speed = 1.0 * KMH_TO_MS  # avoid permanently resident nodes
        link = grid.links[link_id]
        entry_pts = [p for p in link.endpoints if slots.get(p, 0) > 0]
        p_from = entry_pts[int(rng.integers(len(entry_pts)))]
        p_to = link.endpoints[1] if p_from == link.endpoints[0] else link.endpoints[0]
        segs = []
        t = t_enter
        cur = link_id
        entries.append((node_id, cur, t))
        exit_t = math.inf
        while t < cfg.duration:
            seg_dt = grid.links[cur].length / speed
            segs.append((t, t + seg_dt, cur, p_from, p_to))
            t += seg_dt
            if t >= cfg.duration:
                break
            options = [i for i in incident[p_to] if i != cur]
            n_exit = slots.get(p_to, 0)
            total = len(options) + n_exit
            if total == 0:
                options = [cur]  # dead end: U-turn is the only move
                total = 1
            k = int(rng.integers(total))
            if k >= len(options):
                exit_t = t
                break
            nxt = options[k]
            p_from = p_to
            ep = grid.links[nxt].endpoints
            p_to = ep[1] if p_from == ep[0] else ep[0]
            cur = nxt
            entries.append((node_id, cur, t))
        paths.append((t_enter, exit_t, speed, segs))
        exit_times.append(exit_t)

    samples = _sample_paths(paths, cfg)
    contacts = detect_contacts(samples, cfg.tx_radius)
    entries.sort(key=lambda e: (e[2], e[0], e[1]))
    return ContactTrace(
        cfg=cfg, samples=tuple(samples), contacts=tuple(contacts), entries=tuple(entries)
    )


def _sample_paths(paths, cfg: MobilityConfig) -> list[Sample]:
    n_samples = int(math.floor(cfg.duration / cfg.sample_dt + 1e-9)) + 1
    times = [i * cfg.sample_dt for i in range(n_samples)]
    rows: list[list[list]] = [[] for _ in times]
    for node_id, (t_enter, exit_t, speed, segs) in enumerate(paths):
        if not segs:
            continue
        i0 = int(math.ceil((t_enter - 1e-9) / cfg.sample_dt))
        si = 0
        for i in range(max(i0, 0), n_samples):
            t = times[i]
            if t >= exit_t:
                break
            while si < len(segs) and t >= segs[si][1] - 1e-12:
                si += 1
            if si >= len(segs):
                break
            t0, t1, link, p0, p1 = segs[si]
            if t < t0 - 1e-12:
                continue
            frac = (t - t0) / (t1 - t0)
            x = p0[0] + frac * (p1[0] - p0[0])
            y = p0[1] + frac * (p1[1] - p0[1])
            rows[i].append([node_id, link, x, y, speed])
    samples = []
    for t, row in zip(times, rows):
        row.sort()
        arr = np.array(row, dtype=float).reshape(len(row), 5)
        samples.append(
            Sample(
                time=t,
                node_ids=arr[:, 0].astype(np.int64),
                link_ids=arr[:, 1].astype(np.int64),
                x=arr[:, 2],
                y=arr[:, 3],
                speed=arr[:, 4],
            )
        )
    return samples


def detect_contacts(samples: list[Sample], tx_radius: float) -> list[Contact]:
    """Maximal runs of consecutive sample instants with pairwise distance <= radius."""
    active: dict[tuple[int, int], list] = {}  # pair -> [start, end, link_a, link_b]
    done: list[Contact] = []
    r2 = tx_radius * tx_radius
    for s in samples:
        n = len(s.node_ids)
        in_range: set[tuple[int, int]] = set()
        if n >= 2:
            dx = s.x[:, None] - s.x[None, :]
            dy = s.y[:, None] - s.y[None, :]
            close = dx * dx + dy * dy <= r2
            ii, jj = np.nonzero(np.triu(close, k=1))
            for i, j in zip(ii, jj):
                a, b = int(s.node_ids[i]), int(s.node_ids[j])
                pair = (a, b) if a < b else (b, a)
                in_range.add(pair)
                if pair in active:
                    active[pair][1] = s.time
                else:
                    la = int(s.link_ids[i]) if a == int(s.node_ids[i]) else int(s.link_ids[j])
                    lb = int(s.link_ids[j]) if b == int(s.node_ids[j]) else int(s.link_ids[i])
                    active[pair] = [s.time, s.time, la, lb]
        for pair in [p for p in active if p not in in_range]:
            st, en, la, lb = active.pop(pair)
            done.append(Contact(pair[0], pair[1], st, en, la, lb))
    for pair, (st, en, la, lb) in active.items():
        done.append(Contact(pair[0], pair[1], st, en, la, lb))
    done.sort(key=lambda c: (c.start_time, c.node_a, c.node_b))
    return done


def inject_trace(samples, contacts, entries, cfg: MobilityConfig) -> ContactTrace:
    """Build a trace from hand-made records, validating internal consistency."""
    samples = tuple(samples)
    contacts = tuple(contacts)
    by_time = {s.time: s for s in samples}
    times = sorted(by_time)
    for c in contacts:
        span = [t for t in times if c.start_time - 1e-9 <= t <= c.end_time + 1e-9]
        if not span:
            raise TraceError(f"contact {c} covers no sample instant")
        for t in span:
            s = by_time[t]
            ids = s.node_ids.tolist()
            if c.node_a not in ids or c.node_b not in ids:
                raise TraceError(
                    f"contact ({c.node_a},{c.node_b}) at t={t} while a node is absent"
                )
            ia, ib = ids.index(c.node_a), ids.index(c.node_b)
            d = math.hypot(s.x[ia] - s.x[ib], s.y[ia] - s.y[ib])
            if d > cfg.tx_radius + 1e-9:
                raise TraceError(
                    f"contact ({c.node_a},{c.node_b}) at t={t}: distance {d:.3f} "
                    f"exceeds tx_radius {cfg.tx_radius}"
                )
    return ContactTrace(
        cfg=cfg,
        samples=samples,
        contacts=contacts,
        entries=tuple(sorted(entries, key=lambda e: (e[2], e[0], e[1]))),
    )


def stationary_samples(
    positions: dict[int, tuple[float, float, int]], times, speed: float = 0.0
) -> list[Sample]:
    """Samples for nodes that never move: {node: (x, y, link)} at every instant."""
    ids = sorted(positions)
    return [
        Sample(
            time=float(t),
            node_ids=np.array(ids, dtype=np.int64),
            link_ids=np.array([positions[i][2] for i in ids], dtype=np.int64),
            x=np.array([positions[i][0] for i in ids], dtype=float),
            y=np.array([positions[i][1] for i in ids], dtype=float),
            speed=np.full(len(ids), speed, dtype=float),
        )
        for t in times
    ]


# --- serialization -----------------------------------------------------------

def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def trace_to_ndjson(trace: ContactTrace) -> str:
    lines = [
        _dump_line(
            {"type": "header", "schema_version": 1, "cfg": trace.cfg.to_json_dict()}
        )
    ]
    for s in trace.samples:
        nodes = [
            [int(n), int(l), float(x), float(y), float(v)]
            for n, l, x, y, v in zip(s.node_ids, s.link_ids, s.x, s.y, s.speed)
        ]
        lines.append(_dump_line({"type": "sample", "t": s.time, "nodes": nodes}))
    for c in trace.contacts:
        lines.append(
            _dump_line(
                {
                    "type": "contact",
                    "a": c.node_a,
                    "b": c.node_b,
                    "start": c.start_time,
                    "end": c.end_time,
                    "link_a": c.link_a,
                    "link_b": c.link_b,
                }
            )
        )
    for node, link, t in trace.entries:
        lines.append(_dump_line({"type": "entry", "node": node, "link": link, "t": t}))
    return "\n".join(lines) + "\n"


def save_trace(trace: ContactTrace, path: str) -> None:
    data = trace_to_ndjson(trace).encode()
    if str(path).endswith(".gz"):
        buf = io.BytesIO()
        # fixed mtime keeps gzip output byte-identical across runs
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
            gz.write(data)
        data = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(data)


def trace_from_ndjson(text: str) -> ContactTrace:
    samples, contacts, entries, cfg = [], [], [], None
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        kind = obj["type"]
        if kind == "header":
            cfg = MobilityConfig.from_json_dict(obj["cfg"])
        elif kind == "sample":
            arr = np.array(obj["nodes"], dtype=float).reshape(len(obj["nodes"]), 5)
            samples.append(
                Sample(
                    time=obj["t"],
                    node_ids=arr[:, 0].astype(np.int64),
                    link_ids=arr[:, 1].astype(np.int64),
                    x=arr[:, 2],
                    y=arr[:, 3],
                    speed=arr[:, 4],
                )
            )
        elif kind == "contact":
            contacts.append(
                Contact(obj["a"], obj["b"], obj["start"], obj["end"], obj["link_a"], obj["link_b"])
            )
        elif kind == "entry":
            entries.append((obj["node"], obj["link"], obj["t"]))
        else:
            raise TraceError(f"unknown trace row type: {kind!r}")
    if cfg is None:
        raise TraceError("trace file has no header row")
    return ContactTrace(
        cfg=cfg, samples=tuple(samples), contacts=tuple(contacts), entries=tuple(entries)
    )


def load_trace(path: str) -> ContactTrace:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return trace_from_ndjson(data.decode())
