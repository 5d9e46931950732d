"""Road grid topology: links, Manhattan lattice generation, zone of interest."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace


class GridError(ValueError):
    """Invalid grid construction or lookup argument."""


@dataclass(frozen=True)
class RoadLink:
    """Undirected street segment between two adjacent intersections."""

    id: int
    endpoints: tuple[tuple[float, float], tuple[float, float]]
    is_border: bool = False
    neighbor_ids: frozenset[int] = field(default_factory=frozenset)

    @property
    def length(self) -> float:
        (x1, y1), (x2, y2) = self.endpoints
        return math.hypot(x2 - x1, y2 - y1)

    @property
    def midpoint(self) -> tuple[float, float]:
        (x1, y1), (x2, y2) = self.endpoints
        return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)


@dataclass(frozen=True)
class RoadGrid:
    """A set of road links with a designated zone of interest (ZOI)."""

    links: tuple[RoadLink, ...]
    zoi: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        ids = [ln.id for ln in self.links]
        if ids != list(range(len(ids))):
            raise GridError("link ids must be dense 0..N-1 in order")
        for ln in self.links:
            if ln.length <= 0:
                raise GridError(f"link {ln.id} has non-positive length")
        unknown = set(self.zoi) - set(ids)
        if unknown:
            raise GridError(f"zoi references unknown link ids: {sorted(unknown)}")

    @property
    def num_links(self) -> int:
        return len(self.links)

    def border_link_ids(self) -> list[int]:
        return [ln.id for ln in self.links if ln.is_border]

    def endpoint_degree(self) -> dict[tuple[float, float], int]:
        """Number of links incident to each intersection."""
        deg: dict[tuple[float, float], int] = {}
        for ln in self.links:
            for p in ln.endpoints:
                deg[p] = deg.get(p, 0) + 1
        return deg

    def to_json_dict(self) -> dict:
        return {
            "links": [
                {
                    "id": ln.id,
                    "x1": ln.endpoints[0][0],
                    "y1": ln.endpoints[0][1],
                    "x2": ln.endpoints[1][0],
                    "y2": ln.endpoints[1][1],
                    "is_border": ln.is_border,
                }
                for ln in self.links
            ],
            "zoi": sorted(self.zoi),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json_dict(doc: dict) -> "RoadGrid":
        raw = sorted(doc["links"], key=lambda r: r["id"])
        links = [
            RoadLink(
                id=r["id"],
                endpoints=((r["x1"], r["y1"]), (r["x2"], r["y2"])),
                is_border=bool(r["is_border"]),
            )
            for r in raw
        ]
        grid = RoadGrid(links=tuple(_with_neighbors(links)), zoi=frozenset(doc.get("zoi", [])))
        return grid

    @staticmethod
    def from_json(text: str) -> "RoadGrid":
        return RoadGrid.from_json_dict(json.loads(text))


def _with_neighbors(links: list[RoadLink]) -> list[RoadLink]:
    """Fill neighbor_ids: links sharing an endpoint are neighbors."""
    by_endpoint: dict[tuple[float, float], list[int]] = {}
    for ln in links:
        for p in ln.endpoints:
            by_endpoint.setdefault(p, []).append(ln.id)
    neighbors: dict[int, set[int]] = {ln.id: set() for ln in links}
    for ids in by_endpoint.values():
        for i in ids:
            neighbors[i].update(j for j in ids if j != i)
    return [replace(ln, neighbor_ids=frozenset(neighbors[ln.id])) for ln in links]


def make_grid(links: list[RoadLink], zoi=()) -> RoadGrid:
    """Build a RoadGrid from bare links, deriving the neighbor relation."""
    return RoadGrid(links=tuple(_with_neighbors(links)), zoi=frozenset(zoi))


def manhattan_link_count(blocks_x: int, blocks_y: int) -> int:
    """Edge count of a blocks_x x blocks_y block lattice."""
    return (blocks_x + 1) * blocks_y + (blocks_y + 1) * blocks_x


def build_manhattan_grid(blocks_x: int, blocks_y: int, block_side: float) -> RoadGrid:
    """Manhattan grid of square blocks; one link per lattice edge.

    Border links are the segments lying on the outer rectangle (where
    nodes may enter and exit). The ZOI starts empty.
    """
    if blocks_x < 1 or blocks_y < 1 or block_side <= 0:
        raise GridError("blocks_x, blocks_y must be >= 1 and block_side > 0")
    s = float(block_side)
    links: list[RoadLink] = []
    next_id = 0
    # horizontal edges, row by row (y fixed), then vertical edges column by column
    for j in range(blocks_y + 1):
        for i in range(blocks_x):
            border = j == 0 or j == blocks_y
            links.append(
                RoadLink(
                    id=next_id,
                    endpoints=((i * s, j * s), ((i + 1) * s, j * s)),
                    is_border=border,
                )
            )
            next_id += 1
    for i in range(blocks_x + 1):
        for j in range(blocks_y):
            border = i == 0 or i == blocks_x
            links.append(
                RoadLink(
                    id=next_id,
                    endpoints=((i * s, j * s), (i * s, (j + 1) * s)),
                    is_border=border,
                )
            )
            next_id += 1
    return make_grid(links)


def set_zoi(grid: RoadGrid, link_ids) -> RoadGrid:
    """Return a copy of the grid with the ZOI replaced."""
    ids = frozenset(int(i) for i in link_ids)
    known = {ln.id for ln in grid.links}
    unknown = ids - known
    if unknown:
        raise GridError(f"unknown link ids for zoi: {sorted(unknown)}")
    return RoadGrid(links=grid.links, zoi=ids)


def central_zoi(grid: RoadGrid, n_links: int = 1) -> RoadGrid:
    """Set the ZOI to the n_links links nearest the grid centroid."""
    xs = [p[0] for ln in grid.links for p in ln.endpoints]
    ys = [p[1] for ln in grid.links for p in ln.endpoints]
    cx, cy = (min(xs) + max(xs)) / 2.0, (min(ys) + max(ys)) / 2.0
    ranked = sorted(
        grid.links, key=lambda ln: (math.dist(ln.midpoint, (cx, cy)), ln.id)
    )
    return set_zoi(grid, [ln.id for ln in ranked[:n_links]])


def grid_layout(grid: RoadGrid) -> dict:
    """Map links onto a dense 2D cell lattice (for spatially arranged learners).

    Cell coordinates come from ranking the distinct midpoint x and y values,
    so lattice grids embed with one link per cell.
    """
    mids = [ln.midpoint for ln in grid.links]
    xs = sorted({round(m[0], 6) for m in mids})
    ys = sorted({round(m[1], 6) for m in mids})
    xi = {v: i for i, v in enumerate(xs)}
    yi = {v: i for i, v in enumerate(ys)}
    cells = [[yi[round(m[1], 6)], xi[round(m[0], 6)]] for m in mids]
    seen = set()
    for c in cells:
        key = tuple(c)
        if key in seen:
            raise GridError("grid links do not embed one-per-cell in a 2D lattice")
        seen.add(key)
    return {"height": len(ys), "width": len(xs), "cells": cells}
