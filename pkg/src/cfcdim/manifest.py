"""Run manifests: every CLI invocation records what it read, wrote and seeded."""

from __future__ import annotations

import json
import time
from datetime import datetime, timezone

from . import __version__


def write_manifest(path: str, command: list[str], config_paths: list[str],
                   seeds: dict, outputs: list[str], started: float) -> str:
    doc = {
        "schema_version": 1,
        "tool_version": __version__,
        "command": command,
        "config_paths": config_paths,
        "seeds": seeds,
        "outputs": sorted(outputs),
        "wall_clock_s": round(time.time() - started, 3),
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
