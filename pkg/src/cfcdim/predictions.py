"""Predictions-file interop with external learners (newline-delimited JSON).

Line 1 is a header; every following line carries one record's predicted
per-link levels. The parser is strict: any malformed line is a warning,
and callers decide whether warnings are fatal.
"""

from __future__ import annotations

import json

PREDICTIONS_SCHEMA = 1


class PredictionsError(ValueError):
    pass


def write_predictions(path: str, rows: list[dict], num_links: int,
                      quantization_levels: int, source: str = "cfcdim") -> None:
    header = {
        "type": "header",
        "schema_version": PREDICTIONS_SCHEMA,
        "num_links": num_links,
        "quantization_levels": quantization_levels,
        "source": source,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for row in rows:
            fh.write(
                json.dumps(
                    {
                        "record_id": row["record_id"],
                        "a_levels": [int(v) for v in row["a_levels"]],
                        "b_levels": [int(v) for v in row["b_levels"]],
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )


def parse_predictions(path: str, num_links: int, quantization_levels: int):
    """Returns (rows, warnings). Rows: {record_id, a_levels, b_levels}."""
    warnings: list[str] = []
    rows: list[dict] = []
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise PredictionsError("predictions file is empty (missing header)")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise PredictionsError("first line must be the header object")
    if header.get("schema_version") != PREDICTIONS_SCHEMA:
        raise PredictionsError(
            f"unsupported predictions schema {header.get('schema_version')!r}"
        )
    if header.get("num_links") != num_links:
        warnings.append(
            f"header num_links {header.get('num_links')} != dataset {num_links}"
        )
    if header.get("quantization_levels") != quantization_levels:
        warnings.append(
            f"header quantization_levels {header.get('quantization_levels')} "
            f"!= dataset {quantization_levels}"
        )
    seen = set()
    for n, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            warnings.append(f"line {n}: invalid JSON ({exc})")
            continue
        rid = obj.get("record_id")
        a = obj.get("a_levels")
        b = obj.get("b_levels")
        if not isinstance(rid, str) or not isinstance(a, list) or not isinstance(b, list):
            warnings.append(f"line {n}: missing record_id/a_levels/b_levels")
            continue
        if len(a) != num_links or len(b) != num_links:
            warnings.append(f"line {n}: expected {num_links} levels per parameter")
            continue
        levels_ok = all(
            isinstance(v, int) and 0 <= v <= quantization_levels - 1 for v in a + b
        )
        if not levels_ok:
            warnings.append(f"line {n}: levels outside [0, {quantization_levels - 1}]")
            continue
        if rid in seen:
            warnings.append(f"line {n}: duplicate record_id {rid!r}")
            continue
        seen.add(rid)
        rows.append({"record_id": rid, "a_levels": a, "b_levels": b})
    return rows, warnings
