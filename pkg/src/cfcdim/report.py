"""Report rendering: summary tables as CSV plus matplotlib figures on disk."""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

REPORT_COLUMNS = ("scenario", "algorithm", "train_size", "f_score", "rejection_prob", "savings")


def metrics_rows_csv(rows: list[dict]) -> str:
    out = [",".join(REPORT_COLUMNS)]
    for row in rows:
        out.append(
            ",".join("" if row.get(c) is None else str(row.get(c)) for c in REPORT_COLUMNS)
        )
    return "\n".join(out) + "\n"


def fig_success_ratios(result_doc: dict, alpha_target: float, path: str) -> None:
    ratios = result_doc["success_ratios"]
    xs = np.arange(1, len(ratios) + 1)
    ys = [np.nan if r is None else r for r in ratios]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(xs, ys, "o-", label="success ratio")
    ax.axhline(alpha_target, color="crimson", ls="--", lw=1, label=f"target {alpha_target}")
    ax.set_xlabel("interval")
    ax.set_ylabel(r"$\alpha_t$")
    ax.set_ylim(-0.05, 1.05)
    ax.set_xticks(xs)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_holders_heatmap(result_doc: dict, layout: dict, path: str) -> None:
    holders = np.array(result_doc["features"]["mean_content_holders"])
    mean_per_link = holders.mean(axis=1)
    img = np.full((layout["height"], layout["width"]), np.nan)
    for link_id, (r, c) in enumerate(layout["cells"]):
        img[r, c] = mean_per_link[link_id]
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    im = ax.imshow(img, origin="lower", cmap="viridis")
    fig.colorbar(im, ax=ax, label="mean holders")
    ax.set_title("content holders per link (window mean)")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_fscore_curves(rows: list[dict], path: str) -> bool:
    rows = [r for r in rows if r.get("f_score") is not None and r.get("train_size")]
    if not rows:
        return False
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for algo in sorted({r["algorithm"] for r in rows}):
        pts = sorted(
            (r["train_size"], r["f_score"]) for r in rows if r["algorithm"] == algo
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=algo)
    ax.set_xlabel("training set size")
    ax.set_ylabel("F-score")
    ax.set_xscale("log")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def fig_rejection_bars(rows: list[dict], path: str) -> bool:
    rows = [r for r in rows if r.get("rejection_prob") is not None]
    if not rows:
        return False
    algos = sorted({r["algorithm"] for r in rows})
    vals = [
        np.mean([r["rejection_prob"] for r in rows if r["algorithm"] == a]) for a in algos
    ]
    fig, ax = plt.subplots(figsize=(4.6, 3.0))
    ax.bar(algos, vals, color="steelblue")
    ax.set_ylabel("rejection probability")
    ax.set_ylim(0, max(0.05, max(vals) * 1.3))
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def render_report(input_paths: list[str], out_dir: str) -> list[str]:
    """Collect metric rows and evaluation results, emit CSV + figures.

    Inputs are JSON files from `replay`/`optimize` (evaluation documents with
    a `result` key) or `baseline eval`/`cnn eval-predictions` (documents with
    a `rows` key).
    """
    os.makedirs(out_dir, exist_ok=True)
    rows: list[dict] = []
    written: list[str] = []
    eval_idx = 0
    for path in input_paths:
        with open(path) as fh:
            doc = json.load(fh)
        if "rows" in doc:
            rows.extend(doc["rows"])
        if "result" in doc:
            alpha_target = doc.get("alpha_target", 0.9)
            fig_path = os.path.join(out_dir, f"alpha_eval{eval_idx}.png")
            fig_success_ratios(doc["result"], alpha_target, fig_path)
            written.append(fig_path)
            if "grid_layout" in doc:
                hm_path = os.path.join(out_dir, f"holders_eval{eval_idx}.png")
                fig_holders_heatmap(doc["result"], doc["grid_layout"], hm_path)
                written.append(hm_path)
            report = doc.get("cost_report", {})
            rows.append(
                {
                    "scenario": doc.get("scenario", os.path.basename(path)),
                    "algorithm": doc.get("algorithm", "replay"),
                    "train_size": None,
                    "f_score": None,
                    "rejection_prob": None if report.get("feasible") is None
                    else (0.0 if report["feasible"] else 1.0),
                    "savings": report.get("savings_vs_all_on"),
                }
            )
            eval_idx += 1
    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w") as fh:
        fh.write(metrics_rows_csv(rows))
    written.append(csv_path)
    curve_path = os.path.join(out_dir, "fscore_vs_train_size.png")
    if fig_fscore_curves(rows, curve_path):
        written.append(curve_path)
    bars_path = os.path.join(out_dir, "rejection_probability.png")
    if fig_rejection_bars(rows, bars_path):
        written.append(bars_path)
    return written
