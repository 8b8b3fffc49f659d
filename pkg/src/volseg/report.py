"""Benchmark report serialization (JSON/CSV) and figure rendering.

The canonical report bytes are fully deterministic for a given config and
seed: runtime is kept out of them so identical runs emit identical files.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evalbench import BenchmarkReport, ClassSummary, VolumeRow

SCHEMA_VERSION = 1


def report_to_dict(report: BenchmarkReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": report.config,
        "skipped": report.skipped,
        "classes": [
            {
                "class_id": s.class_id,
                "n_volumes": s.n_volumes,
                "mean_dice": s.mean_dice,
                "ci95": s.ci95,
                **(
                    {"mean_dice_oracle": s.mean_dice_oracle}
                    if s.mean_dice_oracle is not None
                    else {}
                ),
            }
            for s in report.summaries
        ],
        "volumes": [
            {
                "volume_id": r.volume_id,
                "class_id": r.class_id,
                "dice": r.dice,
                **({"trajectory": r.trajectory} if r.trajectory else {}),
                **({"dice_oracle": r.dice_oracle} if r.dice_oracle is not None else {}),
            }
            for r in report.rows
        ],
    }


def report_from_dict(data: dict) -> BenchmarkReport:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema {data.get('schema_version')}")
    rows = [
        VolumeRow(
            v["volume_id"],
            v["class_id"],
            v["dice"],
            v.get("trajectory", []),
            v.get("dice_oracle"),
        )
        for v in data["volumes"]
    ]
    summaries = [
        ClassSummary(
            s["class_id"],
            s["n_volumes"],
            s["mean_dice"],
            s["ci95"],
            s.get("mean_dice_oracle"),
        )
        for s in data["classes"]
    ]
    return BenchmarkReport(data["config"], rows, summaries, data["skipped"])


def emit_report(report: BenchmarkReport, fmt: str = "json") -> bytes:
    """Serialize with a stable field order; floats survive a round trip exactly."""
    if fmt == "json":
        return (json.dumps(report_to_dict(report), indent=2) + "\n").encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        has_oracle = any(r.dice_oracle is not None for r in report.rows)
        fields = ["volume_id", "class_id", "dice"] + (["dice_oracle"] if has_oracle else [])
        writer = csv.writer(buf)
        writer.writerow(fields)
        for r in report.rows:
            row = [r.volume_id, r.class_id, repr(r.dice)]
            if has_oracle:
                row.append(repr(r.dice_oracle))
            writer.writerow(row)
        return buf.getvalue().encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def render_report_figures(report: BenchmarkReport, outdir: Path) -> list[Path]:
    """Render per-class dice bars (with CI) and the edit curve when present."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    if report.summaries:
        fig, ax = plt.subplots(figsize=(6, 4))
        classes = [str(s.class_id) for s in report.summaries]
        means = [s.mean_dice for s in report.summaries]
        errs = [s.ci95 for s in report.summaries]
        ax.bar(classes, means, yerr=errs, capsize=4, color="#4878a8")
        if any(s.mean_dice_oracle is not None for s in report.summaries):
            oracle = [s.mean_dice_oracle or 0.0 for s in report.summaries]
            ax.bar(
                classes, oracle, fill=False, edgecolor="#a84848",
                linewidth=1.5, label="oracle pick",
            )
            ax.legend()
        ax.set_xlabel("class")
        ax.set_ylabel("3D dice")
        ax.set_ylim(0, 1.05)
        ax.set_title(f"{report.config.get('protocol')} prompting, "
                     f"{report.config.get('prompt_type')} prompt")
        fig.tight_layout()
        path = outdir / "dice_by_class.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    budgets, curve = report.edit_curve()
    if len(budgets) > 1:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(budgets, curve, marker="o", color="#4878a8")
        ax.set_xlabel("edit points")
        ax.set_ylabel("mean 3D dice")
        ax.set_title("dice vs. edit budget")
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = outdir / "edit_curve.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
