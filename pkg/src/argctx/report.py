"""Result presentation: a fixed-width text table over aggregate sweep rows
(best value per metric column marked with asterisks), the same rows as a
CSV, and context-sweep curve figures rendered to PNG files.

Everything here is deterministic: rows are ordered by an explicit category
key and figures are written with pinned metadata so repeated runs are
byte-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path

from argctx.errors import DataError

METRIC_COLUMNS = ("kappa", "precision", "recall", "f_score")

_POSITION_ORDER = {"prior": 0, "next": 1, "both": 2}


def setting_label(row: dict) -> str:
    """Human-readable context description for one aggregate row."""
    parts = []
    if row["local_attention"]:
        parts.append("local attention")
    elif row["local_size"] > 0:
        parts.append(f"local {row['local_position']} {row['local_size']}")
    if row["speaker_attention"]:
        parts.append("speaker attention")
    elif row["speaker_size"] > 0:
        parts.append(f"speaker {row['speaker_size']}")
    return " + ".join(parts) if parts else "baseline"


def _category(row: dict) -> int:
    local = row["local_attention"] or row["local_size"] > 0
    speaker = row["speaker_attention"] or row["speaker_size"] > 0
    if not local and not speaker:
        return 0
    if local and speaker:
        return 3
    if row["local_attention"] or row["speaker_attention"]:
        return 4
    return 1 if local else 2


def sort_rows(rows: list[dict]) -> list[dict]:
    return sorted(
        rows,
        key=lambda r: (
            r["pipeline"],
            _category(r),
            _POSITION_ORDER.get(r["local_position"], 9),
            r["local_size"],
            r["speaker_size"],
        ),
    )


def aggregate_rows(rows: list[dict]) -> list[dict]:
    agg = [r for r in rows if r["fold"] == -1]
    if not agg:
        raise DataError("no aggregate rows (fold = -1) in results")
    return sort_rows(agg)


def format_table(rows: list[dict]) -> str:
    """Fixed-width table, one row per (pipeline, context setting); the best
    value in each metric column is wrapped in asterisks."""
    agg = aggregate_rows(rows)
    best = {m: max(r[m] for r in agg) for m in METRIC_COLUMNS}
    header = ["pipeline", "setting", "Kappa", "Precision", "Recall", "F-score"]
    body = []
    for r in agg:
        cells = [r["pipeline"], setting_label(r)]
        for m in METRIC_COLUMNS:
            text = f"{r[m]:.3f}"
            cells.append(f"*{text}*" if r[m] == best[m] else text)
        body.append(cells)
    widths = [
        max(len(header[i]), *(len(row[i]) for row in body)) for i in range(len(header))
    ]
    lines = []
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        rendered = [
            row[i].ljust(widths[i]) if i < 2 else row[i].rjust(widths[i])
            for i in range(len(row))
        ]
        lines.append("  ".join(rendered).rstrip())
    return "\n".join(lines) + "\n"


REPORT_COLUMNS = ("pipeline", "setting", "kappa", "precision", "recall", "f_score", "seed")


def write_report_csv(path: str | Path, rows: list[dict]) -> None:
    agg = aggregate_rows(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in agg:
            writer.writerow(
                [r["pipeline"], setting_label(r)]
                + [repr(float(r[m])) for m in METRIC_COLUMNS]
                + [r["seed"]]
            )


_PNG_METADATA = {"Software": "argctx"}


def render_figures(rows: list[dict], out_dir: str | Path) -> list[Path]:
    """Context-sweep curves as PNG files, one panel per pipeline and
    context type: kappa vs local size (a line per position) and kappa vs
    speaker size, with the baseline as a dashed reference line."""
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    agg = aggregate_rows(rows)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for pipeline in sorted({r["pipeline"] for r in agg}):
        rows_p = [r for r in agg if r["pipeline"] == pipeline]
        baseline = next(
            (r["kappa"] for r in rows_p
             if r["local_size"] == 0 and r["speaker_size"] == 0
             and not r["local_attention"] and not r["speaker_attention"]),
            None,
        )

        local = [
            r for r in rows_p
            if r["local_size"] > 0 and r["speaker_size"] == 0 and not r["local_attention"]
        ]
        if local:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for position in ("prior", "next", "both"):
                series = sorted(
                    (r for r in local if r["local_position"] == position),
                    key=lambda r: r["local_size"],
                )
                if series:
                    ax.plot(
                        [r["local_size"] for r in series],
                        [r["kappa"] for r in series],
                        marker="o", label=position,
                    )
            if baseline is not None:
                ax.axhline(baseline, linestyle="--", color="gray", label="baseline")
            ax.set_xlabel("local context size")
            ax.set_ylabel("kappa")
            ax.set_title(f"Local context sweep ({pipeline})")
            ax.legend()
            fig.tight_layout()
            path = out_dir / f"local_context_{pipeline}.png"
            fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
            plt.close(fig)
            written.append(path)

        speaker = [
            r for r in rows_p
            if r["speaker_size"] > 0 and r["local_size"] == 0 and not r["speaker_attention"]
        ]
        if speaker:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            series = sorted(speaker, key=lambda r: r["speaker_size"])
            ax.plot(
                [r["speaker_size"] for r in series],
                [r["kappa"] for r in series],
                marker="o", label="speaker",
            )
            if baseline is not None:
                ax.axhline(baseline, linestyle="--", color="gray", label="baseline")
            ax.set_xlabel("speaker context size")
            ax.set_ylabel("kappa")
            ax.set_title(f"Speaker context sweep ({pipeline})")
            ax.legend()
            fig.tight_layout()
            path = out_dir / f"speaker_context_{pipeline}.png"
            fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
            plt.close(fig)
            written.append(path)
    return written
