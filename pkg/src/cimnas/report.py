"""Summaries of recorded results.

Nothing is recomputed here: every number is read from an eval report, a
fit report or a search history and at most averaged.

Accuracy table
    One row per eval file or history: clean accuracy, mean, 95% minimum and
    max of the perturbed-accuracy samples, plus wall time for searches.
Fit table
    One row per model label: chi-square and MSE averaged over the output
    elements of each report, then over all reports sharing the label.
"""

from __future__ import annotations

import json
from pathlib import Path
from statistics import fmean

from .errors import FormatError


def load_result(path) -> tuple[str, object]:
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix == ".jsonl":
            return "history", [json.loads(line) for line in text.splitlines() if line.strip()]
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind == "eval_distribution":
        return "eval", doc
    if kind == "fit_report":
        return "fit", doc
    raise FormatError(f"{path}: unrecognised result file (kind={kind!r})")


def _eval_row(name: str, d: dict) -> dict:
    try:
        return {"name": name, "clean": d["clean_accuracy"], "mean": d["mean"], "p95min": d["p95min"],
                "max": d["max"], "K": d["K"], "sigma": d["noise"]["sigma"]}
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{name}: eval report is missing {exc}") from exc


def _history_row(name: str, records: list[dict]) -> dict:
    if not records:
        raise FormatError(f"{name}: empty search history")
    try:
        ok = [r for r in records if not r["failed"]]
        best = max(records, key=lambda r: (r["reward"], -r["episode"]))
        row = {"name": name, "episodes": len(records), "failed": len(records) - len(ok),
               "best_reward": best["reward"], "mean_reward": fmean(r["reward"] for r in records),
               "best_episode": best["episode"], "wall_time": sum(r["wall_time"] for r in records)}
        if best.get("eval"):
            row.update(_eval_row(name, best["eval"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{name}: malformed history record ({exc})") from exc
    return row


def accuracy_rows(items) -> list[dict]:
    rows = [_eval_row(n, d) for n, kind, d in items if kind == "eval"]
    histories = [_history_row(n, d) for n, kind, d in items if kind == "history"]
    return rows + sorted(histories, key=lambda r: -r["mean_reward"])


def fit_rows(items) -> list[dict]:
    groups: dict[str, list[dict]] = {}
    for name, kind, d in items:
        if kind == "fit":
            groups.setdefault(d.get("label") or name, []).append(d)
    rows = []
    for label, docs in groups.items():
        fitted = [d for d in docs if d.get("mean_chi_square") is not None]
        rows.append({
            "model": label,
            "reports": len(docs),
            "chi_square": fmean(d["mean_chi_square"] for d in fitted) if fitted else None,
            "mse": fmean(d["mean_mse"] for d in fitted) if fitted else None,
            "max_chi_square": max((e["chi_square"] for d in fitted for e in d["elements"] if not e["degenerate"]), default=None),
            "max_mse": max((e["mse"] for d in fitted for e in d["elements"] if not e["degenerate"]), default=None),
        })
    return rows


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}" if abs(v) < 1e-3 and v else f"{v:.4f}"
    return str(v)


def format_table(rows: list[dict], columns: list[str]) -> str:
    cells = [columns] + [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def build_report(paths) -> tuple[str, dict]:
    items = []
    for p in paths:
        kind, doc = load_result(p)
        items.append((Path(p).name, kind, doc))
    acc, fit = accuracy_rows(items), fit_rows(items)
    parts = []
    if acc:
        cols = ["name", "clean", "mean", "p95min", "max", "K", "sigma"]
        if any("episodes" in r for r in acc):
            cols += ["episodes", "best_reward", "mean_reward", "wall_time"]
        parts.append("perturbed accuracy\n" + format_table(acc, cols))
    if fit:
        parts.append("gaussian fit\n" + format_table(fit, ["model", "reports", "chi_square", "mse", "max_chi_square", "max_mse"]))
    return "\n\n".join(parts) + "\n", {"kind": "report", "accuracy": acc, "fit": fit}
