"""Run reports: a structured JSON document plus an aligned text rendering."""
from __future__ import annotations

import json
from pathlib import Path

REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"


def _pct(v):
    return "-" if v is None else f"{100 * v:.1f}"


def render_table(table: dict) -> str:
    cols = list(table["columns"])
    head = ["Condition"] + cols + ["Average"]
    body = [[row["condition"]] + [_pct(row["per_group"].get(c)) for c in cols] + [_pct(row["average"])]
            for row in table["rows"]]
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]

    def fmt(r):
        return "  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))

    lines = [table["title"] + f"  (%; mean over {table['seeds']} seeds)", fmt(head), "-" * len(fmt(head))]
    lines += [fmt(r) for r in body]
    if "paired" in table:
        p = table["paired"]
        lines.append(
            f"paired {p['minuend']} - {p['subtrahend']}: {100 * p['mean_difference']:+.2f} pts "
            f"(se {100 * p['std_error']:.2f}, n={p['n']})"
        )
    if "steps" in table:
        lines.append("steps: " + ", ".join(f"{100 * s:+.2f}" for s in table["steps"]))
    lines.append(f"fallback activations: {table.get('fallbacks', 0)}")
    return "\n".join(lines)


def render_groups(groups: list, summary: dict) -> str:
    head = ["Group", "train", "test", "rounds", "case1", "case2", "fallback", "PL acc", "test acc"]
    rows = []
    for g in groups:
        rows.append([
            g["date"], str(g["n_train"]), str(g["n_test"]), str(g["rounds"]), str(g["case1"]),
            str(g["case2"]), str(g["fallback"]), _pct(g.get("pseudo_label_accuracy")),
            _pct(g.get("test_accuracy")),
        ])
    if summary:
        rows.append(["Average", "", "", "", "", "", "", _pct(summary.get("pseudo_label_accuracy")),
                     _pct(summary.get("test_accuracy"))])
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]

    def fmt(r):
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))

    return "\n".join([fmt(head), "-" * len(fmt(head))] + [fmt(r) for r in rows])


def render_report(report: dict) -> str:
    parts = [f"deem {report['command']}  seed={report['seed']}  config={report['config_digest']}"]
    if report.get("groups"):
        parts.append(render_groups(report["groups"], report.get("summary", {})))
    for table in report.get("tables", []):
        parts.append(render_table(table))
    return "\n\n".join(parts) + "\n"


def write_report(report: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / REPORT_JSON
    path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    (out / REPORT_TXT).write_text(render_report(report), encoding="utf-8")
    return path


def read_report(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / REPORT_JSON
    return json.loads(p.read_text(encoding="utf-8"))
