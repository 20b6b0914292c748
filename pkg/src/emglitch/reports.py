"""Report files for campaigns: CSV rows, nested JSON, and plot-ready series.

Output is deterministic byte for byte given the same campaign seed: floats go
through ``repr`` and dict iteration order is fixed by construction.
Occurrence rates are kept at full precision in files; the human-readable
table view truncates to 0.1%.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from . import core
from .campaign import (AXIS_ORDER, CampaignReport, CartographyReport,
                       TimeSweepReport)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def campaign_csv(report: CampaignReport) -> str:
    axes = [a for a in AXIS_ORDER if a in report.axes]
    dump_keys = list(report.golden_dump.keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(axes + ["trial_seed"] + dump_keys + ["outcome", "reason"])
    for point in report.points:
        for rec in point.records:
            row = [_fmt(rec.point[a]) for a in axes]
            row.append(str(rec.seed))
            row += [core._format_value(k, rec.dump[k]) for k in dump_keys]
            row.append(str(rec.outcome) if rec.outcome is not None else "")
            row.append(rec.reason)
            w.writerow(row)
    return buf.getvalue()


def campaign_json(report: CampaignReport, include_records: bool = False) -> str:
    axes = [a for a in AXIS_ORDER if a in report.axes]
    doc = {
        "program": report.program,
        "axes": axes,
        "golden": {k: core._format_value(k, v) for k, v in report.golden_dump.items()},
        "points": [],
    }
    for point in report.points:
        entry = {
            "point": {a: point.point[a] for a in axes},
            "trials": len(point.records),
            "histogram": {k: {"count": v, "rate": point.rates[k]}
                          for k, v in point.histogram.items()},
        }
        if include_records:
            entry["records"] = [
                {"seed": r.seed, "reason": r.reason,
                 "outcome": str(r.outcome) if r.outcome is not None else None,
                 "dump": {k: core._format_value(k, v) for k, v in r.dump.items()}}
                for r in point.records]
        doc["points"].append(entry)
    return json.dumps(doc, indent=2)


def modal_value(point_result, golden_dump: dict, reg: int) -> int:
    """Most frequent value of one register at a sweep point (ties: smaller)."""
    from collections import Counter
    counts = Counter(rec.dump[f"r{reg}"] for rec in point_result.records)
    best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
    return best[0]


def campaign_plotdata(report: CampaignReport) -> str:
    """(x, y) series; for voltage sweeps y is the Hamming distance between
    the modal observed value and the fault-free one."""
    lines = []
    if "voltage" in report.axes and report.observe_reg is not None:
        true_word = report.true_word
        if true_word is None:
            true_word = report.golden_dump[f"r{report.observe_reg}"]
        lines.append("# voltage hamming_distance modal_value")
        for point in report.points:
            value = modal_value(point, report.golden_dump, report.observe_reg)
            hd = bin(value ^ true_word).count("1")
            lines.append(f"{_fmt(point.point['voltage'])} {hd} 0x{value:08x}")
    else:
        lines.append("# " + " ".join(report.axes) + " histogram")
        for point in report.points:
            coords = " ".join(_fmt(point.point[a]) for a in report.axes)
            top = max(point.histogram.items(), key=lambda kv: (kv[1], kv[0]))
            lines.append(f"{coords} {top[1]} {top[0]!r}")
    return "\n".join(lines) + "\n"


def histogram_table(report: CampaignReport) -> str:
    """Terminal-friendly per-point histograms; rates truncated to 0.1%."""
    lines = []
    for point in report.points:
        coords = ", ".join(f"{k}={_fmt(v)}" for k, v in point.point.items())
        lines.append(f"[{coords}]  ({len(point.records)} trials)")
        for key, count in sorted(point.histogram.items(),
                                 key=lambda kv: (-kv[1], kv[0])):
            rate = point.rates[key]
            lines.append(f"  {int(rate * 1000) / 10:5.1f}%  {key}")
    return "\n".join(lines) + "\n"


def time_sweep_csv(report: TimeSweepReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_ns", "class", "value", "cycles"])
    for row in report.rows:
        w.writerow([_fmt(row.time_ns), row.klass, f"0x{row.value:08x}",
                    str(row.cycles)])
    return buf.getvalue()


def time_sweep_json(report: TimeSweepReport) -> str:
    return json.dumps({
        "program": report.program,
        "watched_addr": f"0x{report.watched_addr:08x}",
        "golden_value": f"0x{report.golden_value:08x}",
        "rows": [{"time_ns": r.time_ns, "class": r.klass,
                  "value": f"0x{r.value:08x}", "cycles": r.cycles}
                 for r in report.rows],
    }, indent=2)


def time_sweep_plotdata(report: TimeSweepReport) -> str:
    lines = ["# time_ns class value"]
    for r in report.rows:
        lines.append(f"{_fmt(r.time_ns)} {r.klass} 0x{r.value:08x}")
    return "\n".join(lines) + "\n"


def cartography_csv(report: CartographyReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x_mm", "y_mm", "dominant", "mean_hw_increase",
                "faulted_regs", "counts"])
    for c in report.cells:
        w.writerow([_fmt(c.x_mm), _fmt(c.y_mm), c.dominant,
                    _fmt(c.mean_hw_increase),
                    " ".join(f"r{r}" for r in c.faulted_regs),
                    " ".join(f"{k}:{v}" for k, v in c.counts.items())])
    return buf.getvalue()


def cartography_json(report: CartographyReport) -> str:
    return json.dumps({
        "program": report.program,
        "extent_mm": report.extent_mm,
        "step_mm": report.step_mm,
        "cells": [{"x_mm": c.x_mm, "y_mm": c.y_mm, "dominant": c.dominant,
                   "mean_hw_increase": c.mean_hw_increase,
                   "faulted_regs": list(c.faulted_regs), "counts": c.counts}
                  for c in report.cells],
    }, indent=2)


def cartography_plotdata(report: CartographyReport) -> str:
    """Grid heat values: mean Hamming-weight increase per cell."""
    lines = ["# x_mm y_mm hw_increase dominant"]
    for c in report.cells:
        lines.append(f"{_fmt(c.x_mm)} {_fmt(c.y_mm)} "
                     f"{_fmt(c.mean_hw_increase)} {c.dominant}")
    return "\n".join(lines) + "\n"


def write_report(out_dir, name: str, fmt: str, report) -> Path:
    """Render one report in the requested format and write it to disk."""
    renderers = {
        CampaignReport: {"csv": campaign_csv, "json": campaign_json,
                         "plotdata": campaign_plotdata},
        TimeSweepReport: {"csv": time_sweep_csv, "json": time_sweep_json,
                          "plotdata": time_sweep_plotdata},
        CartographyReport: {"csv": cartography_csv, "json": cartography_json,
                            "plotdata": cartography_plotdata},
    }
    try:
        render = renderers[type(report)][fmt]
    except KeyError:
        raise ValueError(f"no {fmt!r} renderer for {type(report).__name__}") from None
    ext = {"csv": "csv", "json": "json", "plotdata": "dat"}[fmt]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.{ext}"
    path.write_text(render(report))
    return path
