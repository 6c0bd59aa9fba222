"""Run artifacts: per-iteration CSV, price/demand vectors, allocation table, summary, SVG charts."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from dwmarket.core import DomainError, par

ITERATION_COLUMNS = ("iter", "objective", "s_best", "gap", "generation_cost", "user_payment",
                     "par_demand", "par_price", "std_demand", "std_price", "s_best_max")


def fmt(x: float) -> str:
    """17 significant digits: parses back to the identical double."""
    return format(float(x), ".17g")


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def _safe_par(v) -> float | None:
    try:
        return par(v)
    except DomainError:
        return None


def iteration_rows(result) -> list[list[str]]:
    rows = []
    for rec in result.records:
        m = rec.metrics
        rows.append([str(rec.iteration), fmt(rec.master.objective), fmt(rec.s_best), fmt(rec.gap),
                     fmt(m.generation_cost), fmt(m.user_payment), fmt(m.par_demand),
                     fmt(m.par_price), fmt(m.std_demand), fmt(m.std_price), fmt(rec.s_best_max)])
    return rows


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_vector(path: Path, name: str, values):
    _write_csv(path, ("hour", name), [[str(h), fmt(v)] for h, v in enumerate(values)])


def read_vector(path) -> np.ndarray:
    with Path(path).open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([float(r[1]) for r in rows[1:]])


def summarize(result, certificate=None) -> dict:
    first, last = result.records[0], result.records[-1]
    d0 = first.bid.demand
    dF = last.master.constructed_demand
    summary = {
        "status": result.status,
        "iterations": len(result.records),
        "gap_tol": result.gap_tol,
        "final_gap": _finite_or_none(last.gap),
        "objective_initial": first.master.objective,
        "objective_final": last.master.objective,
        "par_demand_initial": _safe_par(d0),
        "par_demand_final": _safe_par(dF),
        "par_price_initial": _finite_or_none(first.metrics.par_price),
        "par_price_final": _finite_or_none(last.metrics.par_price),
        "peak_demand_initial": float(np.max(d0, initial=0.0)),
        "peak_demand_final": float(np.max(dF, initial=0.0)),
        "generation_cost_initial": first.metrics.generation_cost,
        "generation_cost_final": last.metrics.generation_cost,
        "user_payment_initial": first.metrics.user_payment,
        "user_payment_final": last.metrics.user_payment,
        "nonzero_weights": int(np.count_nonzero(last.master.weights)),
    }
    if certificate is not None:
        summary["nash_certificate"] = {
            "passed": certificate.passed,
            "eps": certificate.eps,
            "price_error": certificate.price_error,
            "failures": list(certificate.failures),
        }
    return summary


def write_report(result, out_dir, svg: bool = False, certificate=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "iterations.csv", ITERATION_COLUMNS, iteration_rows(result))
    first, last = result.records[0], result.records[-1]
    _write_vector(out / "prices_initial.csv", "price", first.prices)
    _write_vector(out / "demand_initial.csv", "demand", first.bid.demand)
    _write_vector(out / "prices_final.csv", "price", last.master.prices)
    _write_vector(out / "demand_final.csv", "demand", last.master.constructed_demand)

    alloc = result.allocation
    H = len(last.master.constructed_demand)
    _write_csv(out / "allocation.csv", ["device_id", "benefit"] + [f"h{h:02d}" for h in range(H)],
               [[i, fmt(alloc.benefit[i])] + [fmt(v) for v in alloc.demand[i]]
                for i in sorted(alloc.demand)])

    summary = summarize(result, certificate)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    if svg:
        demands = [rec.master.constructed_demand for rec in result.records]
        prices = [rec.master.prices for rec in result.records]
        (out / "demand.svg").write_text(line_chart(demands, "Constructed demand by iteration",
                                                   "kWh"), encoding="utf-8")
        (out / "prices.svg").write_text(line_chart(prices, "Marginal prices by iteration",
                                                   "$/kWh"), encoding="utf-8")
    return out


def line_chart(series, title: str, unit: str, width: int = 640, height: int = 360) -> str:
    """One polyline per series over the hour axis; later series drawn darker."""
    left, right, top, bottom = 56, 16, 32, 40
    H = max((len(s) for s in series), default=0)
    ymax = max((float(np.max(s, initial=0.0)) for s in series), default=0.0) or 1.0
    pw, ph = width - left - right, height - top - bottom

    def xy(h, v):
        x = left + (pw * h / max(H - 1, 1))
        y = top + ph * (1.0 - v / ymax)
        return f"{x:.2f},{y:.2f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
             f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
             f'<text x="{left - 6}" y="{top + 4}" text-anchor="end">{ymax:.3g}</text>',
             f'<text x="{left - 6}" y="{top + ph}" text-anchor="end">0</text>',
             f'<text x="14" y="{top + ph / 2:.0f}" transform="rotate(-90 14 {top + ph / 2:.0f})" '
             f'text-anchor="middle">{unit}</text>']
    for h in range(0, H, 3):
        x = left + pw * h / max(H - 1, 1)
        parts.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle">{h}</text>')
    parts.append(f'<text x="{left + pw / 2:.0f}" y="{height - 6}" text-anchor="middle">hour</text>')
    n = len(series)
    for k, s in enumerate(series):
        shade = int(200 - 170 * (k / max(n - 1, 1)))
        color = f"rgb({shade},{shade},255)" if k < n - 1 else "rgb(200,30,30)"
        pts = " ".join(xy(h, float(v)) for h, v in enumerate(s))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
