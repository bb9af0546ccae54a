"""Metrics, before/after experiment grids and report rendering."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .flows import LabeledDataset

METHODS = ("Before", "GADoT", "BFP", "FGSM")
EMPTY = "—"


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    f1: float | None
    fnr: float | None

    def get(self, name: str):
        return getattr(self, name.lower())


def _ratio(num: int | float, den: int | float) -> float | None:
    return None if den == 0 else num / den


def compute_metrics(labels, predictions) -> MetricsReport:
    """Confusion counts and ratios; a ratio with a zero denominator is None."""
    y = np.asarray(labels).astype(np.int64).ravel()
    p = np.asarray(predictions).astype(np.int64).ravel()
    if y.shape != p.shape:
        raise ValueError(f"labels ({len(y)}) and predictions ({len(p)}) differ in length")
    tp = int(np.sum((y == 1) & (p == 1)))
    fp = int(np.sum((y == 0) & (p == 1)))
    fn = int(np.sum((y == 1) & (p == 0)))
    tn = int(np.sum((y == 0) & (p == 0)))
    pr = _ratio(tp, tp + fp)
    re = _ratio(tp, tp + fn)
    f1 = None if pr is None or re is None else _ratio(2 * pr * re, pr + re)
    return MetricsReport(tp, fp, fn, tn, pr, re, f1, _ratio(fn, fn + tp))


@dataclass(frozen=True)
class MetricsDelta:
    metric: str
    before: float | None
    after: float | None

    @property
    def delta(self) -> float | None:
        if self.before is None or self.after is None:
            return None
        return self.after - self.before


def benign_pool_digest(ds: LabeledDataset) -> str:
    b = ds.subset(np.flatnonzero(ds.y == 0))
    h = hashlib.sha256()
    for arr in (b.X, b.flow_length):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass
class ExperimentGrid:
    """Classifiers per method, a fixed benign pool and DDoS sample sets per perturbation.

    ``models`` maps method name to a callable returning 0/1 predictions for
    an (n, 10, 11) array.
    """

    models: dict[str, Callable[[np.ndarray], np.ndarray] | None]
    benign_pool: LabeledDataset
    perturbed: dict[str, LabeledDataset | None]
    methods: tuple[str, ...] = METHODS


@dataclass
class GridRow:
    perturbation: str
    reports: dict[str, MetricsReport]
    deltas: dict[str, dict[str, MetricsDelta]] = field(default_factory=dict)


def merge_cell(benign_pool: LabeledDataset, ddos: LabeledDataset) -> LabeledDataset:
    attack = ddos.subset(np.flatnonzero(ddos.y == 1))
    return LabeledDataset(np.concatenate([benign_pool.X, attack.X]),
                          np.concatenate([np.zeros(len(benign_pool), np.int64), attack.y]),
                          np.concatenate([benign_pool.flow_length, attack.flow_length]))


def run_grid(grid: ExperimentGrid) -> list[GridRow]:
    if np.any(grid.benign_pool.y != 0):
        raise ValueError("benign pool contains DDoS-labelled samples")
    pool_hash = benign_pool_digest(grid.benign_pool)
    rows = []
    for name, ddos in grid.perturbed.items():
        if ddos is None:
            raise FileNotFoundError(f"grid cell ({name}): perturbed samples missing")
        cell = merge_cell(grid.benign_pool, ddos)
        if benign_pool_digest(cell) != pool_hash:
            raise AssertionError(f"grid cell ({name}): benign pool changed")
        reports = {}
        for method in grid.methods:
            predict = grid.models.get(method)
            if predict is None:
                raise FileNotFoundError(f"grid cell ({name}, {method}): model missing")
            reports[method] = compute_metrics(cell.y, predict(cell.X))
        row = GridRow(name, reports)
        base = reports[grid.methods[0]]
        for method in grid.methods[1:]:
            row.deltas[method] = {m: MetricsDelta(m, base.get(m), reports[method].get(m))
                                  for m in ("f1", "fnr")}
        rows.append(row)
    return rows


# --------------------------------------------------------------------------
# rendering

CSV_COLUMNS = ("perturbation", "method", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "fnr",
               "delta_f1", "delta_fnr")


def _num(v) -> str:
    return EMPTY if v is None else repr(float(v)) if isinstance(v, float) else str(v)


def _fmt(v) -> str:
    return EMPTY if v is None else f"{v:.4f}"


def grid_records(rows: list[GridRow]) -> list[dict]:
    out = []
    for row in rows:
        for method, rep in row.reports.items():
            d = row.deltas.get(method, {})
            out.append({"perturbation": row.perturbation, "method": method, "tp": rep.tp, "fp": rep.fp,
                        "fn": rep.fn, "tn": rep.tn, "precision": rep.precision, "recall": rep.recall,
                        "f1": rep.f1, "fnr": rep.fnr,
                        "delta_f1": d["f1"].delta if d else None,
                        "delta_fnr": d["fnr"].delta if d else None})
    return out


def records_to_csv(records: list[dict], header_lines: list[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([_num(r[c]) if c not in ("perturbation", "method") else r[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def parse_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out = []
    for r in csv.DictReader(lines):
        rec = {}
        for k, v in r.items():
            if k in ("perturbation", "method"):
                rec[k] = v
            elif v == EMPTY:
                rec[k] = None
            elif k in ("tp", "fp", "fn", "tn"):
                rec[k] = int(v)
            else:
                rec[k] = float(v)
        out.append(rec)
    return out


def render_text(records: list[dict], title: str = "", methods: tuple[str, ...] = METHODS) -> str:
    """Table IV/V layout: one row per perturbation, F1/FNR per method with deltas."""
    by = {}
    order = []
    for r in records:
        if r["perturbation"] not in by:
            order.append(r["perturbation"])
            by[r["perturbation"]] = {}
        by[r["perturbation"]][r["method"]] = r
    head = ["Perturbation", f"{methods[0]} F1", f"{methods[0]} FNR"]
    for m in methods[1:]:
        head += [f"{m} F1", "Δ", f"{m} FNR", "Δ"]
    body = []
    for p in order:
        cells = by[p]
        base = cells.get(methods[0], {})
        line = [p, _fmt(base.get("f1")), _fmt(base.get("fnr"))]
        for m in methods[1:]:
            c = cells.get(m, {})
            line += [_fmt(c.get("f1")), _fmt(c.get("delta_f1")), _fmt(c.get("fnr")), _fmt(c.get("delta_fnr"))]
        body.append(line)
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    fmt_row = lambda cells: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)  # noqa: E731
                                      for i, (c, w) in enumerate(zip(cells, widths)))
    lines = ([title] if title else []) + [fmt_row(head), "-" * len(fmt_row(head))] + [fmt_row(b) for b in body]
    return "\n".join(lines) + "\n"


def render_report(rows: list[GridRow], title: str = "", header_lines: list[str] = ()) -> tuple[str, str]:
    """Return (csv text, human-readable text) for a grid."""
    if not rows:
        raise ValueError("empty report table")
    records = grid_records(rows)
    return records_to_csv(records, header_lines), render_text(records, title)


def render_unperturbed(before: MetricsReport, after: MetricsReport, title: str = "") -> str:
    """Table III layout: metrics as rows, Before / After / Δ as columns."""
    lines = [title] if title else []
    lines.append(f"{'Metric':<10}  {'Before':>8}  {'After':>8}  {'Δ':>8}")
    for name, label in (("precision", "Precision"), ("recall", "Recall"), ("f1", "F1 score"), ("fnr", "FNR")):
        d = MetricsDelta(name, before.get(name), after.get(name))
        lines.append(f"{label:<10}  {_fmt(d.before):>8}  {_fmt(d.after):>8}  {_fmt(d.delta):>8}")
    return "\n".join(lines) + "\n"
