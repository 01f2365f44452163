"""Result tables: per-configuration mean±std and the roll-up by input length."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from ..errors import EmptyStore
from ..features import FEATURE_KINDS, LENGTH_MODES
from ..metrics import AggregateRow
from ..models import MODEL_IDS
from .store import ResultsStore

LENGTH_LABEL = {"full": "Full", "fixed4s": "4s"}


def fmt_eer(mean: float, std: float) -> str:
    return f"{mean:.2f}±{std:.2f}"


def fmt_tdcf(mean: float | None, std: float | None) -> str:
    return "" if mean is None else f"{mean:.3f}±{std:.2f}"


def _order(key):
    model, feature, length = key
    m = MODEL_IDS.index(model) if model in MODEL_IDS else len(MODEL_IDS)
    f = FEATURE_KINDS.index(feature) if feature in FEATURE_KINDS else len(FEATURE_KINDS)
    n = LENGTH_MODES[::-1].index(length) if length in LENGTH_MODES else len(LENGTH_MODES)
    return (m, model, f, feature, n, length)


@dataclass
class ReportTable:
    eval_names: list[str]
    keys: list[tuple[str, str, str]]
    cells: dict[str, dict[tuple[str, str, str], AggregateRow]]
    best: dict[str, set[tuple[str, str, str]]]  # column name -> flagged keys
    summary: list[dict]

    def columns(self) -> list[str]:
        cols = []
        for name in self.eval_names:
            cols.append(f"{name}_eer")
            if self._has_tdcf(name):
                cols.append(f"{name}_tdcf")
        return cols

    def _has_tdcf(self, name) -> bool:
        return any(r.tdcf_mean is not None for r in self.cells[name].values())

    def row_values(self, key) -> list[tuple[str, bool]]:
        out = []
        for name in self.eval_names:
            row = self.cells[name].get(key)
            eer = fmt_eer(row.eer_mean, row.eer_std) if row else ""
            out.append((eer, key in self.best[f"{name}_eer"]))
            if self._has_tdcf(name):
                tdcf = fmt_tdcf(row.tdcf_mean, row.tdcf_std) if row else ""
                out.append((tdcf, key in self.best[f"{name}_tdcf"]))
        return out

    def n_runs(self, key) -> int:
        return max(self.cells[n][key].n_runs for n in self.eval_names if key in self.cells[n])


def _flag_best(rows: dict, attr: str) -> set:
    """Lowest mean per model for one column; ties flag every tied row."""
    best = {}
    for key, row in rows.items():
        v = getattr(row, attr)
        if v is None:
            continue
        v = round(v, 6)
        cur = best.get(key[0])
        if cur is None or v < cur[0]:
            best[key[0]] = (v, {key})
        elif v == cur[0]:
            cur[1].add(key)
    return set().union(*(s for _, s in best.values())) if best else set()


def summarize_by_length(rows: list[AggregateRow]) -> list[dict]:
    """Unweighted average of configuration means for each input length."""
    out = []
    for length in LENGTH_MODES[::-1]:
        sel = [r for r in rows if r.length == length]
        if not sel:
            continue
        tdcfs = [r.tdcf_mean for r in sel if r.tdcf_mean is not None]
        out.append({"length": length,
                    "eer": float(np.mean([r.eer_mean for r in sel])),
                    "tdcf": float(np.mean(tdcfs)) if tdcfs else None,
                    "n_configs": len(sel)})
    return out


def build_table(store: ResultsStore) -> ReportTable:
    names = store.eval_manifests()
    if not names:
        raise EmptyStore("results store holds no completed records")
    cells = {n: {(r.model, r.feature, r.length): r for r in store.aggregate(n)} for n in names}
    keys = sorted(set().union(*(c.keys() for c in cells.values())), key=_order)
    best = {}
    for n in names:
        best[f"{n}_eer"] = _flag_best(cells[n], "eer_mean")
        best[f"{n}_tdcf"] = _flag_best(cells[n], "tdcf_mean")
    summary = []
    for n in names:
        for s in summarize_by_length(list(cells[n].values())):
            summary.append({"eval": n, **s})
    return ReportTable(names, keys, cells, best, summary)


def _summary_cells(s: dict) -> list[str]:
    return [s["eval"], LENGTH_LABEL.get(s["length"], s["length"]), f"{s['eer']:.2f}",
            "" if s["tdcf"] is None else f"{s['tdcf']:.2f}", str(s["n_configs"])]


SUMMARY_HEADER = ["eval", "length", "eer_mean", "tdcf_mean", "n_configs"]


def render_markdown(table: ReportTable) -> str:
    header = ["model", "feature", "length", *table.columns(), "n_runs"]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for key in table.keys:
        vals = [f"**{v}**" if flag and v else v for v, flag in table.row_values(key)]
        model, feature, length = key
        lines.append("| " + " | ".join([model, feature, LENGTH_LABEL.get(length, length),
                                          *vals, str(table.n_runs(key))]) + " |")
    lines += ["", "Bold marks the best configuration per model in each column.", "",
              "## Summary by input length", "",
              "| " + " | ".join(SUMMARY_HEADER) + " |", "|" + "---|" * len(SUMMARY_HEADER)]
    lines += ["| " + " | ".join(_summary_cells(s)) + " |" for s in table.summary]
    return "\n".join(lines) + "\n"


def render_csv(table: ReportTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = table.columns()
    w.writerow(["section", "model", "feature", "length", *cols,
                *[f"best_{c}" for c in cols], "n_runs"])
    for key in table.keys:
        vals = table.row_values(key)
        w.writerow(["table", *key[:2], LENGTH_LABEL.get(key[2], key[2]),
                    *[v for v, _ in vals], *[int(f) for _, f in vals], table.n_runs(key)])
    w.writerow([])
    w.writerow(["section", *SUMMARY_HEADER])
    for s in table.summary:
        w.writerow(["summary", *_summary_cells(s)])
    return buf.getvalue()


def report(store: ResultsStore, fmt: str = "markdown") -> str:
    table = build_table(store)
    if fmt == "markdown":
        return render_markdown(table)
    if fmt == "csv":
        return render_csv(table)
    raise ValueError(f"unknown report format {fmt!r}")
