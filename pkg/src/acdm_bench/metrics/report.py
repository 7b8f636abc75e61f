"""Evaluation records and their CSV / JSON emission."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .core import aggregate


class EvalReport:
    """Flat store of (metric, run, member, index, value) rows.

    ``index`` is the rollout step for per-step metrics or the bin for spectra.
    """

    def __init__(self):
        self.rows: dict[str, list[tuple[str, int, int, float]]] = defaultdict(list)

    def add_series(self, metric: str, run: str, member: int, series) -> None:
        for i, v in enumerate(np.asarray(series, dtype=np.float64).ravel()):
            self.rows[metric].append((run, int(member), i, float(v)))

    def metrics(self) -> list[str]:
        return sorted(self.rows)

    def matrix(self, metric: str) -> np.ndarray:
        """[series, index] values of one metric, series ordered by (run, member)."""
        by = defaultdict(dict)
        for run, member, i, v in self.rows[metric]:
            by[(run, member)][i] = v
        keys = sorted(by)
        n = max(len(by[k]) for k in keys)
        return np.array([[by[k].get(i, np.nan) for i in range(n)] for k in keys])

    def summary(self) -> dict:
        """Per metric: the temporal (or bin) mean per series, aggregated over
        series, plus the aggregated per-index curve."""
        out = {}
        for m in self.metrics():
            mat = self.matrix(m)
            per_series = np.nanmean(mat, axis=1)
            agg = aggregate(per_series)
            curve = aggregate(mat)
            out[m] = {"n_series": int(mat.shape[0]),
                      **{k: float(v) for k, v in agg.items()},
                      "curve": {k: np.asarray(v).tolist() for k, v in curve.items()}}
        return out

    def write(self, out_dir, extra: dict | None = None) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for m in self.metrics():
            with open(out_dir / f"{m}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["run", "member", "index", "value"])
                for row in sorted(self.rows[m]):
                    w.writerow([row[0], row[1], row[2], repr(row[3])])
        report = {"metrics": self.summary()}
        if extra:
            report.update(extra)
        path = out_dir / "report.json"
        path.write_text(json.dumps(report, indent=1))
        return path

    @classmethod
    def read(cls, out_dir) -> "EvalReport":
        rep = cls()
        for f in sorted(Path(out_dir).glob("*.csv")):
            with open(f, newline="") as fh:
                for row in csv.DictReader(fh):
                    rep.rows[f.stem].append((row["run"], int(row["member"]), int(row["index"]),
                                             float(row["value"])))
        return rep
