"""Per-iteration run records and their CSV/JSON serialization."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

COLUMNS = ("iter", "subopt", "consensus", "messages", "grad_evals", "skips")
INT_COLUMNS = {"iter", "messages", "grad_evals", "skips"}


@dataclass
class IterationReport:
    sent: np.ndarray
    messages: int
    grad_evals: int
    lhs: np.ndarray | None = None
    rhs: np.ndarray | None = None
    delays: np.ndarray | None = None

    @property
    def skips(self) -> int:
        return int(self.sent.size - np.count_nonzero(self.sent))


@dataclass
class RunTrace:
    """Row 0 is the initial state; row k follows the k-th outer iteration.

    ``messages`` and ``grad_evals`` are cumulative. Row 0 carries the one-time
    initialization solves in ``grad_evals``; the initial neighbor-aggregate
    exchange is shared by every method and is not counted.
    """

    rows: dict[str, list] = field(default_factory=lambda: {c: [] for c in COLUMNS})
    metadata: dict[str, Any] = field(default_factory=dict)
    dual: list[float] = field(default_factory=list)
    reports: list[IterationReport] = field(default_factory=list, repr=False)

    def append(self, subopt: float, consensus: float, messages: int, grad_evals: int, skips: int) -> None:
        self.rows["iter"].append(len(self.rows["iter"]))
        self.rows["subopt"].append(float(subopt))
        self.rows["consensus"].append(float(consensus))
        self.rows["messages"].append(int(messages))
        self.rows["grad_evals"].append(int(grad_evals))
        self.rows["skips"].append(int(skips))

    def __len__(self) -> int:
        return len(self.rows["iter"])

    @property
    def iterations(self) -> int:
        return len(self) - 1

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.rows[name])

    @property
    def final(self) -> dict[str, float]:
        return {c: self.rows[c][-1] for c in COLUMNS}

    def first_reaching(self, target: float) -> int | None:
        """First row index whose suboptimality is <= target."""
        hits = np.flatnonzero(self.column("subopt") <= target)
        return int(hits[0]) if hits.size else None

    def messages_to(self, target: float) -> int | None:
        k = self.first_reaching(target)
        return None if k is None else self.rows["messages"][k]


def _fmt(name: str, v) -> str:
    return str(int(v)) if name in INT_COLUMNS else format(float(v), ".17g")


def trace_to_csv(trace: RunTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for k in range(len(trace)):
        w.writerow([_fmt(c, trace.rows[c][k]) for c in COLUMNS])
    return buf.getvalue()


def trace_to_json(trace: RunTrace) -> str:
    doc = {
        "metadata": trace.metadata,
        "columns": list(COLUMNS),
        "rows": [{c: trace.rows[c][k] for c in COLUMNS} for k in range(len(trace))],
    }
    if trace.dual:
        doc["dual_objective"] = list(trace.dual)
    return json.dumps(doc, indent=1, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def emit_trace(trace: RunTrace, path: str | Path, fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt == "csv":
        text = trace_to_csv(trace)
    elif fmt == "json":
        text = trace_to_json(trace)
    else:
        raise ValueError(f"unknown trace format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def read_trace(path: str | Path) -> RunTrace:
    path = Path(path)
    text = path.read_text()
    trace = RunTrace()
    if path.suffix == ".json":
        doc = json.loads(text)
        trace.metadata = doc.get("metadata", {})
        trace.dual = doc.get("dual_objective", [])
        for row in doc["rows"]:
            for c in COLUMNS:
                trace.rows[c].append(row[c])
        return trace
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != COLUMNS:
        raise ValueError(f"unexpected trace header {header}")
    for rec in reader:
        for c, v in zip(COLUMNS, rec):
            trace.rows[c].append(int(v) if c in INT_COLUMNS else float(v))
    return trace


def config_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
