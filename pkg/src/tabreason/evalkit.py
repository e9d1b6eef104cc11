"""Exact-match scoring, accuracy arithmetic, row-count binning, and reports.

All percentages round half-up to two decimals, matching the formatting of
the result tables this harness reproduces.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

from .aggregate import CanonicalAnswer, answers_match, canonicalize_answer
from .tables import Perturbation


class EvalError(Exception):
    pass


class EmptyResults(EvalError):
    pass


class ZeroBase(EvalError):
    pass


class TooFewTasks(EvalError):
    pass


def round_half_up(value: float, places: int = 2) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class EvalResult:
    task_id: str
    predicted: CanonicalAnswer
    gold: CanonicalAnswer
    correct: bool
    tags: tuple[str, ...] = ()


def exact_match(pred: Sequence[str], gold: Sequence[str]) -> bool:
    """Canonical multiset equality; numeric tokens compare within 1e-6 relative."""
    if not gold:
        raise ValueError("gold answer set must be non-empty")
    return answers_match(canonicalize_answer(list(pred)), canonicalize_answer(list(gold)))


def score(task_id: str, pred: Sequence[str], gold: Sequence[str], tags: Sequence[str] = ()) -> EvalResult:
    predicted = canonicalize_answer(list(pred))
    gold_canonical = canonicalize_answer(list(gold))
    return EvalResult(
        task_id=task_id,
        predicted=predicted,
        gold=gold_canonical,
        correct=answers_match(predicted, gold_canonical),
        tags=tuple(tags),
    )


def accuracy(results: Sequence[EvalResult]) -> float:
    """Percent correct, half-up rounded to two decimals."""
    if not results:
        raise EmptyResults("cannot compute accuracy of zero results")
    correct = sum(1 for r in results if r.correct)
    return round_half_up(100.0 * correct / len(results))


def rel_delta(new_acc: float, base_acc: float) -> float:
    """Signed relative change in percent, two decimals: 100 * (new - base) / base."""
    if base_acc <= 0:
        raise ZeroBase("relative delta needs a positive baseline")
    return round_half_up(100.0 * (new_acc - base_acc) / base_acc)


@dataclass(frozen=True)
class RowBin:
    label: str
    task_ids: tuple[str, ...]


def bin_by_rows(tasks: Sequence, n_bins: int = 10) -> list[RowBin]:
    """Contiguous near-equal bins of tasks ordered by data-row count.

    Sizes differ by at most one (earlier bins take the remainder); the sort
    is stable so tasks with equal row counts stay adjacent.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if n_bins > len(tasks):
        raise TooFewTasks(f"{len(tasks)} tasks cannot fill {n_bins} bins")
    ordered = sorted(tasks, key=lambda t: len(t.table.data_rows))
    base, rem = divmod(len(ordered), n_bins)
    bins = []
    start = 0
    for i in range(n_bins):
        size = base + (1 if i < rem else 0)
        chunk = ordered[start : start + size]
        start += size
        lo = len(chunk[0].table.data_rows)
        hi = len(chunk[-1].table.data_rows)
        bins.append(
            RowBin(
                label=f"{lo}-{hi}" if lo != hi else str(lo),
                task_ids=tuple(t.id for t in chunk),
            )
        )
    return bins


PERTURBATION_ORDER = (
    Perturbation.ORIGINAL,
    Perturbation.ROW_SHUFFLE,
    Perturbation.TRANSPOSE,
    Perturbation.TRANSPOSE_SHUFFLE,
)

_PERTURBATION_HEADING = {
    Perturbation.ORIGINAL: "original",
    Perturbation.ROW_SHUFFLE: "+shuffle",
    Perturbation.TRANSPOSE: "+transpose",
    Perturbation.TRANSPOSE_SHUFFLE: "+transpose&shuffle",
}

GridKey = tuple[str, Perturbation, str]  # (method, perturbation, norm mode)


def _grid_rows(grid: dict[GridKey, float]) -> list[tuple[str, str]]:
    rows = []
    for method, _, norm_mode in grid:
        if (method, norm_mode) not in rows:
            rows.append((method, norm_mode))
    return rows


def emit_report(grid: dict[GridKey, float], format: str = "markdown") -> str:
    """Accuracy grid as markdown or CSV with deltas against the unperturbed column.

    Row order follows first appearance in the grid; columns follow the fixed
    perturbation order. Missing cells render empty.
    """
    if not grid:
        raise EmptyResults("empty report grid")
    rows = _grid_rows(grid)

    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "norm", "perturbation", "accuracy", "delta"])
        for method, norm_mode in rows:
            base = grid.get((method, Perturbation.ORIGINAL, norm_mode))
            for pert in PERTURBATION_ORDER:
                acc = grid.get((method, pert, norm_mode))
                if acc is None:
                    continue
                delta = ""
                if pert is not Perturbation.ORIGINAL and base:
                    delta = f"{rel_delta(acc, base):+.2f}%"
                writer.writerow(
                    [method, norm_mode, pert.value, f"{acc:.2f}", delta]
                )
        return buf.getvalue()

    headings = [_PERTURBATION_HEADING[p] for p in PERTURBATION_ORDER]
    lines = [
        "| method | norm | " + " | ".join(headings) + " |",
        "|---|---|" + "---|" * len(headings),
    ]
    for method, norm_mode in rows:
        base = grid.get((method, Perturbation.ORIGINAL, norm_mode))
        cells = []
        for pert in PERTURBATION_ORDER:
            acc = grid.get((method, pert, norm_mode))
            if acc is None:
                cells.append("")
            elif pert is Perturbation.ORIGINAL or not base:
                cells.append(f"{acc:.2f}")
            else:
                cells.append(f"{acc:.2f} ({rel_delta(acc, base):+.2f}%)")
        lines.append(f"| {method} | {norm_mode} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> dict[GridKey, float]:
    """Inverse of the CSV layout emitted by emit_report."""
    grid: dict[GridKey, float] = {}
    reader = csv.DictReader(io.StringIO(text))
    for row in reader:
        key = (row["method"], Perturbation(row["perturbation"]), row["norm"])
        grid[key] = float(row["accuracy"])
    return grid
