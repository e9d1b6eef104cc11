"""Two-stage table structure normalization and the structure probe tasks.

Stage one decides whether the first row or the first column carries the
headings (content-aware: the model sees both candidates, not just the
layout) and transposes column-tables into row-tables. Stage two optionally
asks for a sort key over a head/tail excerpt of the table and re-sorts the
data rows.

Parser failures degrade to no-ops: an unparseable orientation choice keeps
the table as-is, an unparseable sort proposal sorts nothing. Both are
recorded so downstream analysis can see every decision.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from datetime import datetime

from . import prompts
from .gateway import CompletionRequest
from .tables import (
    MarkdownView,
    Orientation,
    Table,
    cells_equal,
    parse_table,
    render_markdown,
    render_pipe_plain,
    transpose,
)

logger = logging.getLogger(__name__)


class NormalizerError(Exception):
    pass


class UnparseableChoice(NormalizerError):
    """No "Choice: (A|B|C)" line in the determinator response."""


class UnparseableVerdict(NormalizerError):
    """No "Transpose Recommended: YES|NO" verdict in the detector response."""


class UnparseableTable(NormalizerError):
    """The transposer response contained no parseable table."""


CHOICE_FIRST_ROW = "first_row"
CHOICE_FIRST_COLUMN = "first_column"
CHOICE_NEITHER = "neither"

_CHOICE_BY_LETTER = {"A": CHOICE_FIRST_ROW, "B": CHOICE_FIRST_COLUMN, "C": CHOICE_NEITHER}
_CHOICE_RE = re.compile(r"Choice:\s*\(([ABC])\)")
_SORT_RE = re.compile(r"Sort by:\s*(.+)")
_VERDICT_RE = re.compile(r"Transpose Recommended\**\s*:\s*\**\s*(YES|NO)", re.IGNORECASE)


@dataclass(frozen=True)
class OrientationChoice:
    choice: str  # first_row / first_column / neither
    raw: str


@dataclass(frozen=True)
class SortSpec:
    keys: tuple[str, ...]
    raw: str

    @property
    def is_noop(self) -> bool:
        return not self.keys


@dataclass
class NormTrace:
    input_rows: int
    input_cols: int
    choice: OrientationChoice
    transposed: bool
    sort: SortSpec | None = None
    resort_applied: bool = False


def parse_orientation_choice(text: str) -> OrientationChoice:
    """First "Choice: (A|B|C)" match anywhere in the response wins."""
    match = _CHOICE_RE.search(text)
    if match is None:
        raise UnparseableChoice("no Choice: (A)/(B)/(C) line in response")
    return OrientationChoice(choice=_CHOICE_BY_LETTER[match.group(1)], raw=text)


def determine_orientation(table: Table, title: str, gateway) -> OrientationChoice:
    """Ask which of first row / first column reads as the table's headings.

    Degenerate tables (a single row or column) short-circuit to first_row
    without any model call.
    """
    if table.n_rows < 2 or table.n_cols < 2:
        return OrientationChoice(choice=CHOICE_FIRST_ROW, raw="")
    prompt = prompts.render(
        "determinator",
        {
            "TITLE": title,
            "TABLE": render_markdown(table, MarkdownView.FULL),
            "FIRST_ROW": " | ".join(table.cells[0]),
            "FIRST_COLUMN": " | ".join(table.first_column()),
        },
    )
    response = gateway.complete(CompletionRequest(prompt=prompt))
    return parse_orientation_choice(response)


def parse_sort_spec(text: str) -> SortSpec:
    """Parse the "Sort by:" line; "N/A" or a missing line means no sort."""
    match = _SORT_RE.search(text)
    if match is None:
        logger.warning("no Sort by: line in resort response; skipping resort")
        return SortSpec(keys=(), raw=text)
    value = match.group(1).strip()
    if value.upper().rstrip(".") in ("N/A", "NA", "[N/A]"):
        return SortSpec(keys=(), raw=text)
    keys = tuple(k.strip().strip("[]").strip() for k in value.split(",") if k.strip())
    return SortSpec(keys=keys, raw=text)


def propose_sort(table: Table, title: str, gateway) -> SortSpec:
    """Ask for a sort order given only the head/tail excerpt of the table."""
    prompt = prompts.render(
        "resort",
        {
            "TITLE": title,
            "TABLE": render_markdown(table, MarkdownView.HEAD_TAIL_3),
            "HEADINGS": "; ".join(table.header),
        },
    )
    response = gateway.complete(CompletionRequest(prompt=prompt))
    return parse_sort_spec(response)


_CURRENCY = "$€£¥"
_DATE_FORMATS = ("%Y-%m-%d", "%B %d, %Y", "%b %d, %Y")


def _as_number(cell: str) -> float | None:
    text = cell.strip().lstrip(_CURRENCY).rstrip("%").replace(",", "")
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        return None


def _as_date(cell: str) -> datetime | None:
    text = cell.strip()
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    return None


def compare_cells(a: str, b: str) -> int:
    """Per-pair comparator: numeric, then date, then case-insensitive lexical."""
    na, nb = _as_number(a), _as_number(b)
    if na is not None and nb is not None:
        return (na > nb) - (na < nb)
    da, db = _as_date(a), _as_date(b)
    if da is not None and db is not None:
        return (da > db) - (da < db)
    la, lb = a.strip().casefold(), b.strip().casefold()
    return (la > lb) - (la < lb)


def apply_sort(table: Table, spec: SortSpec) -> Table:
    """Stable sort of the data rows by the proposal's key columns in order.

    Keys naming absent columns are skipped with a warning; an empty spec is
    the identity.
    """
    columns = []
    header_lookup = {h.strip().casefold(): i for i, h in enumerate(table.header)}
    for key in spec.keys:
        idx = header_lookup.get(key.strip().casefold())
        if idx is None:
            logger.warning("sort key %r names no column; skipped", key)
            continue
        columns.append(idx)
    if not columns:
        return table

    import functools

    def compare_rows(ra: tuple[str, ...], rb: tuple[str, ...]) -> int:
        for idx in columns:
            result = compare_cells(ra[idx], rb[idx])
            if result:
                return result
        return 0

    data = sorted(table.data_rows, key=functools.cmp_to_key(compare_rows))
    return Table(
        title=table.title,
        cells=(table.header,) + tuple(data),
        orientation_hint=table.orientation_hint,
    )


def normalize(
    table: Table,
    title: str,
    gateway,
    resort: bool = True,
) -> tuple[Table, NormTrace]:
    """Orient the table to a row-table, then optionally re-sort its rows."""
    try:
        choice = determine_orientation(table, title, gateway)
    except UnparseableChoice as exc:
        logger.warning("orientation fell back to first_row: %s", exc)
        choice = OrientationChoice(choice=CHOICE_FIRST_ROW, raw="")

    transposed = choice.choice == CHOICE_FIRST_COLUMN
    result = transpose(table) if transposed else table
    result = Table(
        title=result.title, cells=result.cells, orientation_hint=Orientation.ROW_TABLE
    )
    trace = NormTrace(
        input_rows=table.n_rows,
        input_cols=table.n_cols,
        choice=choice,
        transposed=transposed,
    )
    if resort:
        spec = propose_sort(result, title, gateway)
        trace.sort = spec
        if not spec.is_noop:
            result = apply_sort(result, spec)
            trace.resort_applied = True
    return result, trace


def probe_detect(table: Table, gateway) -> bool:
    """Detector probe: True iff the model recommends transposing the table."""
    prompt = prompts.render(
        "detector", {"TABLE": render_markdown(table, MarkdownView.FULL)}
    )
    response = gateway.complete(CompletionRequest(prompt=prompt))
    matches = _VERDICT_RE.findall(response)
    if not matches:
        raise UnparseableVerdict("no Transpose Recommended: YES/NO verdict")
    return matches[-1].upper() == "YES"


def probe_transpose(table: Table, gateway) -> tuple[Table | None, bool]:
    """Transposer probe: graded cell-exact against the true transpose."""
    prompt = prompts.render("transposer", {"TABLE": render_pipe_plain(table)})
    response = gateway.complete(CompletionRequest(prompt=prompt))
    table_lines = [line for line in response.splitlines() if "|" in line]
    try:
        if not table_lines:
            raise UnparseableTable("no pipe-delimited lines in response")
        parsed = parse_table("\n".join(table_lines))
    except Exception:
        return None, False
    return parsed, cells_equal(parsed, transpose(table))
