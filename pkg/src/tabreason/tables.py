"""Typed table model, markdown/CSV parsing and rendering, and structural perturbations.

Tables are immutable value objects: a title plus a rectangular grid of raw
text cells. Row 0 holds the headers for row-oriented tables. The three
perturbation operators (row shuffle, transpose, shuffle-then-transpose) are
pure functions over these values.

Shuffling uses an explicit Fisher-Yates walk driven by ``random.Random``
(Mersenne Twister), so a given seed produces the same permutation on every
platform and Python version this package supports.
"""

from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass
from enum import Enum


class TableError(Exception):
    """Base class for table construction and parsing failures."""


class RaggedRows(TableError):
    """Rows do not all share the same cell count."""


class EmptyInput(TableError):
    """No parseable table content was supplied."""


class NotRowOriented(TableError):
    """Operation requires a header-first-row table."""


class Orientation(str, Enum):
    ROW_TABLE = "row_table"
    COLUMN_TABLE = "column_table"
    UNKNOWN = "unknown"


class Perturbation(str, Enum):
    ORIGINAL = "original"
    ROW_SHUFFLE = "row_shuffle"
    TRANSPOSE = "transpose"
    TRANSPOSE_SHUFFLE = "transpose_shuffle"

    @property
    def needs_seed(self) -> bool:
        return self in (Perturbation.ROW_SHUFFLE, Perturbation.TRANSPOSE_SHUFFLE)


@dataclass(frozen=True)
class PerturbationKind:
    kind: Perturbation
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind.needs_seed and self.seed is None:
            raise ValueError(f"perturbation {self.kind.value} requires a seed")
        if not self.kind.needs_seed and self.seed is not None:
            raise ValueError(f"perturbation {self.kind.value} takes no seed")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class Table:
    """A rectangular grid of text cells with a title.

    ``cells`` is row-major; for row-oriented tables row 0 is the header row.
    No type coercion is applied: every cell stays raw text.
    """

    title: str
    cells: tuple[tuple[str, ...], ...]
    orientation_hint: Orientation = Orientation.UNKNOWN

    def __post_init__(self) -> None:
        if not self.cells or not self.cells[0]:
            raise EmptyInput("a table needs at least one row and one column")
        width = len(self.cells[0])
        for i, row in enumerate(self.cells):
            if len(row) != width:
                raise RaggedRows(
                    f"row {i} has {len(row)} cells, expected {width}"
                )

    @classmethod
    def from_rows(
        cls,
        title: str,
        rows: list[list[str]] | tuple,
        orientation_hint: Orientation = Orientation.UNKNOWN,
    ) -> "Table":
        """Build a table from nested lists, flattening embedded newlines to spaces."""
        cells = tuple(
            tuple(" ".join(str(c).splitlines()) for c in row) for row in rows
        )
        return cls(title=title, cells=cells, orientation_hint=orientation_hint)

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    @property
    def n_cols(self) -> int:
        return len(self.cells[0])

    @property
    def header(self) -> tuple[str, ...]:
        return self.cells[0]

    @property
    def data_rows(self) -> tuple[tuple[str, ...], ...]:
        return self.cells[1:]

    def first_column(self) -> tuple[str, ...]:
        return tuple(row[0] for row in self.cells)


class TableFormat(str, Enum):
    PIPE_MARKDOWN = "pipe_markdown"
    TSV = "tsv"
    CSV = "csv"


class MarkdownView(str, Enum):
    FULL = "full"
    HEAD_TAIL_3 = "head_tail_3"


def _split_pipe_row(line: str) -> list[str]:
    # "\|" is an escaped pipe inside a cell; any other backslash is literal.
    parts: list[str] = []
    current: list[str] = []
    ends_with_pipe = False
    i = 0
    while i < len(line):
        ch = line[i]
        if ch == "\\" and i + 1 < len(line) and line[i + 1] == "|":
            current.append("|")
            i += 2
            ends_with_pipe = False
            continue
        if ch == "|":
            parts.append("".join(current))
            current = []
            ends_with_pipe = True
        else:
            current.append(ch)
            if ch.strip():
                ends_with_pipe = False
        i += 1
    parts.append("".join(current))
    if line.lstrip().startswith("|"):
        parts = parts[1:]
    if ends_with_pipe:
        parts = parts[:-1]
    return [p.strip() for p in parts]


def _is_separator_row(cells: list[str]) -> bool:
    return bool(cells) and all(
        c and set(c) <= set(":-") and "-" in c for c in cells
    )


def parse_table(text: str, format: TableFormat = TableFormat.PIPE_MARKDOWN) -> Table:
    """Parse delimited table text into a Table with trimmed cells.

    Pipe-markdown input may carry an alignment separator row and a leading
    integer index column (dataframe-style rendering); the separator is
    dropped, and the index column is stripped when the first header cell is
    empty. Orientation is left unknown.
    """
    if not text.strip():
        raise EmptyInput("no table content")

    rows: list[list[str]]
    if format is TableFormat.PIPE_MARKDOWN:
        rows = []
        for line in text.splitlines():
            if not line.strip():
                continue
            cells = _split_pipe_row(line)
            if _is_separator_row(cells):
                continue
            rows.append(cells)
    else:
        delimiter = "\t" if format is TableFormat.TSV else ","
        reader = csv.reader(io.StringIO(text), delimiter=delimiter)
        rows = [[c.strip() for c in row] for row in reader if row]

    if not rows:
        raise EmptyInput("no table rows")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRows(f"row {i} has {len(row)} cells, expected {width}")

    if format is TableFormat.PIPE_MARKDOWN and width > 1 and rows[0][0] == "":
        rows = [row[1:] for row in rows]

    return Table.from_rows("", rows)


def _escape_cell(cell: str) -> str:
    return cell.replace("|", "\\|")


def _format_row(cells: list[str]) -> str:
    return "| " + " | ".join(_escape_cell(c) for c in cells) + " |"


def render_markdown(table: Table, view: MarkdownView = MarkdownView.FULL) -> str:
    """Render dataframe-style pipe markdown with a leading integer index column.

    ``head_tail_3`` shows the first and last three data rows with a single
    full-width ``...`` row between them; tables with six or fewer data rows
    render in full.
    """
    lines = [_format_row([""] + list(table.header))]
    lines.append("|" + "---|" * (table.n_cols + 1))

    data = list(table.data_rows)
    if view is MarkdownView.HEAD_TAIL_3 and len(data) > 6:
        for i in (0, 1, 2):
            lines.append(_format_row([str(i)] + list(data[i])))
        lines.append(_format_row(["..."] * (table.n_cols + 1)))
        for i in range(len(data) - 3, len(data)):
            lines.append(_format_row([str(i)] + list(data[i])))
    else:
        for i, row in enumerate(data):
            lines.append(_format_row([str(i)] + list(row)))
    return "\n".join(lines)


def render_pipe_plain(table: Table) -> str:
    """Render every row as ``| a | b``: no index column, no separator row.

    This is the layout the transposition probe asks the model to preserve.
    """
    return "\n".join("| " + " | ".join(_escape_cell(c) for c in row) for row in table.cells)


def transpose(table: Table) -> Table:
    """Swap rows and columns: result[i][j] = table[j][i]. Title is preserved."""
    cells = tuple(
        tuple(table.cells[j][i] for j in range(table.n_rows))
        for i in range(table.n_cols)
    )
    hint = {
        Orientation.ROW_TABLE: Orientation.COLUMN_TABLE,
        Orientation.COLUMN_TABLE: Orientation.ROW_TABLE,
        Orientation.UNKNOWN: Orientation.UNKNOWN,
    }[table.orientation_hint]
    return Table(title=table.title, cells=cells, orientation_hint=hint)


def seeded_permutation(n: int, seed: int) -> list[int]:
    """Deterministic Fisher-Yates permutation of range(n) for a 64-bit seed."""
    rng = random.Random(seed)
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.randrange(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def shuffle_rows(table: Table, seed: int) -> Table:
    """Permute the data rows with a seeded permutation; the header row is fixed."""
    if table.orientation_hint is Orientation.COLUMN_TABLE:
        raise NotRowOriented("cannot row-shuffle a column-oriented table")
    data = table.data_rows
    perm = seeded_permutation(len(data), seed)
    cells = (table.header,) + tuple(data[i] for i in perm)
    return Table(title=table.title, cells=cells, orientation_hint=table.orientation_hint)


def perturb(table: Table, p: PerturbationKind) -> Table:
    """Apply one structural perturbation to a row-oriented table.

    ``transpose_shuffle`` shuffles the data rows first and transposes the
    result, so the shuffled rows become the columns beyond the header column.
    """
    if p.kind is Perturbation.ORIGINAL:
        return table
    if p.kind is Perturbation.ROW_SHUFFLE:
        return shuffle_rows(table, p.seed)
    if p.kind is Perturbation.TRANSPOSE:
        return transpose(table)
    return transpose(shuffle_rows(table, p.seed))


def cells_equal(a: Table, b: Table) -> bool:
    """Cell-exact comparison: same dimensions, every cell equal after trim."""
    if a.n_rows != b.n_rows or a.n_cols != b.n_cols:
        return False
    return all(
        ca.strip() == cb.strip()
        for ra, rb in zip(a.cells, b.cells)
        for ca, cb in zip(ra, rb)
    )
