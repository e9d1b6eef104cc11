"""Canonical dataset IO: JSON Lines tasks plus CSV/TSV table converters.

One task per line: ``{id, title, header: [..], rows: [[..]], question,
answers: [..]}``. Tables loaded here are row-oriented by construction.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .reasoners import Task
from .tables import Orientation, Table, TableFormat, parse_table


class DatasetError(Exception):
    pass


def task_from_record(record: dict) -> Task:
    for key in ("id", "title", "header", "rows", "question", "answers"):
        if key not in record:
            raise DatasetError(f"task record missing field {key!r}")
    table = Table.from_rows(
        record["title"],
        [record["header"]] + list(record["rows"]),
        orientation_hint=Orientation.ROW_TABLE,
    )
    return Task(
        id=str(record["id"]),
        table=table,
        title=record["title"],
        question=record["question"],
        gold=tuple(str(a) for a in record["answers"]),
    )


def task_to_record(task: Task) -> dict:
    return {
        "id": task.id,
        "title": task.title,
        "header": list(task.table.header),
        "rows": [list(r) for r in task.table.data_rows],
        "question": task.question,
        "answers": list(task.gold),
    }


def load_tasks(path: str | Path) -> list[Task]:
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            tasks.append(task_from_record(record))
    if not tasks:
        raise DatasetError(f"{path}: no tasks")
    return tasks


def save_tasks(tasks: Iterable[Task], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for task in tasks:
            fh.write(json.dumps(task_to_record(task), ensure_ascii=False) + "\n")


def task_from_table_file(
    path: str | Path,
    task_id: str,
    title: str,
    question: str,
    answers: list[str],
    format: TableFormat | None = None,
) -> Task:
    """Build one task from a CSV/TSV/markdown table file plus QA metadata."""
    path = Path(path)
    if format is None:
        format = {
            ".csv": TableFormat.CSV,
            ".tsv": TableFormat.TSV,
        }.get(path.suffix.lower(), TableFormat.PIPE_MARKDOWN)
    table = parse_table(path.read_text(encoding="utf-8"), format)
    table = Table(
        title=title, cells=table.cells, orientation_hint=Orientation.ROW_TABLE
    )
    return Task(
        id=task_id, table=table, title=title, question=question, gold=tuple(answers)
    )
