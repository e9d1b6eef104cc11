"""Sandbox worker process: a JSON-lines REPL over stdin/stdout.

One request per line, one response per line. Ops:

- ``{"op": "init", "header": [...], "rows": [[...]]}`` builds the dataframe
  ``df`` (all cells kept as Python strings, so every column has object
  dtype; duplicate header names get ``.1``/``.2`` suffixes).
- ``{"op": "exec", "code": "..."}`` executes the code against a persistent
  namespace and returns ``{"ok": true, "observation": "..."}``. The
  observation is captured stdout plus the repr of a trailing expression, as
  in an interactive session. Exceptions are reported, not raised:
  ``{"ok": false, "error_type": "KeyError", "error": "'nope'"}``.
- ``{"op": "ping"}`` answers ``{"ok": true}``.
- ``{"op": "shutdown"}`` acknowledges and exits.

The worker disables socket creation and applies a best-effort address-space
limit before serving requests. Wall-clock budgets are enforced by the client
session, which kills and restarts the process.
"""

from __future__ import annotations

import ast
import contextlib
import io
import json
import os
import sys

import pandas as pd

DEFAULT_MEM_MB = 512


def uniquify_headers(header: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for name in header:
        if name in seen:
            seen[name] += 1
            out.append(f"{name}.{seen[name]}")
        else:
            seen[name] = 0
            out.append(name)
    return out


def build_dataframe(header: list[str], rows: list[list[str]]) -> pd.DataFrame:
    columns = uniquify_headers([str(h) for h in header])
    data = [[str(cell) for cell in row] for row in rows]
    return pd.DataFrame(data, columns=columns, dtype=object)


def execute(code: str, namespace: dict) -> str:
    """Run code, returning captured stdout plus a trailing-expression echo."""
    tree = ast.parse(code, mode="exec")
    trailing = None
    if tree.body and isinstance(tree.body[-1], ast.Expr):
        trailing = ast.Expression(tree.body.pop().value)

    buffer = io.StringIO()
    with contextlib.redirect_stdout(buffer):
        if tree.body:
            exec(compile(tree, "<sandbox>", "exec"), namespace)
        value = (
            eval(compile(trailing, "<sandbox>", "eval"), namespace)
            if trailing is not None
            else None
        )
        if value is not None:
            print(repr(value) if not isinstance(value, str) else value)
    return buffer.getvalue().rstrip("\n")


def _disable_network() -> None:
    import socket

    def deny(*args, **kwargs):
        raise OSError("network access is disabled in the sandbox")

    socket.socket = deny  # type: ignore[assignment]
    socket.create_connection = deny  # type: ignore[assignment]


def _limit_memory() -> None:
    mem_mb = int(os.environ.get("TABLESANDBOX_MEM_MB", DEFAULT_MEM_MB))
    try:
        import resource

        limit = mem_mb * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
    except (ImportError, ValueError, OSError):
        pass  # best effort; not available on all platforms


def handle(request: dict, namespace: dict) -> dict:
    op = request.get("op")
    if op == "ping":
        return {"ok": True}
    if op == "init":
        namespace["pd"] = pd
        namespace["df"] = build_dataframe(request["header"], request["rows"])
        return {"ok": True}
    if op == "exec":
        try:
            return {"ok": True, "observation": execute(request["code"], namespace)}
        except BaseException as exc:  # reported to the client, never fatal
            return {"ok": False, "error_type": type(exc).__name__, "error": str(exc)}
    if op == "shutdown":
        return {"ok": True, "bye": True}
    return {"ok": False, "error_type": "ProtocolError", "error": f"unknown op {op!r}"}


def main() -> None:
    _disable_network()
    _limit_memory()
    namespace: dict = {"__builtins__": __builtins__}
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            response = {"ok": False, "error_type": "ProtocolError", "error": str(exc)}
        else:
            response = handle(request, namespace)
        sys.stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
        sys.stdout.flush()
        if response.get("bye"):
            return


if __name__ == "__main__":
    main()
