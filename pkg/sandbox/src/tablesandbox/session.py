"""Client-side sandbox session: subprocess lifecycle, timeouts, restarts.

``start_session(payload)`` spawns a worker subprocess, initializes its
dataframe, and returns a session whose ``run(code) -> str`` executes code
with a wall-clock budget. A timed-out worker is killed and a fresh one is
re-initialized with the same table, so one runaway snippet never poisons the
rest of an agent run.
"""

from __future__ import annotations

import json
import queue
import subprocess
import sys
import threading

DEFAULT_TIMEOUT_S = 10.0


class SandboxError(Exception):
    """The worker broke protocol or died unexpectedly."""


class SandboxSession:
    def __init__(
        self,
        payload: dict,
        worker_cmd: list[str] | None = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
    ):
        if not {"header", "rows"} <= payload.keys():
            raise ValueError("payload needs 'header' and 'rows'")
        self.payload = payload
        self.worker_cmd = worker_cmd or [sys.executable, "-m", "tablesandbox.worker"]
        self.timeout_s = timeout_s
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._start()

    def _start(self) -> None:
        self._proc = subprocess.Popen(
            self.worker_cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        self._lines = queue.Queue()
        reader = threading.Thread(
            target=self._pump, args=(self._proc.stdout, self._lines), daemon=True
        )
        reader.start()
        # interpreter startup dominates init, so it gets its own budget
        response = self._request(
            {"op": "init", "header": self.payload["header"], "rows": self.payload["rows"]},
            timeout=max(self.timeout_s, 30.0),
        )
        if not response.get("ok"):
            raise SandboxError(f"init failed: {response}")

    @staticmethod
    def _pump(stream, lines: queue.Queue) -> None:
        for line in stream:
            lines.put(line)
        lines.put(None)

    def _request(self, message: dict, timeout: float | None = None) -> dict:
        proc = self._proc
        if proc is None or proc.poll() is not None:
            raise SandboxError("worker is not running")
        proc.stdin.write(json.dumps(message) + "\n")
        proc.stdin.flush()
        try:
            line = self._lines.get(timeout=timeout or self.timeout_s)
        except queue.Empty as exc:
            raise TimeoutError(
                f"sandbox execution exceeded {self.timeout_s}s budget"
            ) from exc
        if line is None:
            raise SandboxError("worker closed its output stream")
        return json.loads(line)

    def run(self, code: str) -> str:
        """Execute code in the worker, returning the observation text.

        Exceptions inside the snippet come back as "Type: message" text. A
        wall-clock timeout kills the worker and is reported the same way; the
        next call starts a fresh worker with the original table.
        """
        if self._proc is None:
            self._start()
        try:
            response = self._request({"op": "exec", "code": code})
        except TimeoutError as exc:
            self._kill()
            return f"TimeoutError: {exc}"
        if response.get("ok"):
            return response.get("observation", "")
        return f"{response.get('error_type', 'Error')}: {response.get('error', '')}"

    def ping(self) -> bool:
        return self._request({"op": "ping"}).get("ok", False)

    def _kill(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None

    def shutdown(self) -> None:
        """Stop the worker; safe to call more than once."""
        if self._proc is None:
            return
        if self._proc.poll() is None:
            try:
                self._proc.stdin.write(json.dumps({"op": "shutdown"}) + "\n")
                self._proc.stdin.flush()
                self._proc.wait(timeout=2.0)
            except (OSError, subprocess.TimeoutExpired):
                pass
        self._kill()

    def __enter__(self) -> "SandboxSession":
        return self

    def __exit__(self, *exc_info) -> None:
        self.shutdown()


def start_session(
    payload: dict,
    worker_cmd: list[str] | None = None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> SandboxSession:
    """Spawn a worker for one table and return the ready session."""
    return SandboxSession(payload, worker_cmd=worker_cmd, timeout_s=timeout_s)
