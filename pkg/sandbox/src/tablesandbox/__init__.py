"""Subprocess Python sandbox for table-reasoning agents."""

from .session import DEFAULT_TIMEOUT_S, SandboxError, SandboxSession, start_session

__all__ = ["DEFAULT_TIMEOUT_S", "SandboxError", "SandboxSession", "start_session"]
