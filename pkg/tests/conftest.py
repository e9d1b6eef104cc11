from __future__ import annotations

import pytest

from tabreason.tables import Orientation, Table


class ScriptedGateway:
    """Gateway stand-in that replays a fixed queue of responses."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def complete(self, req, mode=None):
        self.requests.append(req)
        if not self.responses:
            raise AssertionError("scripted gateway ran out of responses")
        return self.responses.pop(0)


class PromptedGateway:
    """Gateway stand-in that computes the response from the prompt."""

    def __init__(self, responder):
        self.responder = responder
        self.requests = []

    def complete(self, req, mode=None):
        self.requests.append(req)
        return self.responder(req.prompt)


class FakeSandbox:
    """Sandbox stand-in mapping code snippets to canned observations."""

    def __init__(self, observations=None, default="None"):
        self.observations = observations or {}
        self.default = default
        self.executed = []

    def run(self, code):
        self.executed.append(code)
        return self.observations.get(code, self.default)

    def shutdown(self):
        pass


@pytest.fixture
def scripted_gateway():
    return ScriptedGateway


@pytest.fixture
def prompted_gateway():
    return PromptedGateway


@pytest.fixture
def small_table():
    return Table.from_rows(
        "Example standings",
        [
            ["Year", "Team", "Points"],
            ["2001", "Alpha", "10"],
            ["2002", "Beta", "2"],
            ["2003", "Gamma", "1"],
        ],
        orientation_hint=Orientation.ROW_TABLE,
    )


def make_table(rows, title="t", hint=Orientation.ROW_TABLE):
    return Table.from_rows(title, rows, orientation_hint=hint)
