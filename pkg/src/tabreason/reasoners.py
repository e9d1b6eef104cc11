"""The two zero-shot reasoning drivers and their transcript parsers.

Direct prompting (dp) is one completion ending in a "Final Answer:" line.
The Python agent (pyagent) is a Thought/Action/Action Input/Observation loop
against a code sandbox, capped at five executed actions; the omitted variant
differs only in showing the head/tail table excerpt instead of the full
table.

The conversation is re-sent in full each agent turn; each turn's completion
carries the run's sample index plus the turn number so multi-turn replay is
exact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import prompts
from .gateway import CompletionRequest
from .tables import MarkdownView, Table, render_markdown

METHOD_DP = "dp"
METHOD_PYAGENT = "pyagent"
METHOD_PYAGENT_OMITTED = "pyagent_omitted"

PERMITTED_ACTION = "python_repl_ast"
MAX_AGENT_STEPS = 5
OBSERVATION_CHAR_LIMIT = 2000
TRUNCATION_MARKER = " …[truncated]"
INVALID_ACTION_OBSERVATION = "Invalid action; only python_repl_ast is allowed"

# Generous upper bound on model turns so runs terminate even when the model
# never produces an executable action or a final answer.
MAX_AGENT_TURNS = 2 * MAX_AGENT_STEPS + 2


class ParseError(Exception):
    pass


class NoFinalAnswer(ParseError):
    pass


@dataclass(frozen=True)
class Task:
    id: str
    table: Table
    title: str
    question: str
    gold: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.gold:
            raise ValueError("gold answer set must be non-empty")
        if not self.question:
            raise ValueError("question must be non-empty")


@dataclass(frozen=True)
class AgentStep:
    thought: str
    action: str
    action_input: str
    observation: str
    truncated: bool


@dataclass
class ReasoningTrace:
    method: str
    turns: list[tuple[str, str]] = field(default_factory=list)
    steps: list[AgentStep] = field(default_factory=list)
    answer: list[str] = field(default_factory=list)
    failed: bool = False
    failure_reason: str | None = None


_FINAL_ANSWER_RE = re.compile(r"final answer:", re.IGNORECASE)


def parse_final_answer(text: str) -> list[str]:
    """Split the remainder of the last "Final Answer:" line on ", "."""
    matches = list(_FINAL_ANSWER_RE.finditer(text))
    if not matches:
        raise NoFinalAnswer("no Final Answer: line in response")
    rest = text[matches[-1].end():].split("\n", 1)[0]
    return [item.strip() for item in rest.split(", ")]


@dataclass(frozen=True)
class Act:
    action: str
    action_input: str
    thought: str = ""


@dataclass(frozen=True)
class Final:
    answer: tuple[str, ...]


@dataclass(frozen=True)
class Malformed:
    reason: str


_ACTION_RE = re.compile(r"^Action:\s*(.*)$", re.MULTILINE)
_ACTION_INPUT_RE = re.compile(r"^Action Input:", re.MULTILINE)
_OBSERVATION_RE = re.compile(r"^Observation:", re.MULTILINE)
_THOUGHT_RE = re.compile(r"^Thought:\s*(.*)$", re.MULTILINE)
_CODE_FENCE_RE = re.compile(r"^```[a-zA-Z]*\n(.*?)\n?```\s*$", re.DOTALL)


def _strip_code_fence(code: str) -> str:
    match = _CODE_FENCE_RE.match(code.strip())
    return match.group(1) if match else code.strip()


def parse_agent_step(text: str) -> Act | Final | Malformed:
    """Classify one agent turn.

    A "Final Answer:" line preceding any "Action:" line terminates the run;
    otherwise an Action/Action Input pair yields an Act whose input spans up
    to the next "Observation:" line or the end of the turn, with surrounding
    code fences stripped.
    """
    final_match = _FINAL_ANSWER_RE.search(text)
    action_match = _ACTION_RE.search(text)

    if final_match and (action_match is None or final_match.start() < action_match.start()):
        try:
            return Final(answer=tuple(parse_final_answer(text)))
        except NoFinalAnswer as exc:  # pragma: no cover - final_match implies success
            return Malformed(reason=str(exc))

    if action_match is None:
        return Malformed(reason="no Action: or Final Answer: line")
    input_match = _ACTION_INPUT_RE.search(text, action_match.end())
    if input_match is None:
        return Malformed(reason="Action: without Action Input:")

    obs_match = _OBSERVATION_RE.search(text, input_match.end())
    raw_input = text[input_match.end(): obs_match.start() if obs_match else len(text)]
    thought_match = _THOUGHT_RE.search(text[: action_match.start()])
    return Act(
        action=action_match.group(1).strip().strip("`"),
        action_input=_strip_code_fence(raw_input),
        thought=thought_match.group(1).strip() if thought_match else "",
    )


def _truncate_observation(text: str) -> tuple[str, bool]:
    if len(text) <= OBSERVATION_CHAR_LIMIT:
        return text, False
    return text[:OBSERVATION_CHAR_LIMIT] + TRUNCATION_MARKER, True


def run_dp(task: Task, gateway, sample_index: int = 0, temperature: float = 0.0) -> ReasoningTrace:
    """One direct-prompting completion over the full table view."""
    prompt = prompts.render(
        "dp",
        {
            "TITLE": task.title,
            "TABLE": render_markdown(task.table, MarkdownView.FULL),
            "QUESTION": task.question,
        },
    )
    req = CompletionRequest(
        prompt=prompt,
        temperature=temperature,
        max_output_tokens=2048,
        sample_index=sample_index,
    )
    response = gateway.complete(req)
    trace = ReasoningTrace(method=METHOD_DP, turns=[("user", prompt), ("assistant", response)])
    try:
        trace.answer = parse_final_answer(response)
    except NoFinalAnswer:
        trace.failed = True
        trace.failure_reason = "no_final_answer"
    return trace


def _model_turn_scratchpad(response: str) -> str:
    """Drop any hallucinated observation tail before appending the real one."""
    action_match = _ACTION_RE.search(response)
    if action_match:
        obs_match = _OBSERVATION_RE.search(response, action_match.end())
        if obs_match:
            return response[: obs_match.start()].rstrip()
    return response.rstrip()


def run_pyagent(
    task: Task,
    sandbox,
    gateway,
    view: MarkdownView = MarkdownView.FULL,
    sample_index: int = 0,
    temperature: float = 0.0,
) -> ReasoningTrace:
    """Drive the code-execution agent loop, capped at five executed actions.

    ``sandbox`` must expose ``run(code) -> str`` returning the observation
    text. Non-permitted actions receive a corrective observation and do not
    count against the step budget; the loop is additionally bounded by a
    total-turn cap so it always terminates.
    """
    method = METHOD_PYAGENT if view is MarkdownView.FULL else METHOD_PYAGENT_OMITTED
    prompt = prompts.render(
        "pyagent",
        {
            "TITLE": task.title,
            "TABLE": render_markdown(task.table, view),
            "QUESTION": task.question,
        },
    )
    trace = ReasoningTrace(method=method)
    conversation = prompt
    trace.turns.append(("user", prompt))

    for turn in range(MAX_AGENT_TURNS):
        req = CompletionRequest(
            prompt=conversation,
            temperature=temperature,
            max_output_tokens=1024,
            sample_index=sample_index,
            turn=turn,
        )
        try:
            response = gateway.complete(req)
        except Exception as exc:
            trace.failed = True
            trace.failure_reason = f"gateway_error: {exc}"
            return trace
        trace.turns.append(("assistant", response))

        parsed = parse_agent_step(response)
        if isinstance(parsed, Final):
            trace.answer = list(parsed.answer)
            return trace
        if isinstance(parsed, Malformed):
            trace.failed = True
            trace.failure_reason = f"malformed_turn: {parsed.reason}"
            return trace

        if parsed.action != PERMITTED_ACTION:
            observation, truncated = INVALID_ACTION_OBSERVATION, False
        else:
            if len(trace.steps) >= MAX_AGENT_STEPS:
                trace.failed = True
                trace.failure_reason = "step_budget"
                return trace
            try:
                raw_observation = sandbox.run(parsed.action_input)
            except Exception as exc:
                trace.failed = True
                trace.failure_reason = f"sandbox_error: {exc}"
                return trace
            observation, truncated = _truncate_observation(raw_observation)
            trace.steps.append(
                AgentStep(
                    thought=parsed.thought,
                    action=parsed.action,
                    action_input=parsed.action_input,
                    observation=observation,
                    truncated=truncated,
                )
            )
        scratch = _model_turn_scratchpad(response)
        conversation = f"{conversation}\n{scratch}\nObservation: {observation}\nThought:"
        trace.turns.append(("tool", observation))

    trace.failed = True
    trace.failure_reason = "turn_budget"
    return trace
