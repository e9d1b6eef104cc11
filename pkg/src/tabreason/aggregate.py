"""Answer canonicalization, majority voting, and multi-path aggregation.

Answers are compared as multisets of canonical tokens. Canonicalization is
deliberately pinned here (unicode NFKC, case folding, quote/punctuation
stripping, thousands-comma removal, canonical numeric rendering) because the
evaluation protocol needs one deterministic equality rule.

Voting follows two fixed conventions: failed reasoning traces abstain rather
than contributing an empty answer, and count ties between methods resolve in
favor of the textual (DP) answers before being declared unresolved.
"""

from __future__ import annotations

import math
import random
import re
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import prompts
from .tables import MarkdownView, render_markdown


class AggregateError(Exception):
    pass


class EmptyVotes(AggregateError):
    pass


class AllFailed(AggregateError):
    """Every trace in the pool failed to produce an answer."""


class InsufficientPool(AggregateError):
    pass


_NUMBER_RE = re.compile(r"^[+-]?(\d{1,3}(,\d{3})+|\d+)(\.\d+)?$")
_QUOTES = "\"'‘’“”"


def canonical_number(text: str) -> str | None:
    """Canonical decimal rendering of a numeric token, or None if non-numeric."""
    if not _NUMBER_RE.match(text):
        return None
    value = float(text.replace(",", ""))
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def canonical_token(raw: str) -> str:
    token = unicodedata.normalize("NFKC", raw)
    token = token.strip().lower()
    token = token.strip(_QUOTES)
    while token.endswith(".") or token.endswith("%"):
        token = token[:-1]
    token = re.sub(r"\s+", " ", token).strip()
    number = canonical_number(token)
    return number if number is not None else token


@dataclass(frozen=True)
class CanonicalAnswer:
    """A sorted multiset of canonical tokens plus the original display text."""

    items: tuple[str, ...]
    display: str

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CanonicalAnswer):
            return NotImplemented
        return self.items == other.items

    def __hash__(self) -> int:
        return hash(self.items)


def canonicalize_answer(raw: Sequence[str]) -> CanonicalAnswer:
    items = tuple(sorted(canonical_token(item) for item in raw))
    return CanonicalAnswer(items=items, display=", ".join(raw))


def _numeric_pair_match(a: str, b: str, rel_tol: float) -> bool:
    try:
        return math.isclose(float(a), float(b), rel_tol=rel_tol, abs_tol=0.0)
    except ValueError:
        return False


def answers_match(a: CanonicalAnswer, b: CanonicalAnswer, rel_tol: float = 1e-6) -> bool:
    """Multiset equality of canonical tokens; numeric tokens compare within rel_tol."""
    if len(a.items) != len(b.items):
        return False
    for ta, tb in zip(a.items, b.items):
        if ta == tb:
            continue
        if not _numeric_pair_match(ta, tb, rel_tol):
            return False
    return True


@dataclass
class Tally:
    count: int = 0
    dp_count: int = 0
    py_count: int = 0


@dataclass
class VoteResult:
    tallies: dict[CanonicalAnswer, Tally]
    winner: CanonicalAnswer
    tied: bool
    tie_set: list[CanonicalAnswer]


DP_METHODS = ("dp",)


def majority_vote(votes: Sequence[tuple[CanonicalAnswer, str]]) -> VoteResult:
    """Most frequent canonical answer; DP counts break ties between counts.

    A tie that survives the DP-priority rule is reported with ``tied=True``
    and the winner set to the first tied answer in vote order; callers
    resolve it (e.g. by shuffle averaging).
    """
    if not votes:
        raise EmptyVotes("majority_vote needs at least one vote")
    tallies: dict[CanonicalAnswer, Tally] = {}
    order: list[CanonicalAnswer] = []
    for answer, method in votes:
        if answer not in tallies:
            tallies[answer] = Tally()
            order.append(answer)
        tally = tallies[answer]
        tally.count += 1
        if method in DP_METHODS:
            tally.dp_count += 1
        else:
            tally.py_count += 1

    best_count = max(t.count for t in tallies.values())
    leaders = [a for a in order if tallies[a].count == best_count]
    if len(leaders) > 1:
        best_dp = max(tallies[a].dp_count for a in leaders)
        leaders = [a for a in leaders if tallies[a].dp_count == best_dp]

    tied = len(leaders) > 1
    return VoteResult(
        tallies=tallies,
        winner=leaders[0],
        tied=tied,
        tie_set=leaders if tied else [],
    )


def _votes_from_traces(traces: Iterable) -> list[tuple[CanonicalAnswer, str]]:
    return [
        (canonicalize_answer(t.answer), t.method)
        for t in traces
        if not t.failed
    ]


def self_consistency(traces: Sequence) -> VoteResult:
    """Majority vote over the non-failed traces of one method."""
    votes = _votes_from_traces(traces)
    if not votes:
        raise AllFailed("every trace failed; no votes to aggregate")
    return majority_vote(votes)


def mix_self_consistency(dp_traces: Sequence, py_traces: Sequence) -> VoteResult:
    """Pooled majority vote over DP and agent traces with DP-priority ties."""
    votes = _votes_from_traces(dp_traces) + _votes_from_traces(py_traces)
    if not votes:
        raise AllFailed("every trace failed; no votes to aggregate")
    return majority_vote(votes)


def _round2(value: float) -> float:
    from .evalkit import round_half_up

    return round_half_up(value)


def tie_average_accuracy(
    per_task_votes: Sequence[tuple[VoteResult, Sequence[str]]],
    k_shuffles: int = 100,
    seed: int = 0,
) -> float:
    """Mean accuracy over k shuffles, resolving ties uniformly at random.

    Each shuffle re-draws every unresolved tie from its tie set with a seeded
    generator; tasks without ties contribute the same verdict every shuffle.
    """
    if k_shuffles < 1:
        raise ValueError("k_shuffles must be >= 1")
    if not per_task_votes:
        raise EmptyVotes("no tasks to score")
    rng = random.Random(seed)
    golds = [canonicalize_answer(list(gold)) for _, gold in per_task_votes]
    total = 0.0
    for _ in range(k_shuffles):
        correct = 0
        for (vote, _), gold in zip(per_task_votes, golds):
            pick = rng.choice(vote.tie_set) if vote.tied else vote.winner
            if answers_match(pick, gold):
                correct += 1
        total += 100.0 * correct / len(per_task_votes)
    return _round2(total / k_shuffles)


@dataclass(frozen=True)
class Verdict:
    choice: str  # "A" or "B"
    raw: str
    fallback: bool = False


def parse_verdict(text: str) -> Verdict:
    """Last [[A]]/[[B]] marker wins; no marker falls back to A with a flag."""
    last = None
    for match in re.finditer(r"\[\[([AB])\]\]", text):
        last = match.group(1)
    if last is None:
        return Verdict(choice="A", raw=text, fallback=True)
    return Verdict(choice=last, raw=text)


def self_evaluate(task, answer_a: str, answer_b: str, gateway) -> Verdict:
    """Ask the model to pick between the DP answer (A) and the agent answer (B)."""
    from .gateway import CompletionRequest

    prompt = prompts.render(
        "self_eval",
        {
            "TITLE": task.title,
            "TABLE": render_markdown(task.table, MarkdownView.FULL),
            "QUESTION": task.question,
            "COT_ANSWER": answer_a,
            "AGENT_ANSWER": answer_b,
        },
    )
    response = gateway.complete(CompletionRequest(prompt=prompt))
    return parse_verdict(response)


@dataclass(frozen=True)
class SweepRow:
    n_dp: int
    n_py: int
    max_accuracy: float
    min_accuracy: float
    mean_accuracy: float


@dataclass
class SweepReport:
    total: int
    trials: int
    seed: int
    rows: list[SweepRow]

    def to_csv(self) -> str:
        lines = ["n_dp,n_py,max,min,mean"]
        for row in self.rows:
            lines.append(
                f"{row.n_dp},{row.n_py},{row.max_accuracy:.2f},"
                f"{row.min_accuracy:.2f},{row.mean_accuracy:.2f}"
            )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TaskPool:
    """Per-task trace pools and the gold answers they are scored against."""

    task_id: str
    dp_traces: tuple
    py_traces: tuple
    gold: tuple[str, ...]


def ablation_sweep(
    pools: Sequence[TaskPool],
    total: int = 10,
    trials: int = 100,
    seed: int = 0,
) -> SweepReport:
    """Accuracy of every (n_dp, n_py) split with n_dp + n_py = total.

    Each combination is scored ``trials`` times on random subsamples of the
    per-task pools; ties are resolved uniformly at random per trial.
    """
    for pool in pools:
        if len(pool.dp_traces) < total or len(pool.py_traces) < total:
            raise InsufficientPool(
                f"task {pool.task_id}: need >= {total} traces per method "
                f"(have dp={len(pool.dp_traces)}, py={len(pool.py_traces)})"
            )
    rng = random.Random(seed)
    golds = {p.task_id: canonicalize_answer(list(p.gold)) for p in pools}
    rows = []
    for n_dp in range(total, -1, -1):
        n_py = total - n_dp
        accuracies = []
        for _ in range(trials):
            correct = 0
            for pool in pools:
                dp_sample = rng.sample(list(pool.dp_traces), n_dp)
                py_sample = rng.sample(list(pool.py_traces), n_py)
                try:
                    vote = mix_self_consistency(dp_sample, py_sample)
                except AllFailed:
                    continue
                pick = rng.choice(vote.tie_set) if vote.tied else vote.winner
                if answers_match(pick, golds[pool.task_id]):
                    correct += 1
            accuracies.append(100.0 * correct / len(pools))
        rows.append(
            SweepRow(
                n_dp=n_dp,
                n_py=n_py,
                max_accuracy=_round2(max(accuracies)),
                min_accuracy=_round2(min(accuracies)),
                mean_accuracy=_round2(sum(accuracies) / len(accuracies)),
            )
        )
    return SweepReport(total=total, trials=trials, seed=seed, rows=rows)
