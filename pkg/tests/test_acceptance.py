"""Acceptance suite: one test per release criterion, each printing a PASS line.

Gating criteria run fully offline; the final live-mode comparison is
advisory and skipped unless credentials and a dataset are configured.
"""

from __future__ import annotations

import itertools
import json
import os
import random
import time
from collections import Counter
from pathlib import Path

import pytest

from tabreason import cli
from tabreason.aggregate import (
    VoteResult,
    canonicalize_answer,
    majority_vote,
    mix_self_consistency,
    self_consistency,
    tie_average_accuracy,
)
from tabreason.evalkit import rel_delta
from tabreason.normalizer import normalize, parse_orientation_choice, parse_sort_spec
from tabreason.reasoners import (
    MAX_AGENT_STEPS,
    Act,
    Final,
    Malformed,
    ReasoningTrace,
    Task,
    parse_agent_step,
    parse_final_answer,
    run_pyagent,
)
from tabreason.tables import (
    Orientation,
    Perturbation,
    PerturbationKind,
    Table,
    perturb,
    shuffle_rows,
    transpose,
)

from conftest import FakeSandbox, PromptedGateway, ScriptedGateway

REPO = Path(__file__).resolve().parents[1]
E2E_DATASET = REPO / "data" / "e2e" / "tasks.jsonl"
E2E_FIXTURES = REPO / "data" / "e2e" / "fixtures"

WORDS = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima "
    "mike november oscar papa quebec romeo sierra tango uniform victor"
).split()


def random_table(rng: random.Random) -> Table:
    n_rows = rng.randint(2, 12)
    n_cols = rng.randint(1, 12)
    cells = [
        [f"{rng.choice(WORDS)}-{rng.randrange(1000)}" for _ in range(n_cols)]
        for _ in range(n_rows)
    ]
    return Table.from_rows("t", cells, orientation_hint=Orientation.ROW_TABLE)


class TestCriterion1Perturbations:
    def test_involution_and_shuffle_properties_under_two_seconds(self):
        rng = random.Random(1234)
        start = time.perf_counter()
        for i in range(1000):
            table = random_table(rng)
            assert transpose(transpose(table)) == table
            seed = rng.randrange(2**32)
            shuffled = shuffle_rows(table, seed)
            assert shuffled.header == table.header
            assert Counter(shuffled.data_rows) == Counter(table.data_rows)
            assert shuffle_rows(table, seed) == shuffled
        elapsed = time.perf_counter() - start
        assert elapsed < 2.0, f"perturbation property loop took {elapsed:.2f}s"
        print(f"PASS criterion 1: 1000-table perturbation properties in {elapsed:.2f}s")


# (new, base, expected) for every printed relative delta in the headline
# accuracy tables
PRINTED_DELTAS = [
    (52.21, 59.50, -12.25),
    (51.14, 59.50, -14.05),
    (37.51, 59.50, -36.96),
    (47.91, 55.91, -14.31),
    (12.45, 55.91, -77.73),
    (8.96, 55.91, -83.97),
    (58.66, 59.50, -1.41),
    (58.66, 52.21, 12.35),
    (58.30, 51.14, 14.00),
    (57.71, 37.51, 53.85),
    (56.87, 55.91, 1.72),
    (57.11, 47.91, 19.20),
    (55.44, 12.43, 346.02),
    (55.08, 8.96, 514.73),
]


class TestCriterion2Deltas:
    def test_all_fourteen_printed_deltas(self):
        for new, base, expected in PRINTED_DELTAS:
            got = rel_delta(new, base)
            assert abs(got - expected) <= 0.01, f"{new} vs {base}: {got} != {expected}"
        print("PASS criterion 2: all 14 printed relative deltas reproduced to 0.01 pp")


def brute_force_vote(votes):
    """Exhaustive mode computation with dp-count tie-break, first-seen order."""
    counts = Counter(a for a, _ in votes)
    dp_counts = Counter(a for a, m in votes if m == "dp")
    best = max(counts.values())
    leaders = []
    for a, _ in votes:
        if counts[a] == best and a not in leaders:
            leaders.append(a)
    if len(leaders) > 1:
        best_dp = max(dp_counts.get(a, 0) for a in leaders)
        leaders = [a for a in leaders if dp_counts.get(a, 0) == best_dp]
    return leaders


class TestCriterion3VoteOracle:
    def test_exhaustive_multisets_up_to_six(self):
        answers = [canonicalize_answer([x]) for x in ("a", "b", "c")]
        vote_types = list(itertools.product(answers, ("dp", "pyagent")))
        checked = 0
        for size in range(1, 7):
            for combo in itertools.combinations_with_replacement(vote_types, size):
                votes = list(combo)
                result = majority_vote(votes)
                leaders = brute_force_vote(votes)
                assert result.winner == leaders[0]
                assert result.tied == (len(leaders) > 1)
                if result.tied:
                    assert set(result.tie_set) == set(leaders)
                checked += 1
        assert checked == 923
        print(f"PASS criterion 3a: majority_vote matches brute force on {checked} multisets")

    def test_mix_equals_sc_without_agent_votes(self):
        rng = random.Random(7)
        for _ in range(200):
            traces = [
                ReasoningTrace(method="dp", answer=[str(rng.randint(0, 2))])
                for _ in range(rng.randint(1, 10))
            ]
            sc = self_consistency(traces)
            mix = mix_self_consistency(traces, [])
            assert (mix.winner, mix.tied, mix.tie_set) == (sc.winner, sc.tied, sc.tie_set)
        print("PASS criterion 3b: mix self-consistency with no agent pool equals SC")


def tied_corpus(n=40):
    corpus = []
    for i in range(n):
        right = canonicalize_answer([f"right{i}"])
        wrong = canonicalize_answer([f"wrong{i}"])
        vote = VoteResult(tallies={}, winner=right, tied=True, tie_set=[right, wrong])
        corpus.append((vote, [f"right{i}"]))
    return corpus


class TestCriterion4TieShuffle:
    def test_expectation_band_over_ten_seeds(self):
        corpus = tied_corpus()
        for seed in range(10):
            acc = tie_average_accuracy(corpus, k_shuffles=100, seed=seed)
            assert 45.00 <= acc <= 55.00, f"seed {seed}: {acc}"
        print("PASS criterion 4a: tie-shuffle accuracy within [45, 55] for 10 seeds")

    def test_pinned_seed_zero_value(self):
        # frozen output of the seeded tie-resolution rule on the 40-task corpus
        acc = tie_average_accuracy(tied_corpus(), k_shuffles=100, seed=0)
        assert acc == 49.85
        print("PASS criterion 4b: pinned seed-0 tie-shuffle value 49.85 reproduced")


def synthetic_keyed_table(rng: random.Random) -> tuple[Table, str]:
    """Row table whose first column is a strictly increasing integer key."""
    n_rows = rng.randint(3, 9)
    n_cols = rng.randint(2, 5)
    header = ["key"] + [f"col{j}" for j in range(1, n_cols)]
    key = rng.randint(0, 50)
    rows = []
    for _ in range(n_rows):
        key += rng.randint(1, 9)
        rows.append([str(key)] + [rng.choice(WORDS) for _ in range(1, n_cols)])
    table = Table.from_rows(
        "synthetic", [header] + rows, orientation_hint=Orientation.ROW_TABLE
    )
    return table, "key"


def content_perfect_gateway(header: tuple[str, ...], key_name: str) -> PromptedGateway:
    """Responder that always picks the true header row and the key column."""
    header_line = " | ".join(header)

    def respond(prompt):
        if "Choice: (A)/(B)/(C)" in prompt:
            for line in prompt.splitlines():
                if line.startswith("(A) "):
                    return "Choice: (A)" if line[4:] == header_line else "Choice: (B)"
            raise AssertionError("determinator prompt without candidates")
        if "Sort by:" in prompt:
            return f"Sort by: {key_name}"
        raise AssertionError("unexpected prompt")

    return PromptedGateway(respond)


ALL_PERTURBATIONS = [
    PerturbationKind(Perturbation.ORIGINAL, None),
    PerturbationKind(Perturbation.ROW_SHUFFLE, 5),
    PerturbationKind(Perturbation.TRANSPOSE, None),
    PerturbationKind(Perturbation.TRANSPOSE_SHUFFLE, 5),
]


class TestCriterion5NormRoundTrip:
    def test_round_trip_over_fifty_tables(self):
        rng = random.Random(99)
        for _ in range(50):
            table, key = synthetic_keyed_table(rng)
            for kind in ALL_PERTURBATIONS:
                perturbed = perturb(table, kind)
                gw = content_perfect_gateway(table.header, key)
                loose, _ = normalize(perturbed, table.title, gw, resort=False)
                assert loose.header == table.header
                assert Counter(loose.data_rows) == Counter(table.data_rows)

                gw = content_perfect_gateway(table.header, key)
                exact, _ = normalize(perturbed, table.title, gw, resort=True)
                assert exact.cells == table.cells
        print("PASS criterion 5a: normalization round-trips 50 tables x 4 perturbations")

    def test_resort_off_never_reorders(self):
        rng = random.Random(17)
        for _ in range(500):
            table = random_table(rng)
            choice = rng.choice(["Choice: (A)", "Choice: (C)"])
            gw = ScriptedGateway([choice])
            result, trace = normalize(table, table.title, gw, resort=False)
            assert result.data_rows == table.data_rows
            assert trace.sort is None
        print("PASS criterion 5b: resort=off preserved row order over 500 cases")


# hand-written transcript fixtures: (parser, text, expected)
def _choice(text):
    return parse_orientation_choice(text).choice


def _sort_keys(text):
    return parse_sort_spec(text).keys


def _verdict(text):
    from tabreason.aggregate import parse_verdict

    return parse_verdict(text).choice


def _detect(text):
    from tabreason.normalizer import _VERDICT_RE

    return _VERDICT_RE.findall(text)[-1].upper()


TRANSCRIPT_FIXTURES = [
    # direct-prompting finals
    (parse_final_answer, "Final Answer: 12", ["12"]),
    (parse_final_answer, "steps...\nFinal Answer: Gillig, New Flyer", ["Gillig", "New Flyer"]),
    (parse_final_answer, "Final Answer: draft\nFinal Answer: 7", ["7"]),
    (parse_final_answer, "final answer: YES", ["YES"]),
    (parse_final_answer, "Final Answer: 1,234", ["1,234"]),
    # agent steps
    (parse_agent_step, "Thought: t\nAction: python_repl_ast\nAction Input: df.shape",
     Act(action="python_repl_ast", action_input="df.shape", thought="t")),
    (parse_agent_step, "Action: python_repl_ast\nAction Input: ```python\nlen(df)\n```",
     Act(action="python_repl_ast", action_input="len(df)")),
    (parse_agent_step, "Action: python_repl_ast\nAction Input: x=1\nObservation: 1",
     Act(action="python_repl_ast", action_input="x=1")),
    (parse_agent_step, "Action: search\nAction Input: weather",
     Act(action="search", action_input="weather")),
    (parse_agent_step, "Thought: done\nFinal Answer: 42", Final(answer=("42",))),
    (parse_agent_step, "Final Answer: a, b\nAction: python_repl_ast\nAction Input: x",
     Final(answer=("a", "b"))),
    (parse_agent_step, "just musing with no markers",
     Malformed(reason="no Action: or Final Answer: line")),
    (parse_agent_step, "Action: python_repl_ast",
     Malformed(reason="Action: without Action Input:")),
    # orientation choices
    (_choice, "Choice: (A)", "first_row"),
    (_choice, "Choice: (B) because the labels run down the left", "first_column"),
    (_choice, "Choice: (C)", "neither"),
    # sort proposals
    (_sort_keys, "Sort by: Year", ("Year",)),
    (_sort_keys, "Sort by: Year, Points", ("Year", "Points")),
    (_sort_keys, "Sort by: N/A", ()),
    (_sort_keys, "the rows already look sorted", ()),
    # detector verdicts
    (_detect, "**Transpose Recommended**: NO", "NO"),
    (_detect, "analysis...\nTranspose Recommended: YES", "YES"),
    # self-evaluation verdicts
    (_verdict, "The better answer is [[A]]", "A"),
    (_verdict, "hmm [[A]]... on reflection [[B]]", "B"),
    (_verdict, "no verdict markers here", "A"),
]


class TestCriterion6Parsers:
    def test_transcript_fixture_corpus(self):
        assert len(TRANSCRIPT_FIXTURES) >= 20
        for parser, text, expected in TRANSCRIPT_FIXTURES:
            assert parser(text) == expected, f"{parser.__name__}({text!r})"
        print(f"PASS criterion 6a: {len(TRANSCRIPT_FIXTURES)} transcript fixtures parsed")

    def test_fuzzed_agent_loops_terminate(self, small_table):
        task = Task(id="f", table=small_table, title="t", question="q?", gold=("a",))
        rng = random.Random(2024)
        turn_makers = [
            lambda r: f"Thought: go\nAction: python_repl_ast\nAction Input: code{r.randrange(9)}",
            lambda r: "Action: python_repl_ast\nAction Input: ```python\n1+1\n```",
            lambda r: f"Action: {r.choice(['search', 'wolfram', 'sql'])}\nAction Input: x",
            lambda r: "Action: python_repl_ast",
            lambda r: "rambling with no structure",
            lambda r: f"Final Answer: {r.randrange(100)}",
            lambda r: "Thought: t\nFinal Answer: a, b, c",
            lambda r: "Action: python_repl_ast\nAction Input: x\nObservation: fake\nThought: more",
        ]
        for _ in range(1000):
            responses = [rng.choice(turn_makers)(rng) for _ in range(20)]
            sandbox = FakeSandbox(default="42")
            trace = run_pyagent(task, sandbox, ScriptedGateway(responses))
            assert len(sandbox.executed) <= MAX_AGENT_STEPS
            assert len(trace.steps) <= MAX_AGENT_STEPS
            assert trace.failed or trace.answer
        print("PASS criterion 6b: 1000 fuzzed agent loops terminated within 5 actions")


def run_replay_pipeline(out_root: Path) -> dict[str, bytes]:
    """run -> aggregate -> eval -> report against the bundled fixture pack."""
    run_dir = out_root / "run"
    argv = [
        "run", "--dataset", str(E2E_DATASET), "--out", str(run_dir),
        "--method", "dp", "--perturb", "original", "--perturb", "row_shuffle",
        "--samples", "5", "--seed", "13", "--mode", "replay",
        "--fixtures", str(E2E_FIXTURES),
    ]
    assert cli.dispatch(argv) == 0

    accuracies = {}
    artifacts: dict[str, bytes] = {}
    for pert in ("original", "row_shuffle"):
        votes = out_root / f"votes_{pert}.jsonl"
        assert cli.dispatch(
            ["aggregate", "--run-dir", str(run_dir), "--strategy", "sc",
             "--method", "dp", "--perturbation", pert, "--out", str(votes)]
        ) == 0
        eval_out = out_root / f"eval_{pert}.json"
        assert cli.dispatch(
            ["eval", "--votes", str(votes), "--dataset", str(E2E_DATASET),
             "--out", str(eval_out)]
        ) == 0
        accuracies[pert] = json.loads(eval_out.read_text())["accuracy"]
        artifacts[f"votes_{pert}"] = votes.read_bytes()
        artifacts[f"eval_{pert}"] = eval_out.read_bytes()

    grid = out_root / "grid.csv"
    grid.write_text(
        "method,norm,perturbation,accuracy,delta\n"
        f"dp,off,original,{accuracies['original']:.2f},\n"
        f"dp,off,row_shuffle,{accuracies['row_shuffle']:.2f},\n",
        encoding="utf-8",
    )
    report = out_root / "report.md"
    assert cli.dispatch(
        ["report", "--grid", str(grid), "--format", "markdown", "--out", str(report)]
    ) == 0
    artifacts["report"] = report.read_bytes()
    artifacts["run_manifest"] = (run_dir / "run.json").read_bytes()
    for path in sorted((run_dir / "traces").glob("*.jsonl")):
        artifacts[f"traces_{path.name}"] = path.read_bytes()
    return artifacts


class TestCriterion7EndToEndReplay:
    def test_byte_identical_replay(self, tmp_path):
        assert len(json.loads((E2E_DATASET).read_text().splitlines()[0])) > 0
        first = run_replay_pipeline(tmp_path / "a")
        second = run_replay_pipeline(tmp_path / "b")
        assert first.keys() == second.keys()
        for name in first:
            assert first[name] == second[name], f"artifact {name} differs"
        assert b"%" in first["report"]
        print(f"PASS criterion 7: {len(first)} replay artifacts byte-identical across runs")


LIVE_DATASET = os.environ.get("TABREASON_LIVE_DATASET")


class TestCriterion9LiveAdvisory:
    @pytest.mark.skipif(
        not (os.environ.get("LLM_API_KEY") and LIVE_DATASET),
        reason="advisory live-mode check; set LLM_API_KEY and TABREASON_LIVE_DATASET",
    )
    def test_live_mix_sc_vicinity(self, tmp_path):
        run_dir = tmp_path / "live"
        assert cli.dispatch(
            ["run", "--dataset", LIVE_DATASET, "--out", str(run_dir),
             "--method", "dp", "--method", "pyagent", "--samples", "5",
             "--temperature", "0.8", "--mode", "record",
             "--fixtures", str(tmp_path / "fixtures")]
        ) == 0
        votes = tmp_path / "votes.jsonl"
        assert cli.dispatch(
            ["aggregate", "--run-dir", str(run_dir), "--strategy", "mix_sc",
             "--n-dp", "5", "--n-py", "5", "--out", str(votes)]
        ) == 0
        eval_out = tmp_path / "eval.json"
        assert cli.dispatch(
            ["eval", "--votes", str(votes), "--dataset", LIVE_DATASET,
             "--out", str(eval_out)]
        ) == 0
        acc = json.loads(eval_out.read_text())["accuracy"]
        assert 70.06 <= acc <= 76.65, f"advisory: live Mix-SC accuracy {acc}"
        print(f"PASS criterion 9: live Mix-SC accuracy {acc} within advisory band")
