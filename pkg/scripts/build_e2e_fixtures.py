"""Regenerate the bundled end-to-end fixture pack under data/e2e/fixtures.

Runs the real pipeline in record mode against a scripted transport, so the
recorded keys match exactly what a replay-mode `tabreason run` computes.
Each task gets five direct-prompting samples per perturbation with a fixed
answer sequence, giving the replay suite a mix of correct majorities, wrong
majorities, and one unresolved tie.
"""

from __future__ import annotations

import shutil
import tempfile
from pathlib import Path

from tabreason import cli
from tabreason.gateway import FixtureStore, GatewayConfig, GatewayMode, LlmGateway

ROOT = Path(__file__).resolve().parents[1]
DATASET = ROOT / "data" / "e2e" / "tasks.jsonl"
FIXTURES = ROOT / "data" / "e2e" / "fixtures"

# task id -> (answers for the original run, answers for the row_shuffle run),
# five samples each, consumed in request order
ANSWERS = {
    "tqa-001": (
        ["Great Britain", "Great Britain", "Great Britain", "United States", "Great Britain"],
        ["Great Britain"] * 5,
    ),
    "tqa-002": (
        ["4", "4", "3", "4", "4"],
        ["3", "3", "4", "4", "3"],
    ),
    "tqa-003": (
        ["1990", "1990", "1990", "1990", "1980"],
        ["1990", "1980", "1990", "1990", "1970"],
    ),
    "tqa-004": (
        ["Manchester United"] * 5,
        ["Manchester United", "Real Madrid", "Manchester United", "Manchester United", "Chelsea"],
    ),
    "tqa-005": (
        ["3", "3", "3", "2", "3"],
        ["2", "2", "3", "3", "2"],
    ),
    "tqa-006": (
        ["Equitable Equipment, Derecktor, Marinette Marine"] * 4 + ["Equitable Equipment"],
        ["Equitable Equipment, Derecktor, Marinette Marine"] * 3
        + ["Derecktor", "Equitable Equipment, Derecktor"],
    ),
    "tqa-007": (
        ["The Power of Love"] * 5,
        ["The Power of Love"] * 5,
    ),
    "tqa-008": (
        ["21300", "21300", "20600", "21300", "21300"],
        ["20600", "20600", "21300", "21300", "20600"],
    ),
    "tqa-009": (
        ["2", "2", "3", "2", "4"],
        ["3", "3", "2", "3", "3"],
    ),
    "tqa-010": (
        ["Kelme", "Saeco", "Kelme", "Kelme", "Banesto"],
        ["Kelme", "Kelme", "Kelme", "Saeco", "Kelme"],
    ),
    "tqa-011": (
        ["Lake of the Woods"] * 5,
        ["Lake of the Woods", "Red Lake", "Lake of the Woods", "Lake of the Woods", "Leech Lake"],
    ),
    "tqa-012": (
        ["20", "20", "10", "10", "13"],
        ["20", "20", "20", "10", "10"],
    ),
}

QUESTIONS = {
    "tqa-001": "which nation won the most gold medals?",
    "tqa-002": "how many buildings are at least 1100 feet tall?",
    "tqa-003": "in which decade did the population grow the most in percentage terms?",
    "tqa-004": "who did the club beat in the 2010-11 champions league final?",
    "tqa-005": "how many finals did he win at the french open?",
    "tqa-006": "which builders delivered more than one vessel?",
    "tqa-007": "which single stayed at number one the longest?",
    "tqa-008": "what is the total elevation gain of the two hardest-gaining routes combined?",
    "tqa-009": "how many of these winners were made by pixar?",
    "tqa-010": "which team placed a rider directly behind the banesto rider?",
    "tqa-011": "which lake has the greatest maximum depth?",
    "tqa-012": "how many points separated first place from second-lowest scorer?",
}


def make_transport():
    # perturbations run in CLI order, so the first five requests per task are
    # the original run and the next five the row_shuffle run
    queues = {tid: list(orig) + list(shuf) for tid, (orig, shuf) in ANSWERS.items()}

    def transport(payload):
        prompt = payload["messages"][0]["content"]
        for tid, question in QUESTIONS.items():
            if question in prompt:
                answer = queues[tid].pop(0)
                return (
                    "Let's think step by step. Reading the relevant rows of the "
                    f"table leads to the answer.\nFinal Answer: {answer}"
                )
        raise AssertionError("prompt matched no known task")

    return transport


def main() -> None:
    if FIXTURES.exists():
        shutil.rmtree(FIXTURES)

    transport = make_transport()

    def make_gateway(config):
        return LlmGateway(
            config=GatewayConfig(token_threshold=config.token_threshold),
            store=FixtureStore(config.fixtures),
            transport=transport,
            mode=config.mode,
        )

    cli._make_gateway = make_gateway
    with tempfile.TemporaryDirectory() as tmp:
        config = cli.RunConfig(
            dataset=DATASET,
            out=Path(tmp),
            methods=["dp"],
            perturbations=["original", "row_shuffle"],
            samples=5,
            mode=GatewayMode.RECORD,
            seed=13,
            fixtures=FIXTURES,
        )
        manifest = cli.cmd_run(config)

    store = FixtureStore(FIXTURES)
    print(f"recorded {len(store.keys())} fixtures ({manifest['completions']} completions)")


if __name__ == "__main__":
    main()
