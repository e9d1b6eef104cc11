"""Command-line entry point for the table-reasoning harness.

Subcommands: ingest, perturb, run, aggregate, eval, sweep, report, fixtures.
Every flag has a config-file equivalent (INI, one section per subcommand);
flags win. Exit codes: 0 success, 1 usage error, 2 runtime failure.

Run artifacts are JSON Lines with a stable field order and no timestamps,
and each embeds the hash of the semantic configuration (dataset content
digest plus run parameters, independent of filesystem paths), so replay-mode
pipelines are byte-identical across reruns and platforms.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import aggregate as agg
from . import evalkit, normalizer
from .dataset import load_tasks, save_tasks, task_from_table_file, task_to_record
from .gateway import FixtureStore, GatewayConfig, GatewayMode, LlmGateway
from .reasoners import (
    METHOD_DP,
    METHOD_PYAGENT,
    METHOD_PYAGENT_OMITTED,
    ReasoningTrace,
    Task,
    run_dp,
    run_pyagent,
)
from .tables import (
    MarkdownView,
    Perturbation,
    PerturbationKind,
    Table,
    TableFormat,
    perturb,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

METHODS = (METHOD_DP, METHOD_PYAGENT, METHOD_PYAGENT_OMITTED)
NORM_MODES = ("off", "full", "no_resort")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so we control exit codes."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


@dataclass
class RunConfig:
    dataset: Path
    out: Path
    methods: list[str]
    perturbations: list[str]
    norm: str = "off"
    samples: int = 1
    temperature: float | None = None
    mode: GatewayMode = GatewayMode.REPLAY
    seed: int = 0
    fixtures: Path | None = None
    sandbox_cmd: str | None = None
    token_threshold: int = 3584

    def __post_init__(self) -> None:
        for m in self.methods:
            if m not in METHODS:
                raise UsageError(f"unknown method: {m}")
        for p in self.perturbations:
            Perturbation(p)
        if self.norm not in NORM_MODES:
            raise UsageError(f"unknown norm mode: {self.norm}")
        if self.temperature is None:
            # temperature policy: greedy for single samples, 0.8 under SC
            self.temperature = 0.0 if self.samples == 1 else 0.8
        if self.mode is GatewayMode.REPLAY and self.fixtures is None:
            raise UsageError("replay mode requires --fixtures")

    def semantic_hash(self) -> str:
        dataset_digest = hashlib.sha256(self.dataset.read_bytes()).hexdigest()
        material = json.dumps(
            {
                "dataset_sha256": dataset_digest,
                "methods": self.methods,
                "perturbations": self.perturbations,
                "norm": self.norm,
                "samples": self.samples,
                "temperature": self.temperature,
                "seed": self.seed,
                "token_threshold": self.token_threshold,
            },
            sort_keys=True,
        )
        return hashlib.sha256(material.encode("utf-8")).hexdigest()[:16]


def _perturbation_kind(name: str, seed: int) -> PerturbationKind:
    kind = Perturbation(name)
    return PerturbationKind(kind, seed if kind.needs_seed else None)


def _make_gateway(config: RunConfig) -> LlmGateway:
    store = FixtureStore(config.fixtures) if config.fixtures else None
    return LlmGateway(
        config=GatewayConfig(token_threshold=config.token_threshold),
        store=store,
        mode=config.mode,
    )


class _CountingGateway:
    """Wrap a gateway to count completions for the run manifest."""

    def __init__(self, inner: LlmGateway):
        self.inner = inner
        self.completions = 0

    def complete(self, req, mode=None):
        self.completions += 1
        return self.inner.complete(req, mode)


def _open_sandbox(task: Task, sandbox_cmd: str | None):
    try:
        from tablesandbox import start_session
    except ImportError as exc:
        raise RuntimeError(
            "pyagent methods need the tablesandbox package (see sandbox/)"
        ) from exc
    payload = {
        "header": list(task.table.header),
        "rows": [list(r) for r in task.table.data_rows],
    }
    cmd = sandbox_cmd.split() if sandbox_cmd else None
    return start_session(payload, worker_cmd=cmd)


def trace_record(
    task: Task,
    method: str,
    perturbation: str,
    sample_index: int,
    trace: ReasoningTrace,
    config_hash: str,
) -> dict:
    return {
        "task_id": task.id,
        "method": method,
        "perturbation": perturbation,
        "sample_index": sample_index,
        "answer": trace.answer,
        "failed": trace.failed,
        "failure_reason": trace.failure_reason,
        "n_steps": len(trace.steps),
        "config_hash": config_hash,
    }


def cmd_run(config: RunConfig) -> dict:
    """Execute methods x perturbations x samples and write one trace per cell."""
    tasks = load_tasks(config.dataset)
    config_hash = config.semantic_hash()
    gateway = _CountingGateway(_make_gateway(config))
    traces_dir = config.out / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)

    counts: dict[str, int] = {}
    for method in config.methods:
        for pert_name in config.perturbations:
            kind = _perturbation_kind(pert_name, config.seed)
            records = []
            for task in tasks:
                perturbed = perturb(task.table, kind)
                title = task.title
                if config.norm != "off":
                    perturbed, _ = normalizer.normalize(
                        perturbed, title, gateway, resort=(config.norm == "full")
                    )
                work_task = Task(
                    id=task.id,
                    table=perturbed,
                    title=title,
                    question=task.question,
                    gold=task.gold,
                )
                for sample in range(config.samples):
                    trace = _run_method(work_task, method, gateway, config, sample)
                    records.append(
                        trace_record(task, method, pert_name, sample, trace, config_hash)
                    )
            name = f"{method}__{pert_name}.jsonl"
            path = traces_dir / name
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                for record in records:
                    fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            counts[name] = len(records)

    manifest = {
        "config_hash": config_hash,
        "n_tasks": len(tasks),
        "methods": config.methods,
        "perturbations": config.perturbations,
        "norm": config.norm,
        "samples": config.samples,
        "records": counts,
        "total_records": sum(counts.values()),
        "completions": gateway.completions,
    }
    (config.out / "run.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def _run_method(
    task: Task, method: str, gateway, config: RunConfig, sample: int
) -> ReasoningTrace:
    if method == METHOD_DP:
        return run_dp(task, gateway, sample_index=sample, temperature=config.temperature)
    view = MarkdownView.FULL if method == METHOD_PYAGENT else MarkdownView.HEAD_TAIL_3
    session = _open_sandbox(task, config.sandbox_cmd)
    try:
        return run_pyagent(
            task,
            session,
            gateway,
            view=view,
            sample_index=sample,
            temperature=config.temperature,
        )
    finally:
        session.shutdown()


def _load_traces(run_dir: Path) -> dict[tuple[str, str], dict[str, list[dict]]]:
    """traces grouped as (method, perturbation) -> task_id -> records."""
    grouped: dict[tuple[str, str], dict[str, list[dict]]] = {}
    traces_dir = run_dir / "traces"
    if not traces_dir.is_dir():
        raise FileNotFoundError(f"no traces directory under {run_dir}")
    for path in sorted(traces_dir.glob("*.jsonl")):
        method, pert = path.stem.split("__", 1)
        per_task = grouped.setdefault((method, pert), {})
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                record = json.loads(line)
                per_task.setdefault(record["task_id"], []).append(record)
    return grouped


class _RecordTrace:
    """Minimal trace view over a stored record, enough for voting."""

    def __init__(self, record: dict):
        self.method = record["method"]
        self.answer = record["answer"]
        self.failed = record["failed"]


def cmd_aggregate(
    run_dir: Path,
    strategy: str,
    perturbation: str,
    method: str | None,
    n_dp: int,
    n_py: int,
    out_path: Path,
) -> int:
    grouped = _load_traces(run_dir)
    manifest = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    votes = []
    if strategy == "sc":
        if method is None:
            raise UsageError("--method is required for strategy sc")
        per_task = grouped.get((method, perturbation))
        if per_task is None:
            raise FileNotFoundError(f"no traces for {method}/{perturbation}")
        for task_id in sorted(per_task):
            traces = [_RecordTrace(r) for r in per_task[task_id]]
            votes.append((task_id, _safe_vote(lambda: agg.self_consistency(traces))))
    elif strategy == "mix_sc":
        dp_tasks = grouped.get((METHOD_DP, perturbation), {})
        py_tasks = grouped.get((METHOD_PYAGENT, perturbation), {})
        if not dp_tasks or not py_tasks:
            raise FileNotFoundError(
                f"mix_sc needs dp and pyagent traces for {perturbation}"
            )
        for task_id in sorted(dp_tasks):
            dp_traces = [_RecordTrace(r) for r in dp_tasks[task_id][:n_dp]]
            py_traces = [_RecordTrace(r) for r in py_tasks.get(task_id, [])[:n_py]]
            votes.append(
                (task_id, _safe_vote(lambda: agg.mix_self_consistency(dp_traces, py_traces)))
            )
    else:
        raise UsageError(f"unknown strategy: {strategy}")

    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for task_id, vote in votes:
            record = {
                "task_id": task_id,
                "winner": list(vote.winner.items) if vote else None,
                "tied": vote.tied if vote else False,
                "tie_set": [list(a.items) for a in vote.tie_set] if vote else [],
                "all_failed": vote is None,
                "config_hash": manifest["config_hash"],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return len(votes)


def _safe_vote(thunk):
    try:
        return thunk()
    except agg.AllFailed:
        return None


def cmd_eval(votes_path: Path, dataset_path: Path, shuffles: int, seed: int) -> dict:
    tasks = {t.id: t for t in load_tasks(dataset_path)}
    per_task = []
    config_hash = ""
    with open(votes_path, encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            config_hash = record.get("config_hash", config_hash)
            gold = tasks[record["task_id"]].gold
            if record["all_failed"]:
                vote = agg.VoteResult(
                    tallies={},
                    winner=agg.CanonicalAnswer(items=(), display=""),
                    tied=False,
                    tie_set=[],
                )
            else:
                vote = agg.VoteResult(
                    tallies={},
                    winner=agg.CanonicalAnswer(items=tuple(record["winner"]), display=""),
                    tied=record["tied"],
                    tie_set=[
                        agg.CanonicalAnswer(items=tuple(i), display="")
                        for i in record["tie_set"]
                    ],
                )
            per_task.append((vote, gold))
    acc = agg.tie_average_accuracy(per_task, k_shuffles=shuffles, seed=seed)
    return {
        "accuracy": acc,
        "n_tasks": len(per_task),
        "shuffles": shuffles,
        "seed": seed,
        "config_hash": config_hash,
    }


def cmd_sweep(
    run_dir: Path,
    dataset_path: Path,
    perturbation: str,
    total: int,
    trials: int,
    seed: int,
) -> agg.SweepReport:
    grouped = _load_traces(run_dir)
    tasks = {t.id: t for t in load_tasks(dataset_path)}
    dp_tasks = grouped.get((METHOD_DP, perturbation))
    py_tasks = grouped.get((METHOD_PYAGENT, perturbation))
    if not dp_tasks:
        raise agg.InsufficientPool("no dp trace pool in run directory")
    if not py_tasks:
        raise agg.InsufficientPool("no pyagent trace pool in run directory")
    pools = []
    for task_id in sorted(dp_tasks):
        pools.append(
            agg.TaskPool(
                task_id=task_id,
                dp_traces=tuple(_RecordTrace(r) for r in dp_tasks[task_id]),
                py_traces=tuple(_RecordTrace(r) for r in py_tasks.get(task_id, [])),
                gold=tasks[task_id].gold,
            )
        )
    return agg.ablation_sweep(pools, total=total, trials=trials, seed=seed)


def _build_parser() -> _Parser:
    parser = _Parser(prog="tabreason", description=__doc__.split("\n", 1)[0])
    parser.add_argument("--config", type=Path, help="INI config file; flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a table file + QA metadata into JSONL")
    p.add_argument("--table", type=Path, required=True)
    p.add_argument("--format", choices=[f.value for f in TableFormat])
    p.add_argument("--id", required=True)
    p.add_argument("--title", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--answer", action="append", required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("perturb", help="write a structurally perturbed copy of a dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--kind", choices=[k.value for k in Perturbation], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("run", help="execute reasoning methods over a dataset")
    p.add_argument("--dataset", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--method", action="append", choices=METHODS)
    p.add_argument("--perturb", action="append", choices=[k.value for k in Perturbation])
    p.add_argument("--norm", choices=NORM_MODES)
    p.add_argument("--samples", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--mode", choices=[m.value for m in GatewayMode])
    p.add_argument("--seed", type=int)
    p.add_argument("--fixtures", type=Path)
    p.add_argument("--sandbox-cmd")
    p.add_argument("--token-threshold", type=int)

    p = sub.add_parser("aggregate", help="vote over stored traces")
    p.add_argument("--run-dir", type=Path, required=True)
    p.add_argument("--strategy", choices=["sc", "mix_sc"], required=True)
    p.add_argument("--perturbation", default=Perturbation.ORIGINAL.value)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--n-dp", type=int, default=5)
    p.add_argument("--n-py", type=int, default=5)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="score a votes file against gold answers")
    p.add_argument("--votes", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--shuffles", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("sweep", help="ablation sweep over output-count splits")
    p.add_argument("--run-dir", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--perturbation", default=Perturbation.ORIGINAL.value)
    p.add_argument("--total", type=int, default=10)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("report", help="render an accuracy grid CSV as markdown/CSV")
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("fixtures", help="inspect a fixture store")
    p.add_argument("action", choices=["list", "verify"])
    p.add_argument("--dir", type=Path, required=True)

    return parser


def _config_section(path: Path | None, section: str) -> dict[str, str]:
    if path is None:
        return {}
    ini = configparser.ConfigParser()
    ini.read(path)
    return dict(ini[section]) if ini.has_section(section) else {}


def _setting(args, key: str, section: dict[str, str], default=None, cast=None):
    value = getattr(args, key, None)
    if value is None:
        value = section.get(key.replace("_", "-"), section.get(key))
        if value is not None and cast is not None:
            value = cast(value)
    return default if value is None else value


def _run_config_from_args(args) -> RunConfig:
    section = _config_section(args.config, "run")
    dataset = _setting(args, "dataset", section, cast=Path)
    out = _setting(args, "out", section, cast=Path)
    if dataset is None or out is None:
        raise UsageError("run requires --dataset and --out (flag or config)")
    methods = args.method or [
        m.strip() for m in section.get("methods", "dp").split(",")
    ]
    perturbs = args.perturb or [
        p.strip() for p in section.get("perturbations", "original").split(",")
    ]
    fixtures = _setting(args, "fixtures", section, cast=Path)
    return RunConfig(
        dataset=dataset,
        out=out,
        methods=methods,
        perturbations=perturbs,
        norm=_setting(args, "norm", section, default="off"),
        samples=_setting(args, "samples", section, default=1, cast=int),
        temperature=_setting(args, "temperature", section, cast=float),
        mode=GatewayMode(_setting(args, "mode", section, default="replay")),
        seed=_setting(args, "seed", section, default=0, cast=int),
        fixtures=fixtures,
        sandbox_cmd=_setting(args, "sandbox_cmd", section),
        token_threshold=_setting(args, "token_threshold", section, default=3584, cast=int),
    )


def _write_or_print(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8", newline="\n")


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "ingest":
            task = task_from_table_file(
                args.table,
                task_id=args.id,
                title=args.title,
                question=args.question,
                answers=args.answer,
                format=TableFormat(args.format) if args.format else None,
            )
            args.out.parent.mkdir(parents=True, exist_ok=True)
            with open(args.out, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(task_to_record(task), ensure_ascii=False) + "\n")
            print(f"appended task {task.id} to {args.out}")

        elif args.command == "perturb":
            kind = _perturbation_kind(args.kind, args.seed)
            tasks = load_tasks(args.dataset)
            perturbed = [
                Task(
                    id=t.id,
                    table=perturb(t.table, kind),
                    title=t.title,
                    question=t.question,
                    gold=t.gold,
                )
                for t in tasks
            ]
            args.out.parent.mkdir(parents=True, exist_ok=True)
            save_tasks(perturbed, args.out)
            print(f"wrote {len(perturbed)} perturbed tasks to {args.out}")

        elif args.command == "run":
            config = _run_config_from_args(args)
            manifest = cmd_run(config)
            print(
                f"run complete: {manifest['total_records']} trace records, "
                f"{manifest['completions']} completions (config {manifest['config_hash']})"
            )

        elif args.command == "aggregate":
            n = cmd_aggregate(
                args.run_dir,
                args.strategy,
                args.perturbation,
                args.method,
                args.n_dp,
                args.n_py,
                args.out,
            )
            print(f"wrote {n} vote records to {args.out}")

        elif args.command == "eval":
            result = cmd_eval(args.votes, args.dataset, args.shuffles, args.seed)
            text = json.dumps(result, indent=2, sort_keys=True) + "\n"
            _write_or_print(text, args.out)
            print(f"accuracy: {result['accuracy']:.2f}")

        elif args.command == "sweep":
            report = cmd_sweep(
                args.run_dir,
                args.dataset,
                args.perturbation,
                args.total,
                args.trials,
                args.seed,
            )
            _write_or_print(report.to_csv(), args.out)
            print(f"wrote {len(report.rows)} combinations to {args.out}")

        elif args.command == "report":
            grid = evalkit.parse_report_csv(args.grid.read_text(encoding="utf-8"))
            _write_or_print(evalkit.emit_report(grid, format=args.format), args.out)

        elif args.command == "fixtures":
            store = FixtureStore(args.dir)
            if args.action == "list":
                for key in store.keys():
                    print(key)
                print(f"{len(store.keys())} fixtures")
            else:
                missing = store.verify()
                if missing:
                    for key in missing:
                        print(f"missing: {key}", file=sys.stderr)
                    return EXIT_RUNTIME
                print(f"ok: {len(store.keys())} fixtures verified")

    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
