"""Provides the `callerkit` command line interface.

Every subcommand reads and writes JSON-lines artifacts, each prefixed by a
provenance header carrying the tool version, the seed and the digest of the
effective configuration. Reports go to stdout, either as plain text, as JSON
with `--json`, or narrowed down by a jmespath expression with `--select`.
Logs go to stderr.
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, get_args

import orjson
from pydantic import ValidationError

from callerkit import __version__
from callerkit.bench import (
    TooManyDrivers,
    build_task,
    lint_suite,
    reference_sanity,
    support_modules,
    task_stats,
)
from callerkit.config import RunConfig
from callerkit.corpus import (
    CorpusPolicy,
    assert_no_leakage,
    build_corpus,
    corpus_stats,
    eligible_callers,
    load_sidecar,
)
from callerkit.errors import CallerkitError
from callerkit.graph import (
    UnknownFunctionError,
    direct_callers,
    export_graph,
    extract_repo,
    load_graph,
)
from callerkit.harness import aggregate, evaluate, get_sandbox
from callerkit.ingest import RepoFilters, assert_split, ingest, load_manifest
from callerkit.log import configure_logging, get_logger
from callerkit.metrics import score_pairs
from callerkit.models.base import (
    Base,
    Provenance,
    dumps,
    read_jsonl,
    write_json,
    write_jsonl,
)
from callerkit.models.bench import (
    BenchmarkTask,
    CoverageReports,
    Fragment,
    SanityResults,
    Tasks,
)
from callerkit.models.corpus import TargetFunction, TrainingInstance
from callerkit.models.evaluation import Candidate, Limits
from callerkit.models.metric import ScorePair
from callerkit.models.prompt import CONFIGS, PromptConfig
from callerkit.models.repo import SnapshotRecords, normalize_url
from callerkit.models.variant import CallerVariant
from callerkit.prompt import render_all
from callerkit.slicer import (
    caller_from_source,
    classify_call_site,
    make_variant,
    short_name,
    usage_report,
)
from callerkit.types import VariantKind

logger = get_logger("callerkit.cli")

_VARIANTS = list(get_args(VariantKind))


class _Context:
    """The state shared by every command of a run."""

    def __init__(self, args: argparse.Namespace, config: RunConfig):
        self.args = args
        self.config = config
        self.provenance = Provenance(
            version=__version__,
            seed=config.seed,
            config_digest=config.digest(),
        )

    def emit(self, model: Base, text: Callable[[], str]) -> None:
        """Prints a report in the requested form."""
        if self.args.select:
            payload = model.select(self.args.select)
        elif self.args.json:
            payload = model.dict(by_alias=True, exclude_none=True)
        else:
            sys.stdout.write(text() + "\n")
            return
        if isinstance(payload, dict) and "__root__" in payload:
            payload = payload["__root__"]
        sys.stdout.write(dumps(payload).decode() + "\n")

    def write(self, path: Path, records) -> int:
        count = write_jsonl(path, records, self.provenance)
        logger.info("artifact_written", path=str(path), records=count)
        return count


def _ks(value: str) -> List[int]:
    try:
        ks = [int(k) for k in value.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid k list: {value}")
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError(f"invalid k list: {value}")
    return ks


def _n_test(value: str):
    if value == "all":
        return value
    if value in ("1", "2", "3"):
        return int(value)
    raise argparse.ArgumentTypeError("expected 1, 2, 3 or all")


def cmd_ingest(ctx: _Context) -> int:
    args, config = ctx.args, ctx.config
    manifest = load_manifest(args.manifest)
    filters = RepoFilters(
        min_stars=config.min_stars,
        recency_months=config.recency_months,
        min_files=config.min_files,
        excluded_tags=config.excluded_tags,
    )
    records = ingest(
        manifest,
        config.cache_dir,
        filters,
        workers=config.workers,
        provenance=ctx.provenance,
    )

    ctx.emit(
        SnapshotRecords(__root__=records),
        lambda: "\n".join(
            f"{r.decision:<7} {r.repo_id} {'; '.join(r.reasons)}".rstrip()
            for r in records
        ),
    )
    return 0


def cmd_extract(ctx: _Context) -> int:
    facts, graph = extract_repo(ctx.args.repo, ctx.config.workers)
    export_graph(facts, graph, ctx.args.out, ctx.provenance)
    summary = graph.diagnostics.summary()
    ctx.emit(
        graph.diagnostics,
        lambda: "\n".join(f"{k}: {v}" for k, v in summary.items()),
    )
    return 0


def _repo_id(value: Optional[str], fallback: Path) -> str:
    return normalize_url(value) if value else fallback.resolve().name


def _policy(config: RunConfig) -> CorpusPolicy:
    return CorpusPolicy(
        require_docstring=config.require_docstring,
        assertion_density=config.assertion_density,
    )


def cmd_corpus(ctx: _Context) -> int:
    args, config = ctx.args, ctx.config
    repo_id = _repo_id(args.repo_id, args.graph)
    assert_split([repo_id], load_manifest(args.manifest), args.split)

    facts, graph = load_graph(args.graph)
    instances = build_corpus(
        graph,
        facts,
        repo_id,
        n_train=args.n_train,
        two_hop=args.two_hop,
        seed=config.seed,
        policy=_policy(config),
    )
    if args.bench:
        assert_no_leakage(instances, read_jsonl(args.bench, BenchmarkTask))

    ctx.write(args.out, instances)
    return 0


def cmd_stats(ctx: _Context) -> int:
    instances = read_jsonl(ctx.args.corpus, TrainingInstance)
    sidecar = load_sidecar(ctx.args.sidecar) if ctx.args.sidecar else None
    stats = corpus_stats(instances, sidecar)
    ctx.emit(stats, stats.table)
    return 0


def cmd_variants(ctx: _Context) -> int:
    args, config = ctx.args, ctx.config
    instances = read_jsonl(args.corpus, TrainingInstance)

    parsed = []
    for instance in instances:
        name = short_name(instance.target_qname)
        for text in instance.callers:
            try:
                parsed.append((instance, caller_from_source(text, name)))
            except CallerkitError as e:
                logger.info(
                    "caller_skipped", instance=instance.id, error=str(e)
                )

    variants: List[CallerVariant] = []
    for instance, caller in parsed:
        pool = [
            c for i, c in parsed if i.target_qname != instance.target_qname
        ]
        try:
            variant = make_variant(
                args.kind,
                caller,
                instance.target_qname,
                seed=config.seed,
                pool=pool,
                tolerance=config.length_tolerance,
            )
        except CallerkitError as e:
            logger.info(
                "variant_skipped",
                instance=instance.id,
                kind=args.kind,
                error=str(e),
            )
            continue
        variants.append(variant.copy(update={"source_id": instance.id}))

    ctx.write(args.out, variants)
    return 0


def cmd_usage_stats(ctx: _Context) -> int:
    items = []
    for task in read_jsonl(ctx.args.bench, BenchmarkTask):
        name = short_name(task.qname)
        for text in task.callers:
            try:
                caller = caller_from_source(text, name)
                usage = classify_call_site(caller, task.qname)
                items.append((task.task_id, usage))
            except CallerkitError as e:
                logger.info(
                    "site_unclassified", task=task.task_id, error=str(e)
                )

    report = usage_report(items)
    ctx.emit(report, lambda: "\n".join(report.lines()))
    return 0


def cmd_render(ctx: _Context) -> int:
    args = ctx.args
    config = PromptConfig.named(args.prompt, args.style, args.n_test)
    tasks = read_jsonl(args.tasks, BenchmarkTask)
    records = render_all(tasks, config, synthesize=not args.no_synthesize)
    ctx.write(args.out, records)
    return 0


def _load_fragments(path: Path) -> Dict[str, List[Fragment]]:
    raw = orjson.loads(path.read_bytes())
    return {
        qname: [Fragment.parse_obj(f) for f in fragments]
        for qname, fragments in raw.items()
    }


def cmd_bench_build(ctx: _Context) -> int:
    args, config = ctx.args, ctx.config
    repo_id = _repo_id(args.repo_id, args.repo_root)
    assert_split([repo_id], load_manifest(args.manifest), "bench")

    facts, graph = load_graph(args.graph)
    policy = _policy(config)
    sandbox = get_sandbox(config.backend, config.container_image)

    tasks, rejected = [], 0
    for qname, fragments in sorted(_load_fragments(args.fragments).items()):
        decl = graph.functions.get(qname)
        if decl is None:
            raise UnknownFunctionError(qname)
        callers = eligible_callers(decl, direct_callers(graph, qname), policy)
        target = TargetFunction(decl=decl, callers=callers, repo_id=repo_id)
        module_source = (args.repo_root / decl.module_path).read_text(
            encoding="utf-8", errors="replace"
        )
        try:
            task = build_task(
                target,
                module_source,
                fragments,
                repo_id,
                support=support_modules(
                    facts, decl.module_qname, args.repo_root
                ),
            )
        except TooManyDrivers as e:
            logger.warning("task_rejected", target=qname, reason=str(e))
            rejected += 1
            continue

        sanity = reference_sanity(task, sandbox, _limits(config))
        if not sanity.passed:
            logger.warning(
                "task_rejected",
                target=qname,
                reason="reference_sanity",
                status=sanity.status,
                driver=sanity.failed_driver,
            )
            rejected += 1
            continue
        tasks.append(task)

    ctx.write(args.out, tasks)
    stats = task_stats(tasks).copy(update={"rejected": rejected})
    ctx.emit(
        stats,
        lambda: "\n".join(f"{k}: {v}" for k, v in stats.dict().items()),
    )
    return 0


def cmd_bench_lint(ctx: _Context) -> int:
    args = ctx.args
    reports = [
        lint_suite(t, args.repo_root)
        for t in read_jsonl(args.tasks, BenchmarkTask)
    ]

    def text() -> str:
        lines = []
        for r in reports:
            status = "ok" if r.passed else "FAIL"
            lines.append(f"{status:<4} {r.task_id}")
            for label, values in (
                ("uncovered pattern", r.c1),
                ("unlinked requirement", r.c2),
                ("assertion without evidence", r.c3),
                ("dangling evidence", r.bad_evidence),
            ):
                lines.extend(f"     {label}: {v}" for v in values)
            if r.cap_violation:
                lines.append("     too many drivers")
        return "\n".join(lines)

    ctx.emit(CoverageReports(__root__=reports), text)
    return 0 if all(r.passed for r in reports) else 1


def _limits(config: RunConfig) -> Limits:
    return Limits(
        wall_s=config.timeout_s,
        mem_mb=config.memory_mb,
        no_network=config.no_network,
    )


def cmd_bench_sanity(ctx: _Context) -> int:
    args, config = ctx.args, ctx.config
    sandbox = get_sandbox(config.backend, config.container_image)
    tasks = read_jsonl(args.tasks, BenchmarkTask)
    results = [reference_sanity(t, sandbox, _limits(config)) for t in tasks]

    kept = Tasks(__root__=[t for t, r in zip(tasks, results) if r.passed])
    if args.out:
        ctx.write(args.out, kept)

    ctx.emit(
        SanityResults(__root__=results),
        lambda: "\n".join(
            f"{r.status:<11} {r.task_id} {r.failed_driver or ''}".rstrip()
            for r in results
        ),
    )
    return 0


def cmd_eval(ctx: _Context) -> int:
    args, config = ctx.args, ctx.config
    tasks = read_jsonl(args.tasks, BenchmarkTask)
    candidates = read_jsonl(args.candidates, Candidate)
    sandbox = get_sandbox(config.backend, config.container_image)
    outcomes = evaluate(
        tasks, candidates, config.workers, sandbox, _limits(config)
    )
    report = aggregate(outcomes, args.k)

    if args.outcomes:
        ctx.write(args.outcomes, outcomes)
    if args.out:
        write_json(args.out, report, ctx.provenance)

    ctx.emit(report, report.table)
    return 0


def cmd_metrics(ctx: _Context) -> int:
    args = ctx.args
    pairs = read_jsonl(args.pairs, ScorePair)
    scores = score_pairs(pairs, workers=ctx.config.workers)
    ctx.write(args.out, scores)
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="callerkit",
        description="Invocation-aware code generation data and evaluation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument(
        "--json", action="store_true", help="print reports as JSON"
    )
    parser.add_argument(
        "--select", help="jmespath expression applied to the report"
    )
    parser.add_argument(
        "--log-level",
        default="warning",
        choices=["debug", "info", "warning", "error"],
    )
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)

    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("ingest", help="snapshot and filter repositories")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--cache", dest="cache_dir", type=Path)
    p.set_defaults(func=cmd_ingest)

    p = commands.add_parser("extract", help="build a repository call graph")
    p.add_argument("--repo", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_extract)

    p = commands.add_parser("corpus", help="build a training corpus")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--split", choices=["train"], default="train")
    p.add_argument("--n-train", type=int, choices=[1, 2, 3], default=1)
    p.add_argument("--two-hop", action="store_true")
    p.add_argument("--repo-id")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--bench", type=Path, help="tasks checked for leakage")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_corpus)

    p = commands.add_parser("stats", help="print corpus length statistics")
    p.add_argument("corpus", type=Path)
    p.add_argument("--sidecar", type=Path)
    p.set_defaults(func=cmd_stats)

    p = commands.add_parser("variants", help="produce caller variants")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--kind", choices=_VARIANTS, required=True)
    p.add_argument("--tolerance", dest="length_tolerance", type=float)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_variants)

    p = commands.add_parser("usage-stats", help="classify benchmark calls")
    p.add_argument("--bench", type=Path, required=True)
    p.set_defaults(func=cmd_usage_stats)

    p = commands.add_parser("render", help="render prompts")
    p.add_argument("--tasks", type=Path, required=True)
    p.add_argument(
        "--prompt-config",
        dest="prompt",
        choices=list(CONFIGS),
        default="header+caller+nl",
    )
    p.add_argument(
        "--style", choices=["structured", "natural"], default="structured"
    )
    p.add_argument("--n-test", type=_n_test, default=1)
    p.add_argument("--no-synthesize", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_render)

    bench = commands.add_parser("bench", help="build and check benchmarks")
    steps = bench.add_subparsers(dest="step", required=True)

    p = steps.add_parser("build", help="build tasks from test fragments")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--repo-root", type=Path, required=True)
    p.add_argument("--fragments", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--repo-id")
    p.add_argument("--out", type=Path, required=True)
    _sandbox_flags(p)
    p.set_defaults(func=cmd_bench_build)

    p = steps.add_parser("lint", help="check driver coverage")
    p.add_argument("--tasks", type=Path, required=True)
    p.add_argument("--repo-root", type=Path)
    p.set_defaults(func=cmd_bench_lint)

    p = steps.add_parser("sanity", help="run drivers on the references")
    p.add_argument("--tasks", type=Path, required=True)
    p.add_argument("--out", type=Path, help="where passing tasks go")
    _sandbox_flags(p)
    p.set_defaults(func=cmd_bench_sanity)

    p = commands.add_parser("eval", help="evaluate candidates")
    p.add_argument("--tasks", type=Path, required=True)
    p.add_argument("--candidates", type=Path, required=True)
    p.add_argument("--k", type=_ks, default=[1, 5])
    p.add_argument("--out", type=Path, help="where the report goes")
    p.add_argument("--outcomes", type=Path)
    _sandbox_flags(p)
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("metrics", help="score candidate references")
    p.add_argument("--pairs", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_metrics)

    return parser


def _sandbox_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=["proc", "container"])
    p.add_argument("--timeout", dest="timeout_s", type=float)
    p.add_argument("--memory", dest="memory_mb", type=int)
    p.add_argument("--image", dest="container_image")


# Command line flags that override configuration fields
_OVERRIDES = (
    "seed",
    "workers",
    "cache_dir",
    "length_tolerance",
    "backend",
    "timeout_s",
    "memory_mb",
    "container_image",
)


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Runs the command named by the arguments.

    Args:
        argv: The arguments, `sys.argv[1:]` when omitted

    Returns:
        0 on success, 1 on a domain, validation or file error and 2 on a
        usage error.
    """
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(args.log_level, args.json)
    try:
        overrides = {k: getattr(args, k, None) for k in _OVERRIDES}
        config = RunConfig.load(args.config, **overrides)
        return args.func(_Context(args, config))
    except (CallerkitError, ValidationError, OSError) as e:
        sys.stderr.write(f"callerkit: error: {_one_line(e)}\n")
        logger.debug("command_failed", command=args.command, exc_info=True)
        return 1


def _one_line(e: Exception) -> str:
    return " ".join(str(e).split()) or type(e).__name__


def main() -> None:
    sys.exit(dispatch())
