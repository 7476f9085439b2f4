"""Provides target selection, training instance expansion, serialization and
corpus statistics.

A training instance pairs the header, callers and docstring of a target
function (the model input) with the target's body (the generation target).
The input is serialized as:

```
<func>
{header}
<calledby>
{caller 1}

{caller 2}
<docstring>
{docstring}
```

Callers are separated by a blank line and appear in sampling order with the
original caller first.

Text that would break this layout is escaped with a backslash: marker
spellings such as `<func>` become `<\\func>` in every segment, and a line that
follows a blank line inside a caller is prefixed with `\\`. Existing
backslashes in those positions gain one more, so the escape is reversible.
"""

import ast
import hashlib
import math
import random
import re
from fnmatch import fnmatch
from pathlib import Path
from typing import (
    Dict,
    Iterable,
    List,
    Literal,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
import orjson

from callerkit.errors import CallerkitError
from callerkit.graph import UnknownFunctionError, direct_callers
from callerkit.log import get_logger
from callerkit.models.base import Base
from callerkit.models.bench import BenchmarkTask
from callerkit.models.corpus import (
    ColumnStats,
    Exclusion,
    LengthStats,
    Sidecar,
    TargetFunction,
    TokenCounts,
    TrainingInstance,
)
from callerkit.models.graph import CallerRef, CallGraph
from callerkit.models.source import FileFacts, FunctionDecl
from callerkit.tokens import count_tokens

logger = get_logger("callerkit.corpus")

FUNC_MARKER = "<func>"
CALLEDBY_MARKER = "<calledby>"
DOCSTRING_MARKER = "<docstring>"
MARKERS = (FUNC_MARKER, CALLEDBY_MARKER, DOCSTRING_MARKER)

_LAYOUT = re.compile(
    r"\A<func>\n(?P<header>.*)\n<calledby>\n(?P<callers>.*)\n"
    r"<docstring>\n(?P<docstring>.*)\n\Z",
    re.DOTALL,
)
_CALLER_SEPARATOR = re.compile(r"\n\n(?=[^\s\\])")
_MARKER_SPELLING = re.compile(r"<(\\*)(func|calledby|docstring)>")
_ESCAPED_MARKER = re.compile(r"<\\(\\*)(func|calledby|docstring)>")
_BLOCK_START = re.compile(r"\n\n(?=\S)")
_ESCAPED_BLOCK_START = re.compile(r"\n\n\\(?=\S)")


class NoEligibleCaller(CallerkitError):
    """Raised when a target has no caller to build an instance from."""

    pass


class EmptyCorpus(CallerkitError):
    """Raised when statistics are requested for an empty corpus."""

    pass


class SerializationError(CallerkitError):
    """Raised when serialized text does not follow the marker layout."""

    pass


class LeakageError(CallerkitError):
    """Raised when a benchmark target leaks into the training corpus.

    Attributes:
        qnames: The leaking benchmark target qnames.
    """

    def __init__(self, qnames: Sequence[str]):
        self.qnames = sorted(set(qnames))
        super().__init__(
            "benchmark targets found in training data: "
            + ", ".join(self.qnames)
        )


class CorpusPolicy(Base):
    """The thresholds of the target function filters.

    Attributes:
        require_docstring: Whether targets without a docstring are dropped.
        assertion_density: The share of assertion statements at which a
            function counts as a test.
        test_globs: Path patterns of testing directories and files.
    """

    require_docstring: bool = True
    assertion_density: float = 0.3
    test_globs: List[str] = [
        "tests/*",
        "*/tests/*",
        "test/*",
        "*/test/*",
        "test_*.py",
        "*/test_*.py",
        "*_test.py",
        "conftest.py",
        "*/conftest.py",
    ]


def _statements(decl: FunctionDecl) -> Optional[List[ast.stmt]]:
    try:
        tree = ast.parse(decl.source_text)
    except SyntaxError:
        return None
    if not tree.body or not isinstance(
        tree.body[0], (ast.FunctionDef, ast.AsyncFunctionDef)
    ):
        return None

    body = tree.body[0].body
    if decl.docstring is not None and body:
        body = body[1:]
    found = []
    for stmt in body:
        found.extend(n for n in ast.walk(stmt) if isinstance(n, ast.stmt))
    return found


def _is_assertion(stmt: ast.stmt) -> bool:
    if isinstance(stmt, ast.Assert):
        return True
    if isinstance(stmt, ast.Expr) and isinstance(stmt.value, ast.Call):
        func = stmt.value.func
        return (
            isinstance(func, ast.Attribute)
            and isinstance(func.value, ast.Name)
            and func.value.id == "self"
            and func.attr.startswith("assert")
        )
    return False


def assertion_density(decl: FunctionDecl) -> float:
    """Returns the share of assertion statements in a function body.

    Every statement nested in the body counts, the docstring excluded.
    Unparseable functions have a density of 0.
    """
    statements = _statements(decl)
    if not statements:
        return 0.0
    return sum(1 for s in statements if _is_assertion(s)) / len(statements)


def _test_path(module_path: str, globs: Iterable[str]) -> bool:
    return any(fnmatch(module_path, g) for g in globs)


def is_test_artifact(
    module_path: str,
    decl: FunctionDecl,
    policy: Optional[CorpusPolicy] = None,
) -> bool:
    """Returns whether a function belongs to a test suite.

    Args:
        module_path: The repository relative path of the declaring file
        decl: The function declaration
        policy: The thresholds, defaults when omitted

    Returns:
        True if the path is a testing location, the name starts with
        `test_`, or the assertion density reaches the threshold.
    """
    policy = policy or CorpusPolicy()
    return (
        _test_path(module_path, policy.test_globs)
        or decl.name.startswith("test_")
        or assertion_density(decl) >= policy.assertion_density
    )


def eligible_callers(
    decl: FunctionDecl,
    callers: Sequence[CallerRef],
    policy: Optional[CorpusPolicy] = None,
) -> List[CallerRef]:
    """Filters callers down to those usable as calling context.

    Self calls, test functions and callers whose every call site resolved
    ambiguously are dropped.
    """
    policy = policy or CorpusPolicy()
    return [
        c
        for c in callers
        if c.qname != decl.qname
        and not c.ambiguous
        and not is_test_artifact(c.caller.module_path, c.caller, policy)
    ]


def exclusion_reason(
    decl: FunctionDecl,
    callers: Sequence[CallerRef],
    policy: Optional[CorpusPolicy] = None,
) -> Optional[str]:
    """Returns the first reason excluding a function from the targets.

    Args:
        decl: The candidate target
        callers: The direct callers of the candidate
        policy: The filter thresholds

    Returns:
        The reason, or None when the function is a valid target.
    """
    policy = policy or CorpusPolicy()
    if _test_path(decl.module_path, policy.test_globs):
        return "test directory"
    if decl.name.startswith("test_"):
        return "test function"
    if _statements(decl) is None:
        return "syntactically invalid"
    if assertion_density(decl) >= policy.assertion_density:
        return "assertion density"
    if policy.require_docstring and not (decl.docstring or "").strip():
        return "no description"
    if not callers:
        return "no caller"

    others = [c for c in callers if c.qname != decl.qname]
    if not others:
        return "no external caller"
    non_test = [
        c
        for c in others
        if not is_test_artifact(c.caller.module_path, c.caller, policy)
    ]
    if not non_test:
        return "only test callers"
    if all(c.ambiguous for c in non_test):
        return "ambiguous callers only"
    return None


def select_targets(
    graph: CallGraph,
    all_facts: Sequence[FileFacts],
    policy: Optional[CorpusPolicy] = None,
    repo_id: str = "",
) -> Tuple[List[TargetFunction], List[Exclusion]]:
    """Selects the functions usable as generation targets.

    Args:
        graph: The call graph of the snapshot
        all_facts: The facts of every valid file of the snapshot
        policy: The filter thresholds
        repo_id: The repository the snapshot belongs to

    Returns:
        The targets, in file and line order, and every exclusion.
    """
    policy = policy or CorpusPolicy()
    targets = []
    exclusions = []
    for facts in sorted(all_facts, key=lambda f: f.module_path):
        for decl in sorted(facts.functions, key=lambda d: d.span):
            try:
                callers = direct_callers(graph, decl.qname)
            except UnknownFunctionError:
                callers = []
            reason = exclusion_reason(decl, callers, policy)
            if reason is not None:
                logger.debug(
                    "target_excluded", qname=decl.qname, reason=reason
                )
                exclusions.append(Exclusion(qname=decl.qname, reason=reason))
                continue
            targets.append(
                TargetFunction(
                    decl=decl,
                    callers=eligible_callers(decl, callers, policy),
                    repo_id=repo_id,
                )
            )

    logger.info(
        "targets_selected",
        repo=repo_id,
        targets=len(targets),
        excluded=len(exclusions),
    )
    return targets, exclusions


def _escape(segment: str) -> str:
    return _MARKER_SPELLING.sub(r"<\\\1\2>", segment)


def _unescape(segment: str) -> str:
    return _ESCAPED_MARKER.sub(r"<\1\2>", segment)


def _escape_caller(caller: str) -> str:
    return _BLOCK_START.sub("\n\n\\\\", _escape(caller))


def _unescape_caller(caller: str) -> str:
    return _unescape(_ESCAPED_BLOCK_START.sub("\n\n", caller))


def serialize(header: str, callers: Sequence[str], docstring: str) -> str:
    """Lays out a header, callers and docstring with the three markers.

    Callers must be non-empty and start with a character other than
    whitespace or a backslash, which dedented source always does.
    """
    return (
        f"{FUNC_MARKER}\n{_escape(header)}\n"
        f"{CALLEDBY_MARKER}\n"
        + "\n\n".join(_escape_caller(c) for c in callers)
        + "\n"
        f"{DOCSTRING_MARKER}\n{_escape(docstring)}\n"
    )


def serialize_instance(instance: TrainingInstance) -> str:
    """Serializes the model input of an instance."""
    return serialize(instance.header, instance.callers, instance.docstring)


def parse_serialized(text: str) -> Tuple[str, List[str], str]:
    """Splits serialized text back into its header, callers and docstring.

    Args:
        text: Text produced by `serialize`

    Returns:
        The header, the caller snippets and the docstring.

    Raises:
        SerializationError: A marker is missing, repeated or out of order.
    """
    for marker in MARKERS:
        count = text.count(marker)
        if count != 1:
            raise SerializationError(
                f"expected {marker} exactly once, found {count}"
            )
    match = _LAYOUT.match(text)
    if match is None:
        raise SerializationError("markers out of order or malformed layout")

    segment = match.group("callers")
    callers = _CALLER_SEPARATOR.split(segment) if segment else []
    return (
        _unescape(match.group("header")),
        [_unescape_caller(c) for c in callers],
        _unescape(match.group("docstring")),
    )


def _instance_id(target_qname: str, serialized: str) -> str:
    return hashlib.md5(
        f"{target_qname}\0{serialized}".encode()
    ).hexdigest()


def make_instance(
    decl: FunctionDecl,
    repo: str,
    callers: Sequence[str],
    caller_qnames: Sequence[str],
    hop_depth: int = 1,
    flags: Optional[List[str]] = None,
) -> TrainingInstance:
    """Assembles a serialized and counted instance for a target."""
    docstring = decl.docstring or ""
    text = serialize(decl.header_text, callers, docstring)
    return TrainingInstance(
        id=_instance_id(decl.qname, text),
        repo=repo,
        target_qname=decl.qname,
        module_path=decl.module_path,
        header=decl.header_text,
        callers=list(callers),
        caller_qnames=list(caller_qnames),
        docstring=docstring,
        body=decl.body_text,
        hop_depth=hop_depth,
        serialized=text,
        token_counts=TokenCounts.of(
            count_tokens(text), count_tokens(decl.body_text)
        ),
        flags=sorted(set(flags or [])),
    )


def expand_instances(
    target: TargetFunction,
    n_train: Literal[1, 2, 3] = 1,
    seed: int = 0,
) -> List[TrainingInstance]:
    """Expands a target into one instance per eligible caller.

    Each instance keeps its original caller first, followed by
    `n_train - 1` distinct extra callers sampled without replacement. The
    sampling of every instance is seeded by the run seed, the target and the
    caller index, so that a run is reproducible.

    Args:
        target: The target with its eligible callers
        n_train: The number of callers per instance
        seed: The run seed

    Returns:
        One instance per caller, flagged `short` when fewer than `n_train`
        callers exist.

    Raises:
        NoEligibleCaller: The target has no caller.
    """
    callers = target.callers
    if not callers:
        raise NoEligibleCaller(f"{target.decl.qname} has no eligible caller")

    short = len(callers) < n_train
    instances = []
    for i, original in enumerate(callers):
        rng = random.Random(f"{seed}:{target.decl.qname}:{i}")
        others = callers[:i] + callers[i + 1 :]  # noqa: E203
        extra = rng.sample(others, min(n_train - 1, len(others)))
        chosen = [original, *extra]
        instances.append(
            make_instance(
                target.decl,
                target.repo_id,
                [c.source_text for c in chosen],
                [c.qname for c in chosen],
                flags=["short"] if short else [],
            )
        )

    return instances


def _first_grandparent(graph: CallGraph, qname: str) -> Optional[CallerRef]:
    try:
        refs = direct_callers(graph, qname)
    except UnknownFunctionError:
        return None
    for ref in refs:
        if ref.qname != qname:
            return ref
    return None


def augment_two_hop(
    instance: TrainingInstance,
    graph: CallGraph,
    target: Optional[FunctionDecl] = None,
) -> TrainingInstance:
    """Prepends to each caller the first caller of that caller.

    Callers of a caller are taken in path and line order, self calls
    skipped. A caller with no caller of its own is left as is and the
    instance is flagged `no_second_hop`.

    Args:
        instance: A one hop instance
        graph: The call graph the instance was built from
        target: The target declaration, looked up in the graph if omitted

    Returns:
        A new instance with a hop depth of 2.
    """
    decl = target or graph.functions[instance.target_qname]
    snippets = []
    flags = list(instance.flags)
    for snippet, qname in zip(instance.callers, instance.caller_qnames):
        grandparent = _first_grandparent(graph, qname)
        if grandparent is None:
            snippets.append(snippet)
            flags.append("no_second_hop")
        else:
            snippets.append(grandparent.source_text + "\n" + snippet)

    return make_instance(
        decl,
        instance.repo,
        snippets,
        instance.caller_qnames,
        hop_depth=2,
        flags=flags,
    )


def without_callers(instance: TrainingInstance) -> TrainingInstance:
    """Returns the context free variant of an instance."""
    text = serialize(instance.header, [], instance.docstring)
    return instance.copy(
        update={
            "id": _instance_id(instance.target_qname, text),
            "callers": [],
            "caller_qnames": [],
            "serialized": text,
            "token_counts": TokenCounts.of(
                count_tokens(text), instance.token_counts.target_len
            ),
        }
    )


def dedup(instances: Iterable[TrainingInstance]) -> List[TrainingInstance]:
    """Drops instances repeating an earlier (target, serialized) pair."""
    seen = set()
    unique = []
    for instance in instances:
        key = (instance.target_qname, instance.serialized)
        if key in seen:
            continue
        seen.add(key)
        unique.append(instance)
    return unique


def build_corpus(
    graph: CallGraph,
    all_facts: Sequence[FileFacts],
    repo_id: str,
    n_train: Literal[1, 2, 3] = 1,
    two_hop: bool = False,
    seed: int = 0,
    policy: Optional[CorpusPolicy] = None,
) -> List[TrainingInstance]:
    """Selects the targets of a snapshot and expands them into instances.

    Args:
        graph: The call graph of the snapshot
        all_facts: The facts of every valid file
        repo_id: The repository id
        n_train: The number of callers per instance
        two_hop: Whether callers are augmented with their own callers
        seed: The run seed
        policy: The target filter thresholds

    Returns:
        The deduplicated instances.
    """
    targets, _ = select_targets(graph, all_facts, policy, repo_id)
    instances: List[TrainingInstance] = []
    for target in targets:
        expanded = expand_instances(target, n_train, seed)
        if two_hop:
            expanded = [
                augment_two_hop(i, graph, target.decl) for i in expanded
            ]
        instances.extend(expanded)

    unique = dedup(instances)
    logger.info(
        "corpus_built",
        repo=repo_id,
        targets=len(targets),
        instances=len(unique),
        n_train=n_train,
        two_hop=two_hop,
    )
    return unique


def _nearest_rank(ordered: np.ndarray, p: float) -> int:
    rank = max(1, math.ceil(p * len(ordered) / 100))
    return int(ordered[rank - 1])


def _column(values: Sequence[int]) -> ColumnStats:
    ordered = np.sort(np.asarray(values, dtype=np.int64))
    return ColumnStats(
        mean=float(np.mean(ordered)),
        median=_nearest_rank(ordered, 50),
        p90=_nearest_rank(ordered, 90),
        p95=_nearest_rank(ordered, 95),
        p99=_nearest_rank(ordered, 99),
    )


def corpus_stats(
    instances: Sequence[TrainingInstance],
    sidecar: Optional[Sidecar] = None,
) -> LengthStats:
    """Computes token length statistics with nearest rank percentiles.

    Args:
        instances: The corpus
        sidecar: Optional externally computed counts replacing the built-in
            ones for the instances it names

    Returns:
        The statistics of the task, target and total lengths.

    Raises:
        EmptyCorpus: No instance was given.
    """
    if not instances:
        raise EmptyCorpus("no instances to compute statistics for")

    task, target = [], []
    for instance in instances:
        counts = sidecar.get(instance.id) if sidecar else None
        if counts is None:
            task.append(instance.token_counts.task_len)
            target.append(instance.token_counts.target_len)
        else:
            task.append(counts.task_len)
            target.append(counts.target_len)

    total = [a + b for a, b in zip(task, target)]
    return LengthStats(
        count=len(instances),
        task=_column(task),
        target=_column(target),
        total=_column(total),
    )


def load_sidecar(path: Path) -> Sidecar:
    """Loads a token count sidecar file."""
    return Sidecar.parse_obj(orjson.loads(path.read_bytes()))


def assert_no_leakage(
    instances: Iterable[TrainingInstance],
    tasks: Iterable[BenchmarkTask],
) -> None:
    """Asserts that no benchmark target reaches the training data.

    A benchmark target leaks when its qname is a training target, or when its
    body is a training target body or appears inside a training caller.

    Raises:
        LeakageError: Some benchmark target leaks.
    """
    bodies: Dict[str, str] = {}
    for task in tasks:
        body = task.target.decl.body_text.strip()
        bodies[task.target.decl.qname] = body

    leaking = set()
    for instance in instances:
        if instance.target_qname in bodies:
            leaking.add(instance.target_qname)
        for qname, body in bodies.items():
            if not body:
                continue
            if body == instance.body.strip() or any(
                body in c for c in instance.callers
            ):
                leaking.add(qname)

    if leaking:
        raise LeakageError(sorted(leaking))
