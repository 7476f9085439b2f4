"""Provides the construction and linting of caller driven benchmark tasks.

Every call site on a target induces a set of observable requirements: how
the caller consumes the result (subscripts, attributes, method calls,
iteration, truth tests, comparisons, unpacking), which exceptions it handles
around the call and the shape of the arguments it passes. Compatible call
sites are grouped into usage patterns and the union of every pattern's
requirements forms the behavior sketch a driver suite is linted against.
"""

import ast
import builtins
import hashlib
import re
import textwrap
from pathlib import Path
from typing import (
    Callable,
    Dict,
    Iterable,
    List,
    Optional,
    Sequence,
    Set,
)

import numpy as np

from callerkit.errors import CallerkitError
from callerkit.harness import Sandbox, evaluate_candidate
from callerkit.log import get_logger
from callerkit.models.bench import (
    BehaviorSketch,
    BenchmarkTask,
    CoverageReport,
    DriverScript,
    Evidence,
    Fragment,
    Requirement,
    SanityResult,
    SiteRequirements,
    TaskStats,
    UsagePattern,
)
from callerkit.models.corpus import TargetFunction
from callerkit.models.evaluation import Candidate, Limits
from callerkit.models.graph import CallerRef
from callerkit.models.source import FileFacts, FunctionDecl
from callerkit.parse import dotted_parts
from callerkit.slicer import (
    CallContext,
    bound_names,
    direct_uses,
    header_nodes,
    locate_call,
    result_node,
    short_name,
)

logger = get_logger("callerkit.bench")

# The maximum number of drivers of a task
MAX_DRIVERS = 5

_EVIDENCE = re.compile(r"#\s*evidence:\s*(?P<ref>\S+:\d+)")
_BUILTINS = frozenset(dir(builtins))

# Placeholder arguments by annotation
_PLACEHOLDERS = {
    "int": "0",
    "float": "0.0",
    "complex": "0j",
    "str": '""',
    "bytes": 'b""',
    "bool": "False",
    "list": "[]",
    "dict": "{}",
    "tuple": "()",
    "set": "set()",
    "frozenset": "frozenset()",
    "sequence": "[]",
    "iterable": "[]",
    "mapping": "{}",
}

Extractor = Callable[
    [CallContext, Set[str], List[ast.stmt]], List[Requirement]
]


class FragmentParseError(CallerkitError):
    """Raised when a test fragment cannot be normalized into a driver."""

    pass


class NoTargetCall(CallerkitError):
    """Raised when a test fragment never calls the target."""

    pass


class TooManyDrivers(CallerkitError):
    """Raised when a task would hold more drivers than the cap allows."""

    pass


def _requirement(kind: str, *params: object) -> Requirement:
    return Requirement(kind=kind, params=[str(p) for p in params])


def _usage_of(node: ast.AST, parents: Dict[int, ast.AST]) -> List[Requirement]:
    """Returns the requirements expressed by how an expression is used."""
    parent = parents.get(id(node))
    if isinstance(parent, ast.Subscript) and parent.value is node:
        key = parent.slice
        if isinstance(key, ast.Constant):
            return [_requirement("RETURN_SUBSCRIPT", key.value)]
        return [_requirement("RETURN_SUBSCRIPT", ast.unparse(key))]
    elif isinstance(parent, ast.Attribute) and parent.value is node:
        grandparent = parents.get(id(parent))
        if isinstance(grandparent, ast.Call) and grandparent.func is parent:
            return [_requirement("RETURN_METHOD", parent.attr)]
        return [_requirement("RETURN_ATTR", parent.attr)]
    elif isinstance(parent, ast.Compare):
        operands = [parent.left, *parent.comparators]
        others = [o for o in operands if o is not node]
        if others:
            return [_requirement("RETURN_COMPARED", ast.unparse(others[0]))]
    elif (
        isinstance(parent, (ast.If, ast.While, ast.IfExp, ast.Assert))
        and parent.test is node
    ) or isinstance(parent, ast.BoolOp):
        return [_requirement("RETURN_TRUTH_TEST")]
    elif isinstance(parent, ast.UnaryOp) and isinstance(parent.op, ast.Not):
        return [_requirement("RETURN_TRUTH_TEST")]
    elif (
        isinstance(parent, (ast.For, ast.AsyncFor, ast.comprehension))
        and parent.iter is node
    ):
        return [_requirement("RETURN_ITERATED")]
    return []


def unpacked(
    ctx: CallContext, names: Set[str], uses: List[ast.stmt]
) -> List[Requirement]:
    """Finds tuple unpacking of the result."""
    stmt = ctx.statement
    if isinstance(stmt, ast.Assign) and stmt.value is result_node(ctx):
        for target in stmt.targets:
            if isinstance(target, (ast.Tuple, ast.List)):
                return [_requirement("RETURN_UNPACKED", len(target.elts))]
    return []


def result_usage(
    ctx: CallContext, names: Set[str], uses: List[ast.stmt]
) -> List[Requirement]:
    """Finds uses of the result, directly and through bound names."""
    found = _usage_of(result_node(ctx), ctx.parents)
    for stmt in uses:
        for node in header_nodes(stmt):
            for child in ast.walk(node):
                if (
                    isinstance(child, ast.Name)
                    and isinstance(child.ctx, ast.Load)
                    and child.id in names
                ):
                    at = Evidence(file="", line=child.lineno)
                    found.extend(
                        r.copy(update={"evidence": at})
                        for r in _usage_of(child, ctx.parents)
                    )
    return found


def raises_handled(
    ctx: CallContext, names: Set[str], uses: List[ast.stmt]
) -> List[Requirement]:
    """Finds exceptions handled by try statements around the call."""
    found = []
    node: ast.AST = ctx.call
    while node is not ctx.func:
        parent = ctx.parents[id(node)]
        body = getattr(parent, "body", None)
        if hasattr(parent, "handlers") and body and node in body:
            for handler in parent.handlers:  # type: ignore[attr-defined]
                if handler.type is None:
                    continue
                types = (
                    handler.type.elts
                    if isinstance(handler.type, ast.Tuple)
                    else [handler.type]
                )
                for t in types:
                    name = ".".join(dotted_parts(t)) or ast.unparse(t)
                    found.append(_requirement("RAISES_HANDLED", name))
        node = parent
    return found


def arg_shape(ctx: CallContext) -> Requirement:
    """Records the number of positional arguments and the keyword names."""
    keywords = sorted(k.arg or "**" for k in ctx.call.keywords)
    return _requirement(
        "ARG_SHAPE", len(ctx.call.args), "{" + ", ".join(keywords) + "}"
    )


# The registered extractors, run in order before the argument shape
EXTRACTORS: List[Extractor] = [unpacked, result_usage, raises_handled]


def register_extractor(fn: Extractor) -> Extractor:
    """Registers an additional requirement extractor."""
    EXTRACTORS.append(fn)
    return fn


def extract_requirements(
    caller: CallerRef, target_qname: str
) -> List[Requirement]:
    """Derives the requirements a call site places on the target.

    Args:
        caller: The caller holding the call site
        target_qname: The qname of the target

    Returns:
        The requirements, duplicates removed, the argument shape last.

    Raises:
        NoCallSite: The caller holds no call to the target.
    """
    ctx = locate_call(caller, target_qname)
    names = bound_names(ctx)
    uses = direct_uses(ctx, names) if names else []
    offset = caller.caller.span[0] - 1
    file = caller.caller.module_path

    found: List[Requirement] = []
    for extractor in EXTRACTORS:
        found.extend(extractor(ctx, names, uses))
    found.append(arg_shape(ctx))

    unique: Dict[str, Requirement] = {}
    for r in found:
        line = r.evidence.line if r.evidence else ctx.statement.lineno
        evidence = Evidence(file=file, line=line + offset)
        unique.setdefault(r.key(), r.copy(update={"evidence": evidence}))
    return list(unique.values())


def site_requirements(
    caller: CallerRef, target_qname: str
) -> SiteRequirements:
    """Extracts the requirements of a caller's first call site.

    Raises:
        NoCallSite: The caller holds no call to the target.
    """
    ctx = locate_call(caller, target_qname)
    line = ctx.call.lineno + caller.caller.span[0] - 1
    return SiteRequirements(
        site_id=f"{caller.caller.module_path}:{line}",
        caller_qname=caller.qname,
        requirements=extract_requirements(caller, target_qname),
    )


def _union(groups: Iterable[Sequence[Requirement]]) -> List[Requirement]:
    merged: Dict[str, Requirement] = {}
    for group in groups:
        for r in group:
            merged.setdefault(r.key(), r)
    return list(merged.values())


def _compatible(a: Sequence[Requirement], b: Sequence[Requirement]) -> bool:
    kinds_a = {r.kind for r in a}
    kinds_b = {r.kind for r in b}
    arity_a = {r.key() for r in a if r.kind == "RETURN_UNPACKED"}
    arity_b = {r.key() for r in b if r.kind == "RETURN_UNPACKED"}
    if arity_a and arity_b and arity_a != arity_b:
        return False
    if ("RETURN_UNPACKED" in kinds_a and "RETURN_TRUTH_TEST" in kinds_b) or (
        "RETURN_TRUTH_TEST" in kinds_a and "RETURN_UNPACKED" in kinds_b
    ):
        return False
    return True


def group_usage_patterns(
    sites: Sequence[SiteRequirements],
) -> List[UsagePattern]:
    """Groups call sites greedily, in the given order.

    A site joins the first pattern it is compatible with when it shares a
    requirement other than the argument shape, or when its requirements
    equal the pattern's. Otherwise it opens a new pattern.
    """
    patterns: List[UsagePattern] = []
    for site in sites:
        own = {k for k in site.keys() if not k.startswith("ARG_SHAPE")}
        for pattern in patterns:
            if not _compatible(pattern.requirements, site.requirements):
                continue
            shared = own & set(pattern.keys())
            if shared or set(site.keys()) == set(pattern.keys()):
                pattern.members.append(site.site_id)
                pattern.requirements = _union(
                    [pattern.requirements, site.requirements]
                )
                break
        else:
            patterns.append(
                UsagePattern(
                    id=f"U{len(patterns) + 1}",
                    members=[site.site_id],
                    requirements=list(_union([site.requirements])),
                )
            )
    return patterns


def behavior_sketch(patterns: Sequence[UsagePattern]) -> BehaviorSketch:
    """Unions the requirements of every pattern, ordered by kind and
    parameters."""
    merged = _union(p.requirements for p in patterns)
    return BehaviorSketch(requirements=sorted(merged, key=Requirement.order))


def _assert_lines(text: str) -> List[range]:
    tree = ast.parse(text)
    return [
        range(n.lineno, (n.end_lineno or n.lineno) + 1)
        for n in ast.walk(tree)
        if isinstance(n, ast.Assert)
    ]


def _evidence_exists(ref: str, root: Path) -> bool:
    path, _, line = ref.rpartition(":")
    file = root / path
    if not file.is_file():
        return False
    text = file.read_text(encoding="utf-8", errors="replace")
    count = len(text.splitlines())
    return 1 <= int(line) <= count


def lint_suite(
    task: BenchmarkTask, repo_root: Optional[Path] = None
) -> CoverageReport:
    """Checks a task's drivers against its patterns and sketch.

    Args:
        task: The task
        repo_root: When given, evidence annotations must name an existing
            file and line under this root

    Returns:
        The uncovered patterns, the unlinked requirements, the assertions
        lacking evidence, the cap violation and the dangling evidence.
    """
    covered = {c for d in task.drivers for c in d.covers}
    c1 = [p.id for p in task.patterns if p.id not in covered]
    c2 = [k for k in task.sketch.keys() if k not in covered]

    c3: List[str] = []
    references: List[str] = []
    for driver in task.drivers:
        lines = driver.text.splitlines()
        try:
            spans = _assert_lines(driver.text)
        except SyntaxError as e:
            c3.append(f"{driver.path}:{e.lineno or 0}")
            continue
        for span in spans:
            annotated = [
                m.group("ref")
                for i in span
                if i <= len(lines)
                for m in [_EVIDENCE.search(lines[i - 1])]
                if m
            ]
            if not annotated:
                c3.append(f"{driver.path}:{span.start}")
            references.extend(annotated)
        references.extend(driver.evidence)

    bad = []
    if repo_root is not None:
        bad = sorted(
            {r for r in references if not _evidence_exists(r, repo_root)}
        )

    report = CoverageReport(
        task_id=task.task_id,
        c1=c1,
        c2=c2,
        c3=c3,
        cap_violation=len(task.drivers) > MAX_DRIVERS,
        bad_evidence=bad,
    )
    if not report.passed:
        logger.info(
            "lint_failed",
            task=task.task_id,
            c1=c1,
            c2=c2,
            c3=c3,
            cap=report.cap_violation,
            bad_evidence=bad,
        )
    return report


def _bound(tree: ast.AST) -> Set[str]:
    names: Set[str] = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and not isinstance(node.ctx, ast.Load):
            names.add(node.id)
        elif isinstance(
            node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)
        ):
            names.add(node.name)
        elif isinstance(node, ast.arg):
            names.add(node.arg)
        elif isinstance(node, ast.ExceptHandler) and node.name:
            names.add(node.name)
        elif isinstance(node, (ast.Import, ast.ImportFrom)):
            for alias in node.names:
                names.add(alias.asname or alias.name.split(".")[0])
    return names


def _binding(target_qname: str, module_qname: Optional[str]) -> Optional[str]:
    if not module_qname or not target_qname.startswith(module_qname + "."):
        return None
    return target_qname[len(module_qname) + 1 :].split(".")[0]  # noqa: E203


def normalize_driver(
    fragment: str,
    target_qname: str,
    imports: Sequence[str] = (),
    module_qname: Optional[str] = None,
    path: str = "drivers/driver_1.py",
    covers: Sequence[str] = (),
) -> DriverScript:
    """Normalizes a test fragment into a main() style driver.

    The driver imports what the fragment needs and the target's top level
    binding, runs the fragment inside `main()` and exits 1 with a traceback
    on the first failing assertion, 0 otherwise.

    Args:
        fragment: The fragment source
        target_qname: The qname of the target
        imports: Import lines the fragment needs
        module_qname: The module declaring the target, imported from
        path: The path of the driver in the workspace
        covers: Pattern ids and requirement keys the driver exercises

    Returns:
        The driver.

    Raises:
        FragmentParseError: The fragment does not parse or uses names it
            never binds.
        NoTargetCall: The fragment never calls the target.
    """
    body = textwrap.dedent(fragment).strip("\n")
    try:
        tree = ast.parse(body)
        header = ast.parse("\n".join(imports))
    except SyntaxError as e:
        raise FragmentParseError(f"line {e.lineno}: {e.msg}") from e

    name = short_name(target_qname)
    if not any(
        isinstance(n, ast.Call)
        and dotted_parts(n.func)
        and dotted_parts(n.func)[-1] == name
        for n in ast.walk(tree)
    ):
        raise NoTargetCall(f"fragment never calls {name}")

    binding = _binding(target_qname, module_qname)
    import_lines = list(imports)
    available = _bound(header) | _bound(tree) | _BUILTINS
    if binding and binding not in available:
        import_lines.append(f"from {module_qname} import {binding}")
        available.add(binding)

    loads = {
        n.id
        for n in ast.walk(tree)
        if isinstance(n, ast.Name) and isinstance(n.ctx, ast.Load)
    }
    free = sorted(loads - available)
    if free:
        raise FragmentParseError("free names: " + ", ".join(free))

    text = "\n".join(
        [
            "import sys",
            "import traceback",
            *import_lines,
            "",
            "",
            "def main():",
            "    try:",
            textwrap.indent(body, " " * 8),
            "    except AssertionError:",
            "        traceback.print_exc()",
            "        return 1",
            "    return 0",
            "",
            "",
            'if __name__ == "__main__":',
            "    sys.exit(main())",
            "",
        ]
    )
    try:
        ast.parse(text)
    except SyntaxError as e:
        raise FragmentParseError(f"driver does not parse: {e.msg}") from e

    return DriverScript(
        path=path,
        text=text,
        covers=list(covers),
        evidence=[m.group("ref") for m in _EVIDENCE.finditer(body)],
    )


def _placeholder(annotation: Optional[str]) -> str:
    if not annotation:
        return "None"
    base = annotation.strip("'\"").split("[")[0].split(".")[-1].lower()
    return _PLACEHOLDERS.get(base, "None")


def needs_receiver(decl: FunctionDecl) -> bool:
    """Returns whether calling the function requires an instance."""
    return (
        decl.is_method
        and decl.name != "__init__"
        and "staticmethod" not in decl.decorators
        and "classmethod" not in decl.decorators
    )


def synthesize_minimal_invocation(decl: FunctionDecl) -> str:
    """Writes a tiny caller invoking the function with placeholders.

    Required parameters get a placeholder derived from their annotation,
    parameters with defaults and variadic parameters are omitted. Methods
    are called on an unconstructed `obj` receiver.
    """
    params = list(decl.params)
    if decl.is_method and "staticmethod" not in decl.decorators and params:
        params = params[1:]

    args = []
    for p in params:
        if p.default is not None or p.kind.startswith("var_"):
            continue
        value = _placeholder(p.annotation)
        args.append(f"{p.name}={value}" if p.kind == "keyword_only" else value)

    cls = (decl.enclosing_class or "").rsplit(".", 1)[-1]
    lines = []
    if decl.name == "__init__" and cls:
        callee = cls
    elif needs_receiver(decl):
        callee = f"obj.{decl.name}"
        lines.append(f"    # obj stands for a {cls} instance, never built")
    elif decl.is_method and cls:
        callee = f"{cls}.{decl.name}"
    else:
        callee = decl.name

    call = f"{callee}({', '.join(args)})"
    if decl.is_async:
        call = f"await {call}"
    lines.append(f"    _r = {call}")

    keyword = "async def" if decl.is_async else "def"
    receiver = "obj" if needs_receiver(decl) else ""
    return f"{keyword} _use_{decl.name}({receiver}):\n" + "\n".join(lines)


def support_modules(
    all_facts: Sequence[FileFacts], module_qname: str, root: Path
) -> Dict[str, str]:
    """Collects the sources of the repository modules a module depends on.

    Package `__init__` modules on the way to every collected module are
    included. The module itself is not.

    Args:
        all_facts: The facts of every file of the snapshot
        module_qname: The module to start from
        root: The snapshot root

    Returns:
        The sources by repository relative path.
    """
    by_qname = {f.module_qname: f for f in all_facts}

    def owner(dotted: str) -> Optional[str]:
        parts = dotted.split(".")
        while parts:
            candidate = ".".join(parts)
            if candidate in by_qname:
                return candidate
            parts.pop()
        return None

    seen: Set[str] = set()
    queue = [module_qname]
    while queue:
        current = queue.pop()
        if current in seen:
            continue
        seen.add(current)
        parts = current.split(".")
        for i in range(1, len(parts)):
            package = owner(".".join(parts[:i]))
            if package:
                queue.append(package)
        facts = by_qname.get(current)
        if facts is None:
            continue
        targets = [i.target_qname for i in facts.imports]
        targets += [s.module for s in facts.star_imports]
        for target in targets:
            found = owner(target)
            if found:
                queue.append(found)

    seen.discard(module_qname)
    return {
        by_qname[q].module_path: (root / by_qname[q].module_path).read_text(
            encoding="utf-8", errors="replace"
        )
        for q in sorted(seen)
        if q in by_qname
    }


def build_task(
    target: TargetFunction,
    module_source: str,
    fragments: Sequence[Fragment],
    repo: str,
    task_id: Optional[str] = None,
    support: Optional[Dict[str, str]] = None,
) -> BenchmarkTask:
    """Assembles a benchmark task for a target.

    Args:
        target: The target with its eligible callers
        module_source: The source of the declaring file
        fragments: The test fragments, one driver each
        repo: The repository id
        task_id: The task id, a digest of the repository and qname when
            omitted
        support: The sources of the modules the target module depends on

    Returns:
        The task. Call sites that cannot be located are skipped.

    Raises:
        FragmentParseError: A fragment cannot be normalized.
        NoTargetCall: A fragment never calls the target.
        TooManyDrivers: More fragments than `MAX_DRIVERS` were given.
    """
    decl = target.decl
    if len(fragments) > MAX_DRIVERS:
        raise TooManyDrivers(
            f"{decl.qname}: {len(fragments)} drivers, at most {MAX_DRIVERS}"
        )
    sites = []
    for caller in target.callers:
        try:
            sites.append(site_requirements(caller, decl.qname))
        except CallerkitError as e:
            logger.info(
                "site_skipped",
                target=decl.qname,
                caller=caller.qname,
                error=str(e),
            )

    patterns = group_usage_patterns(sites)
    drivers = [
        normalize_driver(
            f.text,
            decl.qname,
            imports=f.imports,
            module_qname=decl.module_qname,
            path=f"drivers/driver_{i}.py",
            covers=f.covers,
        )
        for i, f in enumerate(fragments, 1)
    ]

    flags = []
    synthesized = None
    if not target.callers:
        synthesized = synthesize_minimal_invocation(decl)
        if needs_receiver(decl):
            flags.append("receiver_placeholder")

    digest = hashlib.md5(f"{repo}\0{decl.qname}".encode()).hexdigest()[:8]
    return BenchmarkTask(
        task_id=task_id or f"{decl.qname}-{digest}",
        repo=repo,
        target=target,
        module_source=module_source,
        support=dict(support or {}),
        callers=[c.source_text for c in target.callers],
        sites=sites,
        patterns=patterns,
        sketch=behavior_sketch(patterns),
        drivers=drivers,
        nl_description=decl.docstring,
        synthesized_caller=synthesized,
        flags=flags,
    )


def reference_sanity(
    task: BenchmarkTask,
    sandbox: Optional[Sandbox] = None,
    limits: Optional[Limits] = None,
) -> SanityResult:
    """Runs every driver of a task against its reference implementation.

    Args:
        task: The task
        sandbox: The sandbox backend, a process sandbox when omitted
        limits: The per driver limits

    Returns:
        The outcome; anything but a pass rejects the task.
    """
    reference = Candidate(
        task_id=task.task_id, sample_index=0, code=task.target.decl.source_text
    )
    outcome = evaluate_candidate(task, reference, limits, sandbox)
    if outcome.status != "pass":
        logger.info(
            "reference_sanity_failed",
            task=task.task_id,
            status=outcome.status,
            driver=outcome.driver,
        )
    return SanityResult(
        task_id=task.task_id,
        status=outcome.status,
        failed_driver=outcome.driver,
        detail=outcome.reason or outcome.stderr_tail,
    )


def task_stats(tasks: Sequence[BenchmarkTask]) -> TaskStats:
    """Summarizes the callers, lines and parameters of a benchmark."""
    if not tasks:
        return TaskStats(
            tasks=0,
            callers_per_task=0.0,
            target_lines=0.0,
            caller_lines=0.0,
            params=0.0,
        )

    callers = np.array([len(t.callers) for t in tasks])
    caller_lines = [len(c.splitlines()) for t in tasks for c in t.callers]
    params = []
    for t in tasks:
        decl = t.target.decl
        count = len(decl.params)
        if decl.is_method and "staticmethod" not in decl.decorators:
            count -= 1
        params.append(max(count, 0))

    target_lines = [len(t.target.decl.source_text.splitlines()) for t in tasks]
    values, counts = np.unique(callers, return_counts=True)
    return TaskStats(
        tasks=len(tasks),
        callers_per_task=float(np.mean(callers)),
        callers_distribution={
            int(v): int(c) for v, c in zip(values, counts)
        },
        target_lines=float(np.mean(target_lines)),
        caller_lines=float(np.mean(caller_lines)) if caller_lines else 0.0,
        params=float(np.mean(params)),
    )
