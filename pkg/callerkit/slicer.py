"""Provides the caller context variants and the structural classification of
call sites.

Every variant starts from a caller snippet and the first call site on the
target inside it. Slices are syntactic and intraprocedural: the data flow
slice follows direct reads of the names bound to the call's result, killing
a name when it is reassigned, and the control flow slice looks for the
innermost structured block around the call or the first block whose
condition reads its result.
"""

import ast
import copy
import random
import re
from dataclasses import dataclass, field
from typing import (
    Dict,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
    get_args,
)

from callerkit.errors import CallerkitError
from callerkit.log import get_logger
from callerkit.models.graph import CallerRef
from callerkit.models.variant import (
    CallerVariant,
    UsageClass,
    UsageReport,
    UsageRow,
)
from callerkit.parse import (
    COMPOUND,
    DecodeError,
    FunctionNode,
    SourceSyntaxError,
    dotted_parts,
    parse_file,
    segment,
    target_names,
)
from callerkit.tokens import count_tokens
from callerkit.types import UsageLabel, VariantKind

logger = get_logger("callerkit.slicer")

# Structured blocks considered by the control flow slice
BLOCKS = (
    ast.If,
    ast.For,
    ast.AsyncFor,
    ast.While,
    ast.Try,
    ast.Match,
) + ((ast.TryStar,) if hasattr(ast, "TryStar") else ())

_DEFS = (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)


class NoCallSite(CallerkitError):
    """Raised when a caller holds no call to the target."""

    pass


class ParseFailure(CallerkitError):
    """Raised when a caller snippet does not parse."""

    pass


class NoLengthMatch(CallerkitError):
    """Raised when no pool snippet is close enough in length.

    Attributes:
        tolerance: The relative tolerance that was applied.
    """

    def __init__(self, tolerance: float, length: int):
        self.tolerance = tolerance
        super().__init__(
            f"no snippet within {tolerance:.0%} of {length} tokens"
        )


class RewriteVerificationFailure(CallerkitError):
    """Raised when a rewritten caller fails its verification."""

    pass


@dataclass
class CallContext:
    """The located call site of a target inside a caller snippet.

    Attributes:
        text: The caller snippet.
        lines: The lines of the snippet.
        func: The function holding the call.
        call: The call expression.
        statement: The innermost statement holding the call.
        in_header: Whether the call sits in a compound statement header.
        parents: The parent of every node, keyed by node id.
    """

    text: str
    lines: List[str]
    func: FunctionNode
    call: ast.Call
    statement: ast.stmt
    in_header: bool
    parents: Dict[int, ast.AST]


def short_name(target_qname: str) -> str:
    """Returns the name a target is called by.

    Constructors are called through their class name.
    """
    parts = target_qname.split(".")
    if parts[-1] == "__init__" and len(parts) > 1:
        return parts[-2]
    return parts[-1]


def _parse(text: str) -> ast.Module:
    try:
        return ast.parse(text)
    except SyntaxError as e:
        raise ParseFailure(
            f"caller does not parse: {e.msg} (line {e.lineno})"
        ) from e


def _walk_own(node: ast.AST) -> Iterator[ast.AST]:
    """Walks a function body without entering nested definitions."""
    stack = list(reversed(list(ast.iter_child_nodes(node))))
    while stack:
        current = stack.pop()
        yield current
        if isinstance(current, _DEFS):
            continue
        stack.extend(reversed(list(ast.iter_child_nodes(current))))


def _parents(tree: ast.AST) -> Dict[int, ast.AST]:
    parents = {}
    for node in ast.walk(tree):
        for child in ast.iter_child_nodes(node):
            parents[id(child)] = node
    return parents


def _is_call_to(node: ast.AST, name: str) -> bool:
    if not isinstance(node, ast.Call):
        return False
    parts = dotted_parts(node.func)
    return bool(parts) and parts[-1] == name


def calls_target(text: str, target_qname: str) -> bool:
    """Returns whether a snippet syntactically calls the target."""
    name = short_name(target_qname)
    try:
        tree = ast.parse(text)
    except SyntaxError:
        return re.search(rf"\b{re.escape(name)}\s*\(", text) is not None
    return any(_is_call_to(n, name) for n in ast.walk(tree))


def locate_call(caller: CallerRef, target_qname: str) -> CallContext:
    """Finds the first call site on the target inside a caller.

    The recorded call sites of the caller are tried first, mapped from file
    coordinates onto the snippet. When none matches, the first call by the
    target's name is used.

    Args:
        caller: The caller
        target_qname: The qname of the target

    Returns:
        The located call.

    Raises:
        ParseFailure: The caller does not parse.
        NoCallSite: The caller holds no call to the target.
    """
    text = caller.source_text
    tree = _parse(text)
    funcs = [
        n
        for n in tree.body
        if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))
    ]
    if not funcs:
        raise ParseFailure(f"{caller.qname}: snippet holds no function")

    candidates: List[Tuple[FunctionNode, ast.Call]] = [
        (f, n) for f in funcs for n in _walk_own(f) if isinstance(n, ast.Call)
    ]

    found: Optional[Tuple[FunctionNode, ast.Call]] = None
    first_line, col = caller.caller.span[0], caller.caller.col_offset
    for site in sorted(caller.sites, key=lambda s: s.location):
        wanted = (site.location[0] - first_line + 1, site.location[1] - col)
        for func, call in candidates:
            if (call.lineno, call.col_offset) == wanted:
                found = (func, call)
                break
        if found:
            break

    if found is None:
        name = short_name(target_qname)
        matching = [(f, c) for f, c in candidates if _is_call_to(c, name)]
        if matching:
            found = min(
                matching, key=lambda p: (p[1].lineno, p[1].col_offset)
            )
    if found is None:
        raise NoCallSite(f"{caller.qname} does not call {target_qname}")

    func, call = found
    parents = _parents(tree)
    node: ast.AST = call
    while not isinstance(node, ast.stmt):
        node = parents[id(node)]

    return CallContext(
        text=text,
        lines=text.splitlines(),
        func=func,
        call=call,
        statement=node,
        in_header=isinstance(node, COMPOUND),
        parents=parents,
    )


def _call_text(ctx: CallContext) -> str:
    if ctx.in_header:
        return ast.get_source_segment(ctx.text, ctx.call) or ast.unparse(
            ctx.call
        )
    return segment(ctx.lines, ctx.statement)


def result_node(ctx: CallContext) -> ast.expr:
    """Returns the expression carrying the call's result, the await of an
    awaited call."""
    parent = ctx.parents.get(id(ctx.call))
    if isinstance(parent, ast.Await):
        return parent
    return ctx.call


def bound_names(ctx: CallContext) -> Set[str]:
    """Returns the names bound to the result of the located call."""
    result = result_node(ctx)
    stmt = ctx.statement
    names: Set[str] = set()
    if isinstance(stmt, ast.Assign) and stmt.value is result:
        for target in stmt.targets:
            names.update(target_names(target))
    elif isinstance(stmt, ast.AnnAssign) and stmt.value is result:
        names.update(target_names(stmt.target))
    elif isinstance(stmt, (ast.With, ast.AsyncWith)):
        for item in stmt.items:
            if item.context_expr is result and item.optional_vars:
                names.update(target_names(item.optional_vars))

    parent = ctx.parents.get(id(result))
    if isinstance(parent, ast.NamedExpr) and parent.value is result:
        names.add(parent.target.id)  # type: ignore[attr-defined]
    return names


def flatten(body: Sequence[ast.stmt]) -> Iterator[ast.stmt]:
    """Yields statements in source order, skipping nested definitions."""
    for stmt in body:
        yield stmt
        if isinstance(stmt, _DEFS):
            continue
        for field in ("body", "orelse", "finalbody"):
            yield from flatten(getattr(stmt, field, None) or [])
        for handler in getattr(stmt, "handlers", None) or []:
            yield from flatten(handler.body)
        for case in getattr(stmt, "cases", None) or []:
            yield from flatten(case.body)


def header_nodes(stmt: ast.stmt) -> List[ast.AST]:
    """Returns the nodes a statement owns, excluding nested statements."""
    if isinstance(stmt, (ast.If, ast.While)):
        return [stmt.test]
    elif isinstance(stmt, (ast.For, ast.AsyncFor)):
        return [stmt.target, stmt.iter]
    elif isinstance(stmt, (ast.With, ast.AsyncWith)):
        return list(stmt.items)
    elif isinstance(stmt, ast.Match):
        return [stmt.subject]
    elif isinstance(stmt, _DEFS):
        return list(stmt.decorator_list)
    elif isinstance(stmt, COMPOUND):
        return [h.type for h in getattr(stmt, "handlers", []) if h.type]
    return [stmt]


def _names(nodes: Iterable[ast.AST]) -> Tuple[Set[str], Set[str]]:
    reads: Set[str] = set()
    stores: Set[str] = set()
    for node in nodes:
        for child in ast.walk(node):
            if isinstance(child, ast.Name):
                if isinstance(child.ctx, ast.Load):
                    reads.add(child.id)
                else:
                    stores.add(child.id)
    return reads, stores


def direct_uses(ctx: CallContext, names: Set[str]) -> List[ast.stmt]:
    """Returns the statements after the call reading a bound name.

    Statements are scanned in source order. A name stops being tracked once
    a statement stores to it.
    """
    order = list(flatten(ctx.func.body))
    start = next(i for i, s in enumerate(order) if s is ctx.statement)
    live = set(names)
    uses = []
    for stmt in order[start + 1 :]:  # noqa: E203
        if not live:
            break
        reads, stores = _names(header_nodes(stmt))
        if reads & live:
            uses.append(stmt)
        live -= stores
    return uses


def _contains(outer: ast.AST, inner: ast.AST) -> bool:
    start = (outer.lineno, outer.col_offset)  # type: ignore[attr-defined]
    end = (
        outer.end_lineno,  # type: ignore[attr-defined]
        outer.end_col_offset,  # type: ignore[attr-defined]
    )
    return (
        start <= (inner.lineno, inner.col_offset)  # type: ignore
        and (inner.end_lineno, inner.end_col_offset) <= end  # type: ignore
    )


def enclosing_block(ctx: CallContext) -> Optional[ast.stmt]:
    """Returns the innermost structured block enclosing the call.

    An `elif` branch resolves to the `if` statement it belongs to.
    """
    node: ast.AST = ctx.call
    block: Optional[ast.stmt] = None
    while node is not ctx.func:
        node = ctx.parents[id(node)]
        if isinstance(node, BLOCKS):
            block = node
            break
    while isinstance(block, ast.If):
        parent = ctx.parents.get(id(block))
        line = ctx.lines[block.lineno - 1].lstrip()
        if (
            isinstance(parent, ast.If)
            and parent.orelse == [block]
            and line.startswith("elif")
        ):
            block = parent
        else:
            break
    return block


def feeding_block(
    ctx: CallContext, uses: Sequence[ast.stmt]
) -> Optional[ast.stmt]:
    """Returns the first block whose header reads the call's result."""
    for stmt in uses:
        if isinstance(stmt, BLOCKS):
            return stmt
    return None


def signature_only(caller: CallerRef) -> CallerVariant:
    """Keeps only the caller's header, decorators excluded."""
    return CallerVariant(
        kind="signature_only",
        text=caller.caller.header_text,
        provenance=caller.qname,
    )


def full_caller(caller: CallerRef) -> CallerVariant:
    return CallerVariant(
        kind="full", text=caller.source_text, provenance=caller.qname
    )


def call_site_only(caller: CallerRef, target_qname: str) -> CallerVariant:
    """Keeps only the statement invoking the target.

    A call in a compound statement header is emitted as the bare call
    expression.

    Raises:
        NoCallSite: The caller holds no call to the target.
    """
    ctx = locate_call(caller, target_qname)
    return CallerVariant(
        kind="call_site_only", text=_call_text(ctx), provenance=caller.qname
    )


def data_flow_slice(caller: CallerRef, target_qname: str) -> CallerVariant:
    """Keeps the call statement and the direct uses of its result.

    Uses inside an already emitted block are not repeated.

    Raises:
        NoCallSite: The caller holds no call to the target.
    """
    ctx = locate_call(caller, target_qname)
    names = bound_names(ctx)
    pieces = [_call_text(ctx)]
    emitted: List[ast.stmt] = []
    for stmt in direct_uses(ctx, names) if names else []:
        if any(_contains(e, stmt) for e in emitted):
            continue
        emitted.append(stmt)
        pieces.append(segment(ctx.lines, stmt))

    return CallerVariant(
        kind="data_flow", text="\n".join(pieces), provenance=caller.qname
    )


def control_flow_slice(
    caller: CallerRef, target_qname: str
) -> CallerVariant:
    """Keeps the structured block relating to the call.

    The innermost block enclosing the call wins. Otherwise the call
    statement is kept with the first block branching on its result. When
    neither exists the full caller is used and the fallback is flagged.

    Raises:
        NoCallSite: The caller holds no call to the target.
    """
    ctx = locate_call(caller, target_qname)
    block = enclosing_block(ctx)
    if block is not None:
        text = segment(ctx.lines, block)
    else:
        names = bound_names(ctx)
        feed = feeding_block(ctx, direct_uses(ctx, names) if names else [])
        if feed is None:
            logger.debug(
                "control_flow_fallback",
                caller=caller.qname,
                target=target_qname,
            )
            return CallerVariant(
                kind="control_flow",
                text=caller.source_text,
                fallback_used=True,
                provenance=caller.qname,
            )
        text = _call_text(ctx) + "\n" + segment(ctx.lines, feed)

    return CallerVariant(
        kind="control_flow", text=text, provenance=caller.qname
    )


def length_matched_irrelevant(
    caller: CallerRef,
    pool: Sequence[CallerRef],
    target_qname: str,
    tolerance: float = 0.1,
) -> CallerVariant:
    """Replaces the caller with an unrelated snippet of similar length.

    Args:
        caller: The caller to match
        pool: Candidate snippets, in a stable order
        target_qname: The qname of the target
        tolerance: The relative token length tolerance

    Returns:
        The pool snippet nearest in token count, the first one on ties.

    Raises:
        NoLengthMatch: No snippet lies within the tolerance.
    """
    length = count_tokens(caller.source_text)
    best: Optional[Tuple[int, CallerRef]] = None
    for ref in pool:
        if ref.qname == caller.qname or calls_target(
            ref.source_text, target_qname
        ):
            continue
        diff = abs(count_tokens(ref.source_text) - length)
        if diff <= tolerance * length and (best is None or diff < best[0]):
            best = (diff, ref)

    if best is None:
        raise NoLengthMatch(tolerance, length)

    return CallerVariant(
        kind="length_matched_irrelevant",
        text=best[1].source_text,
        provenance=caller.qname,
        donor=best[1].qname,
    )


def _protected(tree: ast.AST, target_name: str) -> Set[str]:
    names = {target_name}
    for node in ast.walk(tree):
        if isinstance(node, (ast.Import, ast.ImportFrom)):
            for alias in node.names:
                names.add(alias.asname or alias.name.split(".")[0])
        elif isinstance(node, (ast.Global, ast.Nonlocal)):
            names.update(node.names)
        elif isinstance(node, ast.keyword) and node.arg:
            # Keyword arguments name the callee's parameters
            names.add(node.arg)
    return names


_COMPREHENSIONS = (ast.ListComp, ast.SetComp, ast.GeneratorExp, ast.DictComp)


@dataclass
class _Scope:
    index: int
    kind: str
    parent: Optional["_Scope"]
    bound: Set[str] = field(default_factory=set)


@dataclass
class _Occurrence:
    node: ast.AST
    attr: str
    scope: _Scope

    @property
    def name(self) -> str:
        return getattr(self.node, self.attr)

    @property
    def position(self) -> Tuple[int, int]:
        return (
            getattr(self.node, "lineno", 0),
            getattr(self.node, "col_offset", 0),
        )


class _Binder:
    """Records every name occurrence along with the scope it sits in.

    Scopes follow Python's rules: defaults, decorators, annotations and the
    first iterable of a comprehension belong to the enclosing scope, and an
    assignment expression inside a comprehension binds in the nearest
    enclosing function.
    """

    def __init__(self, tree: ast.AST):
        self.scopes: List[_Scope] = []
        self.occurrences: List[_Occurrence] = []
        self.visit(tree, self._open("module", None))

    def _open(self, kind: str, parent: Optional[_Scope]) -> _Scope:
        scope = _Scope(len(self.scopes), kind, parent)
        self.scopes.append(scope)
        return scope

    def _bind(
        self,
        scope: _Scope,
        node: ast.AST,
        attr: str,
        owner: Optional[_Scope] = None,
    ) -> None:
        (owner or scope).bound.add(getattr(node, attr))
        self.occurrences.append(_Occurrence(node, attr, scope))

    def _visit_all(
        self, nodes: Iterable[Optional[ast.AST]], scope: _Scope
    ) -> None:
        for node in nodes:
            if node is not None:
                self.visit(node, scope)

    def _signature(
        self, args: ast.arguments, outer: _Scope, inner: _Scope
    ) -> None:
        self._visit_all(args.defaults, outer)
        self._visit_all(args.kw_defaults, outer)
        every = [
            *args.posonlyargs,
            *args.args,
            args.vararg,
            *args.kwonlyargs,
            args.kwarg,
        ]
        for arg in every:
            if arg is None:
                continue
            if arg.annotation is not None:
                self.visit(arg.annotation, outer)
            self._bind(inner, arg, "arg")

    def visit(self, node: ast.AST, scope: _Scope) -> None:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            self._bind(scope, node, "name")
            self._visit_all(node.decorator_list, scope)
            if node.returns is not None:
                self.visit(node.returns, scope)
            inner = self._open("function", scope)
            self._signature(node.args, scope, inner)
            self._visit_all(node.body, inner)
        elif isinstance(node, ast.Lambda):
            inner = self._open("function", scope)
            self._signature(node.args, scope, inner)
            self.visit(node.body, inner)
        elif isinstance(node, ast.ClassDef):
            self._bind(scope, node, "name")
            self._visit_all(node.decorator_list, scope)
            self._visit_all(node.bases, scope)
            self._visit_all(node.keywords, scope)
            self._visit_all(node.body, self._open("class", scope))
        elif isinstance(node, _COMPREHENSIONS):
            self.visit(node.generators[0].iter, scope)
            inner = self._open("comprehension", scope)
            for i, gen in enumerate(node.generators):
                self.visit(gen.target, inner)
                if i:
                    self.visit(gen.iter, inner)
                self._visit_all(gen.ifs, inner)
            if isinstance(node, ast.DictComp):
                self._visit_all([node.key, node.value], inner)
            else:
                self.visit(node.elt, inner)
        elif isinstance(node, ast.NamedExpr):
            owner = scope
            while owner.kind == "comprehension" and owner.parent:
                owner = owner.parent
            self._bind(scope, node.target, "id", owner)
            self.visit(node.value, scope)
        elif isinstance(node, ast.Name):
            if isinstance(node.ctx, ast.Load):
                self.occurrences.append(_Occurrence(node, "id", scope))
            else:
                self._bind(scope, node, "id")
        else:
            if isinstance(node, (ast.ExceptHandler, ast.MatchAs)):
                if node.name:
                    self._bind(scope, node, "name")
            elif isinstance(node, ast.MatchStar) and node.name:
                self._bind(scope, node, "name")
            elif isinstance(node, ast.MatchMapping) and node.rest:
                self._bind(scope, node, "rest")
            self._visit_all(ast.iter_child_nodes(node), scope)


def _resolve(scope: _Scope, name: str) -> Optional[_Scope]:
    """Finds the scope a name refers to, None for globals and builtins.

    Class bodies are only visible to their own statements.
    """
    current: Optional[_Scope] = scope
    while current is not None:
        visible = current is scope or current.kind != "class"
        if visible and name in current.bound:
            return current
        current = current.parent
    return None


def _bindings(
    tree: ast.AST, target_name: str
) -> List[Tuple[_Occurrence, Tuple[int, str]]]:
    """Pairs every renameable occurrence with the binding it refers to.

    A binding is keyed by its scope index and name, so the same name bound
    in two scopes yields two bindings.
    """
    protected = _protected(tree, target_name)
    found = []
    for occurrence in _Binder(tree).occurrences:
        name = occurrence.name
        if name in protected:
            continue
        owner = _resolve(occurrence.scope, name)
        if owner is not None:
            found.append((occurrence, (owner.index, name)))
    return found


def _rename_order(tree: ast.AST, target_name: str) -> List[Tuple[int, str]]:
    ordered = sorted(
        _bindings(tree, target_name), key=lambda b: b[0].position
    )
    order: List[Tuple[int, str]] = []
    for _, key in ordered:
        if key not in order:
            order.append(key)
    return order


def _identifiers(tree: ast.AST) -> Set[str]:
    found: Set[str] = set()
    for node in ast.walk(tree):
        for attr in ("id", "arg", "attr", "name", "asname", "rest"):
            value = getattr(node, attr, None)
            if isinstance(value, str):
                found.add(value)
    return found


def _renamed(
    tree: ast.AST, target_name: str, mapping: Dict[Tuple[int, str], str]
) -> ast.AST:
    renamed = copy.deepcopy(tree)
    for occurrence, key in _bindings(renamed, target_name):
        if key in mapping:
            setattr(occurrence.node, occurrence.attr, mapping[key])
    return renamed


def normalized_dump(tree: ast.AST, target_name: str) -> str:
    """Dumps a tree with every local binding replaced positionally."""
    order = _rename_order(tree, target_name)
    mapping = {key: f"_{i}" for i, key in enumerate(order)}
    return ast.dump(_renamed(tree, target_name, mapping))


def _call_shapes(
    tree: ast.AST, name: str
) -> List[Tuple[int, Tuple[Optional[str], ...]]]:
    shapes = []
    for node in ast.walk(tree):
        if _is_call_to(node, name):
            call: ast.Call = node  # type: ignore[assignment]
            shapes.append(
                (len(call.args), tuple(k.arg for k in call.keywords))
            )
    return shapes


def semantics_preserving_perturb(
    caller: CallerRef, seed: int, target_qname: str
) -> CallerVariant:
    """Alpha renames the caller's local names and strips its comments.

    Every binding in the caller gets a fresh name `v0`, `v1`, ... skipping
    identifiers already present. Names are resolved per scope, so a name
    bound in a nested function is renamed there while reads of the global
    of the same name elsewhere are kept. With seed 0 the bindings are
    numbered in order of first occurrence, any other seed shuffles the
    numbering. The target's name, imported and global names, keyword
    argument names, attributes and literals are kept.

    Args:
        caller: The caller to rewrite
        seed: The seed of the numbering
        target_qname: The qname of the target

    Returns:
        The rewritten caller.

    Raises:
        ParseFailure: The caller does not parse.
        RewriteVerificationFailure: The output does not reparse, changes
            the calls on the target or is not alpha equivalent.
    """
    name = short_name(target_qname)
    tree = _parse(caller.source_text)
    order = _rename_order(tree, name)
    existing = _identifiers(tree)

    fresh: List[str] = []
    counter = 0
    while len(fresh) < len(order):
        candidate = f"v{counter}"
        counter += 1
        if candidate not in existing:
            fresh.append(candidate)

    slots = list(range(len(order)))
    if seed != 0:
        random.Random(seed).shuffle(slots)
    mapping = {n: fresh[slots[i]] for i, n in enumerate(order)}
    text = ast.unparse(_renamed(tree, name, mapping))

    try:
        rewritten = ast.parse(text)
    except SyntaxError as e:
        raise RewriteVerificationFailure(f"output does not parse: {e}")
    if _call_shapes(rewritten, name) != _call_shapes(tree, name):
        raise RewriteVerificationFailure("calls on the target changed")
    if normalized_dump(rewritten, name) != normalized_dump(tree, name):
        raise RewriteVerificationFailure("output is not alpha equivalent")

    return CallerVariant(
        kind="semantics_preserving", text=text, provenance=caller.qname
    )


def classify_call_site(caller: CallerRef, target_qname: str) -> UsageClass:
    """Classifies the first call site on the target by control structure.

    The primary class follows the precedence enclosed by a block, then
    result feeding a block, then unrelated control only, then no structured
    control.

    Raises:
        NoCallSite: The caller holds no call to the target.
    """
    ctx = locate_call(caller, target_qname)
    names = bound_names(ctx)
    uses = direct_uses(ctx, names) if names else []
    enclosed = enclosing_block(ctx) is not None
    feeds = feeding_block(ctx, uses) is not None

    related = [ctx.statement, *uses]
    unrelated = any(
        isinstance(stmt, BLOCKS)
        and not any(
            r is stmt or _contains(stmt, r) or _contains(r, stmt)
            for r in related
        )
        for stmt in flatten(ctx.func.body)
    )

    if enclosed:
        primary: UsageLabel = "enclosed_by_block"
    elif feeds:
        primary = "return_feeds_block"
    elif unrelated:
        primary = "unrelated_control_only"
    else:
        primary = "no_structured_control"

    return UsageClass(
        enclosed_by_block=enclosed,
        return_feeds_block=feeds,
        unrelated_control_only=unrelated,
        no_structured_control=not (enclosed or feeds or unrelated),
        primary=primary,
    )


def usage_report(items: Iterable[Tuple[str, UsageClass]]) -> UsageReport:
    """Aggregates classifications over (task id, class) pairs.

    Returns:
        Per class, the share of instances whose primary class it is and the
        share of tasks with at least one such instance.
    """
    counts: Dict[str, int] = {}
    tasks_by_label: Dict[str, Set[str]] = {}
    tasks: Set[str] = set()
    total = 0
    for task_id, usage in items:
        total += 1
        tasks.add(task_id)
        counts[usage.primary] = counts.get(usage.primary, 0) + 1
        tasks_by_label.setdefault(usage.primary, set()).add(task_id)

    rows = []
    for label in get_args(UsageLabel):
        n = counts.get(label, 0)
        seen = len(tasks_by_label.get(label, ()))
        rows.append(
            UsageRow(
                label=label,
                instances=n,
                instance_pct=100.0 * n / total if total else 0.0,
                task_pct=100.0 * seen / len(tasks) if tasks else 0.0,
            )
        )
    return UsageReport(instances=total, tasks=len(tasks), rows=rows)


def caller_from_source(
    text: str, target_name: Optional[str] = None
) -> CallerRef:
    """Builds a caller from a free standing snippet.

    The caller is the first top level function calling `target_name`, or
    the first top level function. Its source is the whole snippet so that
    call sites map one to one onto it.

    Raises:
        ParseFailure: The snippet does not parse or holds no function.
    """
    try:
        facts = parse_file(text, "snippet.py")
    except (SourceSyntaxError, DecodeError) as e:
        raise ParseFailure(str(e)) from e

    top = [
        f
        for f in facts.functions
        if f.enclosing_class is None and f.enclosing_function is None
    ]
    if not top:
        raise ParseFailure("snippet holds no function")

    chosen, sites = top[0], []
    if target_name:
        for decl in top:
            found = [
                c
                for c in facts.calls
                if c.caller_qname == decl.qname
                and c.callee_name == target_name
            ]
            if found:
                chosen, sites = decl, found
                break

    decl = chosen.copy(
        update={
            "source_text": text,
            "span": (1, max(1, len(text.splitlines()))),
            "col_offset": 0,
        }
    )
    return CallerRef(caller=decl, sites=sites)


def make_variant(
    kind: VariantKind,
    caller: CallerRef,
    target_qname: str,
    seed: int = 0,
    pool: Optional[Sequence[CallerRef]] = None,
    tolerance: float = 0.1,
) -> CallerVariant:
    """Produces a variant of the given kind.

    Raises:
        CallerkitError: The variant cannot be produced for this caller.
    """
    if kind == "signature_only":
        return signature_only(caller)
    elif kind == "call_site_only":
        return call_site_only(caller, target_qname)
    elif kind == "data_flow":
        return data_flow_slice(caller, target_qname)
    elif kind == "control_flow":
        return control_flow_slice(caller, target_qname)
    elif kind == "length_matched_irrelevant":
        return length_matched_irrelevant(
            caller, pool or [], target_qname, tolerance
        )
    elif kind == "semantics_preserving":
        return semantics_preserving_perturb(caller, seed, target_qname)
    return full_caller(caller)
