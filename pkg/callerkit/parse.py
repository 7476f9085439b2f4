"""Provides the parser turning one source file into normalized syntax facts.

The parser walks the module's syntax tree once, collecting every function
(methods and nested functions included), class, import binding, top level
global and call site. Qualified names follow the module's dotted name, with
functions nested in other functions living under a `<locals>` segment.
"""

import ast
import io
import tokenize
from pathlib import PurePosixPath
from typing import Dict, List, Optional, Tuple, Union

from callerkit.errors import CallerkitError
from callerkit.log import get_logger
from callerkit.models.source import (
    CallSite,
    ClassDecl,
    FileFacts,
    FunctionDecl,
    GlobalVar,
    ImportBinding,
    Param,
    StarImport,
)

logger = get_logger("callerkit.parse")

FunctionNode = Union[ast.FunctionDef, ast.AsyncFunctionDef]

# Statements whose header may hold a call but which are not simple statements
COMPOUND = (
    ast.If,
    ast.For,
    ast.AsyncFor,
    ast.While,
    ast.With,
    ast.AsyncWith,
    ast.Try,
    ast.FunctionDef,
    ast.AsyncFunctionDef,
    ast.ClassDef,
    ast.Match,
) + ((ast.TryStar,) if hasattr(ast, "TryStar") else ())


class SourceSyntaxError(CallerkitError):
    """Raised when a source file is not syntactically valid."""

    def __init__(self, module_path: str, line: Optional[int], msg: str):
        self.module_path = module_path
        self.line = line
        super().__init__(f"{module_path}:{line}: {msg}")


class DecodeError(CallerkitError):
    """Raised when a source file is not decodable text."""

    pass


def module_qname_for(module_path: str) -> str:
    """Derives the dotted module name from a repository relative path.

    Args:
        module_path: A path such as `pkg/sub/mod.py`

    Returns:
        The dotted name, `pkg.sub.mod`, with a trailing `__init__` removed.
    """
    parts = list(PurePosixPath(module_path.replace("\\", "/")).parts)
    if parts and parts[-1].endswith(".py"):
        parts[-1] = parts[-1][:-3]
    if len(parts) > 1 and parts[-1] == "__init__":
        parts = parts[:-1]

    return ".".join(p for p in parts if p not in ("", "."))


def decode_source(source: Union[str, bytes], module_path: str) -> str:
    """Decodes raw file content, honoring PEP 263 coding cookies.

    Raises:
        DecodeError: The content is binary or undecodable.
    """
    if isinstance(source, bytes):
        if b"\x00" in source:
            raise DecodeError(f"{module_path}: binary content")
        try:
            encoding, _ = tokenize.detect_encoding(io.BytesIO(source).readline)
            text = source.decode(encoding)
        except (SyntaxError, LookupError, UnicodeDecodeError) as e:
            raise DecodeError(f"{module_path}: {e}") from e
        return text[1:] if text.startswith("\ufeff") else text

    if "\x00" in source:
        raise DecodeError(f"{module_path}: binary content")
    return source


def dotted_parts(node: ast.expr) -> List[str]:
    """Returns the dotted chain of a name or attribute expression.

    A chain rooted at `super()` keeps `super()` as its first part. Any other
    expression yields an empty list.
    """
    parts: List[str] = []
    while isinstance(node, ast.Attribute):
        parts.append(node.attr)
        node = node.value
    if isinstance(node, ast.Name):
        parts.append(node.id)
    elif (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id == "super"
        and not node.args
        and not node.keywords
    ):
        parts.append("super()")
    else:
        return []

    return list(reversed(parts))


def dedent_lines(lines: List[str], col: int) -> List[str]:
    """Strips `col` leading characters from lines that are indented by
    whitespace; lines that are not are kept as written."""
    out = []
    for line in lines:
        if line[:col].strip() == "":
            out.append(line[col:])
        else:
            out.append(line)
    return out


def segment(lines: List[str], node: ast.AST, col: Optional[int] = None) -> str:
    """Returns the dedented source lines spanned by a node."""
    start, end = node.lineno, node.end_lineno or node.lineno
    chunk = lines[start - 1 : end]
    chunk = dedent_lines(chunk, node.col_offset if col is None else col)
    return "\n".join(chunk).rstrip()


def header_end(text: str) -> int:
    """Returns the offset just past the colon closing a def header.

    Args:
        text: Source starting at the `def` (or `async def`) keyword

    Returns:
        The character offset in `text`.
    """
    line_offsets = [0]
    for line in text.splitlines(keepends=True):
        line_offsets.append(line_offsets[-1] + len(line))

    depth = 0
    seen_def = False
    tokens = tokenize.generate_tokens(io.StringIO(text).readline)
    try:
        for tok in tokens:
            if tok.type == tokenize.NAME and tok.string == "def":
                seen_def = True
            elif tok.type == tokenize.OP and seen_def:
                if tok.string in "([{":
                    depth += 1
                elif tok.string in ")]}":
                    depth -= 1
                elif tok.string == ":" and depth == 0:
                    row, col = tok.end
                    return line_offsets[row - 1] + col
    except (tokenize.TokenError, IndentationError):
        pass

    return len(text.splitlines()[0]) if text else 0


def _default_texts(
    source: str, args: ast.arguments
) -> Tuple[List[Optional[str]], List[Optional[str]]]:
    positional = args.posonlyargs + args.args
    pos_defaults: List[Optional[str]] = [None] * (
        len(positional) - len(args.defaults)
    ) + [_text(source, d) for d in args.defaults]
    kw_defaults = [
        _text(source, d) if d is not None else None for d in args.kw_defaults
    ]
    return pos_defaults, kw_defaults


def _text(source: str, node: Optional[ast.AST]) -> Optional[str]:
    if node is None:
        return None
    text = ast.get_source_segment(source, node)
    return text if text is not None else ast.unparse(node)


def params_of(source: str, node: FunctionNode) -> List[Param]:
    """Returns the parameters of a function in signature order."""
    args = node.args
    pos_defaults, kw_defaults = _default_texts(source, args)
    params: List[Param] = []
    for i, a in enumerate(args.posonlyargs + args.args):
        params.append(
            Param(
                name=a.arg,
                annotation=_text(source, a.annotation),
                default=pos_defaults[i],
                kind="positional_only"
                if i < len(args.posonlyargs)
                else "positional",
            )
        )
    if args.vararg:
        params.append(
            Param(
                name=args.vararg.arg,
                annotation=_text(source, args.vararg.annotation),
                kind="var_positional",
            )
        )
    for a, default in zip(args.kwonlyargs, kw_defaults):
        params.append(
            Param(
                name=a.arg,
                annotation=_text(source, a.annotation),
                default=default,
                kind="keyword_only",
            )
        )
    if args.kwarg:
        params.append(
            Param(
                name=args.kwarg.arg,
                annotation=_text(source, args.kwarg.annotation),
                kind="var_keyword",
            )
        )

    return params


def decorator_name(node: ast.expr) -> str:
    target = node.func if isinstance(node, ast.Call) else node
    parts = dotted_parts(target)
    return ".".join(parts) if parts else ast.unparse(target)


def resolve_relative(
    module_qname: str, is_package: bool, level: int, module: Optional[str]
) -> str:
    """Resolves a relative import against the importing module.

    Args:
        module_qname: The dotted name of the importing module
        is_package: Whether the importing module is a package `__init__`
        level: The number of leading dots
        module: The module named after the dots, if any

    Returns:
        The absolute dotted module name. Imports climbing above the
        repository root keep only the named part.
    """
    if level == 0:
        return module or ""

    package = module_qname.split(".") if module_qname else []
    if not is_package:
        package = package[:-1]
    drop = level - 1
    if drop > len(package):
        logger.debug(
            "relative_import_above_root", module=module_qname, level=level
        )
        return module or ""
    base = package[: len(package) - drop]
    if module:
        base.append(module)

    return ".".join(base)


class _Scope:
    """A function or class scope being collected."""

    def __init__(self, kind: str, qname: str, node: ast.AST):
        self.kind = kind
        self.qname = qname
        self.node = node


class _FactCollector(ast.NodeVisitor):
    def __init__(self, source: str, module_path: str, module_qname: str):
        self.source = source
        self.lines = source.splitlines()
        self.module_path = module_path
        self.module_qname = module_qname
        self.is_package = module_path.endswith("__init__.py")
        self.scopes: List[_Scope] = []
        self.statements: List[ast.stmt] = []
        self.functions: Dict[str, FunctionDecl] = {}
        self.classes: Dict[str, ClassDecl] = {}
        self.imports: List[ImportBinding] = []
        self.star_imports: List[StarImport] = []
        self.calls: List[Tuple[int, CallSite]] = []
        self.nodes: Dict[str, int] = {}
        self.duplicates: List[str] = []

    # Scope helpers

    def _qualify(self, name: str) -> str:
        if not self.scopes:
            prefix = self.module_qname
        elif self.scopes[-1].kind == "function":
            prefix = f"{self.scopes[-1].qname}.<locals>"
        else:
            prefix = self.scopes[-1].qname
        return f"{prefix}.{name}" if prefix else name

    def _enclosing(self, kind: str) -> Optional[_Scope]:
        for scope in reversed(self.scopes):
            if scope.kind == kind:
                return scope
        return None

    def _scope_name(self) -> str:
        fn = self._enclosing("function")
        return fn.qname if fn else ""

    # Visitors

    def visit(self, node: ast.AST):
        if isinstance(node, ast.stmt):
            self.statements.append(node)
            try:
                return super().visit(node)
            finally:
                self.statements.pop()
        return super().visit(node)

    def visit_FunctionDef(self, node: FunctionNode) -> None:
        for decorator in node.decorator_list:
            self.visit(decorator)
        for default in node.args.defaults + [
            d for d in node.args.kw_defaults if d is not None
        ]:
            self.visit(default)

        qname = self._qualify(node.name)
        self._declare_function(node, qname)
        self.nodes[qname] = id(node)

        self.scopes.append(_Scope("function", qname, node))
        for stmt in node.body:
            self.visit(stmt)
        self.scopes.pop()

    visit_AsyncFunctionDef = visit_FunctionDef

    def visit_ClassDef(self, node: ast.ClassDef) -> None:
        for decorator in node.decorator_list:
            self.visit(decorator)
        for base in node.bases:
            self.visit(base)

        qname = self._qualify(node.name)
        fn = self._enclosing("function")
        methods = [
            f"{qname}.{stmt.name}"
            for stmt in node.body
            if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef))
        ]
        if qname in self.classes:
            self.duplicates.append(qname)
        self.classes[qname] = ClassDecl(
            qname=qname,
            name=node.name,
            bases=[
                ".".join(dotted_parts(b)) or ast.unparse(b)
                for b in node.bases
            ],
            methods=list(dict.fromkeys(methods)),
            span=(node.lineno, node.end_lineno or node.lineno),
            enclosing_function=fn.qname if fn else None,
        )

        self.scopes.append(_Scope("class", qname, node))
        for stmt in node.body:
            self.visit(stmt)
        self.scopes.pop()

    def visit_Import(self, node: ast.Import) -> None:
        for alias in node.names:
            if alias.asname:
                local, target = alias.asname, alias.name
            else:
                local = alias.name.split(".")[0]
                target = local
            self.imports.append(
                ImportBinding(
                    local_alias=local,
                    target_qname=target,
                    kind="module",
                    scope=self._scope_name(),
                    line=node.lineno,
                )
            )

    def visit_ImportFrom(self, node: ast.ImportFrom) -> None:
        base = resolve_relative(
            self.module_qname, self.is_package, node.level, node.module
        )
        for alias in node.names:
            if alias.name == "*":
                if base:
                    self.star_imports.append(
                        StarImport(
                            module=base,
                            scope=self._scope_name(),
                            line=node.lineno,
                        )
                    )
                continue
            target = f"{base}.{alias.name}" if base else alias.name
            self.imports.append(
                ImportBinding(
                    local_alias=alias.asname or alias.name,
                    target_qname=target,
                    kind="symbol",
                    scope=self._scope_name(),
                    line=node.lineno,
                )
            )

    def visit_Call(self, node: ast.Call) -> None:
        fn = self._enclosing("function")
        if fn is not None and self.statements:
            site = self._call_site(node, fn.qname)
            self.calls.append((id(fn.node), site))
        self.generic_visit(node)

    # Builders

    def _call_site(self, node: ast.Call, caller: str) -> CallSite:
        stmt = self.statements[-1]
        compound = isinstance(stmt, COMPOUND)
        if compound:
            enclosing = _text(self.source, node) or ""
        else:
            enclosing = segment(self.lines, stmt)

        parts = dotted_parts(node.func)
        args = [_text(self.source, a) or "" for a in node.args]
        for kw in node.keywords:
            value = _text(self.source, kw.value) or ""
            args.append(f"{kw.arg}={value}" if kw.arg else f"**{value}")

        return CallSite(
            caller_qname=caller,
            callee_expr_text=ast.get_source_segment(self.source, node)
            or ast.unparse(node),
            func_parts=parts,
            receiver_chain=".".join(parts[:-1]),
            location=(node.lineno, node.col_offset),
            end_location=(
                node.end_lineno or node.lineno,
                node.end_col_offset or node.col_offset,
            ),
            enclosing_statement_text=enclosing,
            in_compound_header=compound,
            arg_texts=args,
            positional_count=len(node.args),
            keywords=[kw.arg or "**" for kw in node.keywords],
        )

    def _declare_function(self, node: FunctionNode, qname: str) -> None:
        start, end = node.lineno, node.end_lineno or node.lineno
        source_text = "\n".join(
            dedent_lines(self.lines[start - 1 : end], node.col_offset)
        ).rstrip()
        cut = header_end(source_text)
        header = source_text[:cut]
        first, _, remainder = source_text[cut:].partition("\n")
        if first.strip() == "" or first.strip().startswith("#"):
            indent = node.body[0].col_offset - node.col_offset
            body = "\n".join(dedent_lines(remainder.splitlines(), indent))
        else:
            body = source_text[cut:].strip()

        cls = self.scopes[-1] if (
            self.scopes and self.scopes[-1].kind == "class"
        ) else None
        outer = self._enclosing("function")
        locals_, nested, constructed, declared = _scope_names(node)

        if qname in self.functions:
            self.duplicates.append(qname)
            logger.debug(
                "duplicate_definition", file=self.module_path, qname=qname
            )
            del self.functions[qname]
        self.functions[qname] = FunctionDecl(
            qname=qname,
            name=node.name,
            module_qname=self.module_qname,
            module_path=self.module_path,
            header_text=header,
            body_text=body,
            source_text=source_text,
            docstring=ast.get_docstring(node, clean=False),
            span=(start, end),
            col_offset=node.col_offset,
            decorator_line=min(d.lineno for d in node.decorator_list)
            if node.decorator_list
            else None,
            params=params_of(self.source, node),
            decorators=[decorator_name(d) for d in node.decorator_list],
            is_method=cls is not None,
            is_async=isinstance(node, ast.AsyncFunctionDef),
            enclosing_class=cls.qname if cls else None,
            enclosing_function=outer.qname if outer else None,
            local_names=locals_,
            nested={name: f"{qname}.<locals>.{name}" for name in nested},
            constructed=constructed,
            declared_global=declared,
        )


def _own_nodes(node: FunctionNode):
    """Yields the nodes of a function's own scope, not descending into
    nested functions, lambdas or classes."""
    stack: List[ast.AST] = list(reversed(node.body))
    while stack:
        current = stack.pop()
        yield current
        if isinstance(
            current,
            (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef, ast.Lambda),
        ):
            continue
        stack.extend(reversed(list(ast.iter_child_nodes(current))))


def _scope_names(
    node: FunctionNode,
) -> Tuple[List[str], List[str], Dict[str, str], List[str]]:
    """Collects the names bound in a function's own scope.

    Returns:
        The local names (parameters first), the names of nested functions and
        classes, the constructor-typed locals and the names declared global or
        nonlocal.
    """
    args = node.args
    names: List[str] = [
        a.arg for a in args.posonlyargs + args.args + args.kwonlyargs
    ]
    if args.vararg:
        names.append(args.vararg.arg)
    if args.kwarg:
        names.append(args.kwarg.arg)

    nested: List[str] = []
    declared: List[str] = []
    assignments: Dict[str, List[Optional[str]]] = {}
    for child in _own_nodes(node):
        if isinstance(child, (ast.Global, ast.Nonlocal)):
            declared.extend(child.names)
        elif isinstance(
            child, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)
        ):
            nested.append(child.name)
        elif isinstance(child, ast.Name) and isinstance(
            child.ctx, (ast.Store, ast.Del)
        ):
            names.append(child.id)
        elif isinstance(child, ast.ExceptHandler) and child.name:
            names.append(child.name)
        elif isinstance(child, (ast.Import, ast.ImportFrom)):
            for alias in child.names:
                if alias.name != "*":
                    names.append(
                        alias.asname or alias.name.split(".")[0]
                    )

        if isinstance(child, ast.Assign):
            for target in child.targets:
                _record_assignment(assignments, target, child.value)
        elif isinstance(child, ast.AnnAssign) and child.value is not None:
            _record_assignment(assignments, child.target, child.value)
        elif isinstance(child, (ast.AugAssign, ast.For, ast.AsyncFor)):
            _record_assignment(assignments, child.target, None)
        elif isinstance(child, ast.withitem) and child.optional_vars:
            _record_assignment(assignments, child.optional_vars, None)
        elif isinstance(child, ast.NamedExpr):
            _record_assignment(assignments, child.target, child.value)

    constructed = {
        name: values[0]
        for name, values in assignments.items()
        if len(values) == 1 and values[0] is not None
    }
    declared_set = set(declared)
    locals_ = [
        n for n in dict.fromkeys(names + nested) if n not in declared_set
    ]
    return locals_, nested, constructed, declared


def _record_assignment(
    assignments: Dict[str, List[Optional[str]]],
    target: ast.expr,
    value: Optional[ast.expr],
) -> None:
    if isinstance(target, ast.Name):
        chain: Optional[str] = None
        if isinstance(value, ast.Call):
            parts = dotted_parts(value.func)
            if parts and parts[0] != "super()":
                chain = ".".join(parts)
        assignments.setdefault(target.id, []).append(chain)
    elif isinstance(target, (ast.Tuple, ast.List)):
        for element in target.elts:
            _record_assignment(assignments, element, None)
    elif isinstance(target, ast.Starred):
        _record_assignment(assignments, target.value, None)


def _module_globals(tree: ast.Module) -> List[GlobalVar]:
    found: Dict[str, GlobalVar] = {}

    def visit_block(body: List[ast.stmt]) -> None:
        for stmt in body:
            targets: List[ast.expr] = []
            if isinstance(stmt, ast.Assign):
                targets = list(stmt.targets)
            elif isinstance(stmt, (ast.AnnAssign, ast.AugAssign)):
                targets = [stmt.target]
            elif isinstance(stmt, (ast.If, ast.While)):
                visit_block(stmt.body)
                visit_block(stmt.orelse)
            elif isinstance(stmt, (ast.For, ast.AsyncFor)):
                targets = [stmt.target]
                visit_block(stmt.body)
                visit_block(stmt.orelse)
            elif isinstance(stmt, (ast.With, ast.AsyncWith)):
                targets = [
                    i.optional_vars for i in stmt.items if i.optional_vars
                ]
                visit_block(stmt.body)
            elif isinstance(stmt, COMPOUND) and hasattr(stmt, "handlers"):
                visit_block(stmt.body)  # type: ignore[attr-defined]
                for handler in stmt.handlers:  # type: ignore[attr-defined]
                    visit_block(handler.body)
                visit_block(stmt.orelse)  # type: ignore[attr-defined]
                visit_block(stmt.finalbody)  # type: ignore[attr-defined]

            span = (stmt.lineno, stmt.end_lineno or stmt.lineno)
            for target in targets:
                for name in target_names(target):
                    found[name] = GlobalVar(name=name, span=span)

    visit_block(tree.body)
    return sorted(found.values(), key=lambda g: (g.span, g.name))


def target_names(target: ast.expr) -> List[str]:
    """Returns the names bound by an assignment target."""
    if isinstance(target, ast.Name):
        return [target.id]
    elif isinstance(target, (ast.Tuple, ast.List)):
        return [n for e in target.elts for n in target_names(e)]
    elif isinstance(target, ast.Starred):
        return target_names(target.value)
    return []


def parse_file(source: Union[str, bytes], module_path: str) -> FileFacts:
    """Parses one source file into normalized syntax facts.

    Args:
        source: The file content, as text or raw bytes
        module_path: The repository relative path of the file

    Returns:
        The facts of the file.

    Raises:
        DecodeError: The content is not decodable text.
        SourceSyntaxError: The content is not valid source.
    """
    module_path = PurePosixPath(module_path.replace("\\", "/")).as_posix()
    text = decode_source(source, module_path)
    try:
        tree = ast.parse(text, filename=module_path)
    except (SyntaxError, ValueError) as e:
        line = getattr(e, "lineno", None)
        raise SourceSyntaxError(module_path, line, str(e)) from e

    module_qname = module_qname_for(module_path)
    collector = _FactCollector(text, module_path, module_qname)
    for stmt in tree.body:
        collector.visit(stmt)

    functions = list(collector.functions.values())
    calls = sorted(
        (
            site
            for node_id, site in collector.calls
            if collector.nodes.get(site.caller_qname) == node_id
        ),
        key=lambda c: c.location,
    )

    return FileFacts(
        module_path=module_path,
        module_qname=module_qname,
        functions=functions,
        classes=list(collector.classes.values()),
        imports=collector.imports,
        star_imports=collector.star_imports,
        globals=_module_globals(tree),
        calls=calls,
        duplicates=collector.duplicates,
        is_package=collector.is_package,
    )
