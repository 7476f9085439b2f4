"""Provides symbol tables, the repository class hierarchy and call
resolution.

Resolution consults three sources in turn: definitions local to the file,
names imported into it (following re-exports through package modules) and
methods found through the inheritance chain of repository classes. Anything
else is either external (bound to a name outside the repository) or
unresolved, with a reason recorded for the diagnostics.
"""

import builtins
from typing import Dict, Iterable, List, Optional, Set, Tuple

from callerkit.log import get_logger
from callerkit.models.graph import (
    Binding,
    External,
    Resolution,
    Resolved,
    SymbolTable,
    Unresolved,
)
from callerkit.models.source import (
    CallSite,
    ClassDecl,
    FileFacts,
    FunctionDecl,
)

logger = get_logger("callerkit.resolve")

# How many re-export hops are followed before giving up
MAX_REEXPORT_DEPTH = 5

_BUILTINS = frozenset(dir(builtins))


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def build_symbol_table(facts: FileFacts) -> SymbolTable:
    """Builds the per-file symbol table.

    Module level entries are applied in line order so that later bindings
    shadow earlier ones. Function scopes hold parameters, assigned locals,
    nested definitions and function level imports.

    Args:
        facts: The facts of one parsed file

    Returns:
        The symbol table of the file.
    """
    module_qname = facts.module_qname
    entries: List[Binding] = []
    for decl in facts.functions:
        if not decl.is_method and decl.enclosing_function is None:
            entries.append(
                Binding(
                    name=decl.name,
                    target=decl.qname,
                    kind="function",
                    line=decl.span[0],
                )
            )
    for cls in facts.classes:
        if cls.qname == _join(module_qname, cls.name):
            entries.append(
                Binding(
                    name=cls.name,
                    target=cls.qname,
                    kind="class",
                    line=cls.span[0],
                )
            )
    for var in facts.globals:
        entries.append(
            Binding(
                name=var.name,
                target=f"{module_qname}.{var.name}",
                kind="global",
                line=var.span[0],
            )
        )
    for imp in facts.imports:
        if imp.scope == "":
            entries.append(
                Binding(
                    name=imp.local_alias,
                    target=imp.target_qname,
                    kind=imp.kind,
                    line=imp.line,
                )
            )

    module: Dict[str, Binding] = {}
    for entry in sorted(entries, key=lambda b: b.line):
        module[entry.name] = entry

    scopes: Dict[str, Dict[str, Binding]] = {}
    parents: Dict[str, Optional[str]] = {}
    for decl in facts.functions:
        parents[decl.qname] = decl.enclosing_function
        scopes[decl.qname] = _function_scope(decl, facts)

    stars: Dict[str, List[str]] = {}
    for star in facts.star_imports:
        stars.setdefault(star.scope, []).append(star.module)

    table = SymbolTable(
        module_qname=module_qname,
        module_path=facts.module_path,
        module=module,
        scopes=scopes,
        parents=parents,
        stars=stars,
    )
    for cls in facts.classes:
        table.class_bases[cls.qname] = [
            _qualify_base(table, cls, base) for base in cls.bases
        ]

    return table


def _function_scope(
    decl: FunctionDecl, facts: FileFacts
) -> Dict[str, Binding]:
    scope: Dict[str, Binding] = {}
    params = {p.name for p in decl.params}
    for name in decl.local_names:
        kind = "param" if name in params else "local"
        scope[name] = Binding(
            name=name, target=f"{decl.qname}.<locals>.{name}", kind=kind
        )
    nested_classes = {
        c.name: c.qname
        for c in facts.classes
        if c.enclosing_function == decl.qname
    }
    for name, qname in decl.nested.items():
        if name in nested_classes:
            scope[name] = Binding(
                name=name, target=nested_classes[name], kind="class"
            )
        else:
            scope[name] = Binding(name=name, target=qname, kind="function")
    for imp in facts.imports:
        if imp.scope == decl.qname:
            scope[imp.local_alias] = Binding(
                name=imp.local_alias,
                target=imp.target_qname,
                kind=imp.kind,
                line=imp.line,
            )

    return scope


def _qualify_base(table: SymbolTable, cls: ClassDecl, base: str) -> str:
    parts = base.split(".")
    binding = table.lookup(parts[0], cls.enclosing_function)
    if binding is None or binding.kind in ("local", "param"):
        return base
    return ".".join([binding.target] + parts[1:])


class ClassHierarchy:
    """The repository wide index of modules, functions and classes.

    The hierarchy answers dotted name lookups (following re-exports through
    package modules) and method resolution order queries.
    """

    def __init__(self, all_facts: Iterable[FileFacts]):
        self.tables: Dict[str, SymbolTable] = {}
        self.modules: Set[str] = set()
        self.functions: Dict[str, FunctionDecl] = {}
        self.classes: Dict[str, ClassDecl] = {}
        self.bases: Dict[str, List[str]] = {}
        self.subclasses: Dict[str, List[str]] = {}
        self._mro: Dict[str, List[str]] = {}

        for facts in all_facts:
            table = build_symbol_table(facts)
            self.tables[facts.module_qname] = table
            self.modules.add(facts.module_qname)
            for decl in facts.functions:
                self.functions[decl.qname] = decl
            for cls in facts.classes:
                self.classes[cls.qname] = cls

        self.roots = {m.split(".")[0] for m in self.modules if m}
        for table in self.tables.values():
            for qname, bases in table.class_bases.items():
                resolved = []
                for base in bases:
                    kind, target = self.lookup(base)
                    resolved.append(target if kind == "class" else base)
                self.bases[qname] = resolved
                for base in resolved:
                    self.subclasses.setdefault(base, []).append(qname)

    def lookup(self, dotted: str, depth: int = 0) -> Tuple[str, str]:
        """Looks up a fully qualified dotted name.

        Args:
            dotted: The name to look up
            depth: The number of re-export hops already followed

        Returns:
            A pair of the kind (function, class, module, global, external
            or unknown) and the resolved qname.
        """
        if dotted in self.functions:
            return ("function", dotted)
        if dotted in self.classes:
            return ("class", dotted)
        if dotted in self.modules:
            return ("module", dotted)

        parts = dotted.split(".")
        for i in range(len(parts) - 1, 0, -1):
            prefix = ".".join(parts[:i])
            rest = parts[i:]
            if prefix in self.classes:
                method = self.find_method(prefix, rest[0])
                if method and len(rest) == 1:
                    return ("function", method)
                return ("unknown", dotted)
            if prefix in self.modules:
                binding = self.tables[prefix].module.get(rest[0])
                if binding is None:
                    return ("unknown", dotted)
                if binding.kind == "global":
                    return ("global", binding.target)
                if depth >= MAX_REEXPORT_DEPTH:
                    logger.debug("reexport_depth_exceeded", name=dotted)
                    return ("unknown", dotted)
                target = ".".join([binding.target] + rest[1:])
                if target == dotted:
                    return ("unknown", dotted)
                return self.lookup(target, depth + 1)

        if parts[0] not in self.roots:
            return ("external", dotted)
        return ("unknown", dotted)

    def mro(self, cls: str) -> List[str]:
        """Returns the method resolution order of a class.

        Uses C3 linearization over repository classes; names outside the
        repository are leaves. An inconsistent hierarchy falls back to a
        declaration order depth-first search.
        """
        if cls not in self._mro:
            self._mro[cls] = self._linearize(cls, set())
        return self._mro[cls]

    def _linearize(self, cls: str, visiting: Set[str]) -> List[str]:
        if cls in visiting or cls not in self.classes:
            return [cls]
        visiting = visiting | {cls}
        bases = self.bases.get(cls, [])
        sequences = [self._linearize(b, visiting) for b in bases]
        sequences.append(list(bases))
        merged = _c3_merge([list(s) for s in sequences])
        if merged is None:
            logger.debug("inconsistent_mro", cls=cls)
            return self._dfs_order(cls)
        return [cls] + merged

    def _dfs_order(self, cls: str) -> List[str]:
        order: List[str] = []
        stack = [cls]
        while stack:
            current = stack.pop()
            if current in order:
                continue
            order.append(current)
            stack.extend(reversed(self.bases.get(current, [])))
        return order

    def find_method(
        self, cls: str, name: str, skip_self: bool = False
    ) -> Optional[str]:
        """Finds the nearest definition of a method along the MRO.

        Args:
            cls: The class qname to start from
            name: The method name
            skip_self: Whether to start after the class itself

        Returns:
            The qname of the defining method or None.
        """
        order = self.mro(cls)
        for klass in order[1:] if skip_self else order:
            candidate = f"{klass}.{name}"
            if candidate in self.functions and klass in self.classes:
                return candidate
        return None

    def has_external_base(self, cls: str) -> bool:
        return any(
            c not in self.classes and c not in ("object", "builtins.object")
            for c in self.mro(cls)
        )

    def subclass_methods(self, cls: str, name: str) -> List[str]:
        """Returns the definitions of a method in transitive subclasses."""
        found: List[str] = []
        seen: Set[str] = set()
        stack = list(self.subclasses.get(cls, []))
        while stack:
            sub = stack.pop(0)
            if sub in seen:
                continue
            seen.add(sub)
            candidate = f"{sub}.{name}"
            if candidate in self.functions:
                found.append(candidate)
            stack.extend(self.subclasses.get(sub, []))
        return sorted(found)


def _c3_merge(sequences: List[List[str]]) -> Optional[List[str]]:
    result: List[str] = []
    while True:
        sequences = [s for s in sequences if s]
        if not sequences:
            return result
        for seq in sequences:
            head = seq[0]
            if not any(head in s[1:] for s in sequences):
                break
        else:
            return None
        result.append(head)
        for seq in sequences:
            if seq[0] == head:
                del seq[0]


def resolve_call(
    site: CallSite, table: SymbolTable, hierarchy: ClassHierarchy
) -> Resolution:
    """Resolves a call site to its candidate targets.

    Args:
        site: The call site, extracted from the file of `table`
        table: The symbol table of the file
        hierarchy: The repository class hierarchy

    Returns:
        The resolution of the call.
    """
    parts = site.func_parts
    if not parts:
        return Unresolved(reason="dynamic callee")

    caller = hierarchy.functions.get(site.caller_qname)
    scope = site.caller_qname if caller else None

    if parts[0] == "super()":
        return _resolve_super(parts, caller, hierarchy)

    if (
        caller is not None
        and caller.enclosing_class is not None
        and parts[0] == caller.receiver_name
    ):
        return _resolve_receiver(parts, caller.enclosing_class, hierarchy)

    binding = table.lookup(parts[0], scope)
    if binding is None:
        return _resolve_unbound(parts, table, scope, hierarchy)
    if binding.kind == "param":
        return Unresolved(reason="first-class value")
    if binding.kind == "local":
        constructed = caller.constructed.get(parts[0]) if caller else None
        if constructed and len(parts) == 2:
            return _resolve_constructed(
                constructed, parts[1], table, scope, hierarchy
            )
        return Unresolved(reason="local value")

    dotted = ".".join([binding.target] + parts[1:])
    return _resolve_dotted(dotted, hierarchy)


def _resolve_dotted(dotted: str, hierarchy: ClassHierarchy) -> Resolution:
    kind, target = hierarchy.lookup(dotted)
    if kind == "function":
        return Resolved(candidates=[target])
    if kind == "class":
        init = hierarchy.find_method(target, "__init__")
        if init is None:
            return Unresolved(reason="class without __init__")
        return Resolved(candidates=[init])
    if kind == "external":
        return External(target=target)
    if kind == "module":
        return Unresolved(reason="module called")
    if kind == "global":
        return Unresolved(reason="global value")
    return Unresolved(reason="unknown attribute")


def _resolve_super(
    parts: List[str],
    caller: Optional[FunctionDecl],
    hierarchy: ClassHierarchy,
) -> Resolution:
    if caller is None or caller.enclosing_class is None or len(parts) != 2:
        return Unresolved(reason="super outside method")
    cls = caller.enclosing_class
    method = hierarchy.find_method(cls, parts[1], skip_self=True)
    if method is not None:
        return Resolved(candidates=[method])
    if hierarchy.has_external_base(cls):
        return External(target=f"super().{parts[1]}")
    return Unresolved(reason="attribute not found")


def _resolve_receiver(
    parts: List[str], cls: str, hierarchy: ClassHierarchy
) -> Resolution:
    if len(parts) != 2:
        return Unresolved(reason="attribute chain")
    method = hierarchy.find_method(cls, parts[1])
    if method is not None:
        return Resolved(candidates=[method])
    overrides = hierarchy.subclass_methods(cls, parts[1])
    if overrides:
        return Resolved(candidates=overrides)
    if hierarchy.has_external_base(cls):
        return External(target=f"{cls}.{parts[1]}")
    return Unresolved(reason="attribute not found")


def _resolve_constructed(
    constructor: str,
    method: str,
    table: SymbolTable,
    scope: Optional[str],
    hierarchy: ClassHierarchy,
) -> Resolution:
    chain = constructor.split(".")
    binding = table.lookup(chain[0], scope)
    if binding is None or binding.kind in ("local", "param"):
        return Unresolved(reason="local value")
    kind, target = hierarchy.lookup(".".join([binding.target] + chain[1:]))
    if kind == "external":
        return External(target=f"{target}.{method}")
    if kind != "class":
        return Unresolved(reason="local value")
    found = hierarchy.find_method(target, method)
    if found is None:
        return Unresolved(reason="attribute not found")
    return Resolved(candidates=[found])


def _resolve_unbound(
    parts: List[str],
    table: SymbolTable,
    scope: Optional[str],
    hierarchy: ClassHierarchy,
) -> Resolution:
    candidates: List[str] = []
    external = False
    for module in table.star_modules(scope):
        if module not in hierarchy.modules:
            external = True
            continue
        kind, target = hierarchy.lookup(".".join([module] + parts))
        if kind in ("function", "class"):
            resolution = _resolve_dotted(target, hierarchy)
            if isinstance(resolution, Resolved):
                candidates.extend(resolution.candidates)
    if candidates:
        return Resolved(candidates=sorted(set(candidates)))
    if parts[0] in _BUILTINS:
        return External(target=f"builtins.{'.'.join(parts)}")
    if external:
        return External(target=".".join(parts))
    return Unresolved(reason="undefined name")
