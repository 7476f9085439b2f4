"""Provides models for symbol tables, call resolutions and the call graph."""

from collections import Counter
from typing import Dict, Iterator, List, Literal, Optional, Tuple, Union

import networkx as nx  # type: ignore
from pydantic import PrivateAttr

from callerkit.models.base import Base
from callerkit.models.source import CallSite, FunctionDecl
from callerkit.types import CountingMode, EdgeKind

BindingKind = Literal[
    "function", "class", "module", "symbol", "global", "local", "param"
]


class Binding(Base):
    """A name visible in some scope, bound to a fully qualified target."""

    name: str
    target: str
    kind: BindingKind
    line: int = 0


class SymbolTable(Base):
    """The names visible in one file.

    Attributes:
        module_qname: The dotted name of the file's module.
        module_path: The repository relative path of the file.
        module: Names visible at module level.
        scopes: Names visible in each function's own scope, by function qname.
        parents: The lexically enclosing function of each function.
        class_bases: The resolved base names of each class.
        stars: Star imported modules by scope (empty string for module).
    """

    module_qname: str
    module_path: str
    module: Dict[str, Binding] = {}
    scopes: Dict[str, Dict[str, Binding]] = {}
    parents: Dict[str, Optional[str]] = {}
    class_bases: Dict[str, List[str]] = {}
    stars: Dict[str, List[str]] = {}

    def lookup(self, name: str, scope: Optional[str]) -> Optional[Binding]:
        """Looks up a name lexically, innermost function scope first.

        Args:
            name: The name to look up
            scope: The qname of the function the name is used in

        Returns:
            The binding or None if the name is not bound in the file.
        """
        current = scope
        while current:
            binding = self.scopes.get(current, {}).get(name)
            if binding is not None:
                return binding
            current = self.parents.get(current)

        return self.module.get(name)

    def star_modules(self, scope: Optional[str]) -> List[str]:
        """Returns the star imported modules visible from a scope."""
        modules: List[str] = []
        current = scope
        while current:
            modules.extend(self.stars.get(current, []))
            current = self.parents.get(current)
        modules.extend(self.stars.get("", []))
        return modules


class Resolved(Base):
    """A call resolved to one or more repository functions."""

    kind: Literal["resolved"] = "resolved"
    candidates: List[str]

    @property
    def ambiguous(self) -> bool:
        return len(self.candidates) > 1


class External(Base):
    """A call bound to a name outside the repository."""

    kind: Literal["external"] = "external"
    target: str


class Unresolved(Base):
    """A call with no static target."""

    kind: Literal["unresolved"] = "unresolved"
    reason: str


Resolution = Union[Resolved, External, Unresolved]


class CallEdge(Base):
    """One invocation of a callee by a caller.

    Attributes:
        caller: The qname of the calling function.
        callee: The qname of the called function.
        file: The path of the file holding the call.
        line: The line of the call.
        col: The column of the call.
        kind: `intra` or `inter` file, or `ambiguous` when the call site
            resolved to several candidates.
        site: The call site payload.
    """

    caller: str
    callee: str
    file: str = ""
    line: int = 0
    col: int = 0
    kind: EdgeKind = "intra"
    site: Optional[CallSite] = None

    def key(self) -> Tuple[str, str, str, int, int, str]:
        return (
            self.file,
            self.caller,
            self.callee,
            self.line,
            self.col,
            self.kind,
        )

    def record(self) -> Dict[str, Union[str, int]]:
        """The export record of this edge."""
        return {
            "caller": self.caller,
            "callee": self.callee,
            "file": self.file,
            "line": self.line,
            "col": self.col,
            "kind": self.kind,
        }


class CallerRef(Base):
    """A direct caller of some target, with its call sites on the target.

    Attributes:
        caller: The calling function's declaration.
        sites: The call sites of the caller on the target, in source order.
        ambiguous: Whether every site resolved ambiguously.
    """

    caller: FunctionDecl
    sites: List[CallSite] = []
    ambiguous: bool = False

    @property
    def qname(self) -> str:
        return self.caller.qname

    @property
    def source_text(self) -> str:
        return self.caller.source_text

    def order_key(self) -> Tuple[str, int]:
        return (self.caller.module_path, self.caller.span[0])


class UnresolvedSite(Base):
    """A call site which could not be resolved."""

    caller: str
    expr: str
    file: str
    line: int
    reason: str


class InvalidFile(Base):
    """A file excluded from the graph."""

    file: str
    error: str


class Diagnostics(Base):
    """A summary of the resolution outcomes of a graph build.

    Attributes:
        resolved: Call sites resolved to exactly one candidate.
        ambiguous: Call sites resolved to several candidates.
        external: Call sites bound to names outside the repository.
        unresolved: Call sites with no static target.
        hits: Call site hits per counting mode.
        unresolved_sites: Every unresolved call site with its reason.
        invalid_files: Files that failed to parse.
        duplicates: Qnames defined more than once in a file.
    """

    resolved: int = 0
    ambiguous: int = 0
    external: int = 0
    unresolved: int = 0
    hits: Dict[CountingMode, int] = {
        "all_candidates": 0,
        "first_candidate": 0,
    }
    unresolved_sites: List[UnresolvedSite] = []
    invalid_files: List[InvalidFile] = []
    duplicates: List[str] = []

    def summary(self) -> Dict[str, int]:
        return {
            "resolved": self.resolved,
            "ambiguous": self.ambiguous,
            "external": self.external,
            "unresolved": self.unresolved,
            "invalid_files": len(self.invalid_files),
            **self.hits,
        }


class CallerDistribution(Base):
    """The share of functions by number of distinct callers.

    Attributes:
        functions: The number of functions considered.
        at_least_one: Share of functions with at least one caller.
        at_least_two: Share of functions with at least two callers.
        at_least_three: Share of functions with at least three callers.
        mean: The mean number of distinct callers.
    """

    functions: int
    at_least_one: float
    at_least_two: float
    at_least_three: float
    mean: float


class CallGraph(Base):
    """A function level call graph with mirrored edge sets.

    Attributes:
        nodes: The qnames of every function, sorted.
        functions: The declaration of every node.
        calls: The outgoing edges of each caller.
        calledby: The incoming edges of each callee, the exact transpose of
            `calls`.
        diagnostics: The resolution summary of the build.
    """

    nodes: List[str] = []
    functions: Dict[str, FunctionDecl] = {}
    calls: Dict[str, List[CallEdge]] = {}
    calledby: Dict[str, List[CallEdge]] = {}
    diagnostics: Diagnostics = Diagnostics()

    _nx: Optional[nx.MultiDiGraph] = PrivateAttr(default=None)

    @classmethod
    def from_edges(
        cls,
        nodes: List[str],
        edges: List[CallEdge],
        functions: Optional[Dict[str, FunctionDecl]] = None,
        diagnostics: Optional[Diagnostics] = None,
    ) -> "CallGraph":
        """Builds a graph from a list of edges, mirroring them.

        Args:
            nodes: The function qnames
            edges: The edges, in the order they were discovered
            functions: The declarations of the nodes
            diagnostics: The resolution summary

        Returns:
            A new CallGraph.
        """
        ordered = sorted(edges, key=CallEdge.key)
        calls: Dict[str, List[CallEdge]] = {}
        calledby: Dict[str, List[CallEdge]] = {}
        for edge in ordered:
            calls.setdefault(edge.caller, []).append(edge)
            calledby.setdefault(edge.callee, []).append(edge)

        return cls(
            nodes=sorted(set(nodes)),
            functions=functions or {},
            calls=dict(sorted(calls.items())),
            calledby=dict(sorted(calledby.items())),
            diagnostics=diagnostics or Diagnostics(),
        )

    def edges(self) -> Iterator[CallEdge]:
        """Iterates over every edge once, in caller order."""
        for edges in self.calls.values():
            yield from edges

    def edge_multiset(self) -> Counter:
        return Counter((e.caller, e.callee) for e in self.edges())

    def mirror_multiset(self) -> Counter:
        return Counter(
            (e.caller, e.callee)
            for callee, edges in self.calledby.items()
            for e in edges
            if e.callee == callee
        )

    def to_networkx(self) -> nx.MultiDiGraph:
        """Returns (and caches) the graph as a networkx multigraph."""
        if self._nx is None:
            graph = nx.MultiDiGraph()
            graph.add_nodes_from(self.nodes)
            for edge in self.edges():
                graph.add_edge(edge.caller, edge.callee, kind=edge.kind)
            self._nx = graph
        return self._nx
