"""Provides call graph construction, direct caller queries and graph export.

The graph holds one node per function declaration and one edge per resolved
call site candidate. Edges are stored twice, once under their caller
(`calls`) and once under their callee (`calledby`), so that both directions
can be queried without a scan.
"""

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from callerkit.errors import CallerkitError
from callerkit.log import get_logger
from callerkit.models.base import (
    Provenance,
    read_json,
    read_jsonl,
    write_json,
    write_jsonl,
)
from callerkit.models.graph import (
    CallEdge,
    CallerDistribution,
    CallerRef,
    CallGraph,
    Diagnostics,
    External,
    InvalidFile,
    Resolved,
    UnresolvedSite,
)
from callerkit.models.source import CallSite, FileFacts
from callerkit.parse import DecodeError, SourceSyntaxError, parse_file
from callerkit.resolve import ClassHierarchy, resolve_call

logger = get_logger("callerkit.graph")

# Directories never descended into when walking a snapshot
SKIPPED_DIRS = frozenset(
    {".git", ".hg", ".svn", ".tox", ".venv", "venv", "__pycache__", "build"}
)


class UnknownFunctionError(CallerkitError):
    """Raised when a qname is not a node of the graph."""

    pass


def build_call_graph(
    all_facts: Sequence[FileFacts],
    invalid: Optional[List[InvalidFile]] = None,
) -> CallGraph:
    """Builds the function level call graph of a repository snapshot.

    Args:
        all_facts: The facts of every valid file of the snapshot
        invalid: Files excluded because they failed to parse

    Returns:
        The call graph with its diagnostics.
    """
    ordered = sorted(all_facts, key=lambda f: f.module_path)
    hierarchy = ClassHierarchy(ordered)
    diagnostics = Diagnostics(invalid_files=list(invalid or []))
    functions = {}
    edges: List[CallEdge] = []
    for facts in ordered:
        table = hierarchy.tables[facts.module_qname]
        diagnostics.duplicates.extend(facts.duplicates)
        for decl in facts.functions:
            functions[decl.qname] = decl
        for site in facts.calls:
            resolution = resolve_call(site, table, hierarchy)
            if isinstance(resolution, Resolved):
                edges.extend(
                    _edges_for(site, resolution, facts, hierarchy)
                )
                if resolution.ambiguous:
                    diagnostics.ambiguous += 1
                else:
                    diagnostics.resolved += 1
                diagnostics.hits["all_candidates"] += len(
                    resolution.candidates
                )
                diagnostics.hits["first_candidate"] += 1
            elif isinstance(resolution, External):
                diagnostics.external += 1
            else:
                diagnostics.unresolved += 1
                diagnostics.unresolved_sites.append(
                    UnresolvedSite(
                        caller=site.caller_qname,
                        expr=site.callee_expr_text,
                        file=facts.module_path,
                        line=site.location[0],
                        reason=resolution.reason,
                    )
                )
                logger.debug(
                    "unresolved_call",
                    file=facts.module_path,
                    line=site.location[0],
                    expr=site.callee_expr_text,
                    reason=resolution.reason,
                )

    graph = CallGraph.from_edges(
        list(functions), edges, functions=functions, diagnostics=diagnostics
    )
    logger.info(
        "call_graph_built",
        nodes=len(graph.nodes),
        edges=sum(len(e) for e in graph.calls.values()),
        **diagnostics.summary(),
    )
    return graph


def _edges_for(
    site: CallSite,
    resolution: Resolved,
    facts: FileFacts,
    hierarchy: ClassHierarchy,
) -> List[CallEdge]:
    edges = []
    for candidate in resolution.candidates:
        callee = hierarchy.functions[candidate]
        if resolution.ambiguous:
            kind = "ambiguous"
        elif callee.module_path == facts.module_path:
            kind = "intra"
        else:
            kind = "inter"
        edges.append(
            CallEdge(
                caller=site.caller_qname,
                callee=candidate,
                file=facts.module_path,
                line=site.location[0],
                col=site.location[1],
                kind=kind,
                site=site.copy(update={"resolved_callee": candidate}),
            )
        )
    return edges


def direct_callers(graph: CallGraph, target: str) -> List[CallerRef]:
    """Returns the one-hop callers of a target.

    Args:
        graph: The call graph
        target: The qname of the target function

    Returns:
        The callers ordered by (module path, start line), each carrying its
        call sites on the target. Recursive callers are included.

    Raises:
        UnknownFunctionError: The target is not a node of the graph.
    """
    if target not in graph.functions:
        raise UnknownFunctionError(f"{target} is not a function of the graph")

    grouped: Dict[str, List[CallEdge]] = {}
    for edge in graph.calledby.get(target, []):
        grouped.setdefault(edge.caller, []).append(edge)

    refs = []
    for caller, edges in grouped.items():
        decl = graph.functions.get(caller)
        if decl is None:
            continue
        refs.append(
            CallerRef(
                caller=decl,
                sites=sorted(
                    (e.site for e in edges if e.site is not None),
                    key=lambda s: s.location,
                ),
                ambiguous=all(e.kind == "ambiguous" for e in edges),
            )
        )

    return sorted(refs, key=CallerRef.order_key)


def caller_distribution(graph: CallGraph) -> CallerDistribution:
    """Summarizes how many distinct callers each function has.

    Recursive self-calls are not counted.
    """
    nxg = graph.to_networkx()
    counts = np.array(
        [len(set(nxg.predecessors(n)) - {n}) for n in graph.nodes],
        dtype=float,
    )
    if counts.size == 0:
        return CallerDistribution(
            functions=0,
            at_least_one=0.0,
            at_least_two=0.0,
            at_least_three=0.0,
            mean=0.0,
        )

    return CallerDistribution(
        functions=int(counts.size),
        at_least_one=float(np.mean(counts >= 1)),
        at_least_two=float(np.mean(counts >= 2)),
        at_least_three=float(np.mean(counts >= 3)),
        mean=float(np.mean(counts)),
    )


def source_files(root: Path) -> List[Path]:
    """Returns every source file under a snapshot root, sorted."""
    found = []
    for path in root.rglob("*.py"):
        relative = path.relative_to(root)
        if any(
            part in SKIPPED_DIRS or part.startswith(".")
            for part in relative.parts[:-1]
        ):
            continue
        if path.is_file():
            found.append(path)
    return sorted(found, key=lambda p: p.relative_to(root).as_posix())


def _parse_path(
    args: Tuple[str, str]
) -> Union[FileFacts, InvalidFile]:
    path, relative = args
    try:
        return parse_file(Path(path).read_bytes(), relative)
    except (DecodeError, SourceSyntaxError, OSError) as e:
        return InvalidFile(file=relative, error=str(e))


def extract_repo(
    root: Path, workers: int = 1
) -> Tuple[List[FileFacts], CallGraph]:
    """Parses every source file of a snapshot and builds its call graph.

    Args:
        root: The snapshot root directory
        workers: The number of parsing processes

    Returns:
        The facts of every valid file and the call graph.
    """
    jobs = [
        (str(p), p.relative_to(root).as_posix()) for p in source_files(root)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_parse_path, jobs, chunksize=8))
    else:
        results = [_parse_path(job) for job in jobs]

    facts: List[FileFacts] = []
    invalid: List[InvalidFile] = []
    for result in results:
        if isinstance(result, InvalidFile):
            logger.warning(
                "parse_failed", file=result.file, error=result.error
            )
            invalid.append(result)
        else:
            facts.append(result)

    return facts, build_call_graph(facts, invalid)


def export_graph(
    facts: Sequence[FileFacts],
    graph: CallGraph,
    out: Path,
    provenance: Optional[Provenance] = None,
) -> None:
    """Writes the graph artifacts to a directory.

    Writes `edges.jsonl` (one record per edge), `diagnostics.json`,
    `facts.jsonl` and `graph.json` (the full graph, for later stages). Every
    file carries the provenance header when one is given.

    Args:
        facts: The facts of every valid file
        graph: The call graph
        out: The output directory
        provenance: An optional provenance header
    """
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(
        out / "edges.jsonl",
        (e.record() for e in graph.edges()),
        provenance,
    )
    write_jsonl(
        out / "facts.jsonl",
        sorted(facts, key=lambda f: f.module_path),
        provenance,
    )
    write_json(out / "diagnostics.json", graph.diagnostics, provenance)
    write_json(out / "graph.json", graph, provenance)


def load_graph(directory: Path) -> Tuple[List[FileFacts], CallGraph]:
    """Loads the artifacts written by `export_graph`.

    Args:
        directory: The directory holding the graph artifacts

    Returns:
        The file facts and the call graph.
    """
    data, provenance = read_json(directory / "graph.json")
    graph = CallGraph.parse_obj(data)
    logger.debug(
        "graph_loaded",
        path=str(directory),
        functions=len(graph.functions),
        seed=provenance.seed if provenance else None,
    )
    facts = read_jsonl(directory / "facts.jsonl", FileFacts)
    return facts, graph
