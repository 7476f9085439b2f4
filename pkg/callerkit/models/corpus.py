"""Provides models for target functions, training instances and corpus
statistics."""

from typing import Dict, List, Optional

from callerkit.models.base import Base, BaseList
from callerkit.models.graph import CallerRef
from callerkit.models.source import FunctionDecl


class TargetFunction(Base):
    """A function selected as a generation target.

    Attributes:
        decl: The declaration holding the header, docstring and body.
        callers: The eligible callers, ordered by path and line.
        repo_id: The repository the function belongs to.
    """

    decl: FunctionDecl
    callers: List[CallerRef] = []
    repo_id: str = ""


class TokenCounts(Base):
    """The token lengths of an instance.

    Attributes:
        task_len: Tokens of the serialized context.
        target_len: Tokens of the target body.
        total_len: The sum of both.
    """

    task_len: int
    target_len: int
    total_len: int

    @classmethod
    def of(cls, task_len: int, target_len: int) -> "TokenCounts":
        return cls(
            task_len=task_len,
            target_len=target_len,
            total_len=task_len + target_len,
        )


class TrainingInstance(Base):
    """One caller-callee training pair.

    Attributes:
        id: A digest of the target qname and the serialized text.
        repo: The repository id.
        target_qname: The qname of the target function.
        module_path: The path of the file declaring the target.
        header: The target's header.
        callers: The caller snippets, original caller first.
        caller_qnames: The qnames of the callers, parallel to `callers`.
        docstring: The target's docstring, empty when absent.
        body: The target's body, the generation target.
        hop_depth: 1 for direct callers, 2 when augmented with their callers.
        serialized: The serialized model input.
        token_counts: The token lengths.
        flags: Markers such as `short` or `no_second_hop`.
    """

    id: str
    repo: str
    target_qname: str
    module_path: str = ""
    header: str
    callers: List[str] = []
    caller_qnames: List[str] = []
    docstring: str = ""
    body: str
    hop_depth: int = 1
    serialized: str
    token_counts: TokenCounts
    flags: List[str] = []


class Corpus(BaseList):
    """A list of training instances."""

    __root__: List[TrainingInstance]


class ColumnStats(Base):
    """Length statistics of one column."""

    mean: float
    median: int
    p90: int
    p95: int
    p99: int


class LengthStats(Base):
    """Token length statistics of a corpus.

    Attributes:
        count: The number of instances.
        task: Statistics of the serialized context length.
        target: Statistics of the target body length.
        total: Statistics of the total length.
    """

    count: int
    task: ColumnStats
    target: ColumnStats
    total: ColumnStats

    def table(self) -> str:
        """Renders the statistics as a plain text table."""
        columns = [
            ("Task Length", self.task),
            ("Target Code Length", self.target),
            ("Total Length", self.total),
        ]
        rows = [
            ("Mean", lambda c: f"{c.mean:.2f}"),
            ("Median", lambda c: str(c.median)),
            ("90%", lambda c: str(c.p90)),
            ("95%", lambda c: str(c.p95)),
            ("99%", lambda c: str(c.p99)),
        ]
        widths = [max(len(name), 10) for name, _ in columns]
        lines = [
            " " * 8
            + "  ".join(
                name.rjust(w) for (name, _), w in zip(columns, widths)
            )
        ]
        for label, fmt in rows:
            cells = [
                fmt(col).rjust(w) for (_, col), w in zip(columns, widths)
            ]
            lines.append(label.ljust(8) + "  ".join(cells))

        return "\n".join(lines)


class Exclusion(Base):
    """A function rejected as a target, with the reason."""

    qname: str
    reason: str


class SidecarCounts(Base):
    """Externally computed token counts for one instance."""

    task_len: int
    target_len: int


class Sidecar(Base):
    """A token count sidecar file, keyed by instance id."""

    __root__: Dict[str, SidecarCounts]

    def get(self, key: str) -> Optional[SidecarCounts]:
        return self.__root__.get(key)
