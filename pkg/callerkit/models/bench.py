"""Provides models for benchmark tasks, their requirements and drivers."""

from typing import Dict, List, Optional, Tuple

from callerkit.models.base import Base, BaseList
from callerkit.models.corpus import TargetFunction
from callerkit.types import RequirementKind, Status


class Evidence(Base):
    """The caller statement a requirement was observed at."""

    file: str
    line: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}"


class Requirement(Base):
    """An observable semantic requirement induced by a call site.

    Attributes:
        kind: The requirement kind, e.g. `RETURN_SUBSCRIPT`.
        params: The rendered parameters of the kind.
        evidence: Where the requirement was observed.
    """

    kind: RequirementKind
    params: List[str] = []
    evidence: Optional[Evidence] = None

    def key(self) -> str:
        """The structural identity of the requirement, evidence excluded."""
        return f"{self.kind}({', '.join(self.params)})"

    def order(self) -> Tuple[str, Tuple[str, ...]]:
        return (self.kind, tuple(self.params))


class SiteRequirements(Base):
    """The requirements of one call site on the target.

    Attributes:
        site_id: The `path:line` of the call site.
        caller_qname: The qname of the calling function.
        requirements: The requirements in extraction order.
    """

    site_id: str
    caller_qname: str
    requirements: List[Requirement] = []

    def keys(self) -> List[str]:
        return [r.key() for r in self.requirements]


class UsagePattern(Base):
    """A group of call sites relying on the target in a compatible way.

    Attributes:
        id: The pattern id, `U1`, `U2`, ...
        members: The site ids of the members.
        requirements: The union of the member requirements.
    """

    id: str
    members: List[str]
    requirements: List[Requirement] = []

    def keys(self) -> List[str]:
        return [r.key() for r in self.requirements]


class BehaviorSketch(Base):
    """The union of the requirements of every usage pattern."""

    requirements: List[Requirement] = []

    def keys(self) -> List[str]:
        return [r.key() for r in self.requirements]

    def __len__(self) -> int:
        return len(self.requirements)


class DriverScript(Base):
    """A self contained main() style test script.

    Attributes:
        path: The path of the script relative to the task workspace.
        text: The script source.
        covers: Pattern ids and requirement keys the script exercises.
        evidence: The `path:line` annotations of its assertions.
    """

    path: str
    text: str
    covers: List[str] = []
    evidence: List[str] = []


class CoverageReport(Base):
    """The result of linting a task's driver suite.

    Attributes:
        task_id: The linted task.
        c1: Usage patterns covered by no driver.
        c2: Sketch requirements linked to no driver.
        c3: Assertions lacking an evidence annotation, as `path:line`.
        cap_violation: Whether the suite holds more than five drivers.
        bad_evidence: Evidence annotations pointing at no existing line.
    """

    task_id: str
    c1: List[str] = []
    c2: List[str] = []
    c3: List[str] = []
    cap_violation: bool = False
    bad_evidence: List[str] = []

    @property
    def passed(self) -> bool:
        return not (
            self.c1
            or self.c2
            or self.c3
            or self.cap_violation
            or self.bad_evidence
        )


class BenchmarkTask(Base):
    """A function level generation task with its real callers.

    Attributes:
        task_id: The task id.
        repo: The repository id, always of the bench split.
        target: The target with its callers.
        module_source: The source of the file declaring the target.
        support: The sources of the repository modules the target module
            depends on, by relative path.
        callers: The caller snippets, in path and line order.
        sites: The requirements of every call site.
        patterns: The usage patterns.
        sketch: The behavior sketch.
        drivers: The driver scripts, at most five.
        nl_description: The target's docstring, when present.
        synthesized_caller: A minimal invocation for caller-less targets.
        flags: Markers such as `receiver_placeholder`.
    """

    task_id: str
    repo: str
    target: TargetFunction
    module_source: str = ""
    support: Dict[str, str] = {}
    callers: List[str] = []
    sites: List[SiteRequirements] = []
    patterns: List[UsagePattern] = []
    sketch: BehaviorSketch = BehaviorSketch()
    drivers: List[DriverScript] = []
    nl_description: Optional[str] = None
    synthesized_caller: Optional[str] = None
    flags: List[str] = []

    @property
    def qname(self) -> str:
        return self.target.decl.qname


class Tasks(BaseList):
    """A list of benchmark tasks."""

    __root__: List[BenchmarkTask]


class SanityResult(Base):
    """The outcome of running a task's drivers on the reference body."""

    task_id: str
    status: Status
    failed_driver: Optional[str] = None
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"


class TaskStats(Base):
    """Summary statistics of a benchmark.

    Attributes:
        tasks: The number of tasks.
        callers_per_task: Mean number of callers per task.
        callers_distribution: Task counts keyed by caller count.
        target_lines: Mean number of lines per target.
        caller_lines: Mean number of lines per caller.
        params: Mean number of parameters per target.
        rejected: Targets dropped by the build, over the driver cap or
            failing on their reference.
    """

    tasks: int
    callers_per_task: float
    callers_distribution: Dict[int, int] = {}
    target_lines: float
    caller_lines: float
    params: float
    rejected: int = 0


class Fragment(Base):
    """A test fragment exercising a target, before normalization.

    Attributes:
        text: The fragment source, assertions annotated with
            `# evidence: <path>:<line>`.
        covers: Pattern ids and requirement keys the fragment exercises.
        imports: Import lines the fragment needs.
    """

    text: str
    covers: List[str] = []
    imports: List[str] = []


class CoverageReports(BaseList):
    """A list of coverage reports."""

    __root__: List[CoverageReport]


class SanityResults(BaseList):
    """A list of reference sanity results."""

    __root__: List[SanityResult]
