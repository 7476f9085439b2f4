"""Provides models for candidates, execution outcomes and pass@k reports."""

from pathlib import Path
from typing import Dict, List, Optional

from pydantic import Field

from callerkit.models.base import Base, BaseList
from callerkit.types import Status


class Candidate(Base):
    """A generated implementation of a task's target.

    Attributes:
        task_id: The task the candidate answers.
        sample_index: The index of the sample, from 0.
        code: The full function, header included.
    """

    task_id: str
    sample_index: int = Field(0, ge=0)
    code: str


class Limits(Base):
    """The resource limits of one driver execution."""

    wall_s: float = Field(10.0, gt=0)
    mem_mb: int = Field(512, gt=0)
    no_network: bool = True


class Workspace(Base):
    """An isolated directory holding a spliced module and its drivers.

    Attributes:
        root: The workspace root, put on the import path.
        module_path: The spliced module, relative to the root.
        drivers: The driver scripts, relative to the root, in task order.
    """

    root: Path
    module_path: str
    drivers: List[str] = []


class Outcome(Base):
    """The result of running a candidate against every driver of its task.

    Attributes:
        task_id: The task.
        sample_index: The candidate's sample index.
        status: `pass` only if every driver exited 0.
        wall_ms: The wall time spent running drivers.
        driver: The first driver that did not pass.
        reason: The reason of a setup error.
        stdout_tail: The end of the last driver's stdout.
        stderr_tail: The end of the last driver's stderr.
    """

    task_id: str
    sample_index: int = 0
    status: Status
    wall_ms: int = 0
    driver: Optional[str] = None
    reason: Optional[str] = None
    stdout_tail: str = ""
    stderr_tail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"


class Outcomes(BaseList):
    """A list of outcomes."""

    __root__: List[Outcome]


class TaskResult(Base):
    """The pass@k values of one task.

    Attributes:
        task_id: The task.
        n: The number of samples.
        c: The number of samples passing every driver.
        pass_at: pass@k by `pass@k` key, null when n < k.
    """

    task_id: str
    n: int
    c: int
    pass_at: Dict[str, Optional[float]] = {}


class EvalReport(Base):
    """pass@k per task and over the benchmark.

    Attributes:
        ks: The k values.
        per_task: The result of every task, sorted by id.
        aggregate: The mean over tasks as a percentage, by `pass@k` key.
    """

    ks: List[int]
    per_task: List[TaskResult] = []
    aggregate: Dict[str, Optional[float]] = {}

    def table(self) -> str:
        """Renders the report as a plain text table."""
        keys = [f"pass@{k}" for k in self.ks]
        width = max([len("task")] + [len(r.task_id) for r in self.per_task])
        head = f"{'task'.ljust(width)}  {'n':>4}  {'c':>4}  " + "  ".join(
            k.rjust(8) for k in keys
        )
        lines = [head]
        for r in self.per_task:
            cells = [_cell(r.pass_at.get(k), 100.0) for k in keys]
            lines.append(
                f"{r.task_id.ljust(width)}  {r.n:>4}  {r.c:>4}  "
                + "  ".join(cells)
            )
        cells = [_cell(self.aggregate.get(k), 1.0) for k in keys]
        lines.append(
            f"{'mean'.ljust(width)}  {'':>4}  {'':>4}  " + "  ".join(cells)
        )
        return "\n".join(lines)


def _cell(value: Optional[float], scale: float) -> str:
    if value is None:
        return "-".rjust(8)
    return f"{value * scale:.2f}%".rjust(8)
