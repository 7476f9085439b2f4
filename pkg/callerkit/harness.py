"""Provides candidate splicing, sandboxed driver execution and pass@k.

A candidate is spliced into a private copy of its task's module, replacing
the reference implementation, and every driver of the task is executed in
turn. A candidate passes only if every driver exits 0. Two sandbox backends
share one interface: a child process under resource limits, and a container
run through the docker SDK.
"""

import abc
import ast
import os
import signal
import subprocess
import sys
import tempfile
import textwrap
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path, PurePosixPath
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from callerkit.errors import CallerkitError
from callerkit.log import get_logger
from callerkit.models.bench import BenchmarkTask
from callerkit.models.evaluation import (
    Candidate,
    EvalReport,
    Limits,
    Outcome,
    TaskResult,
    Workspace,
)
from callerkit.types import Backend, Status

logger = get_logger("callerkit.harness")

TAIL = 2000

_NETWORK_SHIM = '''\
import socket


def _blocked(*args, **kwargs):
    raise OSError("network access is disabled")


socket.socket.connect = _blocked
socket.socket.connect_ex = _blocked
socket.create_connection = _blocked
socket.getaddrinfo = _blocked
'''


class SetupError(CallerkitError):
    """Raised when a candidate cannot be spliced into its workspace.

    Attributes:
        reason: `parse`, `name mismatch` or `not a single function`.
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class SandboxUnavailable(CallerkitError):
    """Raised when the requested sandbox backend cannot run."""

    pass


class DomainError(CallerkitError):
    """Raised when pass@k is requested outside its domain."""

    pass


def _candidate_function(
    code: str, name: str
) -> Tuple[List[str], str]:
    """Splits a candidate into its import lines and its function text."""
    try:
        tree = ast.parse(code)
    except SyntaxError as e:
        raise SetupError("parse", f"line {e.lineno}: {e.msg}") from e

    lines = code.splitlines()
    imports: List[str] = []
    functions = []
    for node in tree.body:
        if isinstance(node, (ast.Import, ast.ImportFrom)):
            imports.append(
                "\n".join(lines[node.lineno - 1 : node.end_lineno])
            )
        elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            functions.append(node)
        elif isinstance(node, ast.Expr) and isinstance(
            node.value, ast.Constant
        ):
            continue
        else:
            raise SetupError(
                "not a single function",
                f"unexpected {type(node).__name__} at line {node.lineno}",
            )

    if len(functions) != 1:
        raise SetupError(
            "not a single function", f"{len(functions)} functions defined"
        )
    func = functions[0]
    if func.name != name:
        raise SetupError(
            "name mismatch", f"expected {name}, found {func.name}"
        )

    body = lines[func.lineno - 1 : func.end_lineno]
    return imports, textwrap.dedent("\n".join(body))


def _import_anchor(lines: List[str]) -> int:
    """Returns the line index after the module docstring and any future
    imports."""
    try:
        tree = ast.parse("\n".join(lines))
    except SyntaxError:
        return 0
    anchor = 0
    for i, node in enumerate(tree.body):
        docstring = (
            i == 0
            and isinstance(node, ast.Expr)
            and isinstance(node.value, ast.Constant)
            and isinstance(node.value.value, str)
        )
        future = (
            isinstance(node, ast.ImportFrom) and node.module == "__future__"
        )
        if docstring or future:
            anchor = node.end_lineno or node.lineno
        else:
            break
    return anchor


def splice_source(task: BenchmarkTask, code: str) -> str:
    """Returns the task's module source with the target replaced.

    Raises:
        SetupError: The candidate is not a single function of the target's
            name.
    """
    decl = task.target.decl
    imports, function = _candidate_function(code, decl.name)

    lines = task.module_source.splitlines()
    start, end = decl.span
    indent = lines[start - 1][: decl.col_offset] if lines else ""
    replacement = [
        indent + line if line.strip() else line
        for line in function.splitlines()
    ]
    lines[start - 1 : end] = replacement

    if imports:
        anchor = _import_anchor(lines)
        lines[anchor:anchor] = imports
    return "\n".join(lines) + "\n"


def splice_candidate(
    task: BenchmarkTask, candidate: Candidate, root: Path
) -> Workspace:
    """Builds an isolated workspace for a candidate.

    The workspace holds the support modules of the task, the spliced module,
    package `__init__` stubs and the drivers under `drivers/`.

    Args:
        task: The task
        candidate: The candidate implementation
        root: An empty directory owned by this candidate

    Returns:
        The workspace.

    Raises:
        SetupError: The candidate cannot be spliced.
    """
    source = splice_source(task, candidate.code)
    module_path = task.target.decl.module_path

    files: Dict[str, str] = dict(task.support)
    files[module_path] = source
    for relative in list(files):
        for parent in PurePosixPath(relative).parents:
            if str(parent) == ".":
                continue
            files.setdefault(f"{parent}/__init__.py", "")

    for relative, text in files.items():
        path = root / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")

    drivers = []
    for driver in task.drivers:
        relative = f"drivers/{PurePosixPath(driver.path).name}"
        path = root / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(driver.text, encoding="utf-8")
        drivers.append(relative)

    return Workspace(root=root, module_path=module_path, drivers=drivers)


class Sandbox(abc.ABC):
    """Runs one driver of a workspace under resource limits."""

    @abc.abstractmethod
    def run(
        self, workspace: Workspace, driver: str, limits: Limits
    ) -> Tuple[Status, int, str, str]:
        """Runs a driver.

        Returns:
            The status, the wall time in milliseconds and the tails of
            stdout and stderr.

        Raises:
            SandboxUnavailable: The backend cannot run.
        """


def _status(returncode: int) -> Status:
    if returncode == 0:
        return "pass"
    elif returncode < 0:
        return "crash"
    return "fail"


def _tail(data: bytes) -> str:
    return data.decode("utf-8", errors="replace")[-TAIL:]


class ProcessSandbox(Sandbox):
    """Runs drivers as child interpreters with address space and CPU
    limits, in their own session."""

    def __init__(self, python: Optional[str] = None):
        self.python = python or sys.executable

    def _env(self, workspace: Workspace, limits: Limits) -> Dict[str, str]:
        paths = [str(workspace.root)]
        if limits.no_network:
            shim = workspace.root / ".sandbox"
            shim.mkdir(exist_ok=True)
            (shim / "sitecustomize.py").write_text(_NETWORK_SHIM)
            paths.insert(0, str(shim))
        return {
            "PATH": os.environ.get("PATH", ""),
            "PYTHONPATH": os.pathsep.join(paths),
            "PYTHONDONTWRITEBYTECODE": "1",
            "PYTHONHASHSEED": "0",
        }

    def run(
        self, workspace: Workspace, driver: str, limits: Limits
    ) -> Tuple[Status, int, str, str]:
        try:
            import resource
        except ImportError as e:
            raise SandboxUnavailable("resource limits are unsupported") from e

        memory = limits.mem_mb * 1024 * 1024
        cpu = int(limits.wall_s) + 1

        def set_limits():
            resource.setrlimit(resource.RLIMIT_AS, (memory, memory))
            resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu))

        started = time.monotonic()
        try:
            proc = subprocess.Popen(
                [self.python, "-s", driver],
                cwd=workspace.root,
                env=self._env(workspace, limits),
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                preexec_fn=set_limits,
                start_new_session=True,
            )
        except OSError as e:
            raise SandboxUnavailable(f"cannot start {self.python}: {e}")

        try:
            out, err = proc.communicate(timeout=limits.wall_s)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            out, err = proc.communicate()
            elapsed = int((time.monotonic() - started) * 1000)
            return (
                "timeout",
                max(elapsed, int(limits.wall_s * 1000)),
                _tail(out),
                _tail(err),
            )

        elapsed = int((time.monotonic() - started) * 1000)
        return _status(proc.returncode), elapsed, _tail(out), _tail(err)


class ContainerSandbox(Sandbox):
    """Runs drivers in a throwaway container with the workspace mounted
    read-only."""

    def __init__(self, image: str = "python:3.10-slim"):
        self.image = image
        self._client = None

    def _docker(self):
        if self._client is None:
            try:
                import docker  # type: ignore
            except ImportError as e:
                raise SandboxUnavailable(
                    "the docker package is not installed"
                ) from e
            try:
                client = docker.from_env()
                client.ping()
            except docker.errors.DockerException as e:
                raise SandboxUnavailable(f"docker is unavailable: {e}") from e
            self._client = client
        return self._client

    def run(
        self, workspace: Workspace, driver: str, limits: Limits
    ) -> Tuple[Status, int, str, str]:
        client = self._docker()
        from requests.exceptions import ConnectionError, ReadTimeout

        started = time.monotonic()
        container = client.containers.run(
            self.image,
            command=["python", "-s", driver],
            detach=True,
            working_dir="/work",
            environment={
                "PYTHONPATH": "/work",
                "PYTHONDONTWRITEBYTECODE": "1",
                "PYTHONHASHSEED": "0",
            },
            volumes={
                str(workspace.root.resolve()): {"bind": "/work", "mode": "ro"}
            },
            network_disabled=limits.no_network,
            mem_limit=f"{limits.mem_mb}m",
        )
        try:
            try:
                result = container.wait(timeout=limits.wall_s)
            except (ReadTimeout, ConnectionError):
                container.kill()
                elapsed = int((time.monotonic() - started) * 1000)
                return (
                    "timeout",
                    max(elapsed, int(limits.wall_s * 1000)),
                    "",
                    "",
                )
            elapsed = int((time.monotonic() - started) * 1000)
            code = result.get("StatusCode", 1)
            out = container.logs(stdout=True, stderr=False)
            err = container.logs(stdout=False, stderr=True)
        finally:
            container.remove(force=True)

        status: Status = "crash" if code >= 128 else _status(code)
        return status, elapsed, _tail(out), _tail(err)


def get_sandbox(
    backend: Backend = "proc", image: str = "python:3.10-slim"
) -> Sandbox:
    """Returns the sandbox of the given backend."""
    if backend == "container":
        return ContainerSandbox(image)
    return ProcessSandbox()


def run_driver(
    workspace: Workspace,
    driver: str,
    limits: Optional[Limits] = None,
    sandbox: Optional[Sandbox] = None,
) -> Outcome:
    """Runs one driver of a workspace.

    Raises:
        SandboxUnavailable: The backend cannot run.
    """
    limits = limits or Limits()
    sandbox = sandbox or ProcessSandbox()
    status, wall_ms, out, err = sandbox.run(workspace, driver, limits)
    return Outcome(
        task_id="",
        status=status,
        wall_ms=wall_ms,
        driver=None if status == "pass" else driver,
        stdout_tail=out,
        stderr_tail=err,
    )


def evaluate_candidate(
    task: BenchmarkTask,
    candidate: Candidate,
    limits: Optional[Limits] = None,
    sandbox: Optional[Sandbox] = None,
) -> Outcome:
    """Runs every driver of a task against a candidate.

    Drivers run sequentially and the run stops at the first driver that
    does not pass. Each candidate gets its own temporary directory.

    Raises:
        SandboxUnavailable: The backend cannot run.
    """
    limits = limits or Limits()
    sandbox = sandbox or ProcessSandbox()
    with tempfile.TemporaryDirectory(prefix="callerkit-") as tmp:
        try:
            workspace = splice_candidate(task, candidate, Path(tmp))
        except SetupError as e:
            logger.debug(
                "setup_error",
                task=task.task_id,
                sample=candidate.sample_index,
                reason=e.reason,
            )
            return Outcome(
                task_id=task.task_id,
                sample_index=candidate.sample_index,
                status="setup_error",
                reason=str(e),
            )

        total = 0
        last = None
        for driver in workspace.drivers:
            last = run_driver(workspace, driver, limits, sandbox)
            total += last.wall_ms
            if not last.passed:
                break

    return Outcome(
        task_id=task.task_id,
        sample_index=candidate.sample_index,
        status=last.status if last else "pass",
        wall_ms=total,
        driver=last.driver if last else None,
        stdout_tail=last.stdout_tail if last else "",
        stderr_tail=last.stderr_tail if last else "",
    )


def evaluate(
    tasks: Sequence[BenchmarkTask],
    candidates: Iterable[Candidate],
    workers: int = 1,
    sandbox: Optional[Sandbox] = None,
    limits: Optional[Limits] = None,
) -> List[Outcome]:
    """Evaluates candidates over a bounded thread pool.

    Args:
        tasks: The benchmark tasks
        candidates: The candidates, any order
        workers: The number of concurrent candidates
        sandbox: The sandbox backend, a process sandbox when omitted
        limits: The per driver limits

    Returns:
        One outcome per candidate, sorted by task and sample index.
    """
    by_id = {t.task_id: t for t in tasks}
    sandbox = sandbox or ProcessSandbox()

    def run(candidate: Candidate) -> Outcome:
        task = by_id.get(candidate.task_id)
        if task is None:
            return Outcome(
                task_id=candidate.task_id,
                sample_index=candidate.sample_index,
                status="setup_error",
                reason="unknown task",
            )
        outcome = evaluate_candidate(task, candidate, limits, sandbox)
        logger.debug(
            "candidate_evaluated",
            task=candidate.task_id,
            sample=candidate.sample_index,
            status=outcome.status,
            wall_ms=outcome.wall_ms,
        )
        return outcome

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(run, candidates))

    return sorted(outcomes, key=lambda o: (o.task_id, o.sample_index))


def pass_at_k(n: int, c: int, k: int) -> float:
    """Estimates pass@k without bias from n samples with c correct.

    Args:
        n: The number of samples
        c: The number of correct samples
        k: The number of draws

    Returns:
        `1 - C(n - c, k) / C(n, k)`, computed as a stable product.

    Raises:
        DomainError: Unless `0 <= c <= n` and `1 <= k <= n`.
    """
    if not 0 <= c <= n:
        raise DomainError(f"c={c} outside [0, n={n}]")
    if not 1 <= k <= n:
        raise DomainError(f"k={k} outside [1, n={n}]")
    if n - c < k:
        return 1.0
    return 1.0 - float(np.prod(1.0 - k / np.arange(n - c + 1, n + 1)))


def aggregate(
    outcomes: Iterable[Outcome], ks: Sequence[int] = (1, 5)
) -> EvalReport:
    """Computes pass@k per task and its mean over tasks.

    A task with fewer samples than k has no pass@k and is left out of the
    mean for that k.

    Args:
        outcomes: One outcome per candidate
        ks: The k values

    Returns:
        The report, per task values as fractions and means as percentages.
    """
    counts: Dict[str, List[int]] = {}
    for outcome in outcomes:
        n_c = counts.setdefault(outcome.task_id, [0, 0])
        n_c[0] += 1
        n_c[1] += int(outcome.passed)

    per_task = []
    for task_id, (n, c) in sorted(counts.items()):
        per_task.append(
            TaskResult(
                task_id=task_id,
                n=n,
                c=c,
                pass_at={
                    f"pass@{k}": pass_at_k(n, c, k) if k <= n else None
                    for k in ks
                },
            )
        )

    means: Dict[str, Optional[float]] = {}
    for k in ks:
        key = f"pass@{k}"
        values = [
            r.pass_at[key] for r in per_task if r.pass_at[key] is not None
        ]
        means[key] = 100.0 * float(np.mean(values)) if values else None

    return EvalReport(ks=list(ks), per_task=per_task, aggregate=means)
