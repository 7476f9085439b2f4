"""Provides the structured and natural language prompt renderers.

Both styles expose the same information: the header always, the callers when
the CALLER field is enabled, and the docstring when the NL field is enabled
and the task has one. The structured style reuses the training serialization
so that evaluation prompts match what a model was trained on.
"""

from typing import Iterable, List

from callerkit.corpus import serialize
from callerkit.errors import CallerkitError
from callerkit.log import get_logger
from callerkit.models.bench import BenchmarkTask
from callerkit.models.prompt import PromptConfig, PromptRecord

logger = get_logger("callerkit.prompt")

INSTRUCTION = (
    "Complete the Python function below. Its header is given under "
    "Target Function. Code from the same repository that calls the function "
    "is given under the Caller blocks and shows how its result is used, and "
    "a description of its behavior is given under Docstring, when they are "
    "available. Write the full function definition, header included, in a "
    "single Python code block."
)


class MissingCaller(CallerkitError):
    """Raised when callers are required but the task has none."""

    pass


def select_callers(
    task: BenchmarkTask, config: PromptConfig, synthesize: bool = True
) -> List[str]:
    """Returns the callers a prompt carries, in path and line order.

    Args:
        task: The task
        config: The prompt configuration
        synthesize: Whether a caller-less task falls back to its synthesized
            invocation

    Returns:
        The first `n_test` callers, none when CALLER is disabled.

    Raises:
        MissingCaller: CALLER is enabled and no caller is available.
    """
    if not config.caller:
        return []

    callers = list(task.callers)
    if not callers:
        if synthesize and task.synthesized_caller:
            callers = [task.synthesized_caller]
        else:
            raise MissingCaller(f"{task.task_id} has no caller")

    if config.n_test == "all":
        return callers
    return callers[: config.n_test]


def _docstring(task: BenchmarkTask, config: PromptConfig) -> str:
    if not config.nl:
        return ""
    return task.nl_description or ""


def render_structured(
    task: BenchmarkTask, config: PromptConfig, synthesize: bool = True
) -> str:
    """Renders a task with the marker template.

    Disabled fields keep their marker followed by an empty segment.

    Raises:
        MissingCaller: CALLER is enabled and no caller is available.
    """
    return serialize(
        task.target.decl.header_text,
        select_callers(task, config, synthesize),
        _docstring(task, config),
    )


def _fenced(text: str) -> str:
    return f"```python\n{text}\n```"


def render_natural(
    task: BenchmarkTask, config: PromptConfig, synthesize: bool = True
) -> str:
    """Renders a task as a natural language prompt.

    The prompt holds the instruction, one block per caller labeled
    `Caller 1..n`, the target header and the docstring block when present.

    Raises:
        MissingCaller: CALLER is enabled and no caller is available.
    """
    sections = [INSTRUCTION]
    for i, caller in enumerate(select_callers(task, config, synthesize), 1):
        sections.append(f"### Caller {i}\n{_fenced(caller)}")
    sections.append(
        f"### Target Function\n{_fenced(task.target.decl.header_text)}"
    )
    docstring = _docstring(task, config)
    if docstring:
        sections.append(f"### Docstring\n{docstring}")

    return "\n\n".join(sections) + "\n"


def render(
    task: BenchmarkTask, config: PromptConfig, synthesize: bool = True
) -> str:
    """Renders a task in the configured style."""
    if config.style == "natural":
        return render_natural(task, config, synthesize)
    return render_structured(task, config, synthesize)


def render_all(
    tasks: Iterable[BenchmarkTask],
    config: PromptConfig,
    synthesize: bool = True,
) -> List[PromptRecord]:
    """Renders every task, skipping tasks missing a required caller."""
    records = []
    for task in tasks:
        try:
            text = render(task, config, synthesize)
        except MissingCaller as e:
            logger.warning("prompt_skipped", task=task.task_id, error=str(e))
            continue
        records.append(
            PromptRecord(
                task_id=task.task_id,
                config=config.name,
                style=config.style,
                n_test=config.n_test,
                text=text,
                decode_hint=config.decode_hint,
            )
        )
    return records
