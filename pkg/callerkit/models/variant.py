"""Provides models for caller context variants and call site usage
classification."""

from typing import List, Optional

from callerkit.models.base import Base
from callerkit.types import UsageLabel, VariantKind


class CallerVariant(Base):
    """A transformed calling context.

    Attributes:
        kind: The variant kind.
        text: The snippet.
        fallback_used: Whether a control flow slice fell back to the full
            caller.
        provenance: The qname of the caller the variant derives from.
        donor: The qname of the unrelated snippet of a length matched
            variant.
        source_id: The instance or task the caller belongs to.
    """

    kind: VariantKind
    text: str
    fallback_used: bool = False
    provenance: str = ""
    donor: Optional[str] = None
    source_id: Optional[str] = None


class UsageClass(Base):
    """The structural classification of a call site.

    Attributes:
        enclosed_by_block: The call sits inside a structured block.
        return_feeds_block: The call's result reaches a block condition.
        unrelated_control_only: The caller holds blocks unrelated to the
            call and its uses.
        no_structured_control: No structured block relates to the call.
        primary: The single class chosen by precedence.
    """

    enclosed_by_block: bool = False
    return_feeds_block: bool = False
    unrelated_control_only: bool = False
    no_structured_control: bool = False
    primary: UsageLabel


class UsageRow(Base):
    """The share of instances and tasks of one usage class."""

    label: UsageLabel
    instances: int
    instance_pct: float
    task_pct: float

    def line(self) -> str:
        return (
            f"{self.label} account for {self.instance_pct:.2f}% instances "
            f"and appear in {self.task_pct:.2f}% tasks"
        )


class UsageReport(Base):
    """Usage class frequencies over (task, caller) instances."""

    instances: int
    tasks: int
    rows: List[UsageRow] = []

    def lines(self) -> List[str]:
        return [r.line() for r in self.rows]
