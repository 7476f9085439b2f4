"""Provides models for prompt configurations and rendered prompts."""

from typing import Dict, List, Optional

from pydantic import validator

from callerkit.models.base import Base
from callerkit.types import NTest, PromptField, PromptStyle

# The legal field combinations, by name
CONFIGS: Dict[str, List[PromptField]] = {
    "header": ["HEADER"],
    "header+nl": ["HEADER", "NL"],
    "header+caller": ["HEADER", "CALLER"],
    "header+caller+nl": ["HEADER", "CALLER", "NL"],
}


class DecodeHint(Base):
    """Sampling parameters passed through to the generator."""

    top_p: float = 0.95
    temperature: float = 0.6


class PromptConfig(Base):
    """The fields, layout and caller aggregation of a prompt.

    Attributes:
        fields: The enabled fields, HEADER always among them.
        style: `structured` markers or `natural` prose.
        n_test: How many callers to aggregate, or `all`.
        decode_hint: Sampling metadata, never used for rendering.
    """

    fields: List[PromptField] = ["HEADER"]
    style: PromptStyle = "structured"
    n_test: NTest = 1
    decode_hint: DecodeHint = DecodeHint()

    @validator("fields")
    def _legal_fields(cls, v: List[PromptField]) -> List[PromptField]:
        ordered = [f for f in ("HEADER", "CALLER", "NL") if f in v]
        if ordered not in CONFIGS.values():
            raise ValueError(f"illegal field combination: {v}")
        return ordered

    @classmethod
    def named(
        cls, name: str, style: PromptStyle = "structured", n_test: NTest = 1
    ) -> "PromptConfig":
        """Builds a configuration from its name, e.g. `header+caller+nl`.

        Raises:
            ValueError: The name is unknown.
        """
        try:
            fields = CONFIGS[name]
        except KeyError:
            raise ValueError(
                f"unknown prompt config {name!r}, expected one of "
                + ", ".join(CONFIGS)
            ) from None
        return cls(fields=fields, style=style, n_test=n_test)

    @property
    def name(self) -> str:
        return next(k for k, v in CONFIGS.items() if v == self.fields)

    @property
    def caller(self) -> bool:
        return "CALLER" in self.fields

    @property
    def nl(self) -> bool:
        return "NL" in self.fields


class PromptRecord(Base):
    """A rendered prompt."""

    task_id: str
    config: str
    style: PromptStyle
    n_test: NTest
    text: str
    decode_hint: Optional[DecodeHint] = None
