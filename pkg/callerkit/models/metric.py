"""Provides models for the reference based similarity metrics."""

import math
from typing import List

from pydantic import Field, root_validator

from callerkit.models.base import Base


class CodeBleuWeights(Base):
    """The weights of the four CodeBLEU components.

    Attributes:
        alpha: The weight of plain BLEU.
        beta: The weight of the keyword weighted n-gram match.
        gamma: The weight of the syntax tree match.
        delta: The weight of the data-flow match.
    """

    alpha: float = Field(0.25, ge=0.0)
    beta: float = Field(0.25, ge=0.0)
    gamma: float = Field(0.25, ge=0.0)
    delta: float = Field(0.25, ge=0.0)

    @root_validator(skip_on_failure=True)
    def _sum_to_one(cls, values):
        total = sum(values[k] for k in ("alpha", "beta", "gamma", "delta"))
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError(f"weights must sum to 1, got {total}")
        return values


class RougeL(Base):
    """ROUGE-L precision, recall and F1 of a candidate against a
    reference."""

    precision: float
    recall: float
    f1: float


class CodeBleuScore(Base):
    """A CodeBLEU score with its components.

    Attributes:
        score: The weighted sum of the components.
        bleu: Smoothed BLEU over code tokens.
        weighted_ngram: BLEU with keyword n-grams weighted higher.
        ast_match: The share of reference subtrees found in the candidate.
        dataflow_match: The share of reference def-use edges found in the
            candidate.
        flags: Set when the candidate is empty or fails to parse.
    """

    score: float
    bleu: float
    weighted_ngram: float
    ast_match: float
    dataflow_match: float
    flags: List[str] = []


class ScorePair(Base):
    """A candidate and reference to score."""

    id: str
    candidate: str
    reference: str


class PairScore(Base):
    """The scores of one pair."""

    id: str
    codebleu: float
    rouge_l_f1: float
    flags: List[str] = []
