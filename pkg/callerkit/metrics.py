"""Provides the reference based similarity metrics.

Two metrics are available. ROUGE-L scores the longest common subsequence of
the candidate and reference tokens. CodeBLEU is the weighted sum of four
components: smoothed BLEU, BLEU with keyword n-grams weighted higher, the
share of reference syntax subtrees found in the candidate and the share of
reference def-use edges found in the candidate. Both metrics are directed:
swapping the candidate and the reference generally changes the score.
"""

import ast
import copy
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from callerkit.errors import CallerkitError
from callerkit.log import get_logger
from callerkit.models.metric import (
    CodeBleuScore,
    CodeBleuWeights,
    PairScore,
    RougeL,
    ScorePair,
)
from callerkit.tokens import is_keyword, tokenize_code

logger = get_logger("callerkit.metrics")

# Smoothing applied to n-gram orders without a single match
EPSILON = 1e-9

# The weight of an n-gram holding a keyword
KEYWORD_WEIGHT = 5.0

MAX_ORDER = 4

_SUBTREES = (
    ast.mod,
    ast.stmt,
    ast.expr,
    ast.excepthandler,
    ast.arguments,
    ast.arg,
    ast.keyword,
    ast.comprehension,
    ast.alias,
    ast.withitem,
    ast.match_case,
    ast.pattern,
)


class EmptyReference(CallerkitError):
    """Raised when the reference holds no tokens."""

    pass


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Returns the length of the longest common subsequence."""
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b):
            row.append(prev[j] + 1 if x == y else max(prev[j + 1], row[j]))
        prev = row
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeL:
    """Computes ROUGE-L over token lists.

    Args:
        candidate: The candidate tokens
        reference: The reference tokens

    Returns:
        The precision, recall and F1. Precision is 0 for an empty candidate.

    Raises:
        EmptyReference: The reference is empty.
    """
    if not reference:
        raise EmptyReference("reference holds no tokens")

    length = lcs_length(candidate, reference)
    p = length / len(candidate) if candidate else 0.0
    r = length / len(reference)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeL(precision=p, recall=r, f1=f1)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(
        tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)  # noqa
    )


def _ngram_weight(gram: Tuple[str, ...], weighted: bool) -> float:
    if weighted and any(is_keyword(t) for t in gram):
        return KEYWORD_WEIGHT
    return 1.0


def _precision(
    candidate: Sequence[str],
    reference: Sequence[str],
    n: int,
    weighted: bool,
) -> float:
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    matched = sum(
        min(c, ref[g]) * _ngram_weight(g, weighted) for g, c in cand.items()
    )
    total = sum(c * _ngram_weight(g, weighted) for g, c in cand.items())
    if matched == 0:
        return EPSILON / max(total, 1.0)
    return matched / total


def bleu(
    candidate: Sequence[str],
    reference: Sequence[str],
    weighted: bool = False,
) -> float:
    """Computes smoothed BLEU over token lists.

    Orders run from 1 up to 4, fewer for references shorter than four
    tokens, with uniform weights. Orders without a single match contribute
    a precision of epsilon over the candidate n-gram count.

    Args:
        candidate: The candidate tokens
        reference: The reference tokens
        weighted: Whether n-grams holding a keyword weigh more

    Returns:
        The score, 0 for an empty candidate.

    Raises:
        EmptyReference: The reference is empty.
    """
    if not reference:
        raise EmptyReference("reference holds no tokens")
    if not candidate:
        return 0.0

    orders = range(1, min(MAX_ORDER, len(reference)) + 1)
    log_p = sum(
        math.log(_precision(candidate, reference, n, weighted))
        for n in orders
    ) / len(orders)

    c, r = len(candidate), len(reference)
    penalty = 1.0 if c > r else math.exp(1 - r / c)
    return penalty * math.exp(log_p)


class _Normalizer(ast.NodeTransformer):
    def visit_Name(self, node: ast.Name) -> ast.Name:
        node.id = "_"
        return node

    def visit_arg(self, node: ast.arg) -> ast.arg:
        node.arg = "_"
        self.generic_visit(node)
        return node

    def _named(self, node):
        node.name = "_"
        self.generic_visit(node)
        return node

    visit_FunctionDef = _named
    visit_AsyncFunctionDef = _named
    visit_ClassDef = _named


def subtrees(tree: ast.AST) -> Counter:
    """Returns the signatures of every subtree, identifiers normalized."""
    normalized = _Normalizer().visit(copy.deepcopy(tree))
    return Counter(
        ast.dump(node, annotate_fields=False)
        for node in ast.walk(normalized)
        if isinstance(node, _SUBTREES)
    )


def ast_match(candidate: ast.AST, reference: ast.AST) -> float:
    """Returns the share of reference subtrees present in the candidate."""
    ref = subtrees(reference)
    cand = subtrees(candidate)
    matched = sum(min(c, cand[s]) for s, c in ref.items())
    return matched / sum(ref.values())


def _loads(node: Optional[ast.AST]) -> List[ast.Name]:
    if node is None:
        return []
    return [
        n
        for n in ast.walk(node)
        if isinstance(n, ast.Name) and isinstance(n.ctx, ast.Load)
    ]


def _stores(node: ast.AST) -> List[ast.Name]:
    return [
        n
        for n in ast.walk(node)
        if isinstance(n, ast.Name) and not isinstance(n.ctx, ast.Load)
    ]


def dataflow_edges(tree: ast.AST) -> Counter:
    """Returns the def-use edges of a tree under positional naming.

    Variables are renamed `v0, v1, ...` in order of first appearance. An
    edge links every name a binding defines to every name its value reads.
    Returned names link to a `<return>` sink.
    """
    names = sorted(
        (n for n in ast.walk(tree) if isinstance(n, ast.Name)),
        key=lambda n: (n.lineno, n.col_offset),
    )
    position: Dict[str, str] = {}
    for n in names:
        position.setdefault(n.id, f"v{len(position)}")

    edges: List[Tuple[str, str]] = []

    def link(targets: Iterable[ast.Name], value: Optional[ast.AST]):
        sources = _loads(value)
        for t in targets:
            for s in sources:
                edges.append((position[t.id], position[s.id]))

    for node in ast.walk(tree):
        if isinstance(node, ast.Assign):
            for target in node.targets:
                link(_stores(target), node.value)
        elif isinstance(node, (ast.AnnAssign, ast.NamedExpr)):
            link(_stores(node.target), node.value)
        elif isinstance(node, ast.AugAssign):
            stores = _stores(node.target)
            link(stores, node.value)
            edges.extend((position[t.id], position[t.id]) for t in stores)
        elif isinstance(node, (ast.For, ast.AsyncFor, ast.comprehension)):
            link(_stores(node.target), node.iter)
        elif isinstance(node, ast.withitem) and node.optional_vars:
            link(_stores(node.optional_vars), node.context_expr)
        elif isinstance(node, ast.Return):
            edges.extend(
                ("<return>", position[s.id]) for s in _loads(node.value)
            )

    return Counter(edges)


def dataflow_match(candidate: ast.AST, reference: ast.AST) -> float:
    """Returns the share of reference def-use edges present in the
    candidate, 1 when the reference has none."""
    ref = dataflow_edges(reference)
    if not ref:
        return 1.0
    cand = dataflow_edges(candidate)
    matched = sum(min(c, cand[e]) for e, c in ref.items())
    return matched / sum(ref.values())


def _parse(text: str) -> Optional[ast.AST]:
    try:
        return ast.parse(text)
    except (SyntaxError, ValueError):
        return None


def codebleu(
    candidate: str,
    reference: str,
    weights: Optional[CodeBleuWeights] = None,
) -> CodeBleuScore:
    """Computes CodeBLEU of a candidate against a reference.

    A candidate that is empty or fails to parse scores 0 on the syntax tree
    and data-flow components and is flagged.

    Args:
        candidate: The candidate source
        reference: The reference source
        weights: The component weights, 0.25 each by default

    Returns:
        The score and its components.

    Raises:
        EmptyReference: The reference holds no tokens.
    """
    weights = weights or CodeBleuWeights()
    cand_tokens = tokenize_code(candidate)
    ref_tokens = tokenize_code(reference)
    if not ref_tokens:
        raise EmptyReference("reference holds no tokens")

    flags = []
    plain = bleu(cand_tokens, ref_tokens)
    weighted = bleu(cand_tokens, ref_tokens, weighted=True)

    ref_tree = _parse(reference)
    cand_tree = _parse(candidate) if cand_tokens else None
    if not cand_tokens:
        flags.append("empty_candidate")
    if cand_tree is None:
        flags.append("candidate_parse_failure")
    if ref_tree is None:
        flags.append("reference_parse_failure")

    if cand_tree is None or ref_tree is None:
        syntax = flow = 0.0
    else:
        syntax = ast_match(cand_tree, ref_tree)
        flow = dataflow_match(cand_tree, ref_tree)

    score = (
        weights.alpha * plain
        + weights.beta * weighted
        + weights.gamma * syntax
        + weights.delta * flow
    )
    return CodeBleuScore(
        score=score,
        bleu=plain,
        weighted_ngram=weighted,
        ast_match=syntax,
        dataflow_match=flow,
        flags=flags,
    )


def score_pair(
    pair: ScorePair, weights: Optional[CodeBleuWeights] = None
) -> PairScore:
    """Scores one pair with CodeBLEU and ROUGE-L F1.

    Raises:
        EmptyReference: The reference holds no tokens.
    """
    result = codebleu(pair.candidate, pair.reference, weights)
    rouge = rouge_l(
        tokenize_code(pair.candidate), tokenize_code(pair.reference)
    )
    return PairScore(
        id=pair.id,
        codebleu=result.score,
        rouge_l_f1=rouge.f1,
        flags=result.flags,
    )


def score_pairs(
    pairs: Sequence[ScorePair],
    weights: Optional[CodeBleuWeights] = None,
    workers: int = 1,
) -> List[PairScore]:
    """Scores every pair, in input order.

    Raises:
        EmptyReference: A reference holds no tokens.
    """
    with ThreadPoolExecutor(max_workers=workers) as pool:
        scores = list(pool.map(lambda p: score_pair(p, weights), pairs))
    logger.info("pairs_scored", pairs=len(scores))
    return scores
