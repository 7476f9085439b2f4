import ast
import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st
from pydantic import ValidationError

from callerkit import metrics
from callerkit.models.metric import CodeBleuWeights, ScorePair

EPSILON = metrics.EPSILON


def brute_lcs(a, b):
    """Finds the longest subsequence of a that is also one of b."""

    def contains(seq, sub):
        it = iter(seq)
        return all(x in it for x in sub)

    for k in range(len(a), 0, -1):
        if any(contains(b, s) for s in itertools.combinations(a, k)):
            return k
    return 0


tokens = st.lists(st.sampled_from(["a", "b", "c", "("]), max_size=7)


@given(tokens, tokens)
def test_lcs_length(a, b):
    assert metrics.lcs_length(a, b) == brute_lcs(a, b)


def test_rouge_l():
    score = metrics.rouge_l(["a", "c"], ["a", "b", "c"])

    assert score.precision == 1.0
    assert score.recall == pytest.approx(2 / 3)
    assert score.f1 == pytest.approx(0.8)

    swapped = metrics.rouge_l(["a", "b", "c"], ["a", "c"])
    assert swapped.precision == pytest.approx(2 / 3)
    assert swapped.recall == 1.0


def test_rouge_l_edges():
    assert metrics.rouge_l([], ["a"]).f1 == 0.0
    assert metrics.rouge_l(["x"], ["a"]).f1 == 0.0
    assert metrics.rouge_l(["a"], ["a"]).f1 == 1.0
    with pytest.raises(metrics.EmptyReference):
        metrics.rouge_l(["a"], [])


def test_bleu_smoothing():
    cand = ["x", "=", "a", "+", "b"]
    ref = ["x", "=", "a", "-", "b"]
    expected = (0.8 * 0.5 * (1 / 3) * (EPSILON / 2)) ** 0.25

    assert metrics.bleu(cand, ref) == pytest.approx(expected)
    assert metrics.bleu(cand, ref, weighted=True) == pytest.approx(expected)


def test_bleu_keyword_weight():
    cand, ref = ["return", "x"], ["return", "y"]

    assert metrics.bleu(cand, ref) == pytest.approx(math.sqrt(0.5 * EPSILON))
    assert metrics.bleu(cand, ref, weighted=True) == pytest.approx(
        math.sqrt((5 / 6) * (EPSILON / 5))
    )


def test_bleu_brevity_penalty():
    ref = ["a", "b", "c", "d"]
    assert metrics.bleu(["a", "b"], ref) == pytest.approx(
        math.exp(1 - 2) * math.sqrt(EPSILON)
    )
    assert metrics.bleu(["a", "b", "c", "d", "e"], ref) == pytest.approx(
        0.2**0.25
    )
    assert metrics.bleu([], ref) == 0.0


def test_ast_match():
    cand = ast.parse("x = a + b")
    ref = ast.parse("x = a - b")

    assert metrics.ast_match(cand, ref) == 0.5
    assert metrics.ast_match(ast.parse("y = c - d"), ref) == 1.0


def test_dataflow_edges():
    edges = metrics.dataflow_edges(ast.parse("y = x\ny += z\nreturn y"))
    assert edges == {
        ("v0", "v1"): 1,
        ("v0", "v2"): 1,
        ("v0", "v0"): 1,
        ("<return>", "v0"): 1,
    }


def test_dataflow_match():
    ref = ast.parse("x = a - b")
    assert metrics.dataflow_match(ast.parse("x = a + b"), ref) == 1.0
    assert metrics.dataflow_match(ast.parse("x = a"), ref) == 0.5
    assert metrics.dataflow_match(ast.parse("x"), ast.parse("pass")) == 1.0


def test_codebleu():
    score = metrics.codebleu("x = a + b", "x = a - b")
    bleu = (0.8 * 0.5 * (1 / 3) * (EPSILON / 2)) ** 0.25

    assert score.bleu == pytest.approx(bleu)
    assert score.weighted_ngram == pytest.approx(bleu)
    assert score.ast_match == 0.5
    assert score.dataflow_match == 1.0
    assert score.score == pytest.approx(0.25 * (2 * bleu + 0.5 + 1.0))
    assert score.flags == []


@pytest.mark.parametrize(
    "source",
    [
        "x = 1",
        "def f(a):\n    return a",
        "def f(n):\n    total = 0\n    for i in range(n):\n"
        "        total += i\n    return total",
    ],
)
def test_codebleu_identity(source):
    assert metrics.codebleu(source, source).score == pytest.approx(1.0)


def test_codebleu_directed():
    short, long = "return x", "y = g(x)\nreturn y"
    assert metrics.codebleu(short, long).score != pytest.approx(
        metrics.codebleu(long, short).score
    )


def test_codebleu_weights():
    weights = CodeBleuWeights(alpha=0.0, beta=0.0, gamma=0.0, delta=1.0)
    score = metrics.codebleu("x = a + b", "x = a - b", weights)
    assert score.score == 1.0

    with pytest.raises(ValidationError):
        CodeBleuWeights(alpha=0.5)
    with pytest.raises(ValidationError):
        CodeBleuWeights(alpha=-0.25, beta=0.5)


def test_codebleu_flags():
    empty = metrics.codebleu("", "x = 1")
    assert empty.flags == ["empty_candidate", "candidate_parse_failure"]
    assert empty.score == 0.0

    broken = metrics.codebleu("def (", "x = 1")
    assert broken.flags == ["candidate_parse_failure"]
    assert broken.ast_match == 0.0
    assert broken.dataflow_match == 0.0

    reference = metrics.codebleu("x = (", "x = (")
    assert reference.flags == [
        "candidate_parse_failure",
        "reference_parse_failure",
    ]
    assert reference.bleu == pytest.approx(1.0)

    with pytest.raises(metrics.EmptyReference):
        metrics.codebleu("x = 1", "  # nothing")


def test_score_pairs():
    pairs = [
        ScorePair(id="b", candidate="x = 1", reference="x = 1"),
        ScorePair(id="a", candidate="y", reference="x = 1"),
    ]
    scores = metrics.score_pairs(pairs, workers=2)

    assert [s.id for s in scores] == ["b", "a"]
    assert scores[0].codebleu == pytest.approx(1.0)
    assert scores[0].rouge_l_f1 == 1.0
    assert scores[1].rouge_l_f1 == 0.0
