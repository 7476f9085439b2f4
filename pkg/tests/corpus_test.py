import textwrap

import pytest
from conftest import snippet_caller
from hypothesis import given
from hypothesis import strategies as st

from callerkit import corpus
from callerkit.corpus import eligible_callers
from callerkit.graph import direct_callers
from callerkit.models.bench import BenchmarkTask
from callerkit.models.corpus import (
    Sidecar,
    TargetFunction,
    TokenCounts,
    TrainingInstance,
)
from callerkit.parse import parse_file

TARGET = textwrap.dedent(
    '''
    def target(x):
        """Doubles x."""
        return x * 2
    '''
).lstrip("\n")


def target_decl():
    return parse_file(TARGET, "lib/core.py").functions[0]


def target_with(m: int) -> TargetFunction:
    callers = [
        snippet_caller(
            f"""
            def caller_{i}(y):
                return target(y + {i})
            """,
            "target",
        )
        for i in range(m)
    ]
    return TargetFunction(decl=target_decl(), callers=callers, repo_id="r")


def instance_with(id: str, task_len: int, target_len: int):
    return TrainingInstance(
        id=id,
        repo="r",
        target_qname="t",
        header="def t():",
        body="pass",
        serialized="",
        token_counts=TokenCounts.of(task_len, target_len),
    )


def test_select_targets(messy):
    facts, graph = messy
    targets, exclusions = corpus.select_targets(graph, facts, repo_id="m")

    assert [t.decl.qname for t in targets] == ["pkg.core.parse_row"]
    assert [c.qname for c in targets[0].callers] == [
        "pkg.core.load",
        "pkg.core.undocumented",
    ]
    assert targets[0].repo_id == "m"

    reasons = {e.qname: e.reason for e in exclusions}
    assert reasons == {
        "pkg.core.load": "no caller",
        "pkg.core.undocumented": "no description",
        "pkg.core.helper": "only test callers",
        "pkg.core.lonely": "no caller",
        "pkg.core.recurse": "no external caller",
        "tests.test_core.test_parse_row": "test directory",
        "tests.test_core.test_helper": "test directory",
    }


def test_exclusion_reason_policy(messy):
    facts, graph = messy
    policy = corpus.CorpusPolicy(require_docstring=False)
    targets, _ = corpus.select_targets(graph, facts, policy)

    assert "pkg.core.undocumented" not in [t.decl.qname for t in targets]
    assert "pkg.core.parse_row" in [t.decl.qname for t in targets]


def test_assertion_density():
    source = textwrap.dedent(
        '''
        def check(x):
            """Checks."""
            assert x
            self.assertEqual(x, 1)
            y = x
            return y
        '''
    ).lstrip("\n")
    decl = parse_file(source, "m.py").functions[0]

    assert corpus.assertion_density(decl) == 0.5
    assert corpus.is_test_artifact("m.py", decl)
    assert corpus.exclusion_reason(decl, []) == "assertion density"
    assert not corpus.is_test_artifact(
        "m.py", decl, corpus.CorpusPolicy(assertion_density=0.6)
    )


def test_is_test_artifact_paths():
    decl = target_decl()
    for path in ["tests/a.py", "pkg/test/b.py", "test_x.py", "conftest.py"]:
        assert corpus.is_test_artifact(path, decl)
    assert not corpus.is_test_artifact("lib/core.py", decl)


@pytest.mark.parametrize("m", range(1, 7))
def test_expand_instances_one_caller(m):
    target = target_with(m)
    instances = corpus.expand_instances(target, n_train=1)

    assert len(instances) == m
    assert [i.caller_qnames for i in instances] == [
        [c.qname] for c in target.callers
    ]
    assert all(i.flags == [] for i in instances)


@pytest.mark.parametrize("m", range(1, 7))
@pytest.mark.parametrize("n_train", [2, 3])
def test_expand_instances_many_callers(m, n_train):
    target = target_with(m)
    instances = corpus.expand_instances(target, n_train=n_train, seed=7)

    assert len(instances) == m
    for i, instance in enumerate(instances):
        qnames = instance.caller_qnames
        assert qnames[0] == target.callers[i].qname
        assert len(qnames) == min(n_train, m)
        assert len(set(qnames)) == len(qnames)
        assert ("short" in instance.flags) == (m < n_train)

    again = corpus.expand_instances(target, n_train=n_train, seed=7)
    assert [i.id for i in again] == [i.id for i in instances]


def test_expand_instances_no_caller():
    target = TargetFunction(decl=target_decl())
    with pytest.raises(corpus.NoEligibleCaller):
        corpus.expand_instances(target)


def test_make_instance_layout():
    target = target_with(2)
    instance = corpus.expand_instances(target, n_train=2)[0]

    assert instance.serialized == (
        "<func>\ndef target(x):\n<calledby>\n"
        + target.callers[0].source_text
        + "\n\n"
        + target.callers[1].source_text
        + "\n<docstring>\nDoubles x.\n"
    )
    assert instance.body == '"""Doubles x."""\nreturn x * 2'
    assert instance.token_counts.total_len == (
        instance.token_counts.task_len + instance.token_counts.target_len
    )


_PIECES = [
    "",
    "    return t()",
    "    s = '''",
    "x'''",
    "\\",
    "\\\\z",
    "# col zero",
    "<func>",
    "<\\calledby>",
    "    <docstring>",
]
_SEGMENT = st.lists(
    st.sampled_from(["def t(x):", "Doubles x.", "<func>", "<\\docstring>"])
    | st.sampled_from(["\n", "\n\n", "\\", "<calledby>", " "]),
    max_size=6,
).map("".join)


@given(
    _SEGMENT,
    st.lists(
        st.lists(st.sampled_from(_PIECES), max_size=6).map(
            lambda lines: "\n".join(["def g():"] + lines)
        ),
        max_size=3,
    ),
    _SEGMENT,
)
def test_parse_serialized_inverts_serialize(header, callers, docstring):
    text = corpus.serialize(header, callers, docstring)

    for marker in corpus.MARKERS:
        assert text.count(marker) == 1
    assert corpus.parse_serialized(text) == (header, callers, docstring)


def test_serialize_escapes_blank_lines_and_markers():
    caller = 'def g():\n    s = """a\n\nb"""\n    return t(s)'
    other = "def h():\n    t(1)"
    text = corpus.serialize("def t(s):", [caller, other], "<func>")

    assert text == (
        "<func>\ndef t(s):\n<calledby>\n"
        'def g():\n    s = """a\n\n\\b"""\n    return t(s)'
        "\n\ndef h():\n    t(1)\n<docstring>\n<\\func>\n"
    )
    assert corpus.parse_serialized(text) == (
        "def t(s):",
        [caller, other],
        "<func>",
    )


@pytest.mark.parametrize(
    "text",
    [
        "<func>\nh\n<docstring>\nd\n",
        "<func>\nh\n<calledby>\n<func>\n<docstring>\nd\n",
        "<calledby>\nc\n<func>\nh\n<docstring>\nd\n",
    ],
)
def test_parse_serialized_malformed(text):
    with pytest.raises(corpus.SerializationError):
        corpus.parse_serialized(text)


def test_augment_two_hop(shop):
    _, graph = shop
    decl = graph.functions["shop.pricing.total"]
    callers = eligible_callers(decl, direct_callers(graph, decl.qname))
    target = TargetFunction(decl=decl, callers=callers)
    (instance,) = corpus.expand_instances(target)
    augmented = corpus.augment_two_hop(instance, graph)

    checkout = graph.functions["shop.cart.checkout"]
    price = graph.functions["shop.cart.Cart.price"]
    assert augmented.hop_depth == 2
    assert augmented.caller_qnames == ["shop.cart.Cart.price"]
    assert augmented.callers == [
        checkout.source_text + "\n" + price.source_text
    ]
    assert "no_second_hop" not in augmented.flags
    assert augmented.id != instance.id


def test_augment_two_hop_without_grandparent(shop):
    _, graph = shop
    decl = graph.functions["shop.cart.Cart.price"]
    target = TargetFunction(
        decl=decl, callers=direct_callers(graph, decl.qname)
    )
    (instance,) = corpus.expand_instances(target)
    augmented = corpus.augment_two_hop(instance, graph, decl)

    assert augmented.caller_qnames == ["shop.cart.checkout"]
    assert augmented.callers == instance.callers
    assert "no_second_hop" in augmented.flags


def test_without_callers():
    instance = corpus.expand_instances(target_with(1))[0]
    bare = corpus.without_callers(instance)

    assert bare.callers == []
    assert "<calledby>\n\n<docstring>" in bare.serialized
    assert bare.id != instance.id
    assert bare.token_counts.target_len == instance.token_counts.target_len


def test_dedup():
    instance = corpus.expand_instances(target_with(1))[0]
    assert corpus.dedup([instance, instance.copy()]) == [instance]


def test_build_corpus(messy):
    facts, graph = messy
    instances = corpus.build_corpus(graph, facts, "m", n_train=2, seed=3)

    assert len(instances) == 2
    assert {tuple(i.caller_qnames) for i in instances} == {
        ("pkg.core.load", "pkg.core.undocumented"),
        ("pkg.core.undocumented", "pkg.core.load"),
    }
    assert all(i.repo == "m" for i in instances)

    two_hop = corpus.build_corpus(graph, facts, "m", two_hop=True)
    assert all(i.hop_depth == 2 for i in two_hop)


def test_corpus_stats():
    instances = [instance_with(str(i), i, 2 * i) for i in range(1, 11)]
    stats = corpus.corpus_stats(instances)

    assert stats.count == 10
    assert stats.task.mean == 5.5
    assert stats.task.median == 5
    assert stats.task.p90 == 9
    assert stats.task.p95 == 10
    assert stats.task.p99 == 10
    assert stats.target.median == 10
    assert stats.total.p90 == 27
    assert "Target Code Length" in stats.table()


def test_corpus_stats_sidecar(tmp_path):
    instances = [instance_with("a", 1, 1), instance_with("b", 3, 3)]
    path = tmp_path / "counts.json"
    path.write_text('{"a": {"task_len": 100, "target_len": 50}}')
    stats = corpus.corpus_stats(instances, corpus.load_sidecar(path))

    assert stats.task.mean == 51.5
    assert stats.target.median == 3
    assert isinstance(corpus.load_sidecar(path), Sidecar)


def test_corpus_stats_empty():
    with pytest.raises(corpus.EmptyCorpus):
        corpus.corpus_stats([])


def test_assert_no_leakage():
    target = target_with(1)
    instance = corpus.expand_instances(target)[0]
    task = BenchmarkTask(task_id="t", repo="bench", target=target)

    with pytest.raises(corpus.LeakageError) as e:
        corpus.assert_no_leakage([instance], [task])
    assert e.value.qnames == ["lib.core.target"]

    other = parse_file(
        'def other():\n    """Other."""\n    return 1\n', "o.py"
    ).functions[0]
    unrelated = BenchmarkTask(
        task_id="o", repo="bench", target=TargetFunction(decl=other)
    )
    corpus.assert_no_leakage([instance], [unrelated])


def test_serialize_instance_matches_serialized():
    instance = corpus.expand_instances(target_with(2), n_train=2)[0]

    assert corpus.serialize_instance(instance) == instance.serialized
