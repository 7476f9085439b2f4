import ast

import pytest
from conftest import snippet_caller

from callerkit import slicer
from callerkit.graph import direct_callers

TARGET = "pkg.io.load"

FEEDS = """
    def use(path):
        data = load(path)
        if data:
            return data["k"]
        return None
    """

ENCLOSED = """
    def run(items):
        for item in items:
            load(item)
    """

UNRELATED = """
    def count(x):
        y = load(x)
        for i in range(3):
            print(i)
        return y
    """

PLAIN = """
    def plain(x):
        return load(x)
    """

ELIF = """
    def pick(x):
        if x:
            pass
        elif load(x):
            pass
    """


def test_short_name():
    assert slicer.short_name("pkg.io.load") == "load"
    assert slicer.short_name("pkg.Cart.__init__") == "Cart"


def test_calls_target():
    assert slicer.calls_target("def f():\n    return io.load(1)", TARGET)
    assert not slicer.calls_target("def f():\n    return loader(1)", TARGET)
    assert slicer.calls_target("def f(:\n    load (1)", TARGET)


def test_signature_only():
    variant = slicer.signature_only(snippet_caller(FEEDS, "load"))
    assert variant.text == "def use(path):"
    assert variant.provenance == "snippet.use"


def test_call_site_only():
    assert (
        slicer.call_site_only(snippet_caller(FEEDS, "load"), TARGET).text
        == "data = load(path)"
    )
    assert (
        slicer.call_site_only(snippet_caller(ENCLOSED, "load"), TARGET).text
        == "load(item)"
    )

    header = snippet_caller(
        """
        def check(x):
            while load(x):
                x -= 1
        """,
        "load",
    )
    assert slicer.call_site_only(header, TARGET).text == "load(x)"


def test_data_flow_slice():
    variant = slicer.data_flow_slice(snippet_caller(FEEDS, "load"), TARGET)
    assert variant.text == 'data = load(path)\nif data:\n    return data["k"]'

    killed = snippet_caller(
        """
        def f(x):
            y = load(x)
            z = y + 1
            y = 0
            return y
        """,
        "load",
    )
    assert (
        slicer.data_flow_slice(killed, TARGET).text
        == "y = load(x)\nz = y + 1"
    )

    unbound = slicer.data_flow_slice(snippet_caller(PLAIN, "load"), TARGET)
    assert unbound.text == "return load(x)"


def test_data_flow_slice_walrus_and_await():
    caller = snippet_caller(
        """
        async def f(x):
            if (res := await load(x)) is not None:
                return res
        """,
        "load",
    )
    ctx = slicer.locate_call(caller, TARGET)
    assert slicer.bound_names(ctx) == {"res"}
    assert isinstance(slicer.result_node(ctx), ast.Await)


def test_control_flow_slice():
    feeds = slicer.control_flow_slice(snippet_caller(FEEDS, "load"), TARGET)
    assert feeds.text == 'data = load(path)\nif data:\n    return data["k"]'
    assert not feeds.fallback_used

    enclosed = slicer.control_flow_slice(
        snippet_caller(ENCLOSED, "load"), TARGET
    )
    assert enclosed.text == "for item in items:\n    load(item)"

    elif_ = slicer.control_flow_slice(snippet_caller(ELIF, "load"), TARGET)
    assert elif_.text.startswith("if x:")
    assert elif_.text.endswith("elif load(x):\n    pass")

    plain = snippet_caller(PLAIN, "load")
    fallback = slicer.control_flow_slice(plain, TARGET)
    assert fallback.fallback_used
    assert fallback.text == plain.source_text


@pytest.mark.parametrize(
    "snippet, primary",
    [
        (FEEDS, "return_feeds_block"),
        (ENCLOSED, "enclosed_by_block"),
        (UNRELATED, "unrelated_control_only"),
        (PLAIN, "no_structured_control"),
        (ELIF, "enclosed_by_block"),
    ],
)
def test_classify_call_site(snippet, primary):
    usage = slicer.classify_call_site(snippet_caller(snippet, "load"), TARGET)

    assert usage.primary == primary
    assert getattr(usage, primary)
    assert usage.no_structured_control == (primary == "no_structured_control")


def test_locate_call_recorded_site(shop):
    _, graph = shop
    (price,) = direct_callers(graph, "shop.pricing.total")

    # Called through an alias, so only the recorded site finds it
    variant = slicer.call_site_only(price, "shop.pricing.total")
    assert variant.text == "result = compute_total(self.items)"

    usage = slicer.classify_call_site(price, "shop.pricing.total")
    assert usage.primary == "return_feeds_block"


def test_locate_call_errors():
    with pytest.raises(slicer.NoCallSite):
        slicer.call_site_only(snippet_caller(PLAIN), "pkg.dump")

    caller = snippet_caller(PLAIN, "load")
    decl = caller.caller.copy(update={"source_text": "x = ("})
    broken = caller.copy(update={"caller": decl})
    with pytest.raises(slicer.ParseFailure):
        slicer.data_flow_slice(broken, TARGET)


def test_length_matched_irrelevant():
    caller = snippet_caller("def a(x):\n    return load(x)", "load")
    donor = snippet_caller("def b(y):\n    return dump(y)", "dump")
    calling = snippet_caller("def c(z):\n    return load(z)", "load")
    long = snippet_caller(
        "def d(z):\n    w = z + 1\n    v = w * 2\n    return v"
    )

    variant = slicer.length_matched_irrelevant(
        caller, [caller, calling, long, donor], TARGET
    )
    assert variant.text == donor.source_text
    assert variant.donor == "snippet.b"
    assert variant.provenance == "snippet.a"

    with pytest.raises(slicer.NoLengthMatch):
        slicer.length_matched_irrelevant(caller, [calling, long], TARGET)


def test_semantics_preserving_perturb():
    caller = snippet_caller(
        """
        def use(path):
            # read it
            data = load(path)
            return data.v0
        """,
        "load",
    )
    variant = slicer.semantics_preserving_perturb(caller, 0, TARGET)

    assert variant.text == (
        "def v1(v2):\n    v3 = load(v2)\n    return v3.v0"
    )
    assert "#" not in variant.text

    shuffled = slicer.semantics_preserving_perturb(caller, 5, TARGET)
    again = slicer.semantics_preserving_perturb(caller, 5, TARGET)
    assert shuffled.text == again.text
    assert "load(" in shuffled.text
    assert slicer.normalized_dump(
        ast.parse(shuffled.text), "load"
    ) == slicer.normalized_dump(ast.parse(caller.source_text), "load")


def test_semantics_preserving_keeps_imports_and_globals():
    caller = snippet_caller(
        """
        def use(x):
            import os
            global COUNT
            COUNT = os.sep
            return load(x)
        """,
        "load",
    )
    text = slicer.semantics_preserving_perturb(caller, 0, TARGET).text

    assert "import os" in text
    assert "global COUNT" in text
    assert "COUNT = os.sep" in text


def test_semantics_preserving_perturb_renames_per_scope():
    caller = snippet_caller(
        """
        def use(path):
            def helper(scale):
                total = scale
                return [total for total in path]
            return load(path, total, helper(scale=2))
        """,
        "load",
    )
    variant = slicer.semantics_preserving_perturb(caller, 0, TARGET)
    tree = ast.parse(variant.text)

    assert "load(v1, total, v2(scale=2))" in variant.text
    assert "v3 = scale" in variant.text
    assert "[v4 for v4 in v1]" in variant.text
    assert {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} == {
        "load",
        "scale",
        "total",
        "v1",
        "v2",
        "v3",
        "v4",
    }
    assert slicer.normalized_dump(tree, "load") == slicer.normalized_dump(
        ast.parse(caller.source_text), "load"
    )


def test_normalized_dump_tells_scopes_apart():
    inner = ast.parse(
        "def f():\n    def g():\n        x = 1\n    return load(x)"
    )
    outer = ast.parse(
        "def f():\n    def g():\n        x = 1\n    x = 2\n    return load(x)"
    )
    renamed = ast.parse(
        "def f():\n    def g():\n        y = 1\n    return load(x)"
    )

    assert slicer.normalized_dump(inner, "load") == slicer.normalized_dump(
        renamed, "load"
    )
    assert "id='x'" in slicer.normalized_dump(inner, "load")
    assert "id='x'" not in slicer.normalized_dump(outer, "load")


def test_usage_report():
    enclosed = slicer.classify_call_site(
        snippet_caller(ENCLOSED, "load"), TARGET
    )
    plain = slicer.classify_call_site(snippet_caller(PLAIN, "load"), TARGET)
    report = slicer.usage_report(
        [("t1", enclosed), ("t1", plain), ("t2", enclosed)]
    )

    assert report.instances == 3
    assert report.tasks == 2
    rows = {r.label: r for r in report.rows}
    assert rows["enclosed_by_block"].instance_pct == pytest.approx(200 / 3)
    assert rows["enclosed_by_block"].task_pct == 100.0
    assert rows["no_structured_control"].task_pct == 50.0
    assert rows["return_feeds_block"].instances == 0
    assert report.lines()[0] == (
        "enclosed_by_block account for 66.67% instances "
        "and appear in 100.00% tasks"
    )


def test_caller_from_source():
    caller = slicer.caller_from_source(
        "def a():\n    pass\n\ndef b():\n    return load(1)", "load"
    )
    assert caller.qname == "snippet.b"
    assert caller.caller.span == (1, 5)
    assert [s.callee_expr_text for s in caller.sites] == ["load(1)"]

    assert slicer.caller_from_source("def a():\n    pass").qname == "snippet.a"
    with pytest.raises(slicer.ParseFailure):
        slicer.caller_from_source("x = 1")
    with pytest.raises(slicer.ParseFailure):
        slicer.caller_from_source("def (:")


@pytest.mark.parametrize(
    "kind",
    [
        "signature_only",
        "call_site_only",
        "data_flow",
        "control_flow",
        "semantics_preserving",
        "full",
    ],
)
def test_make_variant(kind):
    variant = slicer.make_variant(kind, snippet_caller(FEEDS, "load"), TARGET)
    assert variant.kind == kind
    assert variant.provenance == "snippet.use"
