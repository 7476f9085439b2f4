import ast
import textwrap

import pytest
from pydantic import ValidationError

from callerkit import parse
from callerkit.models.source import FunctionDecl

MODULE = textwrap.dedent(
    '''
    """A module."""
    import os.path
    from . import sibling
    from .other import thing as alias
    from ..up import *

    LIMIT = 10
    if LIMIT:
        FLAG = True


    @decorate
    @pkg.wrap(1)
    def first(a, /, b: int = 2, *args, c, d="x", **kwargs):
        """  Raw docstring.
        """
        x = helper(a)
        return os.path.join(x, b)


    async def second():
        await first(1, c=2)


    class Outer(Base):
        def method(self):
            def inner():
                return self.method()

            return inner()

        @staticmethod
        def static():
            return 1


    def first():
        pass
    '''
).lstrip("\n")


@pytest.fixture
def facts():
    return parse.parse_file(MODULE, "pkg/sub/mod.py")


def test_module_qname_for():
    assert parse.module_qname_for("pkg/sub/mod.py") == "pkg.sub.mod"
    assert parse.module_qname_for("pkg/__init__.py") == "pkg"
    assert parse.module_qname_for("top.py") == "top"
    assert parse.module_qname_for("pkg\\win.py") == "pkg.win"


def test_resolve_relative():
    assert parse.resolve_relative("a.b.c", False, 1, "d") == "a.b.d"
    assert parse.resolve_relative("a.b.c", False, 2, None) == "a"
    assert parse.resolve_relative("a.b", True, 1, "c") == "a.b.c"
    assert parse.resolve_relative("a", False, 0, "x.y") == "x.y"
    assert parse.resolve_relative("a", False, 4, "z") == "z"


def test_dotted_parts():
    def parts(text):
        return parse.dotted_parts(ast.parse(text, mode="eval").body)

    assert parts("a.b.c") == ["a", "b", "c"]
    assert parts("super().run") == ["super()", "run"]
    assert parts("f().g") == []
    assert parts("x[0].y") == []


def test_header_end():
    text = "def f(a,\n      b: dict = {'k': 1}) -> int:\n    return a"
    assert text[: parse.header_end(text)].endswith("-> int:")
    assert parse.header_end("def g(): pass") == len("def g():")


def test_decode_source():
    assert parse.decode_source(b"\xef\xbb\xbfx = 1", "a.py") == "x = 1"
    latin = "# -*- coding: latin-1 -*-\ns = 'é'\n".encode("latin-1")
    assert "é" in parse.decode_source(latin, "a.py")

    with pytest.raises(parse.DecodeError):
        parse.decode_source(b"\x00\x01", "a.py")
    with pytest.raises(parse.DecodeError):
        parse.decode_source(b"\xff\xfe invalid", "a.py")


def test_parse_file_syntax_error():
    with pytest.raises(parse.SourceSyntaxError) as e:
        parse.parse_file("def oops(:\n    pass\n", "bad.py")
    assert e.value.module_path == "bad.py"
    assert e.value.line == 1


def test_parse_file_functions(facts):
    qnames = [f.qname for f in facts.functions]
    assert qnames == [
        "pkg.sub.mod.second",
        "pkg.sub.mod.Outer.method",
        "pkg.sub.mod.Outer.method.<locals>.inner",
        "pkg.sub.mod.Outer.static",
        "pkg.sub.mod.first",
    ]
    assert facts.duplicates == ["pkg.sub.mod.first"]

    method = facts.function("pkg.sub.mod.Outer.method")
    assert method.is_method
    assert method.enclosing_class == "pkg.sub.mod.Outer"
    assert method.receiver_name == "self"
    assert method.nested == {
        "inner": "pkg.sub.mod.Outer.method.<locals>.inner"
    }

    inner = facts.function("pkg.sub.mod.Outer.method.<locals>.inner")
    assert not inner.is_method
    assert inner.enclosing_function == "pkg.sub.mod.Outer.method"
    assert inner.source_text.startswith("def inner():")

    static = facts.function("pkg.sub.mod.Outer.static")
    assert static.receiver_name is None
    assert static.decorators == ["staticmethod"]

    assert facts.function("pkg.sub.mod.second").is_async


def test_parse_file_decorated():
    facts = parse.parse_file(MODULE.rsplit("def first():", 1)[0], "m.py")
    decl = facts.function("m.first")

    assert decl.decorators == ["decorate", "pkg.wrap"]
    assert decl.decorator_line == 12
    assert decl.span[0] == 14
    assert decl.source_text.startswith("def first(")
    assert decl.header_text.endswith("**kwargs):")
    assert decl.body_text.startswith('"""  Raw docstring.')
    assert decl.docstring == "  Raw docstring.\n    "

    kinds = [(p.name, p.kind, p.default) for p in decl.params]
    assert kinds == [
        ("a", "positional_only", None),
        ("b", "positional", "2"),
        ("args", "var_positional", None),
        ("c", "keyword_only", None),
        ("d", "keyword_only", '"x"'),
        ("kwargs", "var_keyword", None),
    ]
    assert decl.params[1].annotation == "int"
    assert decl.local_names[:6] == ["a", "b", "c", "d", "args", "kwargs"]
    assert "x" in decl.local_names
    assert decl.constructed == {"x": "helper"}


def test_parse_file_spans():
    facts = parse.parse_file(
        "def short(): pass\n\n\ndef tall(x):\n    return x\n", "m.py"
    )
    short = facts.function("m.short")
    tall = facts.function("m.tall")

    assert short.span == (1, 1)
    assert short.header_text == "def short():"
    assert short.body_text == "pass"
    assert tall.span == (4, 5)

    with pytest.raises(ValidationError):
        FunctionDecl.parse_obj({**tall.dict(), "span": (5, 4)})


def test_parse_file_imports(facts):
    imports = {(i.local_alias, i.target_qname, i.kind) for i in facts.imports}
    assert ("os", "os", "module") in imports
    assert ("sibling", "pkg.sub.sibling", "symbol") in imports
    assert ("alias", "pkg.sub.other.thing", "symbol") in imports
    assert [s.module for s in facts.star_imports] == ["pkg.up"]


def test_parse_file_globals(facts):
    assert [g.name for g in facts.globals] == ["LIMIT", "FLAG"]


def test_parse_file_classes(facts):
    (outer,) = facts.classes
    assert outer.qname == "pkg.sub.mod.Outer"
    assert outer.bases == ["Base"]
    assert outer.methods == [
        "pkg.sub.mod.Outer.method",
        "pkg.sub.mod.Outer.static",
    ]
    assert [f.name for f in facts.methods_of(outer)] == ["method", "static"]


def test_parse_file_calls():
    facts = parse.parse_file(MODULE.rsplit("def first():", 1)[0], "m.py")
    calls = [(c.caller_qname, c.callee_expr_text) for c in facts.calls]

    assert calls == [
        ("m.first", "helper(a)"),
        ("m.first", "os.path.join(x, b)"),
        ("m.second", "first(1, c=2)"),
        ("m.Outer.method.<locals>.inner", "self.method()"),
        ("m.Outer.method", "inner()"),
    ]

    join = facts.calls[1]
    assert join.func_parts == ["os", "path", "join"]
    assert join.receiver_chain == "os.path"
    assert join.enclosing_statement_text == "return os.path.join(x, b)"
    assert join.callee_name == "join"

    awaited = facts.calls[2]
    assert awaited.positional_count == 1
    assert awaited.keywords == ["c"]
    assert awaited.arg_texts == ["1", "c=2"]


def test_parse_file_compound_header():
    source = "def f(xs):\n    for x in load(xs):\n        print(x)\n"
    facts = parse.parse_file(source, "m.py")
    load, show = facts.calls

    assert load.in_compound_header
    assert load.enclosing_statement_text == "load(xs)"
    assert not show.in_compound_header
    assert show.enclosing_statement_text == "print(x)"


def test_parse_file_package():
    facts = parse.parse_file("from .a import b\n", "pkg/__init__.py")
    assert facts.is_package
    assert facts.module_qname == "pkg"
    assert facts.imports[0].target_qname == "pkg.a.b"
