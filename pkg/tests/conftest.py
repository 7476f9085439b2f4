import textwrap
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pytest

from callerkit.graph import extract_repo
from callerkit.log import configure_logging
from callerkit.models.graph import CallerRef, CallGraph
from callerkit.models.source import FileFacts
from callerkit.slicer import caller_from_source

# Intra file calls, re-exports through a package, aliased imports, single
# and multiple inheritance, nested functions and constructor calls.
SHOP = {
    "shop/__init__.py": """
        from .pricing import total as compute_total
        """,
    "shop/util.py": '''
        def clamp(x, lo, hi):
            """Clamps x into [lo, hi]."""
            return max(lo, min(x, hi))
        ''',
    "shop/pricing.py": '''
        """Pricing helpers."""
        from shop.util import clamp


        def subtotal(items):
            """Sums the item prices."""
            return sum(i["price"] for i in items)


        def total(items, discount=0.0):
            """Returns the discounted total."""
            value = subtotal(items)
            return clamp(value - discount, 0, value)
        ''',
    "shop/cart.py": '''
        from shop import compute_total
        from shop.util import clamp as bound


        class Cart:
            def __init__(self, items):
                self.items = items

            def price(self):
                """Prices the cart."""
                result = compute_total(self.items)
                if result > 100:
                    return result
                return bound(result, 0, 100)

            def count(self):
                return len(self.items)


        class GiftCart(Cart):
            def describe(self):
                return self.count()

            def label(self):
                def inner(n):
                    return str(n)

                return inner(self.count())


        def checkout(items):
            cart = Cart(items)
            return cart.price()
        ''',
    "shop/mixins.py": """
        class Named:
            def name(self):
                return "named"


        class Tagged:
            def name(self):
                return "tagged"

            def tag(self):
                return self.name()


        class Product(Named, Tagged):
            def show(self):
                return self.name() + self.tag()
        """,
}

SHOP_EDGES = {
    ("shop.pricing.total", "shop.pricing.subtotal", "intra"),
    ("shop.pricing.total", "shop.util.clamp", "inter"),
    ("shop.cart.Cart.price", "shop.pricing.total", "inter"),
    ("shop.cart.Cart.price", "shop.util.clamp", "inter"),
    ("shop.cart.GiftCart.describe", "shop.cart.Cart.count", "intra"),
    (
        "shop.cart.GiftCart.label",
        "shop.cart.GiftCart.label.<locals>.inner",
        "intra",
    ),
    ("shop.cart.GiftCart.label", "shop.cart.Cart.count", "intra"),
    ("shop.cart.checkout", "shop.cart.Cart.__init__", "intra"),
    ("shop.cart.checkout", "shop.cart.Cart.price", "intra"),
    ("shop.mixins.Tagged.tag", "shop.mixins.Tagged.name", "intra"),
    ("shop.mixins.Product.show", "shop.mixins.Named.name", "intra"),
    ("shop.mixins.Product.show", "shop.mixins.Tagged.tag", "intra"),
}

# Module aliases and star imports.
GEO = {
    "geo/__init__.py": "",
    "geo/shapes.py": '''
        import math


        def area(r):
            """Area of a circle."""
            return math.pi * r * r


        def scaled(r, k):
            """Scales then measures."""
            return area(r * k)
        ''',
    "geo/report.py": '''
        import geo.shapes as shapes
        from geo.shapes import *


        def summary(radii):
            """Summarizes radii."""
            total = 0
            for r in radii:
                total += shapes.area(r)
            return total, scaled(1, 2)
        ''',
}

GEO_EDGES = {
    ("geo.shapes.scaled", "geo.shapes.area", "intra"),
    ("geo.report.summary", "geo.shapes.area", "inter"),
    ("geo.report.summary", "geo.shapes.scaled", "inter"),
}

# Test suites, undocumented and uncalled functions and a broken file.
MESSY = {
    "pkg/__init__.py": "",
    "pkg/core.py": '''
        def parse_row(line):
            """Splits a comma separated row."""
            return line.split(",")


        def load(lines):
            """Loads rows."""
            return [parse_row(line) for line in lines]


        def undocumented(x):
            return parse_row(x)


        def helper():
            """Only called from tests."""
            return 1


        def lonely():
            """Never called."""
            return 0


        def recurse(n):
            """Counts down."""
            return recurse(n - 1) if n else 0
        ''',
    "pkg/broken.py": """
        def oops(:
            pass
        """,
    "tests/test_core.py": """
        from pkg.core import helper, parse_row


        def test_parse_row():
            assert parse_row("a,b") == ["a", "b"]


        def test_helper():
            assert helper() == 1
        """,
}


def write_repo(root: Path, files: Dict[str, str]) -> Path:
    """Writes dedented files under root and returns it."""
    for path, text in files.items():
        target = root / path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(textwrap.dedent(text).lstrip("\n"))
    return root


def edge_set(graph: CallGraph) -> set:
    return {(e.caller, e.callee, e.kind) for e in graph.edges()}


def snippet_caller(text: str, target: Optional[str] = None) -> CallerRef:
    """Builds a caller from a dedented snippet."""
    return caller_from_source(textwrap.dedent(text).strip("\n"), target)


@pytest.fixture(autouse=True)
def fresh_logging():
    # Rebinds stderr, which capsys swaps out per test.
    configure_logging()


@pytest.fixture
def shop_repo(tmp_path) -> Path:
    return write_repo(tmp_path / "shop-repo", SHOP)


@pytest.fixture
def geo_repo(tmp_path) -> Path:
    return write_repo(tmp_path / "geo-repo", GEO)


@pytest.fixture
def messy_repo(tmp_path) -> Path:
    return write_repo(tmp_path / "messy-repo", MESSY)


@pytest.fixture
def shop(shop_repo) -> Tuple[List[FileFacts], CallGraph]:
    return extract_repo(shop_repo)


@pytest.fixture
def messy(messy_repo) -> Tuple[List[FileFacts], CallGraph]:
    return extract_repo(messy_repo)
