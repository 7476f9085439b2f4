"""Provides the deterministic code tokenizer shared by the corpus statistics
and the similarity metrics.

Identifiers, keywords, numbers, string literals and operators each count as a
single token. Comments and whitespace are discarded.
"""

import keyword
import re
from typing import FrozenSet, List

KEYWORDS: FrozenSet[str] = frozenset(keyword.kwlist)

_STRING = r"""
    (?:[rRbBuUfF]{0,2})
    (?:'''[\s\S]*?'''|\"\"\"[\s\S]*?\"\"\"
      |'(?:\\.|[^'\\\n])*'|"(?:\\.|[^"\\\n])*")
"""

_NUMBER = r"""
    0[xX][0-9a-fA-F_]+|0[bB][01_]+|0[oO][0-7_]+
    |(?:\d[\d_]*(?:\.[\d_]*)?|\.\d[\d_]*)(?:[eE][+-]?\d+)?[jJ]?
"""

_OPERATOR = r"""
    \*\*=|//=|>>=|<<=|\.\.\.|->|:=|==|!=|<=|>=|\*\*|//|<<|>>
    |\+=|-=|\*=|/=|%=|&=|\|=|\^=|@=|\S
"""

_TOKEN = re.compile(
    rf"""
    (?P<comment>\#[^\r\n]*)
    |(?P<string>{_STRING})
    |(?P<number>{_NUMBER})
    |(?P<name>[^\W\d]\w*)
    |(?P<space>\s+)
    |(?P<op>{_OPERATOR})
    """,
    re.VERBOSE,
)


def tokenize_code(text: str) -> List[str]:
    """Splits source text into a flat list of tokens.

    Args:
        text: The source text to tokenize

    Returns:
        The tokens in source order.
    """
    tokens = []
    for match in _TOKEN.finditer(text):
        kind = match.lastgroup
        if kind in ("comment", "space"):
            continue
        tokens.append(match.group())

    return tokens


def count_tokens(text: str) -> int:
    """Returns the number of tokens in the given source text."""
    return len(tokenize_code(text))


def is_keyword(token: str) -> bool:
    return token in KEYWORDS
