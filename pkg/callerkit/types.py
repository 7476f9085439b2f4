"""Provides the types used throughout the package."""

from typing import Literal, Union

# The kind of a call graph edge
EdgeKind = Literal["intra", "inter", "ambiguous"]

# How call-site hits are counted when a resolution has several candidates
CountingMode = Literal["all_candidates", "first_candidate"]

# The split a repository contributes to
Split = Literal["train", "bench"]

# The kind of an import binding
ImportKind = Literal["module", "symbol"]

# The kind of a function parameter
ParamKind = Literal[
    "positional_only",
    "positional",
    "var_positional",
    "keyword_only",
    "var_keyword",
]

# The caller-context variants the slicer can produce
VariantKind = Literal[
    "signature_only",
    "call_site_only",
    "data_flow",
    "control_flow",
    "length_matched_irrelevant",
    "semantics_preserving",
    "full",
]

# The primary structural class of a call site
UsageLabel = Literal[
    "enclosed_by_block",
    "return_feeds_block",
    "unrelated_control_only",
    "no_structured_control",
]

# The fields a prompt can carry
PromptField = Literal["HEADER", "CALLER", "NL"]

# The layout of a rendered prompt
PromptStyle = Literal["structured", "natural"]

# How many callers a prompt aggregates
NTest = Union[Literal[1, 2, 3], Literal["all"]]

# The status of executing a candidate against its drivers
Status = Literal["pass", "fail", "timeout", "crash", "setup_error"]

# The sandbox backend used to execute drivers
Backend = Literal["proc", "container"]

# The kind of an observable requirement a call site places on its callee
RequirementKind = Literal[
    "RETURN_SUBSCRIPT",
    "RETURN_ATTR",
    "RETURN_METHOD",
    "RETURN_ITERATED",
    "RETURN_TRUTH_TEST",
    "RETURN_COMPARED",
    "RETURN_UNPACKED",
    "RAISES_HANDLED",
    "ARG_SHAPE",
]
