__version__ = "0.1.0"

from callerkit.bench import (  # noqa: F401, E402
    behavior_sketch,
    build_task,
    extract_requirements,
    group_usage_patterns,
    lint_suite,
    normalize_driver,
    reference_sanity,
    synthesize_minimal_invocation,
)
from callerkit.corpus import (  # noqa: F401, E402
    build_corpus,
    corpus_stats,
    expand_instances,
    parse_serialized,
    select_targets,
    serialize,
)
from callerkit.graph import (  # noqa: F401, E402
    build_call_graph,
    direct_callers,
    extract_repo,
)
from callerkit.harness import (  # noqa: F401, E402
    aggregate,
    evaluate,
    pass_at_k,
    splice_candidate,
)
from callerkit.ingest import (  # noqa: F401, E402
    apply_repo_filters,
    load_manifest,
    snapshot_repo,
)
from callerkit.metrics import codebleu, rouge_l  # noqa: F401, E402
from callerkit.parse import parse_file  # noqa: F401, E402
from callerkit.prompt import render  # noqa: F401, E402
from callerkit.resolve import build_symbol_table  # noqa: F401, E402
from callerkit.slicer import make_variant  # noqa: F401, E402
from callerkit.tokens import tokenize_code  # noqa: F401, E402
