from .base import Base, BaseList, Provenance  # noqa: F401
from .bench import (  # noqa: F401
    BehaviorSketch,
    BenchmarkTask,
    CoverageReport,
    DriverScript,
    Requirement,
    UsagePattern,
)
from .corpus import (  # noqa: F401
    Corpus,
    LengthStats,
    TargetFunction,
    TrainingInstance,
)
from .evaluation import Candidate, EvalReport, Limits, Outcome  # noqa: F401
from .graph import CallEdge, CallerRef, CallGraph, Diagnostics  # noqa: F401
from .metric import CodeBleuScore, CodeBleuWeights, RougeL  # noqa: F401
from .prompt import PromptConfig, PromptRecord  # noqa: F401
from .repo import Manifest, ManifestEntry, RepoSnapshot  # noqa: F401
from .source import CallSite, FileFacts, FunctionDecl  # noqa: F401
from .variant import CallerVariant, UsageClass, UsageReport  # noqa: F401
