"""Provides manifest loading, repository snapshots, repository filters and
the repository level split checks.
"""

import hashlib
import re
import subprocess
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import orjson
from pydantic import ValidationError

from callerkit.errors import CallerkitError
from callerkit.graph import source_files
from callerkit.log import get_logger
from callerkit.models.base import Base, Provenance, write_jsonl
from callerkit.models.repo import (
    FilterDecision,
    Manifest,
    ManifestEntry,
    RepoSnapshot,
    SnapshotRecord,
    normalize_url,
)
from callerkit.parse import module_qname_for

logger = get_logger("callerkit.ingest")

# The revision naming a local directory snapshotted as it is
WORKTREE = "WORKTREE"

_NUMBERED = re.compile(r"^\D*\d+")


class SchemaError(CallerkitError):
    """Raised when a manifest does not match its schema.

    Attributes:
        path: The dotted and indexed path of the offending field.
    """

    def __init__(self, path: str, msg: str):
        self.path = path
        super().__init__(f"{path}: {msg}")


class SplitOverlapError(CallerkitError):
    """Raised when a repository belongs to both splits.

    Attributes:
        urls: The offending repository ids.
    """

    def __init__(self, urls: Sequence[str]):
        self.urls = sorted(set(urls))
        super().__init__(
            "repositories in both splits: " + ", ".join(self.urls)
        )


class SplitMembershipError(CallerkitError):
    """Raised when a repository is not listed under the split it feeds.

    Attributes:
        urls: The unlisted repository ids.
    """

    def __init__(self, urls: Sequence[str], split: str):
        self.urls = sorted(set(urls))
        super().__init__(
            f"repositories outside the {split} split: " + ", ".join(self.urls)
        )


class FetchError(CallerkitError):
    """Raised when a repository cannot be fetched."""

    pass


class RevisionNotFound(CallerkitError):
    """Raised when the pinned revision does not exist."""

    pass


class RepoFilters(Base):
    """The thresholds of the repository filters.

    Attributes:
        min_stars: Minimum popularity.
        recency_months: Maximum age of the last commit, in months.
        min_files: Minimum number of source files.
        excluded_tags: Domain tags marking algorithmic or tutorial datasets.
    """

    min_stars: int = 100
    recency_months: int = 24
    min_files: int = 2
    excluded_tags: List[str] = [
        "algorithmic",
        "competitive-programming",
        "leetcode",
        "tutorial",
    ]


def _error_path(loc: Iterable) -> str:
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        elif part != "__root__":
            path += f".{part}" if path else str(part)
    return path or "<root>"


def load_manifest(path: Path) -> Manifest:
    """Loads and validates a manifest file.

    Args:
        path: The JSON manifest

    Returns:
        The validated manifest.

    Raises:
        SchemaError: The manifest does not match the schema.
        SplitOverlapError: A repository appears in both splits.
    """
    try:
        raw = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as e:
        raise SchemaError("<root>", f"invalid JSON: {e}") from e

    try:
        manifest = Manifest.parse_obj(raw)
    except ValidationError as e:
        first = e.errors()[0]
        raise SchemaError(_error_path(first["loc"]), first["msg"]) from e

    check_split(manifest.split("train"), manifest.split("bench"))
    logger.info(
        "manifest_loaded",
        path=str(path),
        train=len(manifest.split("train")),
        bench=len(manifest.split("bench")),
    )
    return manifest


def check_split(
    train: Iterable[ManifestEntry], bench: Iterable[ManifestEntry]
) -> None:
    """Asserts that no repository belongs to both splits.

    Args:
        train: The entries contributing training instances
        bench: The entries contributing benchmark tasks

    Raises:
        SplitOverlapError: Some repository id is in both.
    """
    overlap = {e.repo_id for e in train} & {e.repo_id for e in bench}
    if overlap:
        raise SplitOverlapError(sorted(overlap))


def assert_split(
    repo_ids: Iterable[str], manifest: Manifest, split: str
) -> None:
    """Asserts that every repository id belongs to the given split.

    Raises:
        SplitOverlapError: Some repository is listed under the other split.
        SplitMembershipError: Some repository is not in the manifest.
    """
    ids = {normalize_url(r) for r in repo_ids}
    other = set(manifest.repo_ids("bench" if split == "train" else "train"))
    if ids & other:
        raise SplitOverlapError(sorted(ids & other))

    unlisted = ids - set(manifest.repo_ids(split))
    if unlisted:
        raise SplitMembershipError(sorted(unlisted), split)


def _months_before(day: date, months: int) -> date:
    total = day.year * 12 + (day.month - 1) - months
    year, month = divmod(total, 12)
    month += 1
    for candidate in (day.day, 30, 29, 28):
        try:
            return date(year, month, candidate)
        except ValueError:
            continue
    return date(year, month, 28)


def _flat_numbered(root: Path) -> bool:
    files = source_files(root)
    if len(files) < 5:
        return False
    by_dir: Dict[Path, List[Path]] = {}
    for f in files:
        by_dir.setdefault(f.parent, []).append(f)
    largest = max(by_dir.values(), key=len)
    numbered = [f for f in largest if _NUMBERED.match(f.stem)]
    flat = len(largest) >= 0.8 * len(files)
    return flat and len(numbered) >= 0.8 * len(largest)


def apply_repo_filters(
    snapshot: RepoSnapshot,
    entry: ManifestEntry,
    filters: Optional[RepoFilters] = None,
    today: Optional[date] = None,
) -> FilterDecision:
    """Applies the repository selection filters.

    Args:
        snapshot: The materialized snapshot
        entry: The manifest entry holding the repository metadata
        filters: The thresholds, defaults when omitted
        today: The reference date for the recency window

    Returns:
        An accept decision, or a reject decision with every failing reason.
    """
    filters = filters or RepoFilters()
    today = today or date.today()
    reasons = []
    if entry.stars < filters.min_stars:
        reasons.append("popularity")
    if entry.last_commit_date < _months_before(today, filters.recency_months):
        reasons.append("recent maintenance")
    if snapshot.file_count < filters.min_files:
        reasons.append("structural diversity")
    excluded = {t.lower() for t in filters.excluded_tags}
    if entry.domain_tag.strip().lower() in excluded:
        reasons.append("algorithmic dataset")

    warnings = []
    if snapshot.root.is_dir() and _flat_numbered(snapshot.root):
        warnings.append("numbered flat layout")
        logger.warning("numbered_flat_layout", repo=entry.repo_id)

    decision = FilterDecision(
        decision="reject" if reasons else "accept",
        reasons=reasons,
        warnings=warnings,
    )
    logger.info(
        "repo_filtered",
        repo=entry.repo_id,
        decision=decision.decision,
        reasons=reasons,
    )
    return decision


def content_hash(root: Path) -> str:
    """Hashes every source file path and content under a root."""
    digest = hashlib.sha256()
    for path in source_files(root):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


def _git(
    *args: str, cwd: Optional[Path] = None
) -> subprocess.CompletedProcess:
    try:
        return subprocess.run(
            ["git", *args],
            cwd=cwd,
            capture_output=True,
            text=True,
            check=False,
            timeout=600,
        )
    except (OSError, subprocess.TimeoutExpired) as e:
        raise FetchError(f"git {args[0]} failed: {e}") from e


def _checkout(source: str, revision: str, dest: Path) -> None:
    if not (dest / ".git").is_dir():
        dest.parent.mkdir(parents=True, exist_ok=True)
        result = _git("clone", "--quiet", source, str(dest))
        if result.returncode != 0:
            raise FetchError(f"{source}: {result.stderr.strip()}")

    verify = _git(
        "rev-parse", "--verify", "--quiet", f"{revision}^{{commit}}", cwd=dest
    )
    if verify.returncode != 0:
        raise RevisionNotFound(f"{source}: unknown revision {revision}")
    result = _git("checkout", "--quiet", "--force", revision, cwd=dest)
    if result.returncode != 0:
        raise RevisionNotFound(f"{source}: {result.stderr.strip()}")


def snapshot_repo(entry: ManifestEntry, cache_dir: Path) -> RepoSnapshot:
    """Materializes the working tree of a manifest entry.

    A local directory with the `WORKTREE` revision is snapshotted in place.
    Anything else is cloned into `<cache>/<hash-prefix>/<repo>/` and checked
    out at the pinned revision.

    Args:
        entry: The manifest entry
        cache_dir: The cache root

    Returns:
        The snapshot.

    Raises:
        FetchError: The repository cannot be fetched or holds no source.
        RevisionNotFound: The pinned revision does not exist.
    """
    local = Path(entry.url).expanduser()
    if local.is_dir() and entry.revision == WORKTREE:
        root = local
    elif local.is_dir() and not (local / ".git").exists():
        raise RevisionNotFound(
            f"{entry.url}: not a repository, only {WORKTREE} is available"
        )
    else:
        prefix = hashlib.sha256(
            f"{entry.repo_id}@{entry.revision}".encode()
        ).hexdigest()[:12]
        root = cache_dir / prefix / entry.name
        source = str(local.resolve()) if local.is_dir() else entry.url
        _checkout(source, entry.revision, root)

    files = source_files(root)
    if not files:
        raise FetchError(f"{entry.url}: no source files")
    modules = {module_qname_for(f.relative_to(root).as_posix()) for f in files}

    snapshot = RepoSnapshot(
        repo_id=entry.repo_id,
        revision=entry.revision,
        root=root,
        content_hash=content_hash(root),
        file_count=len(files),
        module_count=len(modules),
    )
    logger.info(
        "repo_snapshotted",
        repo=entry.repo_id,
        revision=entry.revision,
        files=snapshot.file_count,
        hash=snapshot.content_hash[:12],
    )
    return snapshot


def ingest(
    manifest: Manifest,
    cache_dir: Path,
    filters: Optional[RepoFilters] = None,
    workers: int = 1,
    today: Optional[date] = None,
    provenance: Optional[Provenance] = None,
) -> List[SnapshotRecord]:
    """Snapshots and filters every manifest entry.

    The records are also written to `<cache>/snapshots.jsonl`.

    Args:
        manifest: The validated manifest
        cache_dir: The cache root
        filters: The filter thresholds
        workers: The number of parallel fetches
        today: The reference date for the recency window
        provenance: An optional provenance header

    Returns:
        One record per entry, in manifest order.
    """

    def process(entry: ManifestEntry) -> SnapshotRecord:
        try:
            snapshot = snapshot_repo(entry, cache_dir)
        except (FetchError, RevisionNotFound) as e:
            logger.warning("snapshot_failed", repo=entry.repo_id, error=str(e))
            return SnapshotRecord(
                repo_id=entry.repo_id,
                revision=entry.revision,
                split=entry.split,
                decision="error",
                reasons=[str(e)],
            )
        decision = apply_repo_filters(snapshot, entry, filters, today)
        return SnapshotRecord(
            repo_id=entry.repo_id,
            revision=entry.revision,
            split=entry.split,
            root=snapshot.root,
            content_hash=snapshot.content_hash,
            file_count=snapshot.file_count,
            module_count=snapshot.module_count,
            decision=decision.decision,
            reasons=decision.reasons,
        )

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        records = list(pool.map(process, manifest.entries))

    write_jsonl(cache_dir / "snapshots.jsonl", records, provenance)
    return records
