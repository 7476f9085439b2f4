"""Provides models for manifests, snapshots and repository decisions."""

from datetime import date
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import validator

from callerkit.models.base import Base, BaseList
from callerkit.types import Split


def normalize_url(url: str) -> str:
    """Normalizes a repository url into its repository id.

    Trailing slashes and a trailing `.git` are removed.
    """
    url = url.strip().rstrip("/")
    if url.endswith(".git"):
        url = url[:-4]
    return url.rstrip("/")


class ManifestEntry(Base):
    """One repository of a manifest.

    Attributes:
        url: A remote url or a local directory.
        revision: The pinned revision, `WORKTREE` for a local directory as is.
        split: The split the repository contributes to.
        stars: The popularity of the repository.
        last_commit_date: The date of the last commit.
        domain_tag: A free text description of the repository's domain.
    """

    url: str
    revision: str
    split: Split
    stars: int = 0
    last_commit_date: date
    domain_tag: str = ""

    @validator("url", "revision")
    def _not_blank(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("must not be blank")
        return v

    @property
    def repo_id(self) -> str:
        return normalize_url(self.url)

    @property
    def name(self) -> str:
        return self.repo_id.rsplit("/", 1)[-1] or "repo"


class Manifest(Base):
    """A validated list of repositories."""

    entries: List[ManifestEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, split: Split) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def repo_ids(self, split: Optional[Split] = None) -> List[str]:
        return [
            e.repo_id
            for e in self.entries
            if split is None or e.split == split
        ]


class RepoSnapshot(Base):
    """A materialized working tree.

    Attributes:
        repo_id: The normalized url of the repository.
        revision: The checked out revision.
        root: The working tree directory.
        content_hash: A digest over every source file path and content.
        file_count: The number of source files.
        module_count: The number of distinct modules (packages included).
    """

    repo_id: str
    revision: str
    root: Path
    content_hash: str
    file_count: int
    module_count: int


class FilterDecision(Base):
    """The outcome of applying the repository filters."""

    decision: Literal["accept", "reject"]
    reasons: List[str] = []
    warnings: List[str] = []

    @property
    def accepted(self) -> bool:
        return self.decision == "accept"


class SnapshotRecord(Base):
    """A line of the snapshot log kept in the cache."""

    repo_id: str
    revision: str
    split: Split
    root: Optional[Path] = None
    content_hash: Optional[str] = None
    file_count: int = 0
    module_count: int = 0
    decision: Literal["accept", "reject", "error"]
    reasons: List[str] = []


class SnapshotRecords(BaseList):
    """A list of snapshot records."""

    __root__: List[SnapshotRecord]
