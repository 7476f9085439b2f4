import shutil
import subprocess
from datetime import date

import orjson
import pytest

from callerkit import ingest
from callerkit.models.repo import Manifest, ManifestEntry, RepoSnapshot

TODAY = date(2024, 6, 30)


def entry(url="https://example.com/org/shop", split="train", **kwargs):
    values = dict(
        url=url,
        revision="WORKTREE",
        split=split,
        stars=500,
        last_commit_date=date(2024, 1, 1),
        domain_tag="web",
    )
    values.update(kwargs)
    return ManifestEntry(**values)


def snapshot(root, file_count=10):
    return RepoSnapshot(
        repo_id="r",
        revision="WORKTREE",
        root=root,
        content_hash="0" * 64,
        file_count=file_count,
        module_count=file_count,
    )


def write_manifest(path, entries):
    path.write_bytes(orjson.dumps({"entries": entries}))
    return path


def test_load_manifest(tmp_path):
    path = write_manifest(
        tmp_path / "manifest.json",
        [
            {
                "url": "https://example.com/org/shop.git/",
                "revision": "abc",
                "split": "train",
                "last_commit_date": "2024-01-01",
            },
            {
                "url": "https://example.com/org/geo",
                "revision": "def",
                "split": "bench",
                "stars": 120,
                "last_commit_date": "2023-05-01",
            },
        ],
    )
    manifest = ingest.load_manifest(path)

    assert len(manifest) == 2
    assert manifest.repo_ids("train") == ["https://example.com/org/shop"]
    assert manifest.entries[0].name == "shop"
    assert manifest.split("bench")[0].stars == 120


@pytest.mark.parametrize(
    "entries, path",
    [
        (
            [{"url": "u", "split": "train", "last_commit_date": "2024-01-01"}],
            "entries[0].revision",
        ),
        (
            [
                {
                    "url": "u",
                    "revision": "r",
                    "split": "test",
                    "last_commit_date": "2024-01-01",
                }
            ],
            "entries[0].split",
        ),
        (
            [
                {
                    "url": " ",
                    "revision": "r",
                    "split": "train",
                    "last_commit_date": "2024-01-01",
                }
            ],
            "entries[0].url",
        ),
    ],
)
def test_load_manifest_schema_error(tmp_path, entries, path):
    manifest = write_manifest(tmp_path / "manifest.json", entries)
    with pytest.raises(ingest.SchemaError) as e:
        ingest.load_manifest(manifest)
    assert e.value.path == path


def test_load_manifest_invalid_json(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{not json")
    with pytest.raises(ingest.SchemaError) as e:
        ingest.load_manifest(path)
    assert e.value.path == "<root>"


def test_load_manifest_overlap(tmp_path):
    row = {"revision": "r", "last_commit_date": "2024-01-01"}
    path = write_manifest(
        tmp_path / "manifest.json",
        [
            {"url": "https://x.org/a/b.git", "split": "train", **row},
            {"url": "https://x.org/a/b/", "split": "bench", **row},
        ],
    )
    with pytest.raises(ingest.SplitOverlapError) as e:
        ingest.load_manifest(path)
    assert e.value.urls == ["https://x.org/a/b"]


def test_assert_split():
    manifest = Manifest(
        entries=[entry(split="train"), entry(url="https://b/c", split="bench")]
    )

    ingest.assert_split(["https://example.com/org/shop"], manifest, "train")
    with pytest.raises(ingest.SplitOverlapError):
        ingest.assert_split(["https://b/c"], manifest, "train")
    with pytest.raises(ingest.SplitOverlapError):
        ingest.assert_split(
            ["https://example.com/org/shop"], manifest, "bench"
        )
    with pytest.raises(ingest.SplitMembershipError) as e:
        ingest.assert_split(["https://b/c", "https://d/e/"], manifest, "bench")
    assert e.value.urls == ["https://d/e"]


@pytest.mark.parametrize(
    "day, months, expected",
    [
        (date(2024, 6, 30), 24, date(2022, 6, 30)),
        (date(2024, 3, 31), 1, date(2024, 2, 29)),
        (date(2023, 3, 31), 1, date(2023, 2, 28)),
        (date(2024, 1, 15), 13, date(2022, 12, 15)),
    ],
)
def test_months_before(day, months, expected):
    assert ingest._months_before(day, months) == expected


def test_apply_repo_filters(tmp_path):
    accepted = ingest.apply_repo_filters(
        snapshot(tmp_path), entry(), today=TODAY
    )
    assert accepted.accepted
    assert accepted.reasons == []

    rejected = ingest.apply_repo_filters(
        snapshot(tmp_path, file_count=1),
        entry(
            stars=10,
            last_commit_date=date(2021, 1, 1),
            domain_tag=" LeetCode ",
        ),
        today=TODAY,
    )
    assert rejected.decision == "reject"
    assert rejected.reasons == [
        "popularity",
        "recent maintenance",
        "structural diversity",
        "algorithmic dataset",
    ]


def test_apply_repo_filters_thresholds(tmp_path):
    filters = ingest.RepoFilters(min_stars=1000, excluded_tags=[])
    decision = ingest.apply_repo_filters(
        snapshot(tmp_path),
        entry(domain_tag="tutorial"),
        filters,
        today=TODAY,
    )
    assert decision.reasons == ["popularity"]


def test_apply_repo_filters_numbered_layout(tmp_path):
    for i in range(1, 7):
        (tmp_path / f"p{i:03}.py").write_text("x = 1\n")

    decision = ingest.apply_repo_filters(
        snapshot(tmp_path), entry(), today=TODAY
    )
    assert decision.accepted
    assert decision.warnings == ["numbered flat layout"]


def test_snapshot_worktree(shop_repo, tmp_path):
    result = ingest.snapshot_repo(
        entry(url=str(shop_repo)), tmp_path / "cache"
    )

    assert result.root == shop_repo
    assert result.file_count == 5
    assert result.module_count == 5
    assert result.content_hash == ingest.content_hash(shop_repo)
    assert not (tmp_path / "cache").exists()


def test_content_hash_changes(shop_repo):
    before = ingest.content_hash(shop_repo)
    (shop_repo / "shop" / "util.py").write_text("X = 1\n")
    assert ingest.content_hash(shop_repo) != before


def test_snapshot_errors(shop_repo, tmp_path):
    with pytest.raises(ingest.RevisionNotFound):
        ingest.snapshot_repo(
            entry(url=str(shop_repo), revision="abc"), tmp_path
        )

    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ingest.FetchError):
        ingest.snapshot_repo(entry(url=str(empty)), tmp_path)


def git(*args, cwd):
    subprocess.run(
        [
            "git",
            "-c",
            "user.name=callerkit",
            "-c",
            "user.email=callerkit@example.com",
            *args,
        ],
        cwd=cwd,
        check=True,
        capture_output=True,
    )


@pytest.mark.skipif(shutil.which("git") is None, reason="git is missing")
def test_snapshot_pinned_revision(geo_repo, tmp_path):
    git("init", "--quiet", cwd=geo_repo)
    git("add", ".", cwd=geo_repo)
    git("commit", "--quiet", "-m", "initial", cwd=geo_repo)
    revision = subprocess.run(
        ["git", "rev-parse", "HEAD"],
        cwd=geo_repo,
        check=True,
        capture_output=True,
        text=True,
    ).stdout.strip()

    cache = tmp_path / "cache"
    result = ingest.snapshot_repo(
        entry(url=str(geo_repo), revision=revision), cache
    )
    assert result.root.parent.parent == cache
    assert result.root.name == "geo-repo"
    assert result.file_count == 3
    assert result.content_hash == ingest.content_hash(geo_repo)

    with pytest.raises(ingest.RevisionNotFound):
        ingest.snapshot_repo(
            entry(url=str(geo_repo), revision="0" * 40), cache
        )


def test_ingest(shop_repo, tmp_path):
    manifest = Manifest(
        entries=[
            entry(url=str(shop_repo)),
            entry(url=str(tmp_path / "missing"), revision="abc"),
        ]
    )
    cache = tmp_path / "cache"
    records = ingest.ingest(manifest, cache, workers=2, today=TODAY)

    assert [r.decision for r in records] == ["accept", "error"]
    assert records[0].file_count == 5
    assert records[1].root is None
    assert len((cache / "snapshots.jsonl").read_bytes().splitlines()) == 2


def test_check_split():
    train = [entry(), entry(url="https://b/c")]

    ingest.check_split(train, [entry(url="https://d/e", split="bench")])
    with pytest.raises(ingest.SplitOverlapError) as e:
        ingest.check_split(train, [entry(split="bench")])
    assert e.value.urls == [entry().repo_id]
