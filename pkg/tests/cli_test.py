import orjson
import pytest

from callerkit import __version__
from callerkit.cli import dispatch
from callerkit.models.base import (
    PROVENANCE_KEY,
    read_json,
    read_jsonl,
    write_jsonl,
)
from callerkit.models.bench import BenchmarkTask
from callerkit.models.evaluation import Candidate
from callerkit.models.metric import PairScore, ScorePair
from callerkit.models.prompt import PromptRecord


def run(capsys, *argv):
    code = dispatch([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_manifest(path, **splits):
    entries = [
        {
            "url": repo,
            "revision": "WORKTREE",
            "split": split,
            "last_commit_date": "2024-01-01",
        }
        for repo, split in splits.items()
    ]
    path.write_bytes(orjson.dumps({"entries": entries}))
    return path


@pytest.mark.parametrize(
    "argv", [[], ["nope"], ["stats"], ["render", "--tasks", "t.jsonl"]]
)
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert "usage:" in err


def test_version(capsys):
    code, out, _ = run(capsys, "--version")
    assert code == 0
    assert out.strip() == __version__


def test_missing_file(capsys, tmp_path):
    code, out, err = run(
        capsys, "bench", "lint", "--tasks", tmp_path / "missing.jsonl"
    )
    assert code == 1
    assert out == ""
    assert err.startswith("callerkit: error:")


def test_corpus_pipeline(capsys, messy_repo, tmp_path):
    manifest = write_manifest(tmp_path / "manifest.json", m="train")
    graph = tmp_path / "graph"
    code, out, _ = run(capsys, "extract", "--repo", messy_repo, "--out", graph)
    assert code == 0
    assert "invalid_files: 1" in out
    assert (graph / "graph.json").is_file()

    corpus = tmp_path / "corpus.jsonl"
    code, _, _ = run(
        capsys,
        "--seed",
        "3",
        "corpus",
        "--graph",
        graph,
        "--repo-id",
        "m",
        "--manifest",
        manifest,
        "--n-train",
        "2",
        "--out",
        corpus,
    )
    assert code == 0
    header = orjson.loads(corpus.read_bytes().splitlines()[0])
    assert header[PROVENANCE_KEY]["seed"] == 3

    code, out, _ = run(capsys, "--json", "stats", corpus)
    assert code == 0
    assert orjson.loads(out)["count"] == 2

    code, out, _ = run(capsys, "--select", "count", "stats", corpus)
    assert out.strip() == "2"

    code, out, _ = run(capsys, "stats", corpus)
    assert "Target Code Length" in out


def test_bench_pipeline(capsys, shop_repo, tmp_path):
    manifest = write_manifest(
        tmp_path / "manifest.json", shop="bench", m="train"
    )
    graph = tmp_path / "graph"
    assert run(capsys, "extract", "--repo", shop_repo, "--out", graph)[0] == 0

    fragments = tmp_path / "fragments.json"
    fragments.write_bytes(
        orjson.dumps(
            {
                "shop.util.clamp": [
                    {
                        "text": "assert clamp(5, 0, 3) == 3"
                        "  # evidence: shop/cart.py:14",
                        "covers": ["U1", "ARG_SHAPE(3, {})"],
                    }
                ]
            }
        )
    )
    tasks = tmp_path / "tasks.jsonl"
    code, out, _ = run(
        capsys,
        "bench",
        "build",
        "--graph",
        graph,
        "--repo-root",
        shop_repo,
        "--fragments",
        fragments,
        "--manifest",
        manifest,
        "--repo-id",
        "shop",
        "--out",
        tasks,
    )
    assert code == 0
    assert "callers_per_task: 2.0" in out
    assert "rejected: 0" in out
    (task,) = read_jsonl(tasks, BenchmarkTask)
    assert task.qname == "shop.util.clamp"

    code, out, _ = run(
        capsys, "bench", "lint", "--tasks", tasks, "--repo-root", shop_repo
    )
    assert code == 0
    assert out.startswith("ok")

    kept = tmp_path / "kept.jsonl"
    code, out, _ = run(
        capsys, "bench", "sanity", "--tasks", tasks, "--out", kept
    )
    assert code == 0
    assert out.startswith("pass")
    assert len(read_jsonl(kept, BenchmarkTask)) == 1

    candidates = tmp_path / "candidates.jsonl"
    write_jsonl(
        candidates,
        [
            Candidate(task_id=task.task_id, sample_index=0, code="def clamp"),
            Candidate(
                task_id=task.task_id,
                sample_index=1,
                code="def clamp(x, lo, hi):\n    return min(max(x, lo), hi)",
            ),
        ],
    )
    code, out, _ = run(
        capsys,
        "--json",
        "eval",
        "--tasks",
        tasks,
        "--candidates",
        candidates,
        "--k",
        "1,2",
        "--out",
        tmp_path / "report.json",
    )
    assert code == 0
    report = orjson.loads(out)
    assert report["aggregate"] == {"pass@1": 50.0, "pass@2": 100.0}
    written, provenance = read_json(tmp_path / "report.json")
    assert written["aggregate"] == report["aggregate"]
    assert provenance.version == __version__

    prompts = tmp_path / "prompts.jsonl"
    code, _, _ = run(
        capsys,
        "render",
        "--tasks",
        tasks,
        "--prompt-config",
        "header+caller",
        "--n-test",
        "all",
        "--out",
        prompts,
    )
    assert code == 0
    (prompt,) = read_jsonl(prompts, PromptRecord)
    assert prompt.text.count("def ") == 3

    code, out, _ = run(capsys, "usage-stats", "--bench", tasks)
    assert code == 0
    assert "no_structured_control account for 100.00% instances" in out

    code, _, err = run(
        capsys,
        "corpus",
        "--graph",
        graph,
        "--repo-id",
        "m",
        "--manifest",
        manifest,
        "--bench",
        tasks,
        "--out",
        tmp_path / "leaky.jsonl",
    )
    assert code == 1
    assert "shop.util.clamp" in err


def test_bench_lint_failure(capsys, tmp_path, shop_repo):
    manifest = write_manifest(tmp_path / "manifest.json", shop="bench")
    graph = tmp_path / "graph"
    run(capsys, "extract", "--repo", shop_repo, "--out", graph)
    fragments = tmp_path / "fragments.json"
    fragments.write_text('{"shop.pricing.total": [{"text": "total([])"}]}')
    tasks = tmp_path / "tasks.jsonl"
    run(
        capsys,
        "bench",
        "build",
        "--graph",
        graph,
        "--repo-root",
        shop_repo,
        "--fragments",
        fragments,
        "--manifest",
        manifest,
        "--repo-id",
        "shop",
        "--out",
        tasks,
    )

    code, out, _ = run(capsys, "bench", "lint", "--tasks", tasks)
    assert code == 1
    assert out.startswith("FAIL")
    assert "uncovered pattern: U1" in out


def build_bench(capsys, tmp_path, graph, repo, manifest, fragments, repo_id):
    path = tmp_path / "fragments.json"
    path.write_bytes(orjson.dumps(fragments))
    tasks = tmp_path / "tasks.jsonl"
    result = run(
        capsys,
        "bench",
        "build",
        "--graph",
        graph,
        "--repo-root",
        repo,
        "--fragments",
        path,
        "--manifest",
        manifest,
        "--repo-id",
        repo_id,
        "--out",
        tasks,
    )
    return result, tasks


def test_bench_build_rejects_tasks(capsys, tmp_path, shop_repo):
    manifest = write_manifest(tmp_path / "manifest.json", shop="bench")
    graph = tmp_path / "graph"
    run(capsys, "extract", "--repo", shop_repo, "--out", graph)
    fragments = {
        "shop.util.clamp": [{"text": "assert clamp(5, 0, 3) == 4"}],
        "shop.pricing.total": [{"text": "total([])"}] * 6,
    }

    (code, out, err), tasks = build_bench(
        capsys, tmp_path, graph, shop_repo, manifest, fragments, "shop"
    )
    assert code == 0
    assert "tasks: 0" in out
    assert "rejected: 2" in out
    assert err.count("task_rejected") == 2
    assert "reference_sanity" in err
    assert read_jsonl(tasks, BenchmarkTask) == []


def test_builds_check_the_split(capsys, tmp_path, shop_repo):
    manifest = write_manifest(
        tmp_path / "manifest.json", shop="train", geo="bench"
    )
    graph = tmp_path / "graph"
    run(capsys, "extract", "--repo", shop_repo, "--out", graph)
    fragments = {"shop.util.clamp": [{"text": "clamp(1, 0, 3)"}]}

    (code, _, err), tasks = build_bench(
        capsys, tmp_path, graph, shop_repo, manifest, fragments, "shop"
    )
    assert code == 1
    assert "repositories in both splits: shop" in err
    assert not tasks.exists()

    (code, _, err), _ = build_bench(
        capsys, tmp_path, graph, shop_repo, manifest, fragments, "other"
    )
    assert code == 1
    assert "outside the bench split: other" in err

    corpus = ["corpus", "--graph", graph, "--out", tmp_path / "c.jsonl"]
    code, _, err = run(
        capsys, *corpus, "--manifest", manifest, "--repo-id", "geo"
    )
    assert code == 1
    assert "repositories in both splits: geo" in err

    code, _, err = run(capsys, *corpus, "--repo-id", "shop")
    assert code == 2
    assert "--manifest" in err


def test_metrics(capsys, tmp_path):
    pairs = tmp_path / "pairs.jsonl"
    write_jsonl(
        pairs,
        [ScorePair(id="p", candidate="x = a + b", reference="x = a - b")],
    )
    out = tmp_path / "scores.jsonl"

    assert run(capsys, "metrics", "--pairs", pairs, "--out", out)[0] == 0
    (score,) = read_jsonl(out, PairScore)
    assert score.id == "p"
    assert 0.0 < score.codebleu < 1.0
