"""A small gen -> label -> pair -> train -> fuzz -> report chain driven through the CLI."""

from pathlib import Path

from polyfuzz.cli import main

TYPES = ("SQLi", "XSSi")


def call(*argv) -> int:
    return main([str(a) for a in argv])


def run_pipeline(root, seed=0, count=150) -> Path:
    root = Path(root)
    models = root / "models"
    for t in TYPES:
        assert call("gen", "--type", t, "--count", count, "--seed", seed, "--out", root / f"{t}.jsonl") == 0
        assert call("label", root / f"{t}.jsonl", "--out", root / f"{t}.labeled.jsonl") == 0
    assert call("pair", root / "SQLi.jsonl", root / "XSSi.jsonl", "--k", 16, "--count", 60,
                "--seed", seed, "--out", root / "SQLi_XSSi.pairs.jsonl") == 0
    assert call("pair", root / "XSSi.jsonl", root / "SQLi.jsonl", "--k", 16, "--count", 60,
                "--seed", seed, "--out", root / "XSSi_SQLi.pairs.jsonl") == 0
    assert call("train", "embed", *[root / f"{t}.jsonl" for t in TYPES], "--dim", 8, "--epochs", 1,
                "--seed", seed, "--out", models) == 0
    for t in TYPES:
        assert call("train", "clf", root / f"{t}.labeled.jsonl", "--embeddings", models, "--hidden", 8,
                    "--epochs", 2, "--seed", seed, "--out", models) == 0
    for a, b in (TYPES, TYPES[::-1]):
        assert call("train", "xlate", root / f"{a}_{b}.pairs.jsonl", "--embeddings", models, "--hidden", 8,
                    "--epochs", 2, "--seed", seed, "--out", models) == 0
    for variant in ("mtea", "stea"):
        for s in (1, 2, 3):
            assert call("fuzz", "--models", models, "--variant", variant, "--tasks", *TYPES,
                        "--pop-size", 10, "--generations", 3, "--seed", s,
                        "--out", root / f"run_{variant}_{s}") == 0
    reports = [f"{v}={root / f'run_{v}_{s}' / 'report.json'}" for v in ("mtea", "stea") for s in (1, 2, 3)]
    assert call("report", "compare", *reports, "--out", root / "comparison") == 0
    return root


def snapshot(root) -> dict:
    """Relative path -> bytes for every file under root."""
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
