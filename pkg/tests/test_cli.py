import csv
import subprocess
import sys

import pytest

from semrecall import cli, corpus


def run_cli(args):
    return cli.main(args)


class TestParsing:
    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli(["frobnicate"])
        assert exc.value.code == 2

    def test_help_exits_0(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli(["--help"])
        assert exc.value.code == 0
        assert "embed-synthetic" in capsys.readouterr().out

    def test_missing_required_flag_named(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli(["train-hash", "--corpus", "x.tsv"])
        assert exc.value.code == 2
        err = capsys.readouterr().err
        assert "--ctx-emb" in err

    def test_bad_backend_choice(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli(["build-index", "--backend", "faiss", "--out", "x"])
        assert exc.value.code == 2


class TestRuntimeErrors:
    def test_missing_embedding_file_exit_1(self, tmp_path, capsys):
        out = tmp_path / "idx.bin"
        code = run_cli(
            ["build-index", "--backend", "dense", "--embeddings", str(tmp_path / "gone.emb"), "--out", str(out)]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "gone.emb" in err

    def test_malformed_corpus_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.tsv"
        bad.write_text("three\tcolumn\tline\n", encoding="utf-8")
        code = run_cli(
            [
                "embed-synthetic",
                "--corpus",
                str(bad),
                "--dim",
                "8",
                "--out-ctx",
                str(tmp_path / "c.emb"),
                "--out-db",
                str(tmp_path / "d.emb"),
            ]
        )
        assert code == 1
        assert "line 1" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline_workspace(tmp_path_factory):
    """Small end-to-end pipeline artifacts shared by the output-contract tests."""
    tmp = tmp_path_factory.mktemp("pipeline")
    corpus.save_corpus(corpus.make_synthetic_corpus(60, seed=8), tmp / "corpus.tsv")
    assert run_cli(
        [
            "embed-synthetic",
            "--corpus", str(tmp / "corpus.tsv"),
            "--dim", "24",
            "--seed", "4",
            "--out-ctx", str(tmp / "ctx.emb"),
            "--out-db", str(tmp / "db.emb"),
        ]
    ) == 0
    assert run_cli(
        [
            "train-hash",
            "--corpus", str(tmp / "corpus.tsv"),
            "--ctx-emb", str(tmp / "ctx.emb"),
            "--db-emb", str(tmp / "db.emb"),
            "--dim", "16",
            "--epochs", "2",
            "--seed", "4",
            "--out", str(tmp / "model.bin"),
        ]
    ) == 0
    assert run_cli(
        ["build-index", "--backend", "bm25", "--corpus", str(tmp / "corpus.tsv"), "--out", str(tmp / "bm25.idx")]
    ) == 0
    assert run_cli(
        ["build-index", "--backend", "dense", "--embeddings", str(tmp / "db.emb"), "--out", str(tmp / "dense.idx")]
    ) == 0
    assert run_cli(
        [
            "build-index",
            "--backend", "hash",
            "--embeddings", str(tmp / "db.emb"),
            "--model", str(tmp / "model.bin"),
            "--out", str(tmp / "hash.idx"),
        ]
    ) == 0
    return tmp


class TestOutputContracts:
    def test_search_prints_exactly_k_lines(self, pipeline_workspace, capsys):
        tmp = pipeline_workspace
        code = run_cli(
            [
                "search",
                "--backend", "hash",
                "--index", str(tmp / "hash.idx"),
                "--model", str(tmp / "model.bin"),
                "--query", "order ship refund today",
                "--embed-seed", "4",
                "--k", "20",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        lines = out.strip("\n").split("\n")
        assert len(lines) == 20
        for rank, line in enumerate(lines, start=1):
            parts = line.split("\t")
            assert len(parts) == 3
            assert int(parts[0]) == rank
            int(parts[1])
            int(parts[2])  # hash scores are integral Hamming distances

    def test_dense_search_score_format(self, pipeline_workspace, capsys):
        tmp = pipeline_workspace
        code = run_cli(
            [
                "search",
                "--backend", "dense",
                "--index", str(tmp / "dense.idx"),
                "--query", "order ship refund",
                "--embed-seed", "4",
                "--k", "3",
            ]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        for line in lines:
            float(line.split("\t")[2])

    def test_bench_and_report(self, pipeline_workspace, capsys):
        tmp = pipeline_workspace
        code = run_cli(
            [
                "bench",
                "--corpus", str(tmp / "corpus.tsv"),
                "--ctx-emb", str(tmp / "ctx.emb"),
                "--db-emb", str(tmp / "db.emb"),
                "--bm25-index", str(tmp / "bm25.idx"),
                "--dense-index", str(tmp / "dense.idx"),
                "--hash-index", str(tmp / "hash.idx"),
                "--model", str(tmp / "model.bin"),
                "--k", "5,10",
                "--bsz", "8",
                "--reps", "1",
                "--warmup", "1",
                "--out", str(tmp / "bench.json"),
            ]
        )
        assert code == 0
        code = run_cli(
            [
                "report",
                "--bench", str(tmp / "bench.json"),
                "--out", str(tmp / "report.csv"),
                "--storage-out", str(tmp / "storage.csv"),
            ]
        )
        assert code == 0
        rows = list(csv.reader((tmp / "report.csv").open()))
        assert len(rows) == 4
        assert rows[0][0] == "Method"
        assert {r[0] for r in rows[1:]} == {"bm25", "dense", "hash"}

    def test_config_file_provides_defaults_flags_win(self, pipeline_workspace, tmp_path, capsys):
        tmp = pipeline_workspace
        config = tmp_path / "cfg.toml"
        config.write_text(
            '[search]\nbackend = "dense"\nindex = "%s"\nk = 2\n' % (tmp / "dense.idx"),
            encoding="utf-8",
        )
        code = run_cli(
            ["--config", str(config), "search", "--query", "order ship", "--embed-seed", "4"]
        )
        assert code == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 2
        # explicit flag beats the config value
        code = run_cli(
            ["--config", str(config), "search", "--query", "order ship", "--embed-seed", "4", "--k", "5"]
        )
        assert code == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 5


@pytest.mark.slow
def test_smoke_pipeline_thousand_docs(tmp_path):
    """Full subprocess pipeline on a 1,000-pair synthetic corpus."""
    tmp = tmp_path
    corpus.save_corpus(corpus.make_synthetic_corpus(1000, seed=21), tmp / "corpus.tsv")

    def run(*args):
        proc = subprocess.run(
            [sys.executable, "-m", "semrecall.cli", *args], capture_output=True, text=True
        )
        assert proc.returncode == 0, proc.stderr
        return proc

    run(
        "embed-synthetic",
        "--corpus", str(tmp / "corpus.tsv"),
        "--dim", "64",
        "--seed", "2",
        "--out-ctx", str(tmp / "ctx.emb"),
        "--out-db", str(tmp / "db.emb"),
    )
    run(
        "train-hash",
        "--corpus", str(tmp / "corpus.tsv"),
        "--ctx-emb", str(tmp / "ctx.emb"),
        "--db-emb", str(tmp / "db.emb"),
        "--dim", "32",
        "--epochs", "2",
        "--seed", "2",
        "--out", str(tmp / "model.bin"),
    )
    run("build-index", "--backend", "bm25", "--corpus", str(tmp / "corpus.tsv"), "--out", str(tmp / "bm25.idx"))
    run("build-index", "--backend", "dense", "--embeddings", str(tmp / "db.emb"), "--out", str(tmp / "dense.idx"))
    run(
        "build-index",
        "--backend", "hash",
        "--embeddings", str(tmp / "db.emb"),
        "--model", str(tmp / "model.bin"),
        "--out", str(tmp / "hash.idx"),
    )
    run(
        "bench",
        "--corpus", str(tmp / "corpus.tsv"),
        "--ctx-emb", str(tmp / "ctx.emb"),
        "--db-emb", str(tmp / "db.emb"),
        "--bm25-index", str(tmp / "bm25.idx"),
        "--dense-index", str(tmp / "dense.idx"),
        "--hash-index", str(tmp / "hash.idx"),
        "--model", str(tmp / "model.bin"),
        "--reps", "1",
        "--warmup", "1",
        "--out", str(tmp / "bench.json"),
    )
    run("report", "--bench", str(tmp / "bench.json"), "--out", str(tmp / "report.csv"))
    rows = list(csv.reader((tmp / "report.csv").open()))
    assert len(rows) == 4
    assert [r[0] for r in rows[1:]] == ["bm25", "dense", "hash"]
