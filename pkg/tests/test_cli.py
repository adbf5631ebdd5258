import json
from importlib import resources

import pytest
from click.testing import CliRunner

from synthq.cli import main
from tests.conftest import make_mini_corpus


@pytest.fixture()
def runner():
    return CliRunner()


def write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


def benchmark_csv(tmp_path):
    text = (resources.files("synthq") / "data" / "cw_delta_points.csv").read_text("utf-8")
    path = tmp_path / "points.csv"
    path.write_text(text, encoding="utf-8")
    return path


def test_help_exits_zero(runner):
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    for sub in ("generate", "measure", "weight", "train", "eval", "correlate", "report"):
        assert sub in result.output


def test_subcommand_help_exits_zero(runner):
    for sub in ("generate", "measure", "weight", "train", "eval", "correlate", "report"):
        assert runner.invoke(main, [sub, "--help"]).exit_code == 0


def test_unknown_subcommand_exits_two(runner):
    assert runner.invoke(main, ["frobnicate"]).exit_code == 2


def test_unknown_flag_exits_two(runner):
    assert runner.invoke(main, ["correlate", "--nope", "x"]).exit_code == 2


def test_runtime_failure_exits_one(runner, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n", encoding="utf-8")
    result = runner.invoke(main, ["correlate", "--points", str(bad)])
    assert result.exit_code == 1
    assert "cw and delta" in result.output


def test_correlate_end_to_end(runner, tmp_path):
    points = benchmark_csv(tmp_path)
    out = tmp_path / "cdp_report.json"
    result = runner.invoke(main, ["correlate", "--points", str(points), "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text())
    assert report["n_points"] == 56
    assert len(report["conditions"]) == 14
    assert all(row["r"] >= 0.94 for row in report["conditions"])
    assert abs(report["threshold"]["zero_crossing"] - 7.9) <= 0.3
    assert report["buckets"]["above"] == [14, 14]
    assert report["buckets"]["below"] == [1, 14]
    assert "config_hash" in report


def test_correlate_deterministic_output(runner, tmp_path):
    points = benchmark_csv(tmp_path)
    out1 = tmp_path / "r1.json"
    out2 = tmp_path / "r2.json"
    for out in (out1, out2):
        assert runner.invoke(main, ["correlate", "--points", str(points), "--out", str(out)]).exit_code == 0
    # same resolved parameters except the output path itself
    r1 = json.loads(out1.read_text())
    r2 = json.loads(out2.read_text())
    r1.pop("config_hash")
    r2.pop("config_hash")
    assert r1 == r2


def test_report_csv_from_correlation(runner, tmp_path):
    points = benchmark_csv(tmp_path)
    out = tmp_path / "cdp_report.json"
    runner.invoke(main, ["correlate", "--points", str(points), "--out", str(out)])
    csv_out = tmp_path / "conditions.csv"
    result = runner.invoke(
        main, ["report", "--in", str(out), "--format", "csv", "--out", str(csv_out)]
    )
    assert result.exit_code == 0
    lines = csv_out.read_text().splitlines()
    assert lines[0] == "condition,r,p,n"
    assert len(lines) == 15


def test_report_byte_deterministic(runner, tmp_path):
    payload = {"b": 2, "a": 1, "nested": {"y": 2, "x": 1}}
    src = tmp_path / "in.json"
    src.write_text(json.dumps(payload), encoding="utf-8")
    outs = []
    for name in ("o1.json", "o2.json"):
        out = tmp_path / name
        assert runner.invoke(
            main, ["report", "--in", str(src), "--out", str(out)]
        ).exit_code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_measure_cli_stub_backend(runner, tmp_path):
    synthetic = tmp_path / "synthetic.jsonl"
    human = tmp_path / "human.jsonl"
    write_jsonl(
        synthetic,
        [
            {
                "doc_id": "d1",
                "mode": "diverse",
                "queries": ["what is rba", "rba community impact"],
                "generator_id": "m",
                "prompt_hash": "h",
            },
            {
                "doc_id": "d2",
                "mode": "diverse",
                "queries": ["outcome measures", "how are outcomes tracked"],
                "generator_id": "m",
                "prompt_hash": "h",
            },
        ],
    )
    write_jsonl(
        human,
        [{"doc_id": "d1", "text": "what is rba"}, {"doc_id": "d2", "text": "tracking outcomes"}],
    )
    out = tmp_path / "qd.json"
    result = runner.invoke(
        main,
        ["measure", "--in", str(synthetic), "--human", str(human), "--backend", "stub",
         "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text())
    assert set(report) >= {"dist_sim", "len_sim", "ce", "self_bleu", "n_queries", "n_pairs"}
    assert report["backend"].startswith("stub:")
    assert report["n_queries"] == 4


def test_weight_cli_annotates_cw(runner, tmp_path):
    pairs = tmp_path / "pairs_unweighted.jsonl"
    write_jsonl(
        pairs,
        [
            {"query": "What does Ivan promise to do when he turns thirty?", "doc_id": "d1",
             "weight": 1.0},
            {"query": "community accountability frameworks", "doc_id": "d2", "weight": 1.0},
        ],
    )
    docs = tmp_path / "docs.jsonl"
    write_jsonl(docs, [{"id": "d1", "text": "t"}, {"id": "d2", "text": "t"}])
    out = tmp_path / "pairs.jsonl"
    result = runner.invoke(
        main,
        ["weight", "--scheme", "cw", "--kappa-cw", "100", "--in", str(pairs),
         "--out", str(out), "--docs", str(docs)],
    )
    assert result.exit_code == 0, result.output
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert rows[0]["raw_cw"] == 4
    assert rows[1]["raw_cw"] == 3
    meta = json.loads((tmp_path / "pairs.jsonl.meta.json").read_text())
    assert meta["scheme"] == "cw"
    assert "config_hash" in meta


def test_train_and_eval_cli(runner, tmp_path):
    docs, pairs = make_mini_corpus(n_docs=40, vocab_size=60)
    docs_path = tmp_path / "docs.jsonl"
    write_jsonl(docs_path, [{"id": d.id, "text": d.text} for d in docs])
    pairs_path = tmp_path / "pairs.jsonl"
    write_jsonl(
        pairs_path,
        [{"query": p.query, "doc_id": p.doc_id, "weight": 1.0} for p in pairs],
    )
    ckpt = tmp_path / "model.ckpt"
    result = runner.invoke(
        main,
        ["train", "--pairs", str(pairs_path), "--docs", str(docs_path), "--scheme", "uniform",
         "--epochs", "2", "--seed", "7", "--batch-size", "8", "--eval-every", "10",
         "--out", str(ckpt)],
    )
    assert result.exit_code == 0, result.output
    assert ckpt.exists()
    meta = json.loads((tmp_path / "model.ckpt.meta.json").read_text())
    assert "config_hash" in meta and "best_val_ndcg" in meta

    # evaluate the checkpoint on queries whose positives are known
    qrels = tmp_path / "qrels.jsonl"
    queries = tmp_path / "queries.jsonl"
    write_jsonl(
        qrels,
        [{"query_id": f"q{i}", "doc_id": pairs[i].doc_id, "rel": 1} for i in range(0, 30, 3)],
    )
    write_jsonl(
        queries,
        [{"query_id": f"q{i}", "text": pairs[i].query} for i in range(0, 30, 3)],
    )
    out = tmp_path / "eval.json"
    result = runner.invoke(
        main,
        ["eval", "--model", str(ckpt), "--docs", str(docs_path), "--qrels", str(qrels),
         "--queries", str(queries), "--k", "10", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text())
    assert 0.0 <= report["mean_ndcg"] <= 1.0
    assert report["n_queries"] == 10


def test_generate_cli_with_fixture_server(runner, tmp_path, llm):
    docs_path = tmp_path / "docs.jsonl"
    write_jsonl(docs_path, [{"id": f"d{i}", "text": f"document body {i}"} for i in range(4)])
    out = tmp_path / "synthetic.jsonl"
    result = runner.invoke(
        main,
        ["generate", "--mode", "diverse", "--m", "3", "--model", "fixture-model",
         "--endpoint", llm.url, "--docs", str(docs_path), "--out", str(out),
         "--cache-dir", str(tmp_path / "cache"), "--retry-backoff", "0"],
    )
    assert result.exit_code == 0, result.output
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 4
    assert all(len(r["queries"]) == 3 for r in rows)
    meta = json.loads((tmp_path / "synthetic.jsonl.meta.json").read_text())
    assert meta["mode"] == "diverse"
    assert meta["n_sets"] == 4
    assert len(llm.requests) == 4


def test_config_file_defaults_with_flag_override(runner, tmp_path):
    points = benchmark_csv(tmp_path)
    config = tmp_path / "run.json"
    config.write_text(
        json.dumps({"correlate": {"points_path": str(points), "out_path": str(tmp_path / "a.json")}}),
        encoding="utf-8",
    )
    result = runner.invoke(main, ["--config", str(config), "correlate"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "a.json").exists()
    # flags win over the config file
    result = runner.invoke(
        main,
        ["--config", str(config), "correlate", "--out", str(tmp_path / "b.json")],
    )
    assert result.exit_code == 0
    assert (tmp_path / "b.json").exists()


def test_config_file_rejects_unknown_keys(runner, tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"mystery": {}}), encoding="utf-8")
    result = runner.invoke(main, ["--config", str(config), "correlate", "--points", "x.csv"])
    assert result.exit_code == 1
    assert "unknown config keys" in result.output
