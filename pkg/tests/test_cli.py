from __future__ import annotations

import json

import pytest

from admitrag.cli import main
from admitrag.corpus import KnowledgeBase
from admitrag.distillation import DistillationJob, build_distillation_prompt, read_dataset
from admitrag.generation import prompt_hash
from conftest import make_doc

DOC_TEXTS = {
    "deadlines": "The undergraduate application deadline is 25.07.2025 for all programs.",
    "tuition": "Annual tuition for the computer science program is 420000 rubles.",
    "dorms": "Dormitory placement is guaranteed for first-year students from other cities.",
}


@pytest.fixture
def kb_path(tmp_path):
    path = tmp_path / "kb.jsonl"
    kb = KnowledgeBase("cli-kb")
    for doc_id in sorted(DOC_TEXTS):
        kb.upsert_document(make_doc(doc_id, DOC_TEXTS[doc_id]))
    kb.save(path)
    return path


@pytest.fixture
def index_path(tmp_path, kb_path):
    path = tmp_path / "kb.idx"
    assert main(["index", "--kb", str(kb_path), "--out", str(path)]) == 0
    return path


class TestIngest:
    def test_ingest_files(self, tmp_path, capsys):
        f1 = tmp_path / "faq_deadlines.txt"
        f1.write_text("Apply before  25.07.2025.\r\nCall +7 999 123-45-67", encoding="utf-8")
        rules = tmp_path / "rules.json"
        rules.write_text(
            json.dumps([{"rule_id": "phone", "pattern": r"\+?\d[\d ()-]{6,}\d", "replacement": "[PHONE]"}]),
            encoding="utf-8",
        )
        kb_file = tmp_path / "kb.jsonl"
        code = main(
            ["ingest", str(f1), "--kb", str(kb_file), "--source-kind", "faq", "--redaction-rules", str(rules)]
        )
        assert code == 0
        kb = KnowledgeBase.load(kb_file)
        doc = kb.get("faq_deadlines")
        assert doc.text == "Apply before 25.07.2025.\nCall [PHONE]"
        assert doc.source_kind == "faq"

    def test_missing_file_exit_2(self, tmp_path):
        assert main(["ingest", str(tmp_path / "nope.txt"), "--kb", str(tmp_path / "kb.jsonl"), "--source-kind", "faq"]) == 2

    def test_bad_source_kind_exit_1(self, tmp_path):
        f1 = tmp_path / "a.txt"
        f1.write_text("x", encoding="utf-8")
        assert main(["ingest", str(f1), "--kb", str(tmp_path / "kb.jsonl"), "--source-kind", "tweet"]) == 1


class TestChunksDump:
    def test_dump(self, kb_path, capsys):
        assert main(["chunks", "dump", "--kb", str(kb_path), "--doc", "deadlines"]) == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
        assert len(lines) == 1
        assert lines[0]["doc_id"] == "deadlines"
        # The undergraduate application deadline is 25 . 07 . 2025 for all programs .
        assert lines[0]["token_span"] == [0, 14]

    def test_unknown_doc_exit_2(self, kb_path):
        assert main(["chunks", "dump", "--kb", str(kb_path), "--doc", "missing"]) == 2


class TestIndexCommand:
    def test_build_and_stats(self, kb_path, tmp_path, capsys):
        out = tmp_path / "kb.idx"
        assert main(["index", "--kb", str(kb_path), "--out", str(out)]) == 0
        assert "indexed 3 chunks from 3 documents" in capsys.readouterr().out
        assert out.exists()

    def test_missing_kb_exit_2(self, tmp_path):
        assert main(["index", "--kb", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "o.idx")]) == 2


class TestQuery:
    def test_text_output(self, kb_path, index_path, capsys):
        code = main(
            ["query", "--kb", str(kb_path), "--index", str(index_path), "--text", "undergraduate application deadline"]
        )
        assert code == 0
        out = capsys.readouterr().out
        first = out.splitlines()[0]
        assert "deadlines#0" in first
        assert first.lstrip().startswith("1")
        # score printed with 4 decimals
        assert any(len(part.split(".")[-1]) == 4 for part in first.split() if "." in part and part[0].isdigit())

    def test_json_output_is_single_document(self, kb_path, index_path, capsys):
        code = main(
            [
                "query",
                "--kb",
                str(kb_path),
                "--index",
                str(index_path),
                "--text",
                "tuition for computer science",
                "--format",
                "json",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["hits"][0]["chunk_id"] == "tuition#0"
        assert payload["hits"][0]["rank"] == 1
        assert len(payload["hits"]) == 3

    def test_k_zero_usage_error(self, kb_path, index_path):
        assert main(["query", "--kb", str(kb_path), "--index", str(index_path), "--text", "x", "--k", "0"]) == 1

    def test_missing_index_exit_2(self, kb_path, tmp_path):
        assert main(["query", "--kb", str(kb_path), "--index", str(tmp_path / "no.idx"), "--text", "x"]) == 2

    def test_query_with_config_generates_draft(self, kb_path, index_path, tmp_path, capsys):
        # scripted generator keyed by prompt hash is exercised end to end
        script = tmp_path / "script.json"
        script.write_text(json.dumps({"any": "ok"}), encoding="utf-8")
        code = main(
            [
                "query",
                "--kb",
                str(kb_path),
                "--index",
                str(index_path),
                "--text",
                "dormitory placement",
                "--config",
                "finetuned_rag",
                "--script",
                str(script),
                "--format",
                "json",
            ]
        )
        # unscripted prompt -> generation fails -> runtime error
        assert code == 2


class TestDistillCli:
    def test_distill_with_scripted_fixture(self, kb_path, tmp_path, capsys):
        kb = KnowledgeBase.load(kb_path)
        docs = kb.documents()
        outputs = {}
        for doc in docs:  # batch-size 1 below: one prompt per doc
            job = DistillationJob(doc_batch=[doc], pairs_requested=2)
            prompt = build_distillation_prompt(job)
            outputs[prompt_hash(prompt)] = json.dumps(
                [{"question": f"About {doc.doc_id}?", "answer": doc.text}]
            )
        script = tmp_path / "script.json"
        script.write_text(json.dumps(outputs), encoding="utf-8")
        out = tmp_path / "dataset.jsonl"
        code = main(
            [
                "distill",
                "--kb",
                str(kb_path),
                "--out",
                str(out),
                "--pairs-per-batch",
                "2",
                "--batch-size",
                "1",
                "--script",
                str(script),
            ]
        )
        assert code == 0
        records = read_dataset(out)
        assert len(records) == 3
        assert all(r.grounding_score == 1.0 for r in records)
        report = json.loads(capsys.readouterr().out)
        assert report["accepted"] == 3

    def test_empty_kb_exit_2(self, tmp_path):
        path = tmp_path / "kb.jsonl"
        KnowledgeBase("empty").save(path)
        assert main(["distill", "--kb", str(path), "--out", str(tmp_path / "d.jsonl")]) == 2


AGGREGATES = {
    "baseline": {"fact_recall_pct": 22.3, "precise_data_recall_pct": 25.6, "user_satisfaction_mean": 3.2},
    "rag_only": {"fact_recall_pct": 75.1, "precise_data_recall_pct": 91.4, "user_satisfaction_mean": 7.5},
    "finetuned_only": {"fact_recall_pct": 72.7, "precise_data_recall_pct": 48.3, "user_satisfaction_mean": 7.9},
    "finetuned_rag": {"fact_recall_pct": 92.7, "precise_data_recall_pct": 88.3, "user_satisfaction_mean": 8.9},
}


class TestEvaluateCli:
    def test_aggregates_mode_renders_report_files(self, tmp_path, capsys):
        agg = tmp_path / "agg.json"
        agg.write_text(json.dumps(AGGREGATES), encoding="utf-8")
        out_dir = tmp_path / "out"
        code = main(["evaluate", "--aggregates", str(agg), "--out", str(out_dir)])
        assert code == 0
        assert (out_dir / "report.csv").exists()
        assert (out_dir / "report.md").exists()
        assert (out_dir / "report.json").exists()
        assert (out_dir / "report.png").stat().st_size > 0
        csv_text = (out_dir / "report.csv").read_text(encoding="utf-8")
        assert "Fine-Tuned with RAG,92.7,88.3,8.9" in csv_text

    def test_offline_responses_dir(self, tmp_path, capsys):
        benchmark = tmp_path / "bench.jsonl"
        cases = [
            {
                "inquiry_id": "i1",
                "inquiry_text": "When is the deadline?",
                "gold_facts": [
                    {
                        "fact_id": "f1",
                        "kind": "precise_date",
                        "patterns": [{"type": "literal", "value": "25.07.2025"}],
                        "canonical_value": "2025-07-25",
                    },
                    {"fact_id": "f2", "kind": "general_fact", "patterns": [{"type": "literal", "value": "online"}]},
                ],
            }
        ]
        benchmark.write_text("\n".join(json.dumps(c) for c in cases) + "\n", encoding="utf-8")
        responses_dir = tmp_path / "responses"
        responses_dir.mkdir()
        (responses_dir / "baseline.jsonl").write_text(
            json.dumps({"inquiry_id": "i1", "text": "apply online before 25.07.2025"}) + "\n", encoding="utf-8"
        )
        out_dir = tmp_path / "out"
        code = main(
            [
                "evaluate",
                "--benchmark",
                str(benchmark),
                "--responses-dir",
                str(responses_dir),
                "--out",
                str(out_dir),
                "--format",
                "json",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["rows"]["baseline"]["fact_recall_pct"] == 100.0

    def test_live_mode_runs_pipelines(self, kb_path, index_path, tmp_path, capsys):
        benchmark = tmp_path / "bench.jsonl"
        cases = [
            {
                "inquiry_id": "i1",
                "inquiry_text": "When is the undergraduate application deadline?",
                "gold_facts": [
                    {
                        "fact_id": "f1",
                        "kind": "precise_date",
                        "patterns": [{"type": "literal", "value": "25.07.2025"}],
                        "canonical_value": "2025-07-25",
                    }
                ],
            }
        ]
        benchmark.write_text("\n".join(json.dumps(c) for c in cases) + "\n", encoding="utf-8")
        script = tmp_path / "script.json"
        script.write_text(json.dumps({"i1": "The deadline is 25.07.2025."}), encoding="utf-8")
        out_dir = tmp_path / "out"
        code = main(
            [
                "evaluate",
                "--benchmark",
                str(benchmark),
                "--live",
                "--kb",
                str(kb_path),
                "--index",
                str(index_path),
                "--configs",
                "finetuned_rag",
                "--script",
                str(script),
                "--out",
                str(out_dir),
                "--format",
                "json",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["rows"]["finetuned_rag"]["fact_recall_pct"] == 100.0
        assert payload["rows"]["finetuned_rag"]["precise_data_recall_pct"] == 100.0

    def test_missing_benchmark_exit_1(self, tmp_path):
        code = main(
            ["evaluate", "--benchmark", str(tmp_path / "none.jsonl"), "--responses-dir", str(tmp_path), "--out", str(tmp_path / "o")]
        )
        assert code == 1

    def test_empty_responses_dir_exit_2(self, tmp_path):
        benchmark = tmp_path / "bench.jsonl"
        benchmark.write_text(
            json.dumps(
                {
                    "inquiry_id": "i1",
                    "inquiry_text": "q",
                    "gold_facts": [
                        {"fact_id": "f", "kind": "general_fact", "patterns": [{"type": "literal", "value": "x"}]}
                    ],
                }
            )
            + "\n",
            encoding="utf-8",
        )
        empty = tmp_path / "responses"
        empty.mkdir()
        code = main(["evaluate", "--benchmark", str(benchmark), "--responses-dir", str(empty), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_no_mode_usage_error(self, tmp_path):
        benchmark = tmp_path / "bench.jsonl"
        benchmark.write_text("", encoding="utf-8")
        assert main(["evaluate", "--benchmark", str(benchmark), "--out", str(tmp_path / "o")]) == 1


class TestParser:
    def test_unknown_subcommand_exit_1(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["--help"])
        assert excinfo.value.code == 0

    def test_subcommand_help(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["query", "--help"])
        assert excinfo.value.code == 0
