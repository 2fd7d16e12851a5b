import json
import shutil
import time

import pytest

from conftest import LABEL_CFG, OCR_CFG, PR3028, build_running_example
from parldoc.cli import main
from parldoc.config import ConfigError, config_from_dict, load_config
from parldoc.inference import FixtureBackend
from parldoc.ingest import load_session_manifest
from parldoc.pipeline import Pipeline

MINGHETTI = "MINGHETTI, PRESIDENTE DEL CONSIGLIO, MINISTRO PER LE FINANZE"


def cli(example, command, out, *extra):
    return main([command, "--manifest", str(example["manifest"]), "--out", str(out),
                 "--config", str(example["config"]), "--mock-fixtures", str(example["fixtures"]), *extra])


def test_run_all_golden(running_example, tmp_path, expected_minghetti):
    start = time.perf_counter()
    assert cli(running_example, "run-all", tmp_path / "out") == 0
    elapsed = time.perf_counter() - start
    output = json.loads((tmp_path / "out" / "sr12004.json").read_text(encoding="utf-8"))
    [minghetti] = [e for e in output["elements"] if e["speaker"] == MINGHETTI]
    expected = json.loads(expected_minghetti)
    assert minghetti == expected
    assert json.dumps(minghetti, indent=4, ensure_ascii=False) + "\n" == expected_minghetti
    assert "nella relazione della amministrazione delle finanze" in minghetti["content"]
    assert elapsed < 5


def test_output_document_shape(running_example, tmp_path):
    cli(running_example, "run-all", tmp_path / "out")
    output = json.loads((tmp_path / "out" / "sr12004.json").read_text(encoding="utf-8"))
    assert output["session_uri"].endswith("sr12004")
    assert output["unprocessed_pages"] == []
    for element in output["elements"]:
        assert list(element)[:3] == ["speaker", "type", "content"]
        assert set(element) <= {"speaker", "type", "content", "speaker_uri", "wikidata_uri"}
    voci = output["elements"][-1]
    assert voci == {"speaker": "VOCI", "type": "text", "content": "Benissimo!"}
    links = json.loads((tmp_path / "out" / "work" / "sr12004" / "links.json").read_text())
    assert links["VOCI"]["status"] == "generic"
    assert links[MINGHETTI]["entity_uri"] == PR3028


def test_stagewise_equals_run_all(running_example, tmp_path):
    assert cli(running_example, "run-all", tmp_path / "a") == 0
    for stage in ("ocr", "label", "postprocess", "link"):
        assert cli(running_example, stage, tmp_path / "b") == 0, stage
    assert (tmp_path / "a" / "sr12004.json").read_bytes() == (tmp_path / "b" / "sr12004.json").read_bytes()


def test_resume_makes_no_inference_calls(running_example, tmp_path):
    cfg = load_config(running_example["config"])
    sessions = load_session_manifest(running_example["manifest"])
    backend = FixtureBackend(running_example["fixtures"])
    pipeline = Pipeline(cfg, backend, tmp_path / "out", running_example["root"])
    assert pipeline.run_many(sessions) == []
    assert backend.total_hits == 4
    (tmp_path / "out" / "sr12004.json").unlink()
    (tmp_path / "out" / "work" / "sr12004" / "processed.json").unlink()
    assert pipeline.run_many(sessions) == []
    assert backend.total_hits == 4


def test_stage_without_inputs_is_usage_error(running_example, tmp_path, capsys):
    assert cli(running_example, "link", tmp_path / "out") == 2
    assert "expected input not found" in capsys.readouterr().err
    assert cli(running_example, "label", tmp_path / "out") == 2


def test_empty_manifest(running_example, tmp_path):
    running_example["manifest"].write_text("[]", encoding="utf-8")
    assert cli(running_example, "run-all", tmp_path / "out") == 0
    assert not (tmp_path / "out").exists() or not list((tmp_path / "out").glob("*.json"))


def test_bad_manifest_is_usage_error(running_example, tmp_path, capsys):
    running_example["manifest"].write_text('[{"session_uri": 1}]', encoding="utf-8")
    assert cli(running_example, "run-all", tmp_path / "out") == 2
    assert "record 0" in capsys.readouterr().err


def test_empty_pool_still_writes_output(running_example, tmp_path):
    pool = running_example["cache"] / "entities" / "1874-11-27.json"
    pool.write_text(json.dumps({"date": "1874-11-27", "entities": []}), encoding="utf-8")
    assert cli(running_example, "run-all", tmp_path / "out") == 0
    output = json.loads((tmp_path / "out" / "sr12004.json").read_text(encoding="utf-8"))
    assert not any("speaker_uri" in e for e in output["elements"])


def test_labelling_failure_marks_page_unprocessed(tmp_path):
    example = build_running_example(tmp_path / "ex")
    # drop the labelling fixture for page 2 by rebuilding the fixtures without it
    shutil.rmtree(example["fixtures"])
    from conftest import RUNNING
    from parldoc.inference import (InferenceConfig, assemble_label_prompt, build_chat_request,
                                   completion_response, flatten_layout, load_prompt, parse_layout, write_fixture)
    ocr_cfg, label_cfg = InferenceConfig(**OCR_CFG), InferenceConfig(**LABEL_CFG)
    for page in example["pages"]:
        layout = (RUNNING / f"ocr_page{page.page_number}.json").read_text(encoding="utf-8")
        write_fixture(example["fixtures"], build_chat_request(ocr_cfg, page.image_bytes, load_prompt("ocr_layout.txt")),
                      completion_response(layout))
        prompt = assemble_label_prompt(load_prompt("labelling.txt"), flatten_layout(parse_layout(layout)))
        content = (RUNNING / "labels_page1.json").read_text(encoding="utf-8") if page.page_number == 1 else "I cannot help."
        write_fixture(example["fixtures"], build_chat_request(label_cfg, page.image_bytes, prompt), completion_response(content))
    assert cli(example, "run-all", tmp_path / "out") == 0
    output = json.loads((tmp_path / "out" / "sr12004.json").read_text(encoding="utf-8"))
    assert output["unprocessed_pages"] == [2]
    [minghetti] = [e for e in output["elements"] if e["speaker"] == MINGHETTI]
    assert minghetti["content"].endswith("della am-")
    record = json.loads((tmp_path / "out" / "work" / "sr12004" / "labels" / "page-2.json").read_text())
    assert record["elements"] is None and record["raw"] == "I cannot help."


def test_missing_fixture_fails_session(running_example, tmp_path, capsys):
    shutil.rmtree(running_example["fixtures"])
    running_example["fixtures"].mkdir()
    assert cli(running_example, "run-all", tmp_path / "out") == 1
    assert "sr12004 failed" in capsys.readouterr().err


def test_evaluate_writes_report(tmp_path, capsys):
    bench, outputs = tmp_path / "bench", tmp_path / "outs"
    for d in (bench / "pages", bench / "transcriptions", outputs):
        d.mkdir(parents=True)
    (bench / "pages" / "18741127_p1.png").write_bytes(b"png")
    (bench / "transcriptions" / "18741127_p1.txt").write_text("a b c", encoding="utf-8")
    (outputs / "18741127_p1.txt").write_text("a x c", encoding="utf-8")
    report = tmp_path / "report" / "eval.json"
    assert main(["evaluate", "--benchmark", str(bench), "--outputs", str(outputs), "--report", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["pre_ww2"]["wer"] == 1 / 3 and data["post_ww2"]["page_count"] == 0
    assert report.with_suffix(".txt").read_text() == capsys.readouterr().out


def test_evaluate_empty_benchmark(tmp_path):
    assert main(["evaluate", "--benchmark", str(tmp_path), "--outputs", str(tmp_path),
                 "--report", str(tmp_path / "r.json")]) == 3
    assert main(["evaluate", "--benchmark", str(tmp_path / "nope"), "--outputs", str(tmp_path),
                 "--report", str(tmp_path / "r.json")]) == 2


def test_config_resolution(tmp_path, monkeypatch):
    monkeypatch.setenv("PARLDOC_SPARQL_ENDPOINT", "http://env.invalid/sparql")
    cfg = config_from_dict({"cache_dir": "c", "inference": {"ocr": {"timeout": 30}},
                            "matching": {"similarity_threshold": 90}}, tmp_path)
    assert cfg.cache_dir == tmp_path / "c"
    assert cfg.sparql_endpoint == "http://env.invalid/sparql"
    assert cfg.ocr.timeout == 30 and cfg.ocr.model_name == "dots.ocr"
    assert cfg.matching.similarity_threshold == 90


@pytest.mark.parametrize("data", [{"concurrency_limit": 0}, {"dpi": 50}, {"matching": {"similarity_threshold": 120}},
                                  {"inference": {"ocr": {"max_retries": -1}}}])
def test_config_invalid(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_config_malformed_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(path)
