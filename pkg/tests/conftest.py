from __future__ import annotations

import json
import shutil
import sys
from pathlib import Path

import pytest

from parldoc.entities import cache_wikidata_link
from parldoc.inference import (
    InferenceConfig,
    assemble_label_prompt,
    build_chat_request,
    completion_response,
    flatten_layout,
    load_prompt,
    parse_layout,
    write_fixture,
)
from parldoc.ingest import rasterize_document

DATA = Path(__file__).parent / "data"
RUNNING = DATA / "running_example"
FAKE_RASTERIZER = f'"{sys.executable}" "{DATA / "fake_rasterizer.py"}" {{input}} {{output_dir}} {{dpi}}'

OCR_CFG = {"endpoint_url": "http://ocr.invalid/v1/chat/completions", "model_name": "dots.ocr"}
LABEL_CFG = {"endpoint_url": "http://vlm.invalid/v1/chat/completions", "model_name": "Qwen2.5-VL-72B-Instruct"}
PR3028 = "http://dati.camera.it/ocd/persona.rdf/pr3028"


def make_pdf(path: Path, pages: int) -> Path:
    """Write a minimal, structurally valid PDF with ``pages`` empty pages."""
    objects = ["<< /Type /Catalog /Pages 2 0 R >>"]
    kids = " ".join(f"{3 + i} 0 R" for i in range(pages))
    objects.append(f"<< /Type /Pages /Kids [{kids}] /Count {pages} >>")
    for _ in range(pages):
        objects.append("<< /Type /Page /Parent 2 0 R /MediaBox [0 0 595 842] >>")
    out = bytearray(b"%PDF-1.4\n")
    offsets = []
    for n, body in enumerate(objects, 1):
        offsets.append(len(out))
        out += f"{n} 0 obj\n{body}\nendobj\n".encode()
    xref = len(out)
    out += f"xref\n0 {len(objects) + 1}\n0000000000 65535 f \n".encode()
    for off in offsets:
        out += f"{off:010d} 00000 n \n".encode()
    out += f"trailer\n<< /Size {len(objects) + 1} /Root 1 0 R >>\nstartxref\n{xref}\n%%EOF\n".encode()
    path.write_bytes(bytes(out))
    return path


@pytest.fixture
def pdf_factory(tmp_path):
    def factory(pages: int, name: str = "doc.pdf") -> Path:
        return make_pdf(tmp_path / name, pages)

    return factory


def build_running_example(root: Path) -> dict:
    """Lay out manifest, config, source PDF, warm caches and inference fixtures for the two-page excerpt."""
    root.mkdir(parents=True, exist_ok=True)
    docs = root / "docs"
    docs.mkdir(exist_ok=True)
    pdf = make_pdf(docs / "sed004.pdf", 2)
    manifest = root / "manifest.json"
    shutil.copy(RUNNING / "manifest.json", manifest)

    cache = root / "cache"
    (cache / "entities").mkdir(parents=True, exist_ok=True)
    shutil.copy(RUNNING / "entities_1874-11-27.json", cache / "entities" / "1874-11-27.json")
    cache_wikidata_link(cache, PR3028, "Q597155")
    cache_wikidata_link(cache, "http://example.org/persona/biancheri", None)

    config = root / "config.json"
    config.write_text(json.dumps({
        "inference": {"ocr": OCR_CFG, "labelling": LABEL_CFG},
        "sparql_endpoint": "http://sparql.invalid/sparql",
        "cache_dir": "cache",
        "documents_dir": "docs",
        "rasterizer": FAKE_RASTERIZER,
        "dpi": 200,
        "concurrency_limit": 2,
    }, indent=2), encoding="utf-8")

    fixtures = root / "fixtures"
    ocr_cfg, label_cfg = InferenceConfig(**OCR_CFG), InferenceConfig(**LABEL_CFG)
    ocr_prompt, label_template = load_prompt("ocr_layout.txt"), load_prompt("labelling.txt")
    pages = rasterize_document(pdf, 200, FAKE_RASTERIZER)
    for page in pages:
        layout = (RUNNING / f"ocr_page{page.page_number}.json").read_text(encoding="utf-8")
        write_fixture(fixtures, build_chat_request(ocr_cfg, page.image_bytes, ocr_prompt), completion_response(layout))
        text = flatten_layout(parse_layout(layout))
        labels = (RUNNING / f"labels_page{page.page_number}.json").read_text(encoding="utf-8")
        request = build_chat_request(label_cfg, page.image_bytes, assemble_label_prompt(label_template, text))
        write_fixture(fixtures, request, completion_response(labels))
    return {"root": root, "manifest": manifest, "config": config, "fixtures": fixtures, "cache": cache,
            "pdf": pdf, "pages": pages}


@pytest.fixture
def running_example(tmp_path):
    return build_running_example(tmp_path / "example")


@pytest.fixture
def expected_minghetti() -> str:
    return (RUNNING / "expected_minghetti.json").read_text(encoding="utf-8")
