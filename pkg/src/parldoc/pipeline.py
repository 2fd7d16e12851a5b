"""Stage orchestration with on-disk checkpoints.

Per session ``<sid>`` (last segment of the session URI) the working files are::

    <out>/work/<sid>/pages/page-<n>.png     rasterized pages
    <out>/work/<sid>/ocr/page-<n>.json      flattened OCR text
    <out>/work/<sid>/labels/page-<n>.json   labelled elements, or an error record
    <out>/work/<sid>/processed.json         post-processed document
    <out>/work/<sid>/links.json             per-speaker match outcomes
    <out>/<sid>.json                        final output

Every stage skips work whose output file already exists, so a rerun resumes
where the previous one stopped.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence
from urllib.parse import unquote, urlparse

import httpx

from .config import PipelineConfig
from .entities import fetch_active_entities, fetch_wikidata_link
from .inference import Backend, LabelledElement, LabellingError, load_prompt, label_page, ocr_page
from .ingest import PageImage, SessionMetadata, collect_page_images, rasterize_document
from .matching import match_document
from .postprocess import ProcessedDocument, postprocess_document

log = logging.getLogger(__name__)

STAGES = ("ocr", "label", "postprocess", "link")


class MissingInput(Exception):
    """A stage was asked to run before the stage it depends on."""

    def __init__(self, path: Path, stage: str):
        super().__init__(f"{stage}: expected input not found: {path}")
        self.path = path


def write_json(path: Path, payload, indent: int = 2) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, ensure_ascii=False, indent=indent) + "\n")
    os.replace(tmp, path)


def read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


@dataclass
class Workspace:
    out_dir: Path
    session: SessionMetadata

    @property
    def root(self) -> Path:
        return self.out_dir / "work" / self.session.session_id

    @property
    def pages_dir(self) -> Path:
        return self.root / "pages"

    def ocr_path(self, n: int) -> Path:
        return self.root / "ocr" / f"page-{n}.json"

    def label_path(self, n: int) -> Path:
        return self.root / "labels" / f"page-{n}.json"

    @property
    def processed_path(self) -> Path:
        return self.root / "processed.json"

    @property
    def links_path(self) -> Path:
        return self.root / "links.json"

    @property
    def output_path(self) -> Path:
        return self.out_dir / f"{self.session.session_id}.json"


class Pipeline:
    def __init__(self, cfg: PipelineConfig, backend: Backend, out_dir: str | Path, base_dir: str | Path = "."):
        self.cfg = cfg
        self.backend = backend
        self.out_dir = Path(out_dir)
        self.base_dir = Path(base_dir)
        self._ocr_prompt: str | None = None
        self._label_prompt: str | None = None

    def workspace(self, session: SessionMetadata) -> Workspace:
        return Workspace(self.out_dir, session)

    def _map(self, fn: Callable, items: Sequence) -> list:
        if self.cfg.concurrency_limit == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.cfg.concurrency_limit) as pool:
            return list(pool.map(fn, items))

    # -- source document and pages ------------------------------------------

    def locate_document(self, session: SessionMetadata, ws: Workspace) -> Path:
        url = session.document_url
        parsed = urlparse(url)
        if parsed.scheme == "file":
            return Path(unquote(parsed.path))
        if parsed.scheme in ("", None):
            local = Path(url)
            return local if local.is_absolute() else self.base_dir / local
        if self.cfg.documents_dir is not None:
            candidate = self.cfg.documents_dir / Path(unquote(parsed.path)).name
            if candidate.is_file():
                return candidate
        target = ws.root / "source.pdf"
        if not target.is_file():
            log.info("downloading %s", url)
            target.parent.mkdir(parents=True, exist_ok=True)
            with httpx.stream("GET", url, follow_redirects=True, timeout=120) as resp:
                resp.raise_for_status()
                with open(str(target) + ".part", "wb") as fh:
                    for chunk in resp.iter_bytes():
                        fh.write(chunk)
            os.replace(str(target) + ".part", target)
        return target

    def pages(self, session: SessionMetadata) -> list[PageImage]:
        ws = self.workspace(session)
        done = ws.pages_dir / ".complete"
        if done.is_file():
            return collect_page_images(ws.pages_dir, self.cfg.dpi, session.session_uri)
        if ws.pages_dir.exists():
            shutil.rmtree(ws.pages_dir)
        pdf = self.locate_document(session, ws)
        pages = rasterize_document(pdf, self.cfg.dpi, self.cfg.rasterizer, session.session_uri, ws.pages_dir)
        done.write_text(f"{len(pages)}\n", encoding="utf-8")
        return pages

    def _existing_pages(self, session: SessionMetadata, stage: str) -> list[PageImage]:
        ws = self.workspace(session)
        if not (ws.pages_dir / ".complete").is_file():
            raise MissingInput(ws.pages_dir, stage)
        return collect_page_images(ws.pages_dir, self.cfg.dpi, session.session_uri)

    # -- stages -------------------------------------------------------------

    def run_ocr(self, session: SessionMetadata) -> None:
        ws = self.workspace(session)
        pages = self.pages(session)
        if self._ocr_prompt is None:
            self._ocr_prompt = load_prompt("ocr_layout.txt", self.cfg.ocr_prompt)

        def one(page: PageImage) -> None:
            path = ws.ocr_path(page.page_number)
            if path.is_file():
                return
            result = ocr_page(page, self.cfg.ocr, self.backend, self._ocr_prompt)
            write_json(path, {"page_number": result.page_number, "text": result.text})

        self._map(one, pages)

    def run_label(self, session: SessionMetadata) -> None:
        ws = self.workspace(session)
        pages = self._existing_pages(session, "label")
        for page in pages:
            if not ws.ocr_path(page.page_number).is_file():
                raise MissingInput(ws.ocr_path(page.page_number), "label")
        if self._label_prompt is None:
            self._label_prompt = load_prompt("labelling.txt", self.cfg.labelling_prompt)

        def one(page: PageImage) -> None:
            path = ws.label_path(page.page_number)
            if path.is_file() and read_json(path).get("elements") is not None:
                return
            ocr_text = read_json(ws.ocr_path(page.page_number))["text"]
            try:
                elements = label_page(page, ocr_text, self.cfg.labelling, self.backend, self._label_prompt)
            except LabellingError as exc:
                log.error("%s page %d left unprocessed: %s", session.session_id, page.page_number, exc)
                write_json(path, {"page_number": page.page_number, "elements": None, "error": str(exc),
                                  "raw": exc.raw})
                return
            write_json(path, {"page_number": page.page_number, "elements": [e.to_dict() for e in elements]})

        self._map(one, pages)

    def run_postprocess(self, session: SessionMetadata) -> ProcessedDocument:
        ws = self.workspace(session)
        if ws.processed_path.is_file():
            return ProcessedDocument.from_dict(read_json(ws.processed_path))
        labels_dir = ws.root / "labels"
        files = sorted(labels_dir.glob("page-*.json"), key=lambda p: int(p.stem.split("-")[1])) if labels_dir.is_dir() else []
        if not files:
            raise MissingInput(labels_dir, "postprocess")
        pages, unprocessed = [], []
        for path in files:
            record = read_json(path)
            if record.get("elements") is None:
                unprocessed.append(record["page_number"])
                continue
            pages.append((record["page_number"], [LabelledElement.from_dict(e) for e in record["elements"]]))
        doc = postprocess_document(session, pages, unprocessed, self.cfg.matching.role_lexicon)
        write_json(ws.processed_path, doc.to_dict())
        return doc

    def run_link(self, session: SessionMetadata) -> Path:
        ws = self.workspace(session)
        if not ws.processed_path.is_file():
            raise MissingInput(ws.processed_path, "link")
        doc = ProcessedDocument.from_dict(read_json(ws.processed_path))
        pool = fetch_active_entities(session.date, self.cfg.sparql_endpoint, cache_dir=self.cfg.cache_dir,
                                     refresh=self.cfg.refresh_entities, query_dir=self.cfg.query_dir)
        resolver = None
        if self.cfg.resolve_wikidata:
            def resolver(uri: str) -> str | None:
                return fetch_wikidata_link(uri, self.cfg.sparql_endpoint, cache_dir=self.cfg.cache_dir)
        linked = match_document(doc, pool, self.cfg.matching, resolver)
        write_json(ws.links_path, {s: o.to_dict() for s, o in linked.links.items()})
        write_json(ws.output_path, linked.output_dict(), indent=4)
        return ws.output_path

    def run_session(self, session: SessionMetadata) -> Path:
        ws = self.workspace(session)
        if ws.output_path.is_file():
            log.info("%s already complete", session.session_id)
            return ws.output_path
        self.run_ocr(session)
        self.run_label(session)
        self.run_postprocess(session)
        return self.run_link(session)

    def run_stage(self, stage: str, session: SessionMetadata):
        return {"ocr": self.run_ocr, "label": self.run_label,
                "postprocess": self.run_postprocess, "link": self.run_link}[stage](session)

    def run_many(self, sessions: Sequence[SessionMetadata], stage: str | None = None) -> list[tuple[SessionMetadata, Exception]]:
        """Run all sessions with bounded parallelism; returns the failures."""
        failures: list[tuple[SessionMetadata, Exception]] = []

        def one(session: SessionMetadata) -> None:
            try:
                if stage is None:
                    self.run_session(session)
                else:
                    self.run_stage(stage, session)
            except MissingInput:
                raise
            except Exception as exc:
                log.error("session %s failed: %s", session.session_id, exc, exc_info=log.isEnabledFor(logging.DEBUG))
                failures.append((session, exc))

        self._map(one, list(sessions))
        return failures
