"""Clients for the two vision-language inference stages: page OCR and semantic labelling.

Requests follow the OpenAI chat-completions wire format with one image part
and one text part. A :class:`FixtureBackend` replays stored responses keyed by
the SHA-256 of the canonical request body, so the whole pipeline can run
without a GPU.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import httpx

from .ingest import PageImage
from .resources import read_text

log = logging.getLogger(__name__)

ELEMENT_TYPES = ("page-header", "section-header", "text", "note", "footnote", "table")
SPEAKER_NONE = "none"
SPEAKER_UNKNOWN = "unknown"
SENTINELS = (SPEAKER_NONE, SPEAKER_UNKNOWN)
OCR_TEXT_SLOT = "{{OCR_TEXT}}"


class InferenceError(Exception):
    pass


class BackendError(InferenceError):
    """The inference service could not be reached or kept failing."""


class FixtureMissing(BackendError):
    def __init__(self, key: str, directory: Path):
        super().__init__(f"no fixture {key}.json in {directory}")
        self.key = key


class ProtocolError(InferenceError):
    """The service answered, but not with something we can parse."""

    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class LabellingError(InferenceError):
    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class LabelValidationError(LabellingError):
    def __init__(self, problems: list[str], raw: str | None = None):
        super().__init__("invalid labelled elements: " + "; ".join(problems), raw)
        self.problems = problems


@dataclass(frozen=True)
class InferenceConfig:
    endpoint_url: str
    model_name: str
    timeout: float = 300.0
    max_retries: int = 3
    temperature: float = 0.0
    api_key: str | None = None
    max_tokens: int | None = None

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "InferenceConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass(frozen=True)
class OcrLayoutItem:
    bbox: tuple[int, int, int, int]
    category: str
    text: str

    def __post_init__(self):
        x1, y1, x2, y2 = self.bbox
        if x1 > x2 or y1 > y2:
            raise ValueError(f"bbox corners out of order: {self.bbox}")


@dataclass(frozen=True)
class PageTranscription:
    page_number: int
    text: str


@dataclass(frozen=True)
class LabelledElement:
    type: str
    content: str
    speaker: str = SPEAKER_NONE

    def to_dict(self) -> dict:
        return {"speaker": self.speaker, "type": self.type, "content": self.content}

    @classmethod
    def from_dict(cls, data: dict) -> "LabelledElement":
        return cls(type=data["type"], content=data["content"], speaker=data.get("speaker", SPEAKER_NONE))


# -- backends ---------------------------------------------------------------


class Backend(Protocol):
    def complete(self, request: dict, cfg: InferenceConfig) -> dict: ...


def request_key(request: dict) -> str:
    """SHA-256 of the canonical JSON encoding of a request body."""
    canonical = json.dumps(request, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class HttpBackend:
    """POSTs chat-completion requests, retrying transport errors, 429 and 5xx."""

    def __init__(self, client: httpx.Client | None = None, sleep: Callable[[float], None] = time.sleep,
                 backoff: float = 1.0):
        self._client = client
        self._sleep = sleep
        self._backoff = backoff

    def complete(self, request: dict, cfg: InferenceConfig) -> dict:
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        client = self._client or httpx.Client(timeout=cfg.timeout)
        last_error: Exception | None = None
        try:
            for attempt in range(cfg.max_retries + 1):
                if attempt:
                    self._sleep(self._backoff * 2 ** (attempt - 1))
                try:
                    resp = client.post(cfg.endpoint_url, json=request, headers=headers, timeout=cfg.timeout)
                except httpx.TransportError as exc:
                    last_error = exc
                    log.warning("inference request failed (attempt %d): %s", attempt + 1, exc)
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = BackendError(f"HTTP {resp.status_code}")
                    log.warning("inference service returned %d (attempt %d)", resp.status_code, attempt + 1)
                    continue
                if resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:500]}")
                try:
                    return resp.json()
                except ValueError:
                    raise ProtocolError("response body is not JSON", raw=resp.text) from None
        finally:
            if self._client is None:
                client.close()
        raise BackendError(f"giving up after {cfg.max_retries + 1} attempts: {last_error}")


class FixtureBackend:
    """Replays ``<directory>/<sha256-of-request>.json`` response bodies.

    With ``fallback`` set, misses are forwarded to it and the response is
    recorded into the directory.
    """

    def __init__(self, directory: str | Path, fallback: Backend | None = None):
        self.directory = Path(directory)
        self.fallback = fallback
        self.hits: Counter[str] = Counter()
        self.misses: Counter[str] = Counter()
        self._lock = threading.Lock()

    def complete(self, request: dict, cfg: InferenceConfig) -> dict:
        key = request_key(request)
        path = self.directory / f"{key}.json"
        if path.is_file():
            with self._lock:
                self.hits[key] += 1
            return json.loads(path.read_text(encoding="utf-8"))
        with self._lock:
            self.misses[key] += 1
        if self.fallback is None:
            raise FixtureMissing(key, self.directory)
        body = self.fallback.complete(request, cfg)
        write_fixture(self.directory, request, body)
        return body

    @property
    def total_hits(self) -> int:
        return sum(self.hits.values())


def write_fixture(directory: str | Path, request: dict, response: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{request_key(request)}.json"
    path.write_text(json.dumps(response, ensure_ascii=False, indent=2), encoding="utf-8")
    return path


def completion_response(content: str, model: str = "fixture") -> dict:
    """Wrap ``content`` in a minimal chat-completion response body."""
    return {
        "object": "chat.completion",
        "model": model,
        "choices": [{"index": 0, "finish_reason": "stop", "message": {"role": "assistant", "content": content}}],
    }


# -- request / response plumbing ------------------------------------------


def _sniff_mime(data: bytes) -> str:
    if data.startswith(b"\x89PNG"):
        return "image/png"
    if data.startswith(b"\xff\xd8"):
        return "image/jpeg"
    return "application/octet-stream"


def build_chat_request(cfg: InferenceConfig, image_bytes: bytes, prompt: str,
                       temperature: float | None = None) -> dict:
    data_url = f"data:{_sniff_mime(image_bytes)};base64," + base64.b64encode(image_bytes).decode("ascii")
    request = {
        "model": cfg.model_name,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "image_url", "image_url": {"url": data_url}},
                    {"type": "text", "text": prompt},
                ],
            }
        ],
        "temperature": cfg.temperature if temperature is None else temperature,
    }
    if cfg.max_tokens is not None:
        request["max_tokens"] = cfg.max_tokens
    return request


def extract_completion(response: dict) -> str:
    try:
        content = response["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError("response has no choices[0].message.content", raw=json.dumps(response)[:2000]) from None
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise ProtocolError("completion content is not text", raw=repr(content)[:2000])
    return content


_FENCE = re.compile(r"^\s*```[a-zA-Z]*\s*\n?(.*?)\n?```\s*$", re.S)


def _strip_fence(text: str) -> str:
    m = _FENCE.match(text)
    return m.group(1) if m else text


def _slice_json(text: str) -> str | None:
    """Cut away any non-JSON preamble or postamble around the outermost array/object."""
    starts = [i for i in (text.find("["), text.find("{")) if i >= 0]
    if not starts:
        return None
    start = min(starts)
    closer = "]" if text[start] == "[" else "}"
    end = text.rfind(closer)
    if end <= start:
        return None
    return text[start:end + 1]


# -- OCR stage --------------------------------------------------------------


def load_prompt(name: str, path: str | Path | None = None) -> str:
    if path is not None:
        return Path(path).read_text(encoding="utf-8")
    return read_text(f"prompts/{name}")


def parse_layout(raw: str) -> list[OcrLayoutItem]:
    """Parse a layout-analysis completion into items, keeping the returned order."""
    text = _strip_fence(raw).strip()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        sliced = _slice_json(text)
        try:
            data = json.loads(sliced) if sliced else None
        except json.JSONDecodeError:
            data = None
        if data is None:
            raise ProtocolError("OCR response is not valid JSON", raw=raw) from None
    if isinstance(data, dict):
        for key in ("layout", "elements", "items", "cells"):
            if isinstance(data.get(key), list):
                data = data[key]
                break
    if not isinstance(data, list):
        raise ProtocolError("OCR response is not a list of layout items", raw=raw)
    items = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict):
            raise ProtocolError(f"layout item {i} is not an object", raw=raw)
        try:
            bbox = tuple(int(v) for v in entry.get("bbox", (0, 0, 0, 0)))
            if len(bbox) != 4:
                raise ValueError("bbox must have four coordinates")
            items.append(OcrLayoutItem(bbox, str(entry.get("category", "")), entry.get("text") or ""))
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"layout item {i}: {exc}", raw=raw) from None
    return items


def flatten_layout(items: list[OcrLayoutItem]) -> str:
    """Join item texts with blank lines, dropping layout labels and text-less items."""
    return "\n\n".join(item.text for item in items if item.text)


def ocr_page(page: PageImage, cfg: InferenceConfig, backend: Backend, prompt: str | None = None) -> PageTranscription:
    if prompt is None:
        prompt = load_prompt("ocr_layout.txt")
    request = build_chat_request(cfg, page.image_bytes, prompt)
    response = backend.complete(request, cfg)
    items = parse_layout(extract_completion(response))
    return PageTranscription(page.page_number, flatten_layout(items))


# -- labelling stage --------------------------------------------------------


def assemble_label_prompt(template: str, ocr_text: str) -> str:
    if OCR_TEXT_SLOT not in template:
        raise ValueError(f"labelling prompt template lacks the {OCR_TEXT_SLOT} slot")
    return template.replace(OCR_TEXT_SLOT, ocr_text)


def normalise_speaker(value) -> str:
    """Upper-case speaker names; map blanks and sentinel spellings to the sentinels."""
    if value is None:
        return SPEAKER_NONE
    speaker = " ".join(str(value).split())
    if not speaker or speaker.lower() in ("none", "null", "n/a"):
        return SPEAKER_NONE
    if speaker.lower() == SPEAKER_UNKNOWN:
        return SPEAKER_UNKNOWN
    return speaker.upper()


def _decode_elements(raw: str):
    text = _strip_fence(raw).strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    sliced = _slice_json(text)
    if sliced is None:
        return None
    try:
        return json.loads(sliced)
    except json.JSONDecodeError:
        return None


def validate_elements(data, raw: str | None = None, page_number: int | None = None) -> list[LabelledElement]:
    if isinstance(data, dict) and isinstance(data.get("elements"), list):
        data = data["elements"]
    if not isinstance(data, list):
        raise LabelValidationError(["top-level value is not a JSON array"], raw)
    problems = []
    elements = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict):
            problems.append(f"element {i} is not an object")
            continue
        etype = entry.get("type")
        if etype not in ELEMENT_TYPES:
            problems.append(f"element {i} has type {etype!r}, expected one of {', '.join(ELEMENT_TYPES)}")
            continue
        content = entry.get("content")
        if not isinstance(content, str):
            problems.append(f"element {i} has no string content")
            continue
        if not content.strip():
            log.warning("page %s: dropping element %d with empty content", page_number, i)
            continue
        speaker = normalise_speaker(entry.get("speaker"))
        if etype != "text" and speaker != SPEAKER_NONE:
            log.warning("page %s: %s element %d carries speaker %r", page_number, etype, i, speaker)
        elements.append(LabelledElement(etype, content.strip(), speaker))
    if problems:
        raise LabelValidationError(problems, raw)
    if not elements:
        log.warning("page %s: labelling returned no elements", page_number)
    return elements


def label_page(page: PageImage, ocr_text: str, cfg: InferenceConfig, backend: Backend,
               template: str | None = None) -> list[LabelledElement]:
    """Segment a page into typed, speaker-attributed elements.

    Unparseable output gets one local repair (cutting non-JSON text around
    the array) and then one re-query at temperature 0.
    """
    if template is None:
        template = load_prompt("labelling.txt")
    prompt = assemble_label_prompt(template, ocr_text)

    response = backend.complete(build_chat_request(cfg, page.image_bytes, prompt), cfg)
    raw = extract_completion(response)
    data = _decode_elements(raw)
    if data is None:
        log.warning("page %d: labelling output is not JSON, re-querying at temperature 0", page.page_number)
        response = backend.complete(build_chat_request(cfg, page.image_bytes, prompt, temperature=0.0), cfg)
        raw = extract_completion(response)
        data = _decode_elements(raw)
        if data is None:
            raise LabellingError(f"page {page.page_number}: labelling output is not valid JSON", raw=raw)
    return validate_elements(data, raw, page.page_number)
