"""Session manifests, PDF rasterization and filename date extraction."""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .resources import load_entries

log = logging.getLogger(__name__)

CHAMBERS = ("camera", "senato")
DEFAULT_DPI = 200
MIN_DPI, MAX_DPI = 72, 600
DEFAULT_RASTERIZER = "pdftoppm -r {dpi} -png {input} {output_dir}/page"

_PAGE_FILE = re.compile(r"^page-0*(\d+)\.png$")


class ManifestError(ValueError):
    """A manifest file could not be parsed or failed validation."""


class DocumentError(Exception):
    """A source document is missing, empty or could not be rendered."""


class RasterizerNotFound(EnvironmentError):
    pass


def _parse_date(value, field_name: str, index: int | None = None) -> dt.date:
    where = f"record {index}: " if index is not None else ""
    if isinstance(value, dt.date):
        return value
    if not isinstance(value, str):
        raise ManifestError(f"{where}field '{field_name}' must be an ISO-8601 date string")
    try:
        return dt.date.fromisoformat(value)
    except ValueError:
        raise ManifestError(f"{where}field '{field_name}' is not a valid date: {value!r}") from None


@dataclass(frozen=True)
class SessionMetadata:
    legislature_uri: str
    session_uri: str
    date: dt.date
    document_url: str
    chamber: str = "camera"

    def __post_init__(self):
        for name in ("legislature_uri", "session_uri", "document_url"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise ManifestError(f"field '{name}' must be a non-empty string")
        if not isinstance(self.date, dt.date):
            object.__setattr__(self, "date", _parse_date(self.date, "date"))
        if self.chamber not in CHAMBERS:
            raise ManifestError(f"field 'chamber' must be one of {CHAMBERS}, got {self.chamber!r}")

    @property
    def session_id(self) -> str:
        """Last path segment of the session URI, used to name output files."""
        return self.session_uri.rstrip("/").rsplit("/", 1)[-1].removesuffix(".rdf")

    def to_dict(self) -> dict:
        return {
            "legislature_uri": self.legislature_uri,
            "session_uri": self.session_uri,
            "date": self.date.isoformat(),
            "document_url": self.document_url,
            "chamber": self.chamber,
        }

    @classmethod
    def from_dict(cls, record: dict, index: int | None = None) -> "SessionMetadata":
        where = f"record {index}: " if index is not None else ""
        if not isinstance(record, dict):
            raise ManifestError(f"{where}expected a JSON object, got {type(record).__name__}")
        for key in ("legislature_uri", "session_uri", "date", "document_url"):
            if key not in record:
                raise ManifestError(f"{where}missing field '{key}'")
        chamber = record.get("chamber") or _guess_chamber(record["document_url"])
        try:
            return cls(
                legislature_uri=record["legislature_uri"],
                session_uri=record["session_uri"],
                date=_parse_date(record["date"], "date", index),
                document_url=record["document_url"],
                chamber=chamber,
            )
        except ManifestError as exc:
            if index is not None and not str(exc).startswith("record "):
                raise ManifestError(f"{where}{exc}") from None
            raise


def _guess_chamber(url: str) -> str:
    return "senato" if "senato" in str(url).lower() else "camera"


@dataclass(frozen=True)
class PageImage:
    session_ref: str
    page_number: int
    image_bytes: bytes = field(repr=False)
    dpi: int = DEFAULT_DPI

    def __post_init__(self):
        if self.page_number < 1:
            raise ValueError(f"page_number must be >= 1, got {self.page_number}")


@dataclass(frozen=True)
class Document:
    metadata: SessionMetadata
    pages: tuple[PageImage, ...]

    def __post_init__(self):
        if not self.pages:
            raise DocumentError(f"document {self.metadata.session_uri} has no pages")
        numbers = [p.page_number for p in self.pages]
        if numbers != list(range(numbers[0], numbers[0] + len(numbers))):
            raise DocumentError(f"pages of {self.metadata.session_uri} are not contiguous: {numbers}")


def load_session_manifest(path: str | Path) -> list[SessionMetadata]:
    """Read a JSON array of session records.

    Unknown fields are ignored. A missing ``chamber`` is guessed from the
    document URL.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(records, list):
        raise ManifestError(f"{path}: expected a JSON array of session records")
    return [SessionMetadata.from_dict(record, index) for index, record in enumerate(records)]


def save_session_manifest(sessions: Iterable[SessionMetadata], path: str | Path) -> None:
    data = [s.to_dict() for s in sessions]
    Path(path).write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _check_pdf(pdf_path: Path) -> None:
    if not pdf_path.is_file():
        raise DocumentError(f"{pdf_path}: no such file")
    with pdf_path.open("rb") as fh:
        head = fh.read(1024)
    if not head:
        raise DocumentError(f"{pdf_path}: file is empty")
    if b"%PDF-" not in head:
        raise DocumentError(f"{pdf_path}: not a PDF file")


def build_rasterizer_command(template: str, input_path: Path, output_dir: Path, dpi: int) -> list[str]:
    values = {"input": str(input_path), "output_dir": str(output_dir), "dpi": str(dpi)}
    return [token.format(**values) for token in shlex.split(template)]


def rasterize_document(
    pdf_path: str | Path,
    dpi: int = DEFAULT_DPI,
    command: str = DEFAULT_RASTERIZER,
    session_ref: str = "",
    output_dir: str | Path | None = None,
) -> list[PageImage]:
    """Render every page of a PDF to PNG through an external rasterizer.

    The command template receives ``{input}``, ``{output_dir}`` and ``{dpi}``
    and must write one ``page-<n>.png`` per page (zero padding allowed). When
    ``output_dir`` is given the PNG files are kept there, otherwise a
    temporary directory is used.
    """
    if not isinstance(dpi, int) or not MIN_DPI <= dpi <= MAX_DPI:
        raise ValueError(f"dpi must be an integer in [{MIN_DPI}, {MAX_DPI}], got {dpi!r}")
    pdf_path = Path(pdf_path)
    _check_pdf(pdf_path)

    if output_dir is None:
        with tempfile.TemporaryDirectory(prefix="parldoc-raster-") as tmp:
            return _rasterize_into(pdf_path, dpi, command, session_ref, Path(tmp))
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return _rasterize_into(pdf_path, dpi, command, session_ref, out)


def _rasterize_into(pdf_path: Path, dpi: int, command: str, session_ref: str, out: Path) -> list[PageImage]:
    argv = build_rasterizer_command(command, pdf_path.resolve(), out.resolve(), dpi)
    log.debug("rasterizing %s: %s", pdf_path, argv)
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except FileNotFoundError:
        raise RasterizerNotFound(f"rasterizer executable not found: {argv[0]!r}") from None
    if proc.returncode != 0:
        raise DocumentError(f"{pdf_path}: rasterizer failed ({proc.returncode}): {proc.stderr.strip()[:500]}")
    pages = collect_page_images(out, dpi=dpi, session_ref=session_ref)
    if not pages:
        raise DocumentError(f"{pdf_path}: rasterizer produced no pages")
    return pages


def collect_page_images(directory: str | Path, dpi: int = DEFAULT_DPI, session_ref: str = "") -> list[PageImage]:
    """Load ``page-<n>.png`` files from a directory, ordered by page number."""
    found: dict[int, Path] = {}
    for path in Path(directory).iterdir():
        m = _PAGE_FILE.match(path.name)
        if m:
            found[int(m.group(1))] = path
    numbers = sorted(found)
    if numbers and numbers != list(range(1, len(numbers) + 1)):
        raise DocumentError(f"{directory}: page images are not numbered 1..n: {numbers}")
    return [PageImage(session_ref, n, found[n].read_bytes(), dpi) for n in numbers]


def load_date_patterns(path: str | Path | None = None) -> list[re.Pattern]:
    patterns = [re.compile(p) for p in load_entries(path, "date_patterns.txt")]
    for p in patterns:
        if not {"y", "m", "d"} <= set(p.groupindex):
            raise ValueError(f"date pattern {p.pattern!r} must define groups y, m and d")
    return patterns


def extract_date_from_filename(filename: str, patterns: Sequence[re.Pattern] | None = None) -> dt.date | None:
    """Return the first valid calendar date found in a filename, or None."""
    if patterns is None:
        patterns = load_date_patterns()
    name = Path(filename).name
    found: list[tuple[int, int, dt.date]] = []
    for rank, pattern in enumerate(patterns):
        for m in pattern.finditer(name):
            try:
                date = dt.date(int(m.group("y")), int(m.group("m")), int(m.group("d")))
            except ValueError:
                continue
            found.append((m.start(), rank, date))
    if not found:
        return None
    return min(found)[2]
