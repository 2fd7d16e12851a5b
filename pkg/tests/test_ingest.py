import datetime as dt
import json

import pytest
from hypothesis import given, strategies as st

from conftest import FAKE_RASTERIZER
from parldoc.ingest import (
    DocumentError,
    ManifestError,
    RasterizerNotFound,
    SessionMetadata,
    extract_date_from_filename,
    load_session_manifest,
    rasterize_document,
    save_session_manifest,
)

RECORD = {
    "legislature_uri": "http://dati.camera.it/ocd/legislatura.rdf/regno_12",
    "session_uri": "http://dati.camera.it/ocd/seduta.rdf/sr12004",
    "date": "1874-11-27",
    "document_url": "http://storia.camera.it/regno/lavori/leg12/sed004.pdf",
}


def write(tmp_path, payload, name="manifest.json"):
    path = tmp_path / name
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload), encoding="utf-8")
    return path


def test_manifest_running_example(tmp_path):
    [session] = load_session_manifest(write(tmp_path, [RECORD]))
    assert session.legislature_uri == RECORD["legislature_uri"]
    assert session.session_uri == RECORD["session_uri"]
    assert session.date == dt.date(1874, 11, 27)
    assert session.document_url == RECORD["document_url"]
    assert session.chamber == "camera"
    assert session.session_id == "sr12004"


def test_manifest_empty(tmp_path):
    assert load_session_manifest(write(tmp_path, [])) == []


def test_manifest_bad_date_names_field(tmp_path):
    with pytest.raises(ManifestError, match="record 0.*'date'"):
        load_session_manifest(write(tmp_path, [{**RECORD, "date": "1874-13-40"}]))


def test_manifest_malformed_json(tmp_path):
    with pytest.raises(ManifestError, match="malformed JSON"):
        load_session_manifest(write(tmp_path, '[{"date": '))


def test_manifest_reports_record_index(tmp_path):
    records = [RECORD, {k: v for k, v in RECORD.items() if k != "session_uri"}]
    with pytest.raises(ManifestError, match="record 1: missing field 'session_uri'"):
        load_session_manifest(write(tmp_path, records))


def test_manifest_ignores_extra_fields_and_keeps_order(tmp_path):
    second = {**RECORD, "session_uri": RECORD["session_uri"].replace("sr12004", "sr12005"),
              "date": "1874-11-28", "pages": 40, "note": "x"}
    sessions = load_session_manifest(write(tmp_path, [RECORD, second]))
    assert [s.session_id for s in sessions] == ["sr12004", "sr12005"]


def test_empty_uri_rejected():
    with pytest.raises(ManifestError):
        SessionMetadata.from_dict({**RECORD, "session_uri": " "})


def test_senate_guessed_from_url():
    s = SessionMetadata.from_dict({**RECORD, "document_url": "https://www.senato.it/x.pdf"})
    assert s.chamber == "senato"


uris = st.from_regex(r"http://[a-z]{1,8}\.it/[a-z0-9_/]{1,12}", fullmatch=True)


@given(st.lists(st.builds(
    SessionMetadata,
    legislature_uri=uris,
    session_uri=uris,
    date=st.dates(dt.date(1848, 1, 1), dt.date(2022, 12, 31)),
    document_url=uris,
    chamber=st.sampled_from(["camera", "senato"]),
), max_size=5))
def test_manifest_round_trip(tmp_path_factory, sessions):
    path = tmp_path_factory.mktemp("m") / "manifest.json"
    save_session_manifest(sessions, path)
    loaded = load_session_manifest(path)
    assert loaded == sessions
    save_session_manifest(loaded, path)
    assert load_session_manifest(path) == loaded


@pytest.mark.parametrize("pages", [1, 3, 7])
def test_rasterize_page_count(pdf_factory, pages):
    result = rasterize_document(pdf_factory(pages), 200, FAKE_RASTERIZER, session_ref="s")
    assert [p.page_number for p in result] == list(range(1, pages + 1))
    assert all(p.dpi == 200 and p.image_bytes.startswith(b"\x89PNG") for p in result)
    assert len({p.image_bytes for p in result}) == pages


def test_rasterize_keeps_files_in_output_dir(pdf_factory, tmp_path):
    out = tmp_path / "pages"
    rasterize_document(pdf_factory(3), 150, FAKE_RASTERIZER, output_dir=out)
    assert sorted(p.name for p in out.iterdir()) == ["page-1.png", "page-2.png", "page-3.png"]


def test_rasterize_zero_byte_file(tmp_path):
    empty = tmp_path / "empty.pdf"
    empty.write_bytes(b"")
    with pytest.raises(DocumentError, match="empty.pdf"):
        rasterize_document(empty, 200, FAKE_RASTERIZER)


def test_rasterize_corrupt_pdf(tmp_path):
    bad = tmp_path / "bad.pdf"
    bad.write_bytes(b"%PDF-1.4\nnothing here\n")
    with pytest.raises(DocumentError, match="bad.pdf"):
        rasterize_document(bad, 200, FAKE_RASTERIZER)


@pytest.mark.parametrize("dpi", [50, 71, 601])
def test_rasterize_dpi_range(pdf_factory, dpi):
    with pytest.raises(ValueError, match="dpi"):
        rasterize_document(pdf_factory(1), dpi, FAKE_RASTERIZER)


def test_rasterizer_missing(pdf_factory):
    with pytest.raises(RasterizerNotFound):
        rasterize_document(pdf_factory(1), 200, "no-such-rasterizer-binary {input} {output_dir}")


@pytest.mark.parametrize("filename, expected", [
    ("camera_18741127_sed004.png", dt.date(1874, 11, 27)),
    ("senato_page_12.png", None),
    ("doc_1874-11-27.png", dt.date(1874, 11, 27)),
    ("leg_1948_05_08_p3.png", dt.date(1948, 5, 8)),
    ("camera_18741399_sed004.png", None),
    ("x_19480508_then_1874-11-27.png", dt.date(1948, 5, 8)),
])
def test_extract_date_from_filename(filename, expected):
    assert extract_date_from_filename(filename) == expected


def test_date_patterns_configurable(tmp_path):
    from parldoc.ingest import load_date_patterns

    path = tmp_path / "patterns.txt"
    path.write_text(r"seduta(?P<d>\d\d)(?P<m>\d\d)(?P<y>\d{4})" + "\n", encoding="utf-8")
    patterns = load_date_patterns(path)
    assert extract_date_from_filename("seduta27111874.png", patterns) == dt.date(1874, 11, 27)
    assert extract_date_from_filename("camera_18741127.png", patterns) is None


@given(st.text(alphabet="0123456789-_abc.", max_size=30))
def test_extracted_dates_are_valid(name):
    date = extract_date_from_filename(name)
    assert date is None or dt.date.fromisoformat(date.isoformat()) == date
