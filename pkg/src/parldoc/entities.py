"""Retrieval of the persons active on a session date from the Chamber of Deputies knowledge base."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import re
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable
from urllib.parse import urlparse

import httpx

from .resources import read_text

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://dati.camera.it/sparql"
ROLE_CLASSES = ("dep", "gov", "org", "off")
_WIKIDATA_ID = re.compile(r"Q\d+")


class RetrievalError(Exception):
    pass


@dataclass(frozen=True)
class EntityRecord:
    uri: str
    fullname: str
    name: str
    surname: str
    dep: bool = False
    gov: tuple[str, ...] = ()
    org: tuple[str, ...] = ()
    off: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.uri:
            raise ValueError("entity uri must be non-empty")
        if not self.fullname.strip() or not self.surname.strip():
            raise ValueError(f"{self.uri}: fullname and surname must be non-empty")
        for attr in ("fullname", "name", "surname"):
            object.__setattr__(self, attr, " ".join(getattr(self, attr).split()).upper())
        for attr in ("gov", "org", "off"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

    @property
    def roles(self) -> tuple[str, ...]:
        return self.gov + self.org + self.off

    def to_dict(self) -> dict:
        return {
            "uri": self.uri,
            "fullname": self.fullname,
            "name": self.name,
            "surname": self.surname,
            "dep": self.dep,
            "gov": list(self.gov),
            "org": list(self.org),
            "off": list(self.off),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EntityRecord":
        return cls(
            uri=data["uri"],
            fullname=data["fullname"],
            name=data.get("name", ""),
            surname=data["surname"],
            dep=bool(data.get("dep", False)),
            gov=tuple(data.get("gov", ())),
            org=tuple(data.get("org", ())),
            off=tuple(data.get("off", ())),
        )


@dataclass
class EntityPool:
    date: dt.date
    entities: list[EntityRecord] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entities:
            if e.uri in seen:
                raise ValueError(f"duplicate entity uri in pool: {e.uri}")
            seen.add(e.uri)
        self._by_uri = {e.uri: e for e in self.entities}

    def __len__(self) -> int:
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities)

    def __contains__(self, uri: str) -> bool:
        return uri in self._by_uri

    def get(self, uri: str) -> EntityRecord | None:
        return self._by_uri.get(uri)

    def to_dict(self) -> dict:
        return {"date": self.date.isoformat(), "entities": [e.to_dict() for e in self.entities]}

    @classmethod
    def from_dict(cls, data: dict) -> "EntityPool":
        return cls(dt.date.fromisoformat(data["date"]), [EntityRecord.from_dict(e) for e in data["entities"]])


# -- SPARQL transport -------------------------------------------------------


class SparqlClient:
    """SELECT queries over HTTP, SPARQL-JSON results, retried with exponential backoff."""

    def __init__(self, endpoint: str = DEFAULT_ENDPOINT, *, retries: int = 3, backoff: float = 1.0,
                 timeout: float = 60.0, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._transport = transport
        self._sleep = sleep
        self.requests = 0

    def select(self, query: str) -> list[dict[str, str]]:
        last_error: Exception | None = None
        with httpx.Client(transport=self._transport, timeout=self.timeout) as client:
            for attempt in range(self.retries + 1):
                if attempt:
                    self._sleep(self.backoff * 2 ** (attempt - 1))
                self.requests += 1
                try:
                    resp = client.post(
                        self.endpoint,
                        data={"query": query},
                        headers={"Accept": "application/sparql-results+json"},
                    )
                except httpx.TransportError as exc:
                    last_error = exc
                    log.warning("SPARQL request to %s failed (attempt %d): %s", self.endpoint, attempt + 1, exc)
                    continue
                if resp.status_code >= 500 or resp.status_code == 429:
                    last_error = RetrievalError(f"HTTP {resp.status_code}")
                    continue
                if resp.status_code >= 400:
                    raise RetrievalError(f"SPARQL endpoint returned HTTP {resp.status_code}: {resp.text[:300]}")
                try:
                    bindings = resp.json()["results"]["bindings"]
                except (ValueError, KeyError, TypeError):
                    raise RetrievalError("SPARQL endpoint returned a non SPARQL-JSON body") from None
                return [{k: v["value"] for k, v in row.items()} for row in bindings]
        raise RetrievalError(f"SPARQL endpoint {self.endpoint} unreachable after {self.retries + 1} attempts: {last_error}")


def load_query(role_class: str, directory: str | Path | None = None) -> str:
    if directory is not None:
        return (Path(directory) / f"{role_class}.rq").read_text(encoding="utf-8")
    return read_text(f"queries/{role_class}.rq")


def fill_date(template: str, date: dt.date) -> str:
    # The knowledge base stores dates as YYYYMMDD strings.
    return template.replace("%DATE%", date.strftime("%Y%m%d"))


def merge_rows(rows_by_class: dict[str, Iterable[dict[str, str]]]) -> list[EntityRecord]:
    """Union the per-class result rows by URI, keeping first-seen order."""
    merged: dict[str, dict] = {}
    for role_class in ROLE_CLASSES:
        for row in rows_by_class.get(role_class, ()):
            uri = row["uri"]
            entry = merged.get(uri)
            if entry is None:
                name = row.get("name", "").strip()
                surname = row.get("surname", "").strip()
                entry = merged[uri] = {
                    "uri": uri,
                    "fullname": row.get("fullname") or f"{name} {surname}".strip(),
                    "name": name,
                    "surname": surname,
                    "dep": False,
                    "gov": [],
                    "org": [],
                    "off": [],
                }
            if role_class == "dep":
                entry["dep"] = True
            else:
                role = row.get("role")
                if role and role not in entry[role_class]:
                    entry[role_class].append(role)
    return [EntityRecord.from_dict(e) for e in merged.values()]


# -- cache ------------------------------------------------------------------


def _write_once(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2)
    os.replace(tmp, path)


def entity_cache_path(cache_dir: str | Path, date: dt.date) -> Path:
    return Path(cache_dir) / "entities" / f"{date.isoformat()}.json"


def wikidata_cache_path(cache_dir: str | Path, uri: str) -> Path:
    return Path(cache_dir) / "wikidata" / f"{hashlib.sha256(uri.encode('utf-8')).hexdigest()[:32]}.json"


def save_pool(pool: EntityPool, cache_dir: str | Path) -> Path:
    path = entity_cache_path(cache_dir, pool.date)
    _write_once(path, pool.to_dict())
    return path


def load_cached_pool(cache_dir: str | Path, date: dt.date) -> EntityPool | None:
    path = entity_cache_path(cache_dir, date)
    if not path.is_file():
        return None
    return EntityPool.from_dict(json.loads(path.read_text(encoding="utf-8")))


def fetch_active_entities(date: dt.date, endpoint: str = DEFAULT_ENDPOINT, *,
                          cache_dir: str | Path | None = None, refresh: bool = False,
                          client: SparqlClient | None = None,
                          query_dir: str | Path | None = None) -> EntityPool:
    """Persons active on ``date``: deputies, government, organ members and officers.

    A cached pool is returned without contacting the endpoint unless
    ``refresh`` is set; on a failed refresh the cached pool is used with a
    warning.
    """
    cached = load_cached_pool(cache_dir, date) if cache_dir is not None else None
    if cached is not None and not refresh:
        log.debug("entity pool for %s loaded from cache", date)
        return cached
    client = client or SparqlClient(endpoint)
    try:
        rows = {rc: client.select(fill_date(load_query(rc, query_dir), date)) for rc in ROLE_CLASSES}
    except RetrievalError as exc:
        if cached is not None:
            log.warning("entity retrieval for %s failed (%s); using cached pool", date, exc)
            return cached
        raise
    pool = EntityPool(date, merge_rows(rows))
    if not pool.entities:
        log.warning("entity pool for %s is empty", date)
    if cache_dir is not None:
        save_pool(pool, cache_dir)
    return pool


def _check_uri(uri: str) -> None:
    parsed = urlparse(uri)
    if parsed.scheme not in ("http", "https") or not parsed.netloc or any(c in uri for c in "<> \"{}|\\^`"):
        raise RetrievalError(f"malformed entity URI: {uri!r}")


def fetch_wikidata_link(entity_uri: str, endpoint: str = DEFAULT_ENDPOINT, *,
                        cache_dir: str | Path | None = None,
                        client: SparqlClient | None = None) -> str | None:
    """Wikidata Q-identifier linked to a person resource, or None if there is no link."""
    _check_uri(entity_uri)
    path = wikidata_cache_path(cache_dir, entity_uri) if cache_dir is not None else None
    if path is not None and path.is_file():
        return json.loads(path.read_text(encoding="utf-8")).get("wikidata_id")
    client = client or SparqlClient(endpoint)
    rows = client.select(read_text("queries/wikidata.rq").replace("%URI%", entity_uri))
    ids = sorted({m.group(0) for row in rows for m in [_WIKIDATA_ID.search(row.get("same", ""))] if m},
                 key=lambda q: int(q[1:]))
    qid = ids[0] if ids else None
    if path is not None:
        _write_once(path, {"uri": entity_uri, "wikidata_id": qid})
    return qid


def cache_wikidata_link(cache_dir: str | Path, entity_uri: str, qid: str | None) -> Path:
    path = wikidata_cache_path(cache_dir, entity_uri)
    _write_once(path, {"uri": entity_uri, "wikidata_id": qid})
    return path
