"""Document-level post-processing of labelled page elements.

Four passes turn per-page output into one coherent sequence: hyphenation
repair, cross-page merging of truncated speeches, splitting roles off speaker
names, and carrying the last named speaker onto "unknown" fragments.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from typing import Sequence

from .inference import SENTINELS, SPEAKER_NONE, SPEAKER_UNKNOWN, LabelledElement
from .ingest import SessionMetadata
from .resources import load_entries

_HYPHEN_BREAK = re.compile(r"(?<=[^\W\d_])-\s+(?=[^\W\d_])")
_CLOSERS = "\"'”’»)]"
TERMINAL_PUNCTUATION = ".!?…"


def resolve_hyphenation(text: str) -> str:
    """Rejoin words split as ``am- ministrazione``.

    Only a hyphen between letters, followed by whitespace and a lower-case
    letter, is removed; ``1874-1875`` or ``re- Cord`` stay as they are.
    """

    def join(m: re.Match) -> str:
        return "" if m.string[m.end()].islower() else m.group(0)

    return _HYPHEN_BREAK.sub(join, text)


def ends_sentence(text: str) -> bool:
    stripped = text.rstrip().rstrip(_CLOSERS).rstrip()
    return bool(stripped) and stripped[-1] in TERMINAL_PUNCTUATION


def load_role_lexicon(path=None) -> list[str]:
    return [entry.upper() for entry in load_entries(path, "roles.txt")]


_DEFAULT_LEXICON: list[str] | None = None


def _default_lexicon() -> list[str]:
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = load_role_lexicon()
    return _DEFAULT_LEXICON


def extract_role(raw_speaker: str, lexicon: Sequence[str] | None = None) -> tuple[str, str | None]:
    """Split ``"NAME, ROLE, ROLE"`` into the name and the role remainder.

    A comma-less string that starts with a lexicon role (``PRESIDENTE``,
    ``MINISTRO DELL'INTERNO``) is a role with no name.
    """
    if lexicon is None:
        lexicon = _default_lexicon()
    if "," in raw_speaker:
        name, role = raw_speaker.split(",", 1)
        return name.strip(), role.strip() or None
    speaker = raw_speaker.strip()
    upper = speaker.upper()
    for entry in lexicon:
        if upper == entry or upper.startswith(entry + " "):
            return "", speaker
    return speaker, None


@dataclass(frozen=True)
class ProcessedElement:
    type: str
    content: str
    speaker: str = SPEAKER_NONE
    speaker_name: str = SPEAKER_NONE
    speaker_role: str | None = None
    origin_pages: tuple[int, ...] = (1,)
    speaker_uri: str | None = None
    wikidata_uri: str | None = None

    @property
    def has_named_speaker(self) -> bool:
        return self.speaker not in SENTINELS

    def output_dict(self) -> dict:
        """Final output form: speaker, type, content, then link fields when present."""
        out = {"speaker": self.speaker, "type": self.type, "content": self.content}
        if self.speaker_uri is not None:
            out["speaker_uri"] = self.speaker_uri
        if self.wikidata_uri is not None:
            out["wikidata_uri"] = self.wikidata_uri
        return out

    def to_dict(self) -> dict:
        out = {"speaker": self.speaker, "type": self.type, "content": self.content,
               "speaker_name": self.speaker_name, "speaker_role": self.speaker_role,
               "origin_pages": list(self.origin_pages)}
        if self.speaker_uri is not None:
            out["speaker_uri"] = self.speaker_uri
        if self.wikidata_uri is not None:
            out["wikidata_uri"] = self.wikidata_uri
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ProcessedElement":
        return cls(
            type=data["type"],
            content=data["content"],
            speaker=data.get("speaker", SPEAKER_NONE),
            speaker_name=data.get("speaker_name", data.get("speaker", SPEAKER_NONE)),
            speaker_role=data.get("speaker_role"),
            origin_pages=tuple(data.get("origin_pages", (1,))),
            speaker_uri=data.get("speaker_uri"),
            wikidata_uri=data.get("wikidata_uri"),
        )


@dataclass
class ProcessedDocument:
    metadata: SessionMetadata
    elements: list[ProcessedElement]
    unprocessed_pages: list[int] = field(default_factory=list)
    links: dict = field(default_factory=dict)

    @property
    def text(self) -> str:
        return "\n\n".join(e.content for e in self.elements)

    def first_page_elements(self) -> list[ProcessedElement]:
        if not self.elements:
            return []
        first = min(e.origin_pages[0] for e in self.elements)
        return [e for e in self.elements if e.origin_pages[0] == first]

    def to_dict(self) -> dict:
        return {
            **self.metadata.to_dict(),
            "unprocessed_pages": list(self.unprocessed_pages),
            "elements": [e.to_dict() for e in self.elements],
        }

    def output_dict(self) -> dict:
        return {
            **self.metadata.to_dict(),
            "unprocessed_pages": list(self.unprocessed_pages),
            "elements": [e.output_dict() for e in self.elements],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProcessedDocument":
        return cls(
            metadata=SessionMetadata.from_dict(data),
            elements=[ProcessedElement.from_dict(e) for e in data.get("elements", [])],
            unprocessed_pages=list(data.get("unprocessed_pages", [])),
        )


def to_processed(element: LabelledElement, page_number: int, lexicon: Sequence[str] | None = None) -> ProcessedElement:
    # only speeches carry a speaker; labelling already warned about any other case
    speaker = element.speaker if element.type == "text" else SPEAKER_NONE
    if speaker in SENTINELS:
        name, role = speaker, None
    else:
        name, role = extract_role(speaker, lexicon)
    return ProcessedElement(
        type=element.type,
        content=resolve_hyphenation(element.content),
        speaker=speaker,
        speaker_name=name,
        speaker_role=role,
        origin_pages=(page_number,),
    )


_SKIP_AS_LAST = ("page-header", "footnote")


def _join_seam(left: str, right: str) -> str:
    return resolve_hyphenation(left.rstrip() + " " + right.lstrip())


def merge_cross_page(pages: Sequence[tuple[int, Sequence[LabelledElement]]],
                     lexicon: Sequence[str] | None = None) -> list[ProcessedElement]:
    """Flatten pages into one element list, merging speeches cut at page ends.

    The last element of page k (page headers and footnotes skipped) merges
    with the first non-header element of page k+1 when the former is a text
    without terminal punctuation and the latter is a text whose speaker is
    "unknown". A merged element can keep absorbing fragments from later pages.
    """
    out: list[ProcessedElement] = []
    previous: list[int] = []  # indices in `out` holding the previous page's elements
    for page_number, elements in pages:
        converted = [to_processed(e, page_number, lexicon) for e in elements]
        tail = next((i for i in reversed(previous) if out[i].type not in _SKIP_AS_LAST), None)
        head = next((j for j, e in enumerate(converted) if e.type != "page-header"), None)
        merge = (
            tail is not None
            and head is not None
            and out[tail].type == "text"
            and not ends_sentence(out[tail].content)
            and converted[head].type == "text"
            and converted[head].speaker == SPEAKER_UNKNOWN
        )
        current: list[int] = []
        for j, element in enumerate(converted):
            if merge and j == head:
                last = out[tail]
                out[tail] = dataclasses.replace(
                    last,
                    content=_join_seam(last.content, element.content),
                    origin_pages=last.origin_pages + (page_number,),
                )
                current.append(tail)
            else:
                out.append(element)
                current.append(len(out) - 1)
        previous = current
    return out


def infer_speaker_continuity(elements: Sequence[ProcessedElement]) -> list[ProcessedElement]:
    """Give "unknown" text elements the most recent named speaker.

    A section header ends the current speaker; notes, page headers, footnotes
    and tables leave it untouched.
    """
    current: ProcessedElement | None = None
    out = []
    for element in elements:
        if element.type == "section-header":
            current = None
        elif element.type == "text":
            if element.has_named_speaker:
                current = element
            elif element.speaker == SPEAKER_UNKNOWN and current is not None:
                element = dataclasses.replace(
                    element,
                    speaker=current.speaker,
                    speaker_name=current.speaker_name,
                    speaker_role=current.speaker_role,
                )
        out.append(element)
    return out


def postprocess_document(metadata: SessionMetadata,
                         pages: Sequence[tuple[int, Sequence[LabelledElement]]],
                         unprocessed_pages: Sequence[int] = (),
                         lexicon: Sequence[str] | None = None) -> ProcessedDocument:
    pages = sorted(pages, key=lambda p: p[0])
    merged = merge_cross_page(pages, lexicon)
    return ProcessedDocument(metadata, infer_speaker_continuity(merged), sorted(unprocessed_pages))
