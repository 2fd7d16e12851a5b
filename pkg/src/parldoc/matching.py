"""Linking extracted speaker strings to knowledge-base persons.

Each distinct speaker string of a document goes through: the generic-voice
filter, role-only resolution (with the session president as a special case),
a fuzzy-matching cascade over surnames and full names, and a six-step
disambiguation. A second pass copies links from resolved speakers onto
similar unresolved ones.
"""

from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import fuzz
from .entities import EntityPool, EntityRecord
from .fuzz import normalise_name
from .postprocess import ProcessedDocument, ProcessedElement, extract_role, load_role_lexicon
from .resources import load_entries

log = logging.getLogger(__name__)

LINKED, GENERIC, UNRESOLVED, AMBIGUOUS = "linked", "generic", "unresolved", "ambiguous"

_ARTICLES = r"(?:IL|LO|LA|L|I|GLI|LE|UN|UNO|UNA)"
_LOCATIVE_TAIL = r"(?:A|AL|ALLA|ALLE|AI|DA|DAL|DALLA|DALLE|DAI|DI|SU|SUI|IN|NEL|NELLA|NELLE|NEI|VERSO)"
_INITIAL = re.compile(r"(?:^|[\s.])[A-Z]\.")
_PRESIDENCY = re.compile(r"\bPRESIDENZA (?:DEL|DELLA) (?:VICE ?PRESIDENTE|PRESIDENTE) ((?:[A-Z]+ ?){1,4})")
_ROLE_STOPWORDS = frozenset(
    "PER LE LA IL LO I GLI DEL DELLA DELLE DEI DEGLI DELLO DELL DI DA E ED AL ALLA ALLE AI AGLI L D".split()
)
_ROLE_QUALIFIERS = frozenset({"MINISTERO", "PRESIDENZA", "MINISTRI", "DICASTERO"})


@dataclass(frozen=True)
class MatchConfig:
    similarity_threshold: float = 85.0
    generic_patterns: tuple[str, ...] = field(default_factory=lambda: tuple(load_entries(None, "generic_speakers.txt")))
    vowel_substitution_cost: float = 0.5
    default_substitution_cost: float = 1.0
    surname_particles: tuple[str, ...] = field(default_factory=lambda: tuple(load_entries(None, "surname_particles.txt")))
    role_lexicon: tuple[str, ...] = field(default_factory=lambda: tuple(load_role_lexicon()))
    president_fallback: bool = True

    def __post_init__(self):
        if not 0.0 <= self.similarity_threshold <= 100.0:
            raise ValueError("similarity_threshold must be in [0, 100]")
        if not self.vowel_substitution_cost < self.default_substitution_cost:
            raise ValueError("vowel_substitution_cost must be lower than default_substitution_cost")

    @classmethod
    def from_dict(cls, data: dict) -> "MatchConfig":
        kwargs = {}
        for key in ("similarity_threshold", "vowel_substitution_cost", "default_substitution_cost",
                    "president_fallback"):
            if key in data:
                kwargs[key] = data[key]
        for key, default_file in (("generic_patterns", "generic_speakers.txt"),
                                  ("surname_particles", "surname_particles.txt"),
                                  ("role_lexicon", "roles.txt")):
            if key in data:
                kwargs[key] = tuple(data[key])
            elif f"{key}_file" in data:
                kwargs[key] = tuple(load_entries(data[f"{key}_file"], default_file))
        return cls(**kwargs)


@dataclass(frozen=True)
class MatchOutcome:
    status: str
    entity_uri: str | None = None
    wikidata_id: str | None = None
    candidates: tuple[tuple[str, float], ...] = ()
    strategy: str = ""
    trace: tuple[tuple[int, int], ...] = ()  # (step, survivors after the step)
    low_confidence: bool = False

    def __post_init__(self):
        if self.status == LINKED:
            if self.entity_uri is None:
                raise ValueError("a linked outcome needs an entity_uri")
            top = max(score for _, score in self.candidates) if self.candidates else None
            if (self.entity_uri, top) not in self.candidates:
                raise ValueError("a linked entity must be among the top-scoring candidates")
        elif self.status == GENERIC and (self.entity_uri or self.candidates):
            raise ValueError("a generic outcome carries no link")
        elif self.status == AMBIGUOUS and len(self.candidates) < 2:
            raise ValueError("an ambiguous outcome retains at least two candidates")

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "entity_uri": self.entity_uri,
            "wikidata_id": self.wikidata_id,
            "candidates": [list(c) for c in self.candidates],
            "strategy": self.strategy,
            "low_confidence": self.low_confidence,
        }


# -- generic voices -----------------------------------------------------------


def compile_generic_patterns(patterns: Sequence[str]) -> re.Pattern:
    body = "|".join(f"(?:{p})" for p in patterns) or r"(?!)"
    return re.compile(rf"^(?:{_ARTICLES} )?(?:{body})(?: {_LOCATIVE_TAIL} .*)?$")


_generic_cache: dict[tuple[str, ...], re.Pattern] = {}


def is_generic_speaker(name: str, patterns: Sequence[str]) -> bool:
    key = tuple(patterns)
    regex = _generic_cache.get(key)
    if regex is None:
        regex = _generic_cache[key] = compile_generic_patterns(key)
    return regex.match(normalise_name(name)) is not None


# -- roles ------------------------------------------------------------------


def normalise_role(role: str) -> str:
    tokens = normalise_name(role).split()
    return " ".join(t for t in tokens if t not in _ROLE_STOPWORDS and t not in _ROLE_QUALIFIERS)


def role_matches(role: str, entity: EntityRecord) -> bool:
    """True if any comma-separated part of ``role`` occurs in one of the entity's roles."""
    parts = [p for p in (normalise_role(x) for x in role.split(",")) if p]
    if not parts:
        return False
    held = [f" {normalise_role(r)} " for r in entity.roles]
    return any(f" {part} " in h for part in parts for h in held)


def match_by_role(role: str, pool: EntityPool | Sequence[EntityRecord]) -> list[EntityRecord]:
    return sorted((e for e in pool if role_matches(role, e)), key=lambda e: e.uri)


def _office_tokens(entity: EntityRecord) -> list[set[str]]:
    return [set(normalise_name(r).split()) for r in entity.off]


def holds_presidency(entity: EntityRecord) -> bool:
    return any(t & {"PRESIDENTE", "VICEPRESIDENTE"} for t in _office_tokens(entity))


def is_chamber_president(entity: EntityRecord) -> bool:
    return any("PRESIDENTE" in t and not t & {"VICE", "VICEPRESIDENTE"} for t in _office_tokens(entity))


def identify_president(first_page_elements: Sequence[ProcessedElement], pool: EntityPool | Sequence[EntityRecord],
                       cfg: MatchConfig | None = None, scan_limit: int = 15) -> EntityRecord | None:
    """Find the presiding officer named in a ``PRESIDENZA DEL PRESIDENTE <NAME>`` heading."""
    cfg = cfg or MatchConfig()
    committee = [e for e in pool if holds_presidency(e)]
    if not committee:
        return None
    for element in list(first_page_elements)[:scan_limit]:
        if element.type not in ("page-header", "section-header", "text"):
            continue
        m = _PRESIDENCY.search(normalise_name(element.content))
        if not m:
            continue
        tokens = m.group(1).split()
        prefixes = [" ".join(tokens[:k]) for k in range(1, len(tokens) + 1)]
        scored = []
        for entity in committee:
            score = max(max(fuzz.ratio(p, entity.surname), fuzz.token_sort_ratio(p, entity.fullname))
                        for p in prefixes)
            scored.append((score, entity))
        best = max(score for score, _ in scored)
        winners = [e for score, e in scored if score == best]
        if best >= cfg.similarity_threshold and len(winners) == 1:
            return winners[0]
        return None
    return None


def president_from_pool(pool: EntityPool | Sequence[EntityRecord]) -> EntityRecord | None:
    """Lower-confidence guess used when no first page is available: the unique chamber president."""
    presidents = [e for e in pool if is_chamber_president(e)]
    return presidents[0] if len(presidents) == 1 else None


# -- fuzzy cascade ------------------------------------------------------------


def _exact(a: str, b: str) -> float:
    return 100.0 if a == b else 0.0


CASCADE: tuple[tuple[str, Callable[[str, str], float]], ...] = (
    ("exact", _exact),
    ("token_sort", fuzz.token_sort_ratio),
    ("partial", fuzz.partial_ratio),
    ("token_set", fuzz.token_set_ratio),
)


def fuzzy_cascade(name: str, pool: EntityPool | Sequence[EntityRecord],
                  cfg: MatchConfig) -> tuple[str | None, list[tuple[EntityRecord, float]]]:
    """Run the cascade and also report which stage (e.g. ``"partial:surname"``) ended it."""
    query = normalise_name(name)
    if not query:
        return None, []
    entities = list(pool)
    keys = {"surname": [normalise_name(e.surname) for e in entities],
            "fullname": [normalise_name(e.fullname) for e in entities]}
    for stage, scorer in CASCADE:
        for field_name in ("surname", "fullname"):
            hits = []
            for entity, key in zip(entities, keys[field_name]):
                score = scorer(query, key)
                if score >= cfg.similarity_threshold and score > 0:
                    hits.append((entity, score))
            if hits:
                hits.sort(key=lambda pair: (-pair[1], pair[0].uri))
                return f"{stage}:{field_name}", hits
    return None, []


def fuzzy_candidates(name: str, pool: EntityPool | Sequence[EntityRecord], cfg: MatchConfig) -> list[tuple[EntityRecord, float]]:
    return fuzzy_cascade(name, pool, cfg)[1]


def weighted_levenshtein(a: str, b: str, cfg: MatchConfig | None = None) -> float:
    cfg = cfg or MatchConfig()
    return fuzz.weighted_levenshtein(a, b, cfg.vowel_substitution_cost, cfg.default_substitution_cost)


# -- abbreviations ------------------------------------------------------------


def split_fullname(fullname: str, surname: str | None = None, surname_first: bool = False,
                   particles: Sequence[str] = ()) -> tuple[list[str], list[str]]:
    """Return (given-name tokens, surname tokens)."""
    tokens = normalise_name(fullname).split()
    if surname:
        sur = normalise_name(surname).split()
        n = len(sur)
        for start in range(len(tokens) - n + 1):
            if tokens[start:start + n] == sur:
                return tokens[:start] + tokens[start + n:], sur
    particles = set(particles)
    if surname_first:
        end = 0
        while end < len(tokens) - 1 and tokens[end] in particles:
            end += 1
        end = min(end + 1, len(tokens))
        return tokens[end:], tokens[:end]
    start = len(tokens) - 1
    while start > 0 and tokens[start - 1] in particles:
        start -= 1
    return tokens[:start], tokens[start:]


def abbreviate_name(fullname: str, surname: str | None = None, surname_first: bool = False,
                    particles: Sequence[str] = ()) -> str:
    """``"GIUSEPPE ROSSI"`` -> ``"G. ROSSI"``.

    With ``surname_first`` the input is read as surname then given names and
    the output keeps that order: ``"DE PRETIS AGOSTINO"`` -> ``"DE PRETIS A."``.
    """
    given, sur = split_fullname(fullname, surname, surname_first, particles)
    initials = [f"{g[0]}." for g in given if g]
    if surname_first:
        return " ".join(sur + initials)
    return " ".join(initials + sur)


def abbreviated_forms(entity: EntityRecord, particles: Sequence[str] = ()) -> set[str]:
    given, sur = split_fullname(entity.fullname, entity.surname, particles=particles)
    initials = [f"{g[0]}." for g in given if g]
    return {" ".join(initials + sur), " ".join(sur + initials)}


def has_initials(name: str) -> bool:
    return _INITIAL.search(fuzz.fold(name)) is not None


# -- disambiguation -----------------------------------------------------------


def disambiguate(name: str, role: str | None, candidates: Sequence[tuple[EntityRecord, float]],
                 document_text: str, cfg: MatchConfig) -> MatchOutcome:
    """Pick one entity among fuzzy candidates, stopping at the first step that leaves one.

    Steps: best fuzzy score, role held, full-name similarity, abbreviated
    forms (only for names with initials), full name mentioned in the document,
    smallest weighted edit distance. Anything still tied is ambiguous.
    """
    if not candidates:
        raise ValueError("disambiguate needs at least one candidate")
    ordered = sorted(candidates, key=lambda pair: (-pair[1], pair[0].uri))
    scored = tuple((e.uri, s) for e, s in ordered)
    query = normalise_name(name)
    trace: list[tuple[int, int]] = []

    def linked(entity: EntityRecord, strategy: str) -> MatchOutcome:
        return MatchOutcome(LINKED, entity.uri, None, scored, strategy, tuple(trace))

    def narrow(step: int, survivors: list[EntityRecord], keep: list[EntityRecord]) -> list[EntityRecord]:
        if keep:
            survivors = keep
        trace.append((step, len(survivors)))
        return survivors

    # 1. fuzzy score
    top = ordered[0][1]
    survivors = narrow(1, [], [e for e, s in ordered if s == top])
    if len(survivors) == 1:
        return linked(survivors[0], "score")

    # 2. role held on the session date
    keep = [e for e in survivors if role and role_matches(role, e)]
    survivors = narrow(2, survivors, keep)
    if len(survivors) == 1:
        return linked(survivors[0], "role")

    # 3. full-name similarity
    sims = {e.uri: fuzz.token_set_ratio(query, normalise_name(e.fullname)) for e in survivors}
    best = max(sims.values())
    survivors = narrow(3, survivors, [e for e in survivors if sims[e.uri] == best])
    if len(survivors) == 1:
        return linked(survivors[0], "fullname")

    # 4. abbreviated forms, only when the speaker name carries initials
    keep = []
    if has_initials(name):
        keep = [e for e in survivors if query in {normalise_name(f) for f in abbreviated_forms(e, cfg.surname_particles)}]
    survivors = narrow(4, survivors, keep)
    if len(survivors) == 1:
        return linked(survivors[0], "abbreviation")

    # 5. full name mentioned elsewhere in the document
    text = f" {normalise_name(document_text)} "
    keep = []
    for e in survivors:
        given, sur = split_fullname(e.fullname, e.surname, particles=cfg.surname_particles)
        forms = {" ".join(given + sur), " ".join(sur + given)}
        if any(len(f.split()) > 1 and f" {f} " in text for f in forms):
            keep.append(e)
    survivors = narrow(5, survivors, keep)
    if len(survivors) == 1:
        return linked(survivors[0], "context")

    # 6. weighted edit distance
    dists = {e.uri: min(weighted_levenshtein(query, normalise_name(e.surname), cfg),
                        weighted_levenshtein(query, normalise_name(e.fullname), cfg)) for e in survivors}
    best = min(dists.values())
    survivors = narrow(6, survivors, [e for e in survivors if dists[e.uri] == best])
    if len(survivors) == 1:
        return linked(survivors[0], "weighted_levenshtein")

    retained = tuple((e.uri, dict(scored)[e.uri]) for e in sorted(survivors, key=lambda e: e.uri))
    return MatchOutcome(AMBIGUOUS, None, None, retained, "ambiguous", tuple(trace))


# -- second pass --------------------------------------------------------------


def _speaker_name(speaker: str, cfg: MatchConfig) -> str:
    name, role = extract_role(speaker, cfg.role_lexicon)
    return name or role or speaker


def propagate_resolved(outcomes: dict[str, MatchOutcome], cfg: MatchConfig) -> dict[str, MatchOutcome]:
    """Copy links from resolved speakers to unresolved ones with a similar name.

    The best similarity must reach the threshold and point to a single entity.
    """
    resolved = {s: o for s, o in outcomes.items() if o.status == LINKED}
    if not resolved:
        return dict(outcomes)
    updated = dict(outcomes)
    for speaker, outcome in outcomes.items():
        if outcome.status not in (UNRESOLVED, AMBIGUOUS):
            continue
        query = normalise_name(_speaker_name(speaker, cfg))
        if not query:
            continue
        scores = [(fuzz.token_sort_ratio(query, normalise_name(_speaker_name(s, cfg))), o)
                  for s, o in resolved.items()]
        best = max(score for score, _ in scores)
        if best < cfg.similarity_threshold:
            continue
        targets = {o.entity_uri for score, o in scores if score == best}
        if len(targets) != 1:
            continue
        source = next(o for score, o in scores if score == best)
        updated[speaker] = MatchOutcome(LINKED, source.entity_uri, source.wikidata_id,
                                        ((source.entity_uri, best),), "propagated", outcome.trace)
    return updated


# -- document ---------------------------------------------------------------


def link_speaker(speaker: str, name: str, role: str | None, pool: EntityPool, cfg: MatchConfig,
                 document_text: str, president: Callable[[], tuple[EntityRecord | None, bool]]) -> MatchOutcome:
    """First-pass outcome for one distinct speaker string."""
    if is_generic_speaker(name or speaker, cfg.generic_patterns):
        return MatchOutcome(GENERIC, strategy="generic")
    if not len(pool):
        return MatchOutcome(UNRESOLVED, strategy="empty_pool")
    if not name:
        if normalise_role(role or "") == "PRESIDENTE":
            entity, low = president()
            if entity is None:
                return MatchOutcome(UNRESOLVED, strategy="president")
            return MatchOutcome(LINKED, entity.uri, None, ((entity.uri, 100.0),),
                                "president_legislature" if low else "president_header", low_confidence=low)
        holders = match_by_role(role or "", pool)
        if len(holders) == 1:
            return MatchOutcome(LINKED, holders[0].uri, None, ((holders[0].uri, 100.0),), "role")
        if len(holders) > 1:
            return MatchOutcome(AMBIGUOUS, None, None, tuple((e.uri, 100.0) for e in holders), "role")
        return MatchOutcome(UNRESOLVED, strategy="role")
    candidates = fuzzy_candidates(name, pool, cfg)
    if not candidates:
        return MatchOutcome(UNRESOLVED, strategy="no_candidates")
    return disambiguate(name, role, candidates, document_text, cfg)


def match_document(doc: ProcessedDocument, pool: EntityPool, cfg: MatchConfig | None = None,
                   wikidata: Callable[[str], str | None] | None = None) -> ProcessedDocument:
    """Link every distinct speaker of ``doc`` and write the links back onto its elements."""
    cfg = cfg or MatchConfig()
    speakers: dict[str, tuple[str, str | None]] = {}
    for element in doc.elements:
        if element.has_named_speaker and element.speaker not in speakers:
            name, role = extract_role(element.speaker, cfg.role_lexicon)
            speakers[element.speaker] = (name, role)
    if speakers and not len(pool):
        log.warning("%s: entity pool is empty, %d speakers left unresolved", doc.metadata.session_id, len(speakers))

    president_memo: list[tuple[EntityRecord | None, bool]] = []

    def president() -> tuple[EntityRecord | None, bool]:
        if not president_memo:
            found = identify_president(doc.first_page_elements(), pool, cfg)
            low = False
            if found is None and cfg.president_fallback:
                found = president_from_pool(pool)
                low = found is not None
                if low:
                    log.warning("%s: presiding officer guessed from the entity pool", doc.metadata.session_id)
            president_memo.append((found, low))
        return president_memo[0]

    text = doc.text
    outcomes = {s: link_speaker(s, n, r, pool, cfg, text, president) for s, (n, r) in speakers.items()}
    outcomes = propagate_resolved(outcomes, cfg)

    if wikidata is not None:
        qids: dict[str, str | None] = {}
        for speaker, outcome in outcomes.items():
            if outcome.status != LINKED:
                continue
            uri = outcome.entity_uri
            if uri not in qids:
                try:
                    qids[uri] = wikidata(uri)
                except Exception as exc:  # lookup failure must not lose the link itself
                    log.warning("wikidata lookup for %s failed: %s", uri, exc)
                    qids[uri] = None
            outcomes[speaker] = dataclasses.replace(outcome, wikidata_id=qids[uri])

    for speaker, outcome in outcomes.items():
        if outcome.status == UNRESOLVED:
            log.info("%s: speaker %r unresolved", doc.metadata.session_id, speaker)
        elif outcome.status == AMBIGUOUS:
            log.info("%s: speaker %r ambiguous between %s", doc.metadata.session_id, speaker,
                     [u for u, _ in outcome.candidates])

    elements = []
    for element in doc.elements:
        outcome = outcomes.get(element.speaker) if element.has_named_speaker else None
        if outcome is not None and outcome.status == LINKED:
            element = dataclasses.replace(element, speaker_uri=outcome.entity_uri, wikidata_uri=outcome.wikidata_id)
        else:
            element = dataclasses.replace(element, speaker_uri=None, wikidata_uri=None)
        elements.append(element)
    return ProcessedDocument(doc.metadata, elements, list(doc.unprocessed_pages), outcomes)
