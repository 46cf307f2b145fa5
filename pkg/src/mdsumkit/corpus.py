"""Corpus model: admissions, notes, sentence splitting, tokenization and filtering."""
from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

SUMMARY = -1  # note_index sentinel for summary sentences

SECONDS_PER_DAY = 86400.0


class CorpusError(ValueError):
    """Raised for schema violations in input files."""


class NoteType(str, enum.Enum):
    ADMISSION = "Admission"
    PROGRESS = "Progress"
    CONSULT = "Consult"
    OTHER = "Other"

    @classmethod
    def parse(cls, value: str) -> "NoteType":
        for member in cls:
            if member.value.lower() == str(value).strip().lower():
                return member
        return cls.OTHER


class Split(str, enum.Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


@dataclass(frozen=True)
class Note:
    note_id: str
    note_type: NoteType
    timestamp: int
    text: str


@dataclass(frozen=True)
class Admission:
    admission_id: str
    notes: tuple[Note, ...]
    summary: str
    split: Split = Split.TRAIN
    patient_id: str | None = None

    @property
    def patient(self) -> str:
        return self.patient_id if self.patient_id is not None else self.admission_id


@dataclass
class SentenceRecord:
    sent_id: int
    tokens: list[str]
    raw: str
    note_index: int
    char_start: int
    rel_pos: float
    token_offset: int = 0
    doc_tokens: int = 0


# ---------------------------------------------------------------------------
# tokenization and sentence splitting

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercased maximal alphanumeric runs; everything else separates tokens."""
    return _TOKEN_RE.findall(text.lower())


_TERMINATOR_RE = re.compile(r"[.!?]+(?=\s+[A-Z0-9])")
_LIST_MARKER_RE = re.compile(r"\s*(?:[-*•]|\d+[.)])(?:\s|$)")
_BARE_ENUM_RE = re.compile(r"\s*\d+[.)]\s*")


def split_spans(text: str) -> list[tuple[int, int]]:
    """Character spans ``[start, end)`` of sentences, before whitespace trimming.

    Spans partition ``text`` up to whitespace-only gaps.
    """
    cuts: set[int] = set()
    line_start = 0
    while True:
        nl = text.find("\n", line_start)
        if nl < 0:
            break
        nxt_end = text.find("\n", nl + 1)
        prev = text[line_start:nl]
        nxt = text[nl + 1 : nxt_end if nxt_end >= 0 else len(text)]
        if (
            not prev.strip()
            or not nxt.strip()
            or _LIST_MARKER_RE.match(nxt)
            or not prev.rstrip().endswith((".", "!", "?"))
        ):
            cuts.add(nl + 1)
        line_start = nl + 1

    ordered = sorted(cuts)
    last = 0
    term = [m.end() for m in _TERMINATOR_RE.finditer(text)]
    result: list[int] = []
    i = j = 0
    while i < len(ordered) or j < len(term):
        if j >= len(term) or (i < len(ordered) and ordered[i] <= term[j]):
            pos = ordered[i]
            i += 1
        else:
            pos = term[j]
            j += 1
            # "1. Lasix" is an enumerated list item, not a sentence end
            if _BARE_ENUM_RE.fullmatch(text[last:pos]):
                continue
        if pos > last:
            result.append(pos)
            last = pos

    spans = []
    start = 0
    for pos in result + [len(text)]:
        if text[start:pos].strip():
            spans.append((start, pos))
        start = pos
    return spans


def segment(text: str, note_index: int = 0) -> list[SentenceRecord]:
    """Split ``text`` into sentences carrying tokens, offsets and relative position.

    Sentences without any token are dropped.
    """
    pieces = []
    for start, end in split_spans(text):
        chunk = text[start:end]
        lead = len(chunk) - len(chunk.lstrip())
        raw = chunk.strip()
        toks = tokenize(raw)
        if toks:
            pieces.append((start + lead, raw, toks))
    total = sum(len(t) for _, _, t in pieces)
    records = []
    offset = 0
    for sid, (char_start, raw, toks) in enumerate(pieces):
        records.append(
            SentenceRecord(
                sent_id=sid,
                tokens=toks,
                raw=raw,
                note_index=note_index,
                char_start=char_start,
                rel_pos=offset / total if total else 0.0,
                token_offset=offset,
                doc_tokens=total,
            )
        )
        offset += len(toks)
    return records


@dataclass
class ParsedAdmission:
    """An admission with every note and the summary segmented.

    ``source`` sentence ids run across notes in chronological order.
    """

    admission: Admission
    source: list[SentenceRecord]
    summary: list[SentenceRecord]
    note_tokens: list[int] = field(default_factory=list)

    @property
    def admission_id(self) -> str:
        return self.admission.admission_id

    @property
    def n_notes(self) -> int:
        return len(self.admission.notes)

    def source_tokens(self) -> list[str]:
        return [t for s in self.source for t in s.tokens]

    def summary_tokens(self) -> list[str]:
        return [t for s in self.summary for t in s.tokens]

    def note_sentences(self, note_index: int) -> list[SentenceRecord]:
        return [s for s in self.source if s.note_index == note_index]


def parse_admission(adm: Admission) -> ParsedAdmission:
    source: list[SentenceRecord] = []
    note_tokens = []
    for ni, note in enumerate(adm.notes):
        sents = segment(note.text, note_index=ni)
        note_tokens.append(sum(len(s.tokens) for s in sents))
        for s in sents:
            s.sent_id = len(source)
            source.append(s)
    summary = segment(adm.summary, note_index=SUMMARY)
    return ParsedAdmission(adm, source, summary, note_tokens)


# ---------------------------------------------------------------------------
# JSONL ingestion

_REQUIRED = ("admission_id", "split", "summary", "notes")
_NOTE_REQUIRED = ("note_id", "note_type", "timestamp", "text")


def _admission_from_record(rec, lineno: int) -> Admission:
    if not isinstance(rec, dict):
        raise CorpusError(f"record is not an object @line {lineno}")
    for key in _REQUIRED:
        if key not in rec:
            raise CorpusError(f"missing field {key} @line {lineno}")
    if not isinstance(rec["summary"], str):
        raise CorpusError(f"field summary must be a string @line {lineno}")
    try:
        split = Split(str(rec["split"]).lower())
    except ValueError:
        raise CorpusError(f"invalid split {rec['split']!r} @line {lineno}") from None
    if not isinstance(rec["notes"], list):
        raise CorpusError(f"field notes must be a list @line {lineno}")
    notes = []
    for i, n in enumerate(rec["notes"]):
        if not isinstance(n, dict):
            raise CorpusError(f"notes[{i}] is not an object @line {lineno}")
        for key in _NOTE_REQUIRED:
            if key not in n:
                raise CorpusError(f"missing field notes[{i}].{key} @line {lineno}")
        ts = n["timestamp"]
        if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
            raise CorpusError(f"field notes[{i}].timestamp must be a non-negative integer @line {lineno}")
        if not isinstance(n["text"], str):
            raise CorpusError(f"field notes[{i}].text must be a string @line {lineno}")
        notes.append(Note(str(n["note_id"]), NoteType.parse(n["note_type"]), ts, n["text"]))
    notes.sort(key=lambda n: n.timestamp)
    pid = rec.get("patient_id")
    return Admission(
        admission_id=str(rec["admission_id"]),
        notes=tuple(notes),
        summary=rec["summary"],
        split=split,
        patient_id=None if pid is None else str(pid),
    )


def ingest(path: str | Path, format: str = "jsonl") -> list[Admission]:
    """Read admissions from a JSON-lines file; notes come back sorted by timestamp."""
    if format.lower() not in ("jsonl", "jsonlines"):
        raise ValueError(f"unsupported format {format!r}")
    adms = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON ({exc.msg}) @line {lineno}") from None
            adms.append(_admission_from_record(rec, lineno))
    return adms


def admission_to_dict(adm: Admission) -> dict:
    rec = {
        "admission_id": adm.admission_id,
        "split": adm.split.value,
        "summary": adm.summary,
        "notes": [
            {"note_id": n.note_id, "note_type": n.note_type.value, "timestamp": n.timestamp, "text": n.text}
            for n in adm.notes
        ],
    }
    if adm.patient_id is not None:
        rec["patient_id"] = adm.patient_id
    return rec


def dump_jsonl(adms: Iterable[Admission], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for adm in adms:
            fh.write(json.dumps(admission_to_dict(adm), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


# ---------------------------------------------------------------------------
# filtering

@dataclass(frozen=True)
class FilterConfig:
    min_note_chars: int = 25
    max_source_tokens: int = 20000
    min_summary_chars: int = 25
    max_summary_tokens: int = 500

    def __post_init__(self):
        for name in ("min_note_chars", "max_source_tokens", "min_summary_chars", "max_summary_tokens"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


FILTER_REASONS = (
    "notes_too_short",
    "no_valid_notes",
    "summary_too_short",
    "summary_too_long",
    "source_too_long",
    "source_shorter_than_summary",
)


def filter_admissions(
    adms: Sequence[Admission], cfg: FilterConfig = FilterConfig()
) -> tuple[list[Admission], dict[str, int]]:
    """Apply note-level then admission-level exclusion rules.

    Returns the kept admissions and a ``{reason: count}`` report.  Note-level
    drops are counted per note; every dropped admission is counted once under
    its first failing rule.
    """
    report = {r: 0 for r in FILTER_REASONS}
    kept = []
    for adm in adms:
        notes = tuple(n for n in adm.notes if len(n.text.strip()) >= cfg.min_note_chars)
        report["notes_too_short"] += len(adm.notes) - len(notes)
        if not notes:
            report["no_valid_notes"] += 1
            continue
        summary_tokens = len(tokenize(adm.summary))
        source_tokens = sum(len(tokenize(n.text)) for n in notes)
        if len(adm.summary.strip()) < cfg.min_summary_chars:
            reason = "summary_too_short"
        elif summary_tokens > cfg.max_summary_tokens:
            reason = "summary_too_long"
        elif source_tokens > cfg.max_source_tokens:
            reason = "source_too_long"
        elif source_tokens < summary_tokens:
            reason = "source_shorter_than_summary"
        else:
            reason = None
        if reason:
            report[reason] += 1
            continue
        kept.append(adm if len(notes) == len(adm.notes) else replace(adm, notes=notes))
    return kept, report


# ---------------------------------------------------------------------------
# corpus statistics

@dataclass(frozen=True)
class MeanStd:
    mean: float
    std: float


def _mean_std(values: Sequence[float]) -> MeanStd:
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return MeanStd(mean, math.sqrt(var))


@dataclass(frozen=True)
class CorpusStats:
    n_patients: int
    n_admissions: int
    n_notes: int
    length_of_stay: MeanStd
    notes: MeanStd
    source_sentences: MeanStd
    source_tokens: MeanStd
    summary_sentences: MeanStd
    summary_tokens: MeanStd
    source_sentence_tokens: MeanStd
    summary_sentence_tokens: MeanStd
    compression: MeanStd

    def rows(self) -> list[tuple[str, str, float, float | None]]:
        """``(group, variable, value, std)`` rows laid out like a Table-1 report."""
        return [
            ("global", "patients", self.n_patients, None),
            ("global", "admissions", self.n_admissions, None),
            ("global", "source_notes", self.n_notes, None),
            ("per_admission", "length_of_stay_days", self.length_of_stay.mean, self.length_of_stay.std),
            ("per_admission", "source_notes", self.notes.mean, self.notes.std),
            ("per_admission", "source_sentences", self.source_sentences.mean, self.source_sentences.std),
            ("per_admission", "source_tokens", self.source_tokens.mean, self.source_tokens.std),
            ("per_admission", "summary_sentences", self.summary_sentences.mean, self.summary_sentences.std),
            ("per_admission", "summary_tokens", self.summary_tokens.mean, self.summary_tokens.std),
            ("per_sentence", "source_tokens", self.source_sentence_tokens.mean, self.source_sentence_tokens.std),
            ("per_sentence", "summary_tokens", self.summary_sentence_tokens.mean, self.summary_sentence_tokens.std),
            ("ratio", "word_compression", self.compression.mean, self.compression.std),
        ]


def corpus_stats(adms: Sequence[Admission | ParsedAdmission]) -> CorpusStats:
    """Per-corpus, per-admission and per-sentence statistics (population std).

    Per-sentence token counts are pooled over all sentences of the corpus.
    Admissions with an empty summary are skipped in the compression ratio.
    """
    if not adms:
        raise ValueError("corpus_stats needs at least one admission")
    parsed = [a if isinstance(a, ParsedAdmission) else parse_admission(a) for a in adms]
    los, notes, src_sents, src_toks, sum_sents, sum_toks, comp = ([] for _ in range(7))
    src_sent_len: list[int] = []
    sum_sent_len: list[int] = []
    for p in parsed:
        adm = p.admission
        ts = [n.timestamp for n in adm.notes]
        los.append((max(ts) - min(ts)) / SECONDS_PER_DAY if ts else 0.0)
        notes.append(len(adm.notes))
        src_sents.append(len(p.source))
        sum_sents.append(len(p.summary))
        n_src = sum(len(s.tokens) for s in p.source)
        n_sum = sum(len(s.tokens) for s in p.summary)
        src_toks.append(n_src)
        sum_toks.append(n_sum)
        if n_sum:
            comp.append(n_src / n_sum)
        src_sent_len.extend(len(s.tokens) for s in p.source)
        sum_sent_len.extend(len(s.tokens) for s in p.summary)
    return CorpusStats(
        n_patients=len({p.admission.patient for p in parsed}),
        n_admissions=len(parsed),
        n_notes=sum(notes),
        length_of_stay=_mean_std(los),
        notes=_mean_std(notes),
        source_sentences=_mean_std(src_sents),
        source_tokens=_mean_std(src_toks),
        summary_sentences=_mean_std(sum_sents),
        summary_tokens=_mean_std(sum_toks),
        source_sentence_tokens=_mean_std(src_sent_len) if src_sent_len else MeanStd(0.0, 0.0),
        summary_sentence_tokens=_mean_std(sum_sent_len) if sum_sent_len else MeanStd(0.0, 0.0),
        compression=_mean_std(comp) if comp else MeanStd(0.0, 0.0),
    )
