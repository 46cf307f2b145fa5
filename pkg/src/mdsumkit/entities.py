"""Gazetteer entity linking and entity-level corpus analyses."""
from __future__ import annotations

import csv
import enum
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import ParsedAdmission, SentenceRecord, tokenize


class SemanticGroup(str, enum.Enum):
    DISORDERS = "Disorders"
    DRUGS = "ChemicalsDrugs"
    PROCEDURES = "Procedures"
    LABS = "LabResults"

    @classmethod
    def parse(cls, value: str) -> "SemanticGroup":
        key = "".join(ch for ch in str(value).lower() if ch.isalnum())
        aliases = {
            "disorders": cls.DISORDERS,
            "disorder": cls.DISORDERS,
            "chemicalsdrugs": cls.DRUGS,
            "chemicalsanddrugs": cls.DRUGS,
            "drugs": cls.DRUGS,
            "drug": cls.DRUGS,
            "procedures": cls.PROCEDURES,
            "procedure": cls.PROCEDURES,
            "labresults": cls.LABS,
            "labresult": cls.LABS,
            "labs": cls.LABS,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown semantic group {value!r}") from None


GROUPS = tuple(SemanticGroup)
CORE_GROUPS = (SemanticGroup.DISORDERS, SemanticGroup.DRUGS, SemanticGroup.PROCEDURES)


class Gazetteer:
    """Surface-form dictionary mapping token tuples to ``(concept_id, group)``."""

    def __init__(self, entries: Iterable[tuple[str, str, SemanticGroup | str]] = ()):
        self.entries: dict[tuple[str, ...], tuple[str, SemanticGroup]] = {}
        self.max_len = 0
        for surface, cid, group in entries:
            self.add(surface, cid, group)

    def add(self, surface: str, concept_id: str, group: SemanticGroup | str) -> None:
        key = tuple(tokenize(surface))
        if not key:
            raise ValueError(f"surface form {surface!r} has no tokens")
        if key in self.entries:
            raise ValueError(f"duplicate surface form {' '.join(key)!r}")
        if not isinstance(group, SemanticGroup):
            group = SemanticGroup.parse(group)
        self.entries[key] = (concept_id, group)
        self.max_len = max(self.max_len, len(key))

    def __len__(self) -> int:
        return len(self.entries)

    def concept_groups(self) -> dict[str, SemanticGroup]:
        return {cid: g for cid, g in self.entries.values()}

    @classmethod
    def load(cls, path: str | Path) -> "Gazetteer":
        gaz = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"surface", "concept_id", "group"} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"gazetteer missing columns: {sorted(missing)}")
            for row in reader:
                gaz.add(row["surface"], row["concept_id"], row["group"])
        return gaz

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["surface", "concept_id", "group"])
            for key, (cid, g) in self.entries.items():
                w.writerow([" ".join(key), cid, g.value])


@dataclass(frozen=True)
class EntityMention:
    concept_id: str
    group: SemanticGroup
    sent_id: int
    token_start: int  # within the sentence
    token_len: int
    note_index: int
    rel_pos: float  # mention start within its note (or summary), by token offset
    doc_offset: int = 0  # token index of the mention start within its note (or summary)


def link_tokens(tokens: Sequence[str], gaz: Gazetteer) -> list[tuple[int, int, str, SemanticGroup]]:
    """Left-to-right longest match: ``(start, length, concept_id, group)`` spans."""
    out = []
    i, n = 0, len(tokens)
    while i < n:
        for length in range(min(gaz.max_len, n - i), 0, -1):
            hit = gaz.entries.get(tuple(tokens[i : i + length]))
            if hit is not None:
                out.append((i, length, hit[0], hit[1]))
                i += length
                break
        else:
            i += 1
    return out


def link(sentence: SentenceRecord, gaz: Gazetteer) -> list[EntityMention]:
    mentions = []
    for start, length, cid, group in link_tokens(sentence.tokens, gaz):
        offset = sentence.token_offset + start
        mentions.append(EntityMention(
            concept_id=cid,
            group=group,
            sent_id=sentence.sent_id,
            token_start=start,
            token_len=length,
            note_index=sentence.note_index,
            rel_pos=offset / sentence.doc_tokens if sentence.doc_tokens else 0.0,
            doc_offset=offset,
        ))
    return mentions


@dataclass
class LinkedAdmission:
    parsed: ParsedAdmission
    source: list[EntityMention]
    summary: list[EntityMention]

    @property
    def admission_id(self) -> str:
        return self.parsed.admission_id

    def summary_concepts(self) -> set[str]:
        return {m.concept_id for m in self.summary}

    def source_concepts(self) -> set[str]:
        return {m.concept_id for m in self.source}

    def note_concepts(self) -> list[set[str]]:
        sets: list[set[str]] = [set() for _ in range(self.parsed.n_notes)]
        for m in self.source:
            sets[m.note_index].add(m.concept_id)
        return sets

    def source_mentions_by_note(self) -> list[list[EntityMention]]:
        out: list[list[EntityMention]] = [[] for _ in range(self.parsed.n_notes)]
        for m in self.source:
            out[m.note_index].append(m)
        return out


def link_admission(parsed: ParsedAdmission, gaz: Gazetteer) -> LinkedAdmission:
    src = [m for s in parsed.source for m in link(s, gaz)]
    summ = [m for s in parsed.summary for m in link(s, gaz)]
    return LinkedAdmission(parsed, src, summ)


# ---------------------------------------------------------------------------
# density and compression

@dataclass(frozen=True)
class DensityStats:
    summary_entity_token_frac: float
    source_entity_token_frac: float
    mean_unique_summary: float
    mean_unique_source: float
    entity_compression: float


def density_stats(adms: Sequence[LinkedAdmission]) -> DensityStats:
    """Entity-token fractions (pooled over the corpus) and concept compression.

    Compression averages unique-source / unique-summary concept counts over
    admissions whose summary has at least one concept.
    """
    sum_cov = sum_tot = src_cov = src_tot = 0
    uniq_sum, uniq_src, ratios = [], [], []
    for a in adms:
        sum_cov += sum(m.token_len for m in a.summary)
        src_cov += sum(m.token_len for m in a.source)
        sum_tot += sum(len(s.tokens) for s in a.parsed.summary)
        src_tot += sum(len(s.tokens) for s in a.parsed.source)
        us, uc = len(a.summary_concepts()), len(a.source_concepts())
        uniq_sum.append(us)
        uniq_src.append(uc)
        if us:
            ratios.append(uc / us)
    return DensityStats(
        summary_entity_token_frac=sum_cov / sum_tot if sum_tot else 0.0,
        source_entity_token_frac=src_cov / src_tot if src_tot else 0.0,
        mean_unique_summary=float(np.mean(uniq_sum)) if uniq_sum else 0.0,
        mean_unique_source=float(np.mean(uniq_src)) if uniq_src else 0.0,
        entity_compression=float(np.mean(ratios)) if ratios else 0.0,
    )


# ---------------------------------------------------------------------------
# inclusion probability vs. source frequency

DEFAULT_FREQ_BINS = (1, 2, 3, 5, 8, 13, 21)


@dataclass(frozen=True)
class InclusionBin:
    label: str
    lo: int
    hi: int | None  # inclusive upper bound; None = open
    n: int
    included: int

    @property
    def probability(self) -> float:
        return self.included / self.n if self.n else 0.0


def inclusion_curve(adms: Sequence[LinkedAdmission], bins: Sequence[int] = DEFAULT_FREQ_BINS) -> list[InclusionBin]:
    """P(concept appears in the summary | its mention count in the admission's notes).

    ``bins`` are ascending lower bounds; the last bin is open-ended.  Each
    (admission, source concept) pair is one event.
    """
    bins = sorted(bins)
    n = [0] * len(bins)
    hit = [0] * len(bins)
    for a in adms:
        freq = Counter(m.concept_id for m in a.source)
        in_summary = a.summary_concepts()
        for cid, f in freq.items():
            b = max((i for i, lo in enumerate(bins) if f >= lo), default=None)
            if b is None:
                continue
            n[b] += 1
            hit[b] += cid in in_summary
    out = []
    for i, lo in enumerate(bins):
        hi = bins[i + 1] - 1 if i + 1 < len(bins) else None
        label = f"{lo}+" if hi is None else (str(lo) if hi == lo else f"{lo}-{hi}")
        out.append(InclusionBin(label, lo, hi, n[i], hit[i]))
    return out


# ---------------------------------------------------------------------------
# macro ordering of notes

class Ordering(str, enum.Enum):
    FORWARD = "Forward"
    BACKWARD = "Backward"
    GREEDY = "GreedyOracle"


@dataclass(frozen=True)
class MacroResult:
    order: Ordering
    note_order: tuple[int, ...]
    curve: tuple[float, ...]  # cumulative coverage after each decile, 10 values
    notes_to_read: int
    percent: float


def _note_order(note_sets: list[set[str]], target: set[str], order: Ordering) -> list[int]:
    n = len(note_sets)
    if order is Ordering.FORWARD:
        return list(range(n))
    if order is Ordering.BACKWARD:
        return list(range(n - 1, -1, -1))
    remaining = list(range(n))
    covered: set[str] = set()
    seq = []
    while remaining:
        best = max(remaining, key=lambda i: (len((note_sets[i] & target) - covered), -i))
        seq.append(best)
        covered |= note_sets[best] & target
        remaining.remove(best)
    return seq


def macro_ordering(adm: LinkedAdmission, order: Ordering | str) -> MacroResult | None:
    """Cumulative share of summary concepts found while reading notes in ``order``.

    Returns None when the summary has no linked concept.  Decile ``d`` holds
    the coverage after the first ``floor(d * n / 10)`` notes, i.e. all notes
    whose rank maps to a decile <= d under ``ceil(rank * 10 / n)``.
    """
    order = Ordering(order)
    target = adm.summary_concepts()
    if not target:
        return None
    note_sets = adm.note_concepts()
    n = len(note_sets)
    seq = _note_order(note_sets, target, order)
    covered: set[str] = set()
    cum = [0.0]
    for i in seq:
        covered |= note_sets[i] & target
        cum.append(len(covered) / len(target))
    final = cum[-1]
    k = next(i for i, c in enumerate(cum) if c == final)
    curve = tuple(cum[(d * n) // 10] for d in range(1, 11))
    return MacroResult(order, tuple(seq), curve, k, k / n)


@dataclass(frozen=True)
class MacroSummary:
    order: Ordering
    curve: tuple[float, ...]
    mean_notes: float
    mean_percent: float
    n_admissions: int
    n_skipped: int


def macro_summary(adms: Sequence[LinkedAdmission], order: Ordering | str) -> MacroSummary:
    order = Ordering(order)
    res = [macro_ordering(a, order) for a in adms]
    kept = [r for r in res if r is not None]
    if not kept:
        return MacroSummary(order, (0.0,) * 10, 0.0, 0.0, 0, len(res))
    curve = tuple(float(np.mean([r.curve[d] for r in kept])) for d in range(10))
    return MacroSummary(
        order,
        curve,
        float(np.mean([r.notes_to_read for r in kept])),
        float(np.mean([r.percent for r in kept])),
        len(kept),
        len(res) - len(kept),
    )


# ---------------------------------------------------------------------------
# micro ordering (lead bias)

def position_decile(rel_pos: float, bins: int = 10) -> int:
    """1-based decile of a relative position in [0, 1]."""
    return min(bins, int(math.floor(rel_pos * bins)) + 1)


def micro_histogram(adms: Sequence[LinkedAdmission], bins: int = 10) -> np.ndarray:
    """Normalized histogram of within-note positions of summary-relevant source mentions."""
    counts = np.zeros(bins)
    for a in adms:
        target = a.summary_concepts()
        for m in a.source:
            if m.concept_id in target:
                counts[position_decile(m.rel_pos, bins) - 1] += 1
    total = counts.sum()
    return counts / total if total else counts


# ---------------------------------------------------------------------------
# semantic-group transitions

@dataclass
class TransitionMatrix:
    groups: tuple[SemanticGroup, ...]
    counts: np.ndarray
    empty: bool = False
    uniform_rows: tuple[int, ...] = ()

    @property
    def probabilities(self) -> np.ndarray:
        k = len(self.groups)
        probs = np.full((k, k), 1.0 / k)
        totals = self.counts.sum(axis=1)
        for i in range(k):
            if totals[i] > 0:
                probs[i] = self.counts[i] / totals[i]
        return probs

    @property
    def diagonal_mass(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def __add__(self, other: "TransitionMatrix") -> "TransitionMatrix":
        if self.groups != other.groups:
            raise ValueError("group sets differ")
        counts = self.counts + other.counts
        return _finish(self.groups, counts)


def _finish(groups, counts) -> TransitionMatrix:
    rows = tuple(i for i in range(len(groups)) if counts[i].sum() == 0)
    return TransitionMatrix(groups, counts, empty=counts.sum() == 0, uniform_rows=rows)


def transitions(mentions: Sequence[EntityMention], groups: Sequence[SemanticGroup] = CORE_GROUPS) -> TransitionMatrix:
    """Counts of adjacent semantic-group pairs within one document.

    Mentions of groups outside ``groups`` are dropped before pairing.
    """
    groups = tuple(groups)
    idx = {g: i for i, g in enumerate(groups)}
    seq = [idx[m.group] for m in sorted(mentions, key=lambda m: (m.sent_id, m.token_start)) if m.group in idx]
    counts = np.zeros((len(groups), len(groups)))
    for a, b in zip(seq, seq[1:]):
        counts[a, b] += 1
    return _finish(groups, counts)


def corpus_transitions(
    adms: Sequence[LinkedAdmission], groups: Sequence[SemanticGroup] = CORE_GROUPS
) -> tuple[TransitionMatrix, TransitionMatrix]:
    """(source, summary) matrices; each note and each summary is its own scope."""
    groups = tuple(groups)
    src = _finish(groups, np.zeros((len(groups), len(groups))))
    summ = _finish(groups, np.zeros((len(groups), len(groups))))
    for a in adms:
        for ms in a.source_mentions_by_note():
            src = src + transitions(ms, groups)
        summ = summ + transitions(a.summary, groups)
    return src, summ


# ---------------------------------------------------------------------------
# positional distribution within summaries

def summary_position_bin(offset: int, length: int, bins: int = 10) -> int:
    """Bin of a mention starting at token ``offset`` of a ``length``-token summary.

    The start is normalized so the first token maps to 0 and the last to 1.
    """
    x = offset / (length - 1) if length > 1 else 0.0
    return position_decile(x, bins)


def positional_groups(adms: Sequence[LinkedAdmission], bins: int = 10) -> dict[SemanticGroup, np.ndarray]:
    counts = {g: np.zeros(bins) for g in GROUPS}
    for a in adms:
        length = sum(len(s.tokens) for s in a.parsed.summary)
        for m in a.summary:
            counts[m.group][summary_position_bin(m.doc_offset, length, bins) - 1] += 1
    return {g: (c / c.sum() if c.sum() else c) for g, c in counts.items()}


# ---------------------------------------------------------------------------
# global group proportions

@dataclass(frozen=True)
class GroupShares:
    source: dict[SemanticGroup, float]
    summary: dict[SemanticGroup, float]


def _shares(mentions: Iterable[EntityMention], groups) -> dict[SemanticGroup, float]:
    c = Counter(m.group for m in mentions if m.group in groups)
    total = sum(c.values())
    return {g: (c[g] / total if total else 0.0) for g in groups}


def global_proportions(adms: Sequence[LinkedAdmission], groups: Sequence[SemanticGroup] = CORE_GROUPS) -> GroupShares:
    groups = tuple(groups)
    return GroupShares(
        source=_shares((m for a in adms for m in a.source), groups),
        summary=_shares((m for a in adms for m in a.summary), groups),
    )
