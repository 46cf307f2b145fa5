"""ROUGE-1/2, R12 and Newsroom-style extractive fragment statistics."""
from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import ParsedAdmission


@dataclass(frozen=True)
class RougeScore:
    recall: float
    precision: float
    f1: float


ZERO = RougeScore(0.0, 0.0, 0.0)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_ngrams(sentences: Iterable[Sequence[str]], n: int) -> Counter:
    """N-gram counts summed over sentences; n-grams never cross a sentence boundary."""
    total: Counter = Counter()
    for s in sentences:
        total.update(ngrams(s, n))
    return total


def prf(overlap: int, n_candidate: int, n_reference: int) -> RougeScore:
    if overlap == 0 or n_candidate == 0 or n_reference == 0:
        return ZERO
    r = overlap / n_reference
    p = overlap / n_candidate
    return RougeScore(r, p, 2 * p * r / (p + r))


def rouge_counts(candidate: Counter, reference: Counter) -> RougeScore:
    overlap = sum(min(c, reference[g]) for g, c in candidate.items() if g in reference)
    return prf(overlap, sum(candidate.values()), sum(reference.values()))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1) -> RougeScore:
    """Clipped n-gram overlap ROUGE-n (n in {1, 2}); no stemming or stopwords."""
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    return rouge_counts(ngrams(candidate, n), ngrams(reference, n))


def r12(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Mean of ROUGE-1 F1 and ROUGE-2 F1."""
    return (rouge_n(candidate, reference, 1).f1 + rouge_n(candidate, reference, 2).f1) / 2


class Reference:
    """Pre-counted reference n-grams for repeated scoring against one summary."""

    __slots__ = ("uni", "bi", "n_uni", "n_bi")

    def __init__(self, sentences: Iterable[Sequence[str]]):
        sentences = list(sentences)
        self.uni = sentence_ngrams(sentences, 1)
        self.bi = sentence_ngrams(sentences, 2)
        self.n_uni = sum(self.uni.values())
        self.n_bi = sum(self.bi.values())

    def scores(self, uni: Counter, bi: Counter) -> tuple[RougeScore, RougeScore]:
        return rouge_counts(uni, self.uni), rouge_counts(bi, self.bi)

    def r12(self, uni: Counter, bi: Counter) -> float:
        s1, s2 = self.scores(uni, bi)
        return (s1.f1 + s2.f1) / 2


class Accumulator:
    """Running n-gram counts of a growing extract, with incremental R12 against a reference."""

    def __init__(self, ref: Reference):
        self.ref = ref
        self.uni: Counter = Counter()
        self.bi: Counter = Counter()
        self.n_uni = self.n_bi = 0
        self.o_uni = self.o_bi = 0

    @staticmethod
    def _delta(cur: Counter, add: Counter, ref: Counter) -> int:
        d = 0
        for g, c in add.items():
            rc = ref.get(g)
            if rc:
                have = cur.get(g, 0)
                d += min(have + c, rc) - min(have, rc)
        return d

    def r12_with(self, uni: Counter, bi: Counter) -> float:
        """R12 of the extract after adding a sentence with counts ``uni``/``bi``."""
        o1 = self.o_uni + self._delta(self.uni, uni, self.ref.uni)
        o2 = self.o_bi + self._delta(self.bi, bi, self.ref.bi)
        f1 = prf(o1, self.n_uni + sum(uni.values()), self.ref.n_uni).f1
        f2 = prf(o2, self.n_bi + sum(bi.values()), self.ref.n_bi).f1
        return (f1 + f2) / 2

    def r12(self) -> float:
        f1 = prf(self.o_uni, self.n_uni, self.ref.n_uni).f1
        f2 = prf(self.o_bi, self.n_bi, self.ref.n_bi).f1
        return (f1 + f2) / 2

    def add(self, uni: Counter, bi: Counter) -> None:
        self.o_uni += self._delta(self.uni, uni, self.ref.uni)
        self.o_bi += self._delta(self.bi, bi, self.ref.bi)
        self.uni.update(uni)
        self.bi.update(bi)
        self.n_uni += sum(uni.values())
        self.n_bi += sum(bi.values())


# ---------------------------------------------------------------------------
# extractive fragments

@dataclass(frozen=True)
class Fragment:
    summary_start: int
    source_start: int
    length: int


def extract_fragments(summary: Sequence[str], source: Sequence[str]) -> list[Fragment]:
    """Greedy left-to-right longest shared spans (earliest source start on ties)."""
    positions: dict[str, list[int]] = defaultdict(list)
    for j, tok in enumerate(source):
        positions[tok].append(j)
    frags = []
    i, n, m = 0, len(summary), len(source)
    while i < n:
        best_len, best_j = 0, -1
        for j in positions.get(summary[i], ()):
            k = 1
            while i + k < n and j + k < m and summary[i + k] == source[j + k]:
                k += 1
            if k > best_len:
                best_len, best_j = k, j
        if best_len:
            frags.append(Fragment(i, best_j, best_len))
            i += best_len
        else:
            i += 1
    return frags


def coverage(frags: Sequence[Fragment], summary_len: int) -> float:
    return sum(f.length for f in frags) / summary_len


def density(frags: Sequence[Fragment], summary_len: int) -> float:
    return sum(f.length ** 2 for f in frags) / summary_len


N_RANK_BINS = 10


def rank_bin(rank: int, k: int, bins: int = N_RANK_BINS) -> int:
    """1-based bin of 1-based ``rank`` among ``k`` items: ceil(rank * bins / k)."""
    return max(1, min(bins, -(-rank * bins // k)))


@dataclass
class ExtractivenessStats:
    coverage: float
    density: float
    fragments: list[Fragment]
    fragment_length_histogram: dict[int, int]
    frag_len_by_rank: dict[int, tuple[float, int]] = field(default_factory=dict)  # bin -> (mean, n)


def fragment_stats(summary: Sequence[str], source: Sequence[str]) -> ExtractivenessStats:
    if not summary:
        raise ValueError("empty summary")
    frags = extract_fragments(summary, source)
    hist = Counter(f.length for f in frags)
    by_bin: dict[int, list[int]] = defaultdict(list)
    for r, f in enumerate(frags, start=1):
        by_bin[rank_bin(r, len(frags))].append(f.length)
    return ExtractivenessStats(
        coverage=coverage(frags, len(summary)),
        density=density(frags, len(summary)),
        fragments=frags,
        fragment_length_histogram=dict(sorted(hist.items())),
        frag_len_by_rank={b: (sum(v) / len(v), len(v)) for b, v in sorted(by_bin.items())},
    )


def extractiveness(adm: ParsedAdmission) -> ExtractivenessStats:
    """Fragment statistics of the summary against all source notes concatenated."""
    return fragment_stats(adm.summary_tokens(), adm.source_tokens())


@dataclass(frozen=True)
class CorpusExtractiveness:
    coverage_mean: float
    coverage_std: float
    density_mean: float
    density_std: float
    histogram: dict[int, int]
    frag_len_by_rank: dict[int, tuple[float, int]]

    @property
    def unigram_share(self) -> float:
        total = sum(self.histogram.values())
        return self.histogram.get(1, 0) / total if total else 0.0


def aggregate(stats: Sequence[ExtractivenessStats]) -> CorpusExtractiveness:
    """Corpus means/stds plus fragment lengths by relative rank pooled over summaries."""
    cov = [s.coverage for s in stats]
    den = [s.density for s in stats]

    def ms(xs):
        mu = math.fsum(xs) / len(xs)
        return mu, math.sqrt(math.fsum((x - mu) ** 2 for x in xs) / len(xs))

    hist: Counter = Counter()
    sums: dict[int, float] = defaultdict(float)
    counts: dict[int, int] = defaultdict(int)
    for s in stats:
        hist.update(s.fragment_length_histogram)
        for b, (mean, n) in s.frag_len_by_rank.items():
            sums[b] += mean * n
            counts[b] += n
    c_mu, c_sd = ms(cov)
    d_mu, d_sd = ms(den)
    return CorpusExtractiveness(
        coverage_mean=c_mu,
        coverage_std=c_sd,
        density_mean=d_mu,
        density_std=d_sd,
        histogram=dict(sorted(hist.items())),
        frag_len_by_rank={b: (sums[b] / counts[b], counts[b]) for b in sorted(counts)},
    )


def write_rank_csv(path, frag_len_by_rank: dict[int, tuple[float, int]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "mean_length", "n"])
        for b in range(1, N_RANK_BINS + 1):
            mean, n = frag_len_by_rank.get(b, (0.0, 0))
            w.writerow([b, fmt(mean), n])


def write_histogram_csv(path, histogram: dict[int, int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["length", "count"])
        for length, n in sorted(histogram.items()):
            w.writerow([length, n])


def fmt(x) -> str:
    """Stable float rendering for CSV outputs."""
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return format(x, ".10g")
    return str(x)
