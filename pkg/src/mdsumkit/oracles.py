"""Sentence-selection baselines and reference-aware extractive oracles."""
from __future__ import annotations

import csv
import enum
import hashlib
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse, stats

from .corpus import ParsedAdmission, SentenceRecord, Split
from .lexical import Accumulator, Reference, RougeScore, fmt, ngrams, sentence_ngrams


class Method(str, enum.Enum):
    RANDOM = "Random"
    LEXRANK = "LexRank"
    TOPK = "TopK"
    GAIN = "Gain"
    SENT_ALIGN = "SentAlign"
    RETRIEVAL = "Retrieval"
    SA_RETRIEVAL = "SAPlusRetrieval"
    LEARNED = "Learned"


ORACLES = (Method.TOPK, Method.GAIN, Method.SENT_ALIGN, Method.RETRIEVAL, Method.SA_RETRIEVAL)
ALL_METHODS = (Method.RANDOM, Method.LEXRANK) + ORACLES


def derive_seed(seed: int, key: str) -> int:
    """Stable per-item seed, independent of process and hash randomization."""
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class ExtractSummary:
    method: Method
    sentence_refs: list[tuple[str, int]]  # ("source", sent_id) or ("retrieval", doc_id)
    sentences: list[list[str]]
    per_step_r12: list[float] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def tokens(self) -> list[str]:
        return [t for s in self.sentences for t in s]

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "sentence_refs": [list(r) for r in self.sentence_refs],
            "sentences": self.sentences,
            "per_step_r12": self.per_step_r12,
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractSummary":
        return cls(
            Method(d["method"]),
            [tuple(r) for r in d["sentence_refs"]],
            d["sentences"],
            d.get("per_step_r12", []),
            d.get("details", {}),
        )


class Pool:
    """Source sentences with exact-duplicate token sequences removed (first occurrence kept)."""

    def __init__(self, sentences: Sequence[SentenceRecord]):
        seen: set[tuple[str, ...]] = set()
        self.sents: list[SentenceRecord] = []
        for s in sentences:
            key = tuple(s.tokens)
            if key and key not in seen:
                seen.add(key)
                self.sents.append(s)
        self.uni = [ngrams(s.tokens, 1) for s in self.sents]
        self.bi = [ngrams(s.tokens, 2) for s in self.sents]

    def __len__(self) -> int:
        return len(self.sents)


def _reference(adm: ParsedAdmission) -> Reference:
    return Reference(s.tokens for s in adm.summary)


def _cumulative(ref: Reference | None, picks: Sequence[tuple[Counter, Counter]]) -> list[float]:
    if ref is None or ref.n_uni == 0:
        return []
    acc = Accumulator(ref)
    out = []
    for uni, bi in picks:
        acc.add(uni, bi)
        out.append(acc.r12())
    return out


def _source_extract(method: Method, pool: Pool, order: Sequence[int], ref: Reference | None, **details) -> ExtractSummary:
    return ExtractSummary(
        method,
        [("source", pool.sents[i].sent_id) for i in order],
        [list(pool.sents[i].tokens) for i in order],
        _cumulative(ref, [(pool.uni[i], pool.bi[i]) for i in order]),
        details,
    )


def _take_until(order: Sequence[int], lengths: Sequence[int], budget: float) -> list[int]:
    picked, total = [], 0
    for i in order:
        if total >= budget:
            break
        picked.append(i)
        total += lengths[i]
    return picked


# ---------------------------------------------------------------------------
# unsupervised baselines

def random_baseline(adm: ParsedAdmission, target_words: float, seed: int) -> ExtractSummary:
    """Uniformly sampled sentences (without replacement) until ``target_words`` is reached."""
    if target_words <= 0:
        raise ValueError("target_words must be positive")
    pool = Pool(adm.source)
    if not len(pool):
        raise ValueError(f"admission {adm.admission_id} has no source sentences")
    order = list(range(len(pool)))
    random.Random(seed).shuffle(order)
    picked = _take_until(order, [len(s.tokens) for s in pool.sents], target_words)
    return _source_extract(Method.RANDOM, pool, picked, _reference(adm) if adm.summary else None)


def tfidf_matrix(token_lists: Sequence[Sequence[str]]) -> np.ndarray:
    """Raw-count TF times smoothed IDF, ``ln((1 + N) / (1 + df)) + 1``; rows unnormalized."""
    vocab: dict[str, int] = {}
    for toks in token_lists:
        for t in toks:
            vocab.setdefault(t, len(vocab))
    m = np.zeros((len(token_lists), len(vocab)))
    for i, toks in enumerate(token_lists):
        for t, c in Counter(toks).items():
            m[i, vocab[t]] = c
    df = (m > 0).sum(axis=0)
    idf = np.log((1 + len(token_lists)) / (1 + df)) + 1
    return m * idf


def lexrank_scores(
    token_lists: Sequence[Sequence[str]],
    threshold: float = 0.1,
    damping: float = 0.85,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> np.ndarray:
    """Continuous LexRank stationary distribution (sums to 1).

    Edges carry cosine similarity where it reaches ``threshold``; no self
    loops.  Rows without edges teleport uniformly, so a graph with no edges
    yields 1/N everywhere.
    """
    n = len(token_lists)
    if n == 0:
        return np.zeros(0)
    x = tfidf_matrix(token_lists)
    norms = np.linalg.norm(x, axis=1)
    norms[norms == 0] = 1.0
    x = x / norms[:, None]
    sim = x @ x.T
    np.fill_diagonal(sim, 0.0)
    sim[sim < threshold] = 0.0
    trans = transition_matrix(sim)
    p = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = (1 - damping) / n + damping * (trans.T @ p)
        done = np.abs(nxt - p).sum() < tol
        p = nxt
        if done:
            break
    return p


def transition_matrix(weights: np.ndarray) -> np.ndarray:
    n = weights.shape[0]
    deg = weights.sum(axis=1)
    trans = np.empty_like(weights)
    for i in range(n):
        trans[i] = weights[i] / deg[i] if deg[i] > 0 else 1.0 / n
    return trans


def lexrank(adm: ParsedAdmission, target_words: float, **kw) -> tuple[ExtractSummary, np.ndarray]:
    """Top LexRank sentences until ``target_words``; also returns the pool scores."""
    pool = Pool(adm.source)
    scores = lexrank_scores([s.tokens for s in pool.sents], **kw)
    order = sorted(range(len(pool)), key=lambda i: (-scores[i], i))
    picked = _take_until(order, [len(s.tokens) for s in pool.sents], target_words)
    ext = _source_extract(Method.LEXRANK, pool, picked, _reference(adm) if adm.summary else None)
    return ext, scores


# ---------------------------------------------------------------------------
# oracles over source sentences

def sentence_r12(pool: Pool, ref: Reference) -> list[float]:
    return [ref.r12(pool.uni[i], pool.bi[i]) for i in range(len(pool))]


def oracle_top_k(adm: ParsedAdmission, target_tokens: float | None = None) -> ExtractSummary:
    """Sentences by individual R12 against the reference until ``target_tokens``.

    The default budget is the reference length.
    """
    pool = Pool(adm.source)
    ref = _reference(adm)
    if target_tokens is None:
        target_tokens = ref.n_uni
    r = sentence_r12(pool, ref)
    order = sorted(range(len(pool)), key=lambda i: (-r[i], i))
    picked = _take_until(order, [len(s.tokens) for s in pool.sents], target_tokens)
    return _source_extract(Method.TOPK, pool, picked, ref)


def greedy_gain(
    pool: Pool, ref: Reference, candidates: Sequence[int] | None = None
) -> list[tuple[int, list[int], list[float], float]]:
    """Greedy relative-R12 selection.

    Returns one entry per evaluated step, ``(chosen, candidate_ids, gains,
    r12_after)``; the last entry is the stopping step when its best gain is
    not positive (``r12_after`` then equals the previous value).
    """
    acc = Accumulator(ref)
    remaining = list(range(len(pool))) if candidates is None else list(candidates)
    steps = []
    current = 0.0
    while remaining:
        gains = [acc.r12_with(pool.uni[i], pool.bi[i]) - current for i in remaining]
        best = max(range(len(remaining)), key=lambda k: (gains[k], -k))
        chosen = remaining[best]
        if gains[best] <= 0:
            steps.append((chosen, list(remaining), gains, current))
            break
        acc.add(pool.uni[chosen], pool.bi[chosen])
        new = acc.r12()
        steps.append((chosen, list(remaining), gains, new))
        current = new
        remaining.pop(best)
    return steps


def oracle_gain(adm: ParsedAdmission) -> ExtractSummary:
    """Greedy R12-gain oracle; stops once the best gain is not positive.

    Sentences are emitted in document order; ``details`` keeps the selection
    order and per-step best/mean/min candidate gains.
    """
    pool = Pool(adm.source)
    ref = _reference(adm)
    steps = greedy_gain(pool, ref)
    accepted = [s for s in steps if max(s[2]) > 0]
    sel = [s[0] for s in accepted]
    gain_stats = [
        {"best": max(g), "mean": float(np.mean(g)), "min": min(g)} for _, _, g, _ in accepted
    ]
    doc_order = sorted(sel)
    ext = _source_extract(
        Method.GAIN,
        pool,
        doc_order,
        None,
        selection_order=[pool.sents[i].sent_id for i in sel],
        step_gains=gain_stats,
        stop_gain=max(steps[-1][2]) if steps and max(steps[-1][2]) <= 0 else None,
    )
    ext.per_step_r12 = [s[3] for s in accepted]
    return ext


@dataclass(frozen=True)
class Alignment:
    ref_index: int
    ref: tuple[str, int]
    tokens: tuple[str, ...]
    r12: float


def _emit(method: Method, alignments: Sequence[Alignment], reference: Reference, **details) -> ExtractSummary:
    refs, sents, steps = [], [], []
    seen: set[tuple[str, ...]] = set()
    acc = Accumulator(reference)
    for a in alignments:
        if a.tokens and a.tokens not in seen:
            seen.add(a.tokens)
            refs.append(a.ref)
            sents.append(list(a.tokens))
            acc.add(ngrams(a.tokens, 1), ngrams(a.tokens, 2))
        steps.append(acc.r12())
    details["alignment"] = [[a.ref_index, list(a.ref), a.r12] for a in alignments]
    return ExtractSummary(method, refs, sents, steps, details)


def sent_align(adm: ParsedAdmission, pool: Pool | None = None) -> list[Alignment]:
    pool = pool or Pool(adm.source)
    out = []
    for k, s in enumerate(adm.summary):
        ref = Reference([s.tokens])
        if not len(pool):
            out.append(Alignment(k, ("source", -1), (), 0.0))
            continue
        r = sentence_r12(pool, ref)
        best = max(range(len(pool)), key=lambda i: (r[i], -i))
        out.append(Alignment(k, ("source", pool.sents[best].sent_id), tuple(pool.sents[best].tokens), r[best]))
    return out


def oracle_sent_align(adm: ParsedAdmission) -> ExtractSummary:
    """Best source sentence per reference sentence, in reference order.

    A source sentence aligned to several reference sentences is emitted once.
    """
    return _emit(Method.SENT_ALIGN, sent_align(adm), _reference(adm))


# ---------------------------------------------------------------------------
# BM25 retrieval over training summaries

class Bm25Index:
    """Okapi BM25 over summary sentences with ``idf = ln(1 + (N - df + 0.5) / (df + 0.5))``."""

    def __init__(self, docs: Sequence[tuple[str, Sequence[str]]], k1: float = 1.2, b: float = 0.75):
        if not docs:
            raise ValueError("cannot build a BM25 index without documents")
        self.k1, self.b = k1, b
        self.owners = [owner for owner, _ in docs]
        self.docs = [tuple(toks) for _, toks in docs]
        self.vocab: dict[str, int] = {}
        rows, cols, tfs = [], [], []
        for d, toks in enumerate(self.docs):
            for t, c in Counter(toks).items():
                rows.append(d)
                cols.append(self.vocab.setdefault(t, len(self.vocab)))
                tfs.append(c)
        self.n_docs = len(self.docs)
        lengths = np.array([len(t) for t in self.docs], dtype=float)
        self.avgdl = float(lengths.mean())
        if self.avgdl <= 0:
            raise ValueError("indexed documents are all empty")
        rows, cols, tfs = np.array(rows), np.array(cols), np.array(tfs, dtype=float)
        self.df = np.bincount(cols, minlength=len(self.vocab)).astype(float)
        self.idf = np.log(1 + (self.n_docs - self.df + 0.5) / (self.df + 0.5))
        norm = k1 * (1 - b + b * lengths[rows] / self.avgdl)
        weights = self.idf[cols] * tfs * (k1 + 1) / (tfs + norm)
        self.weights = sparse.csc_matrix((weights, (rows, cols)), shape=(self.n_docs, len(self.vocab)))
        by_owner: dict[str, list[int]] = defaultdict(list)
        for d, o in enumerate(self.owners):
            by_owner[o].append(d)
        self.owner_ids = {o: np.array(ids) for o, ids in by_owner.items()}

    def scores(self, query: Sequence[str]) -> np.ndarray:
        """BM25 score of every indexed sentence; repeated query terms count repeatedly."""
        counts = Counter(t for t in query if t in self.vocab)
        if not counts:
            return np.zeros(self.n_docs)
        cols = [self.vocab[t] for t in counts]
        mult = np.array([counts[t] for t in counts], dtype=float)
        return np.asarray(self.weights[:, cols] @ mult).ravel()


def build_bm25(adms: Sequence[ParsedAdmission], k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    """Index every summary sentence of the training split."""
    docs = [(a.admission_id, s.tokens) for a in adms if a.admission.split is Split.TRAIN for s in a.summary]
    return Bm25Index(docs, k1, b)


def retrieve(index: Bm25Index, query: Sequence[str], exclude_admission: str | None = None) -> tuple[int, float] | None:
    """Highest-scoring indexed sentence (lowest id on ties), skipping ``exclude_admission``."""
    s = index.scores(query)
    if exclude_admission is not None:
        own = index.owner_ids.get(exclude_admission)
        if own is not None:
            s[own] = -np.inf
    best = int(np.argmax(s))
    if not np.isfinite(s[best]):
        return None
    return best, float(s[best])


def retrieval_align(adm: ParsedAdmission, index: Bm25Index) -> list[Alignment]:
    out = []
    for k, s in enumerate(adm.summary):
        hit = retrieve(index, s.tokens, adm.admission_id)
        if hit is None:
            out.append(Alignment(k, ("retrieval", -1), (), 0.0))
            continue
        toks = index.docs[hit[0]]
        out.append(Alignment(k, ("retrieval", hit[0]), toks, Reference([s.tokens]).r12(ngrams(toks, 1), ngrams(toks, 2))))
    return out


def oracle_retrieval(adm: ParsedAdmission, index: Bm25Index) -> ExtractSummary:
    """Best BM25 match among other admissions' training summaries, per reference sentence."""
    return _emit(Method.RETRIEVAL, retrieval_align(adm, index), _reference(adm))


def oracle_sa_plus_retrieval(adm: ParsedAdmission, index: Bm25Index) -> ExtractSummary:
    """Per reference sentence, the higher-R12 pick of sent-align vs retrieval (source wins ties).

    ``details["retrieval_share"]`` is the fraction of reference sentences
    served by retrieval.
    """
    sa = sent_align(adm)
    rt = retrieval_align(adm, index)
    picks = [r if r.r12 > a.r12 else a for a, r in zip(sa, rt)]
    n_ret = sum(p.ref[0] == "retrieval" for p in picks)
    return _emit(
        Method.SA_RETRIEVAL,
        picks,
        _reference(adm),
        retrieval_share=n_ret / len(picks) if picks else 0.0,
        candidates=[[a.r12, r.r12] for a, r in zip(sa, rt)],
    )


# ---------------------------------------------------------------------------
# evaluation

def score_extract(ext: ExtractSummary, adm: ParsedAdmission) -> tuple[RougeScore, RougeScore]:
    ref = _reference(adm)
    return ref.scores(sentence_ngrams(ext.sentences, 1), sentence_ngrams(ext.sentences, 2))


def extract_r12(ext: ExtractSummary, adm: ParsedAdmission) -> float:
    s1, s2 = score_extract(ext, adm)
    return (s1.f1 + s2.f1) / 2


@dataclass
class OracleContext:
    target_words: float
    seed: int = 0
    index: Bm25Index | None = None
    learned: Callable[[ParsedAdmission], ExtractSummary] | None = None


def run_methods(adm: ParsedAdmission, methods: Sequence[Method], ctx: OracleContext) -> dict[Method, ExtractSummary]:
    out = {}
    for m in methods:
        m = Method(m)
        if m is Method.RANDOM:
            out[m] = random_baseline(adm, ctx.target_words, derive_seed(ctx.seed, adm.admission_id))
        elif m is Method.LEXRANK:
            out[m] = lexrank(adm, ctx.target_words)[0]
        elif m is Method.TOPK:
            out[m] = oracle_top_k(adm)
        elif m is Method.GAIN:
            out[m] = oracle_gain(adm)
        elif m is Method.SENT_ALIGN:
            out[m] = oracle_sent_align(adm)
        elif m in (Method.RETRIEVAL, Method.SA_RETRIEVAL):
            if ctx.index is None:
                raise ValueError(f"{m.value} needs a BM25 index")
            fn = oracle_retrieval if m is Method.RETRIEVAL else oracle_sa_plus_retrieval
            out[m] = fn(adm, ctx.index)
        elif m is Method.LEARNED:
            if ctx.learned is None:
                raise ValueError("Learned needs a trained scorer")
            out[m] = ctx.learned(adm)
    return out


TABLE2_COLUMNS = ("method", "r1_r", "r1_p", "r1_f", "r2_r", "r2_p", "r2_f")


def table2_rows(scored: dict[Method, list[tuple[RougeScore, RougeScore]]]) -> list[dict]:
    """Macro-averaged ROUGE-1/2 recall, precision and F1 per method."""
    rows = []
    for m, pairs in scored.items():
        r1 = [p[0] for p in pairs]
        r2 = [p[1] for p in pairs]
        rows.append(
            {
                "method": Method(m).value,
                "r1_r": float(np.mean([s.recall for s in r1])),
                "r1_p": float(np.mean([s.precision for s in r1])),
                "r1_f": float(np.mean([s.f1 for s in r1])),
                "r2_r": float(np.mean([s.recall for s in r2])),
                "r2_p": float(np.mean([s.precision for s in r2])),
                "r2_f": float(np.mean([s.f1 for s in r2])),
            }
        )
    return rows


def evaluate_table2(
    adms: Sequence[ParsedAdmission], methods: Sequence[Method], ctx: OracleContext
) -> tuple[list[dict], list[dict[Method, ExtractSummary]]]:
    if not adms:
        raise ValueError("need at least one admission")
    extracts = [run_methods(a, methods, ctx) for a in adms]
    scored: dict[Method, list] = {Method(m): [] for m in methods}
    for a, ex in zip(adms, extracts):
        for m, e in ex.items():
            scored[m].append(score_extract(e, a))
    return table2_rows(scored), extracts


def write_table2(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE2_COLUMNS)
        for r in rows:
            w.writerow([r["method"]] + [fmt(r[c]) for c in TABLE2_COLUMNS[1:]])


def gain_curve(extracts: Sequence[ExtractSummary], max_steps: int | None = None) -> list[dict]:
    """Per-step averages of best/mean/min candidate gain and cumulative R12 over admissions."""
    by_step: dict[int, list] = defaultdict(list)
    for e in extracts:
        for k, (g, r) in enumerate(zip(e.details.get("step_gains", []), e.per_step_r12), start=1):
            if max_steps is None or k <= max_steps:
                by_step[k].append((g["best"], g["mean"], g["min"], r))
    rows = []
    for k in sorted(by_step):
        arr = np.array(by_step[k])
        rows.append(
            {
                "step": k,
                "best": float(arr[:, 0].mean()),
                "mean": float(arr[:, 1].mean()),
                "min": float(arr[:, 2].mean()),
                "cumulative": float(arr[:, 3].mean()),
                "n": len(arr),
            }
        )
    return rows


def write_gain_curve(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "best", "mean", "min", "cumulative", "n"])
        for r in rows:
            w.writerow([r["step"], fmt(r["best"]), fmt(r["mean"]), fmt(r["min"]), fmt(r["cumulative"]), r["n"]])


# ---------------------------------------------------------------------------
# centrality vs. salience

def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Pearson r with a two-sided p-value from the t distribution on n - 2 dof."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n < 3 or len(y) != n:
        raise ValueError("pearson needs at least 3 paired points")
    dx, dy = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0:
        return float("nan"), float("nan")
    r = max(-1.0, min(1.0, float(dx @ dy) / denom))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1 - r * r))
    return r, float(2 * stats.t.sf(abs(t), n - 2))


def centrality_salience_pairs(adm: ParsedAdmission) -> list[tuple[float, float]]:
    """(N * LexRank score, R12 vs the reference) for every pooled source sentence.

    Scores are rescaled by pool size so admissions of different length share
    a scale (mean 1).
    """
    pool = Pool(adm.source)
    if not len(pool):
        return []
    scores = lexrank_scores([s.tokens for s in pool.sents]) * len(pool)
    r = sentence_r12(pool, _reference(adm))
    return list(zip(scores.tolist(), r))


def centrality_salience_corr(adms: Sequence[ParsedAdmission]) -> tuple[float, float, int]:
    pairs = [p for a in adms for p in centrality_salience_pairs(a)]
    r, p = pearson([a for a, _ in pairs], [b for _, b in pairs])
    return r, p, len(pairs)
