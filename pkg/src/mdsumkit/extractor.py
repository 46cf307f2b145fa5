"""Oracle-derived extraction labels and a small feature-based sentence scorer.

Labels come from the greedy relative-R12 path over a filtered candidate pool.
Each kept step carries a soft target distribution over its candidates; the
scorer (a tanh MLP over summary-aware sentence features) is trained to match
it under KL divergence and then extracts greedily at inference time.
"""
from __future__ import annotations

import csv
import json
import math
import random
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .coherence import TrainingError
from .corpus import NoteType, ParsedAdmission, SentenceRecord
from .entities import Gazetteer, SemanticGroup, link_tokens
from .lexical import fmt, ngrams, r12
from .oracles import (
    ExtractSummary,
    Method,
    Pool,
    _cumulative,
    _reference,
    derive_seed,
    greedy_gain,
    tfidf_matrix,
)

FEATURES = (
    "length",
    "note_decile",
    "rel_pos",
    "centroid_cosine",
    "n_disorders",
    "n_drugs",
    "n_procedures",
    "n_labs",
    "unigram_overlap",
    "bigram_overlap",
    "redundancy",
    "note_admission",
    "note_progress",
    "note_consult",
    "note_other",
)
ENTITY_GROUPS = (SemanticGroup.DISORDERS, SemanticGroup.DRUGS, SemanticGroup.PROCEDURES, SemanticGroup.LABS)
NOTE_TYPES = (NoteType.ADMISSION, NoteType.PROGRESS, NoteType.CONSULT, NoteType.OTHER)
CHECKPOINT_FORMAT = "mdsumkit.extractor"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# labels

@dataclass(frozen=True)
class LabelConfig:
    min_best_gain: float = 0.01
    min_differential: float = 0.02
    min_tokens: int = 3
    drop_offset: float = 200.0
    drop_scale: float = 2000.0
    drop_max: float = 0.8
    temperature: float = 5.0
    temperature_mode: str = "multiply"  # or "divide"

    def __post_init__(self):
        for name in ("min_best_gain", "min_differential", "drop_max"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.temperature_mode not in ("multiply", "divide"):
            raise ValueError("temperature_mode must be 'multiply' or 'divide'")
        if self.drop_scale <= 0:
            raise ValueError("drop_scale must be positive")

    def drop_prob(self, n_source_sentences: int) -> float:
        """Linear ramp in the number of source sentences, clamped to [0, drop_max]."""
        return min(self.drop_max, max(0.0, (n_source_sentences - self.drop_offset) / self.drop_scale))

    @classmethod
    def from_dict(cls, d: dict) -> "LabelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ExtractionStep:
    step: int
    candidate_ids: tuple[int, ...]
    gains: tuple[float, ...]
    chosen_id: int
    soft_targets: tuple[float, ...]
    prefix_ids: tuple[int, ...]


@dataclass
class LabelSet:
    admission_id: str
    steps: list[ExtractionStep]
    n_candidates: int
    flag: str | None = None

    def to_dict(self) -> dict:
        return {
            "admission_id": self.admission_id,
            "n_candidates": self.n_candidates,
            "flag": self.flag,
            "steps": [asdict(s) for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSet":
        steps = [
            ExtractionStep(
                s["step"],
                tuple(s["candidate_ids"]),
                tuple(s["gains"]),
                s["chosen_id"],
                tuple(s["soft_targets"]),
                tuple(s["prefix_ids"]),
            )
            for s in d["steps"]
        ]
        return cls(d["admission_id"], steps, d["n_candidates"], d.get("flag"))


def soft_targets(gains: Sequence[float], temperature: float = 5.0, mode: str = "multiply") -> np.ndarray:
    """Softmax over min-max normalized gains, sharpened (multiply) or flattened (divide) by the temperature."""
    g = np.asarray(gains, dtype=np.float64)
    span = g.max() - g.min()
    z = (g - g.min()) / span if span > 0 else np.zeros_like(g)
    z = z * temperature if mode == "multiply" else z / temperature
    e = np.exp(z - z.max())
    return e / e.sum()


def is_eligible(sent: SentenceRecord, min_tokens: int = 3) -> bool:
    return len(sent.tokens) >= min_tokens and any(c.isalpha() for t in sent.tokens for c in t)


def candidate_pool(adm: ParsedAdmission, pool: Pool, cfg: LabelConfig, seed: int) -> list[int]:
    """Eligible pool ids, with zero-overlap sentences randomly dropped for long sources."""
    ref_vocab = {t for s in adm.summary for t in s.tokens}
    p = cfg.drop_prob(len(adm.source))
    rng = random.Random(derive_seed(seed, "drop:" + adm.admission_id))
    out = []
    for i, s in enumerate(pool.sents):
        if not is_eligible(s, cfg.min_tokens):
            continue
        if p > 0 and not ref_vocab.intersection(s.tokens) and rng.random() < p:
            continue
        out.append(i)
    return out


def derive_labels(adm: ParsedAdmission, cfg: LabelConfig = LabelConfig(), seed: int = 0, pool: Pool | None = None) -> LabelSet:
    pool = pool or Pool(adm.source)
    cands = candidate_pool(adm, pool, cfg, seed)
    if not cands:
        return LabelSet(adm.admission_id, [], 0, flag="empty_pool")
    steps = []
    prefix: list[int] = []
    for k, (chosen, ids, gains, _) in enumerate(greedy_gain(pool, _reference(adm), cands), start=1):
        best, worst = max(gains), min(gains)
        if best >= cfg.min_best_gain and best - worst >= cfg.min_differential:
            t = soft_targets(gains, cfg.temperature, cfg.temperature_mode)
            steps.append(ExtractionStep(k, tuple(ids), tuple(gains), chosen, tuple(float(x) for x in t), tuple(prefix)))
        if best <= 0:
            break
        prefix.append(chosen)
    return LabelSet(adm.admission_id, steps, len(cands), flag=None if steps else "no_steps")


def dump_labels(labels: Iterable[LabelSet], path: str | Path) -> None:
    with open(path, "w") as fh:
        for ls in labels:
            fh.write(json.dumps(ls.to_dict(), sort_keys=True) + "\n")


def load_labels(path: str | Path) -> list[LabelSet]:
    with open(path) as fh:
        return [LabelSet.from_dict(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# features

class FeatureContext:
    """Per-admission feature state; static features are computed once."""

    def __init__(self, adm: ParsedAdmission, gaz: Gazetteer | None = None, pool: Pool | None = None):
        self.adm = adm
        self.pool = pool or Pool(adm.source)
        sents = self.pool.sents
        n = len(sents)
        self.static = np.zeros((n, len(FEATURES)))
        if n == 0:
            self._pair: dict[tuple[int, int], float] = {}
            return
        tf = tfidf_matrix([s.tokens for s in sents])
        centroid = tf.mean(axis=0)
        norms = np.linalg.norm(tf, axis=1) * np.linalg.norm(centroid)
        cos = np.divide(tf @ centroid, norms, out=np.zeros(n), where=norms > 0)
        n_notes = max(1, adm.n_notes)
        note_types = [note.note_type for note in adm.admission.notes]
        for i, s in enumerate(sents):
            row = self.static[i]
            row[0] = len(s.tokens)
            row[1] = math.ceil((s.note_index + 1) * 10 / n_notes)
            row[2] = s.rel_pos
            row[3] = cos[i]
            if gaz is not None:
                for _, _, _, group in link_tokens(s.tokens, gaz):
                    if group in ENTITY_GROUPS:
                        row[4 + ENTITY_GROUPS.index(group)] += 1
            nt = note_types[s.note_index] if s.note_index < len(note_types) else NoteType.OTHER
            row[11 + NOTE_TYPES.index(nt)] = 1.0
        self._pair = {}

    def __len__(self) -> int:
        return len(self.pool)

    def _redundancy(self, i: int, j: int) -> float:
        key = (i, j)
        v = self._pair.get(key)
        if v is None:
            v = r12(self.pool.sents[i].tokens, self.pool.sents[j].tokens)
            self._pair[key] = v
        return v

    def features(self, ids: Sequence[int], selected: Sequence[int]) -> np.ndarray:
        """Feature rows for candidates ``ids`` given already selected pool ids."""
        x = self.static[list(ids)].copy()
        if not selected:
            return x
        uni = set().union(*(self.pool.uni[j] for j in selected))
        bi = set().union(*(self.pool.bi[j] for j in selected))
        for r, i in enumerate(ids):
            u, b = self.pool.uni[i], self.pool.bi[i]
            nu, nb = sum(u.values()), sum(b.values())
            x[r, 8] = sum(c for g, c in u.items() if g in uni) / nu if nu else 0.0
            x[r, 9] = sum(c for g, c in b.items() if g in bi) / nb if nb else 0.0
            x[r, 10] = max(self._redundancy(i, j) for j in selected)
        return x


def featurize(
    candidate: SentenceRecord,
    partial: Sequence[SentenceRecord],
    adm: ParsedAdmission,
    gaz: Gazetteer | None = None,
) -> np.ndarray:
    """Raw feature vector of one source sentence given already selected source sentences."""
    ctx = FeatureContext(adm, gaz)
    where = {tuple(s.tokens): i for i, s in enumerate(ctx.pool.sents)}
    i = where[tuple(candidate.tokens)]
    sel = [where[tuple(s.tokens)] for s in partial]
    return ctx.features([i], sel)[0]


# ---------------------------------------------------------------------------
# scorer

class Scorer(Protocol):
    def scores(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ScorerConfig:
    hidden: tuple[int, int] = (32, 16)
    lr: float = 0.005

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerConfig":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


SCORER_PARAMS = ("w1", "b1", "w2", "b2", "w3", "b3")


class ScorerModel:
    """Three fully connected layers, tanh on the two hidden layers, scalar output."""

    def __init__(self, n_features: int = len(FEATURES), cfg: ScorerConfig = ScorerConfig(), seed: int | None = 0):
        self.cfg = cfg
        self.n_features = n_features
        h1, h2 = cfg.hidden
        shapes = {"w1": (n_features, h1), "b1": (h1,), "w2": (h1, h2), "b2": (h2,), "w3": (h2,), "b3": ()}
        rng = np.random.default_rng(seed if seed is not None else 0)
        self.params = {}
        for k, shp in shapes.items():
            if k.startswith("w") and seed is not None:
                self.params[k] = rng.normal(0.0, 1.0 / np.sqrt(shp[0]), shp)
            else:
                self.params[k] = np.zeros(shp)
        self.mean = np.zeros(n_features)
        self.std = np.ones(n_features)
        self.normalized = False

    def fit_normalizer(self, x: np.ndarray) -> None:
        """Freeze per-feature mean and scale (constant features keep scale 1)."""
        self.mean = x.mean(axis=0)
        sd = x.std(axis=0)
        self.std = np.where(sd > 1e-12, sd, 1.0)
        self.normalized = True

    def _forward(self, x: np.ndarray):
        p = self.params
        z = (x - self.mean) / self.std
        a1 = np.tanh(z @ p["w1"] + p["b1"])
        a2 = np.tanh(a1 @ p["w2"] + p["b2"])
        return a2 @ p["w3"] + p["b3"], (z, a1, a2)

    def scores(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[0]

    def loss_and_grad(self, x: np.ndarray, targets: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        s, (z, a1, a2) = self._forward(x)
        p = self.params
        loss, ds = kl_loss(targets, s)
        g = {"w3": a2.T @ ds, "b3": np.asarray(ds.sum())}
        d2 = np.outer(ds, p["w3"]) * (1 - a2**2)
        g["w2"] = a1.T @ d2
        g["b2"] = d2.sum(axis=0)
        d1 = (d2 @ p["w2"].T) * (1 - a1**2)
        g["w1"] = z.T @ d1
        g["b1"] = d1.sum(axis=0)
        return loss, g

    def to_dict(self) -> dict:
        tensors = dict(self.params, norm_mean=self.mean, norm_std=self.std)
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": {"hidden": list(self.cfg.hidden), "lr": self.cfg.lr},
            "features": list(FEATURES[: self.n_features]) if self.n_features == len(FEATURES) else self.n_features,
            "normalized": self.normalized,
            "tensors": {k: {"shape": list(np.shape(v)), "data": [float(t) for t in np.ravel(v)]} for k, v in tensors.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not an extractor checkpoint")
        feats = d["features"]
        n = len(feats) if isinstance(feats, list) else int(feats)
        if isinstance(feats, list) and tuple(feats) != FEATURES:
            raise ValueError("checkpoint feature list does not match this version")
        model = cls(n, ScorerConfig.from_dict(d["config"]), seed=None)
        t = d["tensors"]

        def arr(k):
            return np.array(t[k]["data"], dtype=np.float64).reshape(t[k]["shape"])

        for k in SCORER_PARAMS:
            model.params[k] = arr(k)
        model.mean, model.std = arr("norm_mean"), arr("norm_std")
        model.normalized = bool(d.get("normalized", True))
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ScorerModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def log_softmax(s: np.ndarray) -> np.ndarray:
    m = s.max()
    return s - m - np.log(np.exp(s - m).sum())


def kl_loss(targets: Sequence[float], scores: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(targets || softmax(scores)) and its gradient with respect to the scores."""
    t = np.asarray(targets, dtype=np.float64)
    logq = log_softmax(np.asarray(scores, dtype=np.float64))
    nz = t > 0
    loss = float(np.sum(t[nz] * (np.log(t[nz]) - logq[nz])))
    return loss, np.exp(logq) - t


class RandomScorer:
    """Uniform random scores from a seeded generator."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def scores(self, x: np.ndarray) -> np.ndarray:
        return self.rng.random(len(x))


# ---------------------------------------------------------------------------
# training

@dataclass
class LabeledAdmission:
    ctx: FeatureContext
    labels: LabelSet
    _cache: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def step_features(self, k: int) -> np.ndarray:
        x = self._cache.get(k)
        if x is None:
            st = self.labels.steps[k]
            x = self.ctx.features(st.candidate_ids, st.prefix_ids)
            self._cache[k] = x
        return x


def label_admission(
    adm: ParsedAdmission, gaz: Gazetteer | None = None, cfg: LabelConfig = LabelConfig(), seed: int = 0
) -> LabeledAdmission:
    ctx = FeatureContext(adm, gaz)
    return LabeledAdmission(ctx, derive_labels(adm, cfg, seed, pool=ctx.pool))


@dataclass
class ScorerTrainResult:
    model: ScorerModel
    losses: list[float]


def train_scorer(
    model: ScorerModel, labeled: Sequence[LabeledAdmission], epochs: int = 30, seed: int = 0
) -> ScorerTrainResult:
    """SGD on one sampled extraction step per admission per epoch."""
    usable = [la for la in labeled if la.labels.steps]
    if not usable:
        raise ValueError("no extraction steps to train on")
    if not model.normalized:
        model.fit_normalizer(np.vstack([la.step_features(k) for la in usable for k in range(len(la.labels.steps))]))
    rng = random.Random(derive_seed(seed, "scorer-train"))
    lr = model.cfg.lr
    losses = []
    for epoch in range(epochs):
        order = list(range(len(usable)))
        rng.shuffle(order)
        total = 0.0
        for i in order:
            la = usable[i]
            k = rng.randrange(len(la.labels.steps))
            loss, g = model.loss_and_grad(la.step_features(k), np.array(la.labels.steps[k].soft_targets))
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite KL {loss!r} at epoch {epoch + 1}, admission {la.labels.admission_id}")
            total += loss
            for name, gk in g.items():
                model.params[name] -= lr * gk
        losses.append(total / len(usable))
    return ScorerTrainResult(model, losses)


# ---------------------------------------------------------------------------
# inference and evaluation

def _argmax(values: np.ndarray) -> int:
    return int(np.argmax(values))  # first maximum


def infer(scorer: Scorer, ctx: FeatureContext, max_sents: int = 13, min_tokens: int = 3) -> ExtractSummary:
    """Greedy extraction by model score, recomputing summary-aware features after each pick."""
    remaining = [i for i, s in enumerate(ctx.pool.sents) if is_eligible(s, min_tokens)]
    chosen: list[int] = []
    while remaining and len(chosen) < max_sents:
        x = ctx.features(remaining, chosen)
        chosen.append(remaining.pop(_argmax(scorer.scores(x))))
    ref = _reference(ctx.adm) if ctx.adm.summary else None
    details = {} if chosen else {"flag": "empty_pool"}
    pool = ctx.pool
    return ExtractSummary(
        Method.LEARNED,
        [("source", pool.sents[i].sent_id) for i in chosen],
        [list(pool.sents[i].tokens) for i in chosen],
        _cumulative(ref, [(pool.uni[i], pool.bi[i]) for i in chosen]),
        details,
    )


def gain_rank(gains: Sequence[float], position: int) -> int:
    """1-based rank of ``gains[position]`` in descending order, ties to the earlier position."""
    g = gains[position]
    return 1 + sum(1 for j, x in enumerate(gains) if x > g or (x == g and j < position))


def step_ranks(scorer: Scorer, labeled: Sequence[LabeledAdmission]) -> list[tuple[int, int, int]]:
    """(step, rank of the scorer's pick in the oracle gain order, number of candidates)."""
    out = []
    for la in labeled:
        for k, st in enumerate(la.labels.steps):
            pick = _argmax(scorer.scores(la.step_features(k)))
            out.append((st.step, gain_rank(st.gains, pick), len(st.candidate_ids)))
    return out


STEP_BUCKETS = ("1", "2", "3", "4", "5", ">5")


def rank_deviation(scorer: Scorer, labeled: Sequence[LabeledAdmission]) -> list[dict]:
    by: dict[str, list[int]] = {b: [] for b in STEP_BUCKETS}
    for step, rank, _ in step_ranks(scorer, labeled):
        by[str(step) if step <= 5 else ">5"].append(rank)
    return [
        {
            "step": b,
            "mean_rank": statistics.fmean(v) if v else float("nan"),
            "median_rank": float(statistics.median(v)) if v else float("nan"),
            "n": len(v),
        }
        for b, v in by.items()
    ]


def write_table3(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "mean_rank", "median_rank"])
        for r in rows:
            w.writerow([r["step"], fmt(r["mean_rank"]), fmt(r["median_rank"])])
