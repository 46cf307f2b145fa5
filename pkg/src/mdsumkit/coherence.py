"""Entity grids and a small convolutional pairwise-ranking coherence model.

The model embeds every grid cell (a concept id or EMPTY), slides F filters of
width w down each column, max-pools over all positions and all columns, and
maps the pooled vector to a scalar with a linear layer.  Gradients are written
out by hand; training minimizes the margin ranking loss between an original
grid and a row-shuffled copy.
"""
from __future__ import annotations

import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import SentenceRecord
from .entities import EntityMention, Gazetteer, link_tokens
from .oracles import derive_seed

EMPTY = "<empty>"
CHECKPOINT_FORMAT = "mdsumkit.coherence"
CHECKPOINT_VERSION = 1


class NoEntities(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# grids

@dataclass(frozen=True)
class EntityGrid:
    entities: tuple[str, ...]
    presence: tuple[tuple[bool, ...], ...]  # S rows x E columns

    @property
    def n_sentences(self) -> int:
        return len(self.presence)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def cells(self) -> list[list[str]]:
        return [[e if p else EMPTY for e, p in zip(self.entities, row)] for row in self.presence]

    def matrix(self) -> np.ndarray:
        return np.array(self.presence, dtype=bool).reshape(self.n_sentences, self.n_entities)

    def permute_rows(self, order: Sequence[int]) -> "EntityGrid":
        if sorted(order) != list(range(self.n_sentences)):
            raise ValueError("not a permutation of the grid rows")
        return EntityGrid(self.entities, tuple(self.presence[i] for i in order))


def grid_from_sets(rows: Sequence[Iterable[str]]) -> EntityGrid:
    """Grid from per-sentence concept collections; columns in first-mention order."""
    rows = [list(r) for r in rows]
    order: list[str] = []
    seen: set[str] = set()
    for r in rows:
        for c in r:
            if c not in seen:
                seen.add(c)
                order.append(c)
    if not order:
        raise NoEntities("grid has no entities")
    sets = [set(r) for r in rows]
    return EntityGrid(tuple(order), tuple(tuple(c in s for c in order) for s in sets))


def build_grid(sentences: Sequence[SentenceRecord], mentions: Sequence[EntityMention]) -> EntityGrid:
    """One row per sentence (in the given order), one column per distinct concept."""
    row_of = {s.sent_id: i for i, s in enumerate(sentences)}
    rows: list[list[str]] = [[] for _ in sentences]
    for m in sorted(mentions, key=lambda m: (row_of.get(m.sent_id, -1), m.token_start)):
        if m.sent_id not in row_of:
            raise ValueError(f"mention of {m.concept_id} references unknown sentence {m.sent_id}")
        rows[row_of[m.sent_id]].append(m.concept_id)
    return grid_from_sets(rows)


def grid_from_tokens(sentences: Sequence[Sequence[str]], gaz: Gazetteer) -> EntityGrid:
    return grid_from_sets([[cid for _, _, cid, _ in link_tokens(toks, gaz)] for toks in sentences])


# ---------------------------------------------------------------------------
# model

@dataclass(frozen=True)
class CoherenceConfig:
    dim: int = 8
    filters: int = 16
    width: int = 3
    margin: float = 1.0
    lr: float = 0.01
    init_scale: float = 0.1

    @classmethod
    def from_dict(cls, d: dict) -> "CoherenceConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


PARAMS = ("emb", "conv", "conv_bias", "out", "out_bias")


class CoherenceModel:
    """Embedding -> per-column 1-D convolution -> global max-pool -> linear score."""

    def __init__(self, vocab: Sequence[str], cfg: CoherenceConfig = CoherenceConfig(), seed: int | None = 0):
        if EMPTY in vocab:
            vocab = [v for v in vocab if v != EMPTY]
        self.cfg = cfg
        self.vocab: tuple[str, ...] = (EMPTY,) + tuple(sorted(set(vocab)))
        self.index = {v: i for i, v in enumerate(self.vocab)}
        self.unknown = 0
        V, d, F, w = len(self.vocab), cfg.dim, cfg.filters, cfg.width
        if seed is None:
            self.params = {
                "emb": np.zeros((V, d)),
                "conv": np.zeros((F, w, d)),
                "conv_bias": np.zeros(F),
                "out": np.zeros(F),
                "out_bias": np.zeros(()),
            }
        else:
            rng = np.random.default_rng(seed)
            s = cfg.init_scale
            self.params = {
                "emb": rng.normal(0.0, s, (V, d)),
                "conv": rng.normal(0.0, 1.0 / np.sqrt(w * d), (F, w, d)),
                "conv_bias": np.zeros(F),
                "out": rng.normal(0.0, 1.0 / np.sqrt(F), F),
                "out_bias": np.zeros(()),
            }

    @classmethod
    def for_grids(cls, grids: Iterable[EntityGrid], cfg: CoherenceConfig = CoherenceConfig(), seed: int | None = 0):
        vocab = {e for g in grids for e in g.entities}
        return cls(sorted(vocab), cfg, seed)

    # -- forward / backward -------------------------------------------------

    def _indices(self, grid: EntityGrid) -> np.ndarray:
        """S' x E token indices, with -1 marking zero padding rows."""
        cols = []
        for e in grid.entities:
            i = self.index.get(e)
            if i is None:
                self.unknown += 1
                i = 0
            cols.append(i)
        cols = np.array(cols, dtype=np.int64)
        idx = np.where(grid.matrix(), cols[None, :], 0)
        pad = self.cfg.width - idx.shape[0]
        if pad > 0:
            idx = np.vstack([idx, np.full((pad, idx.shape[1]), -1, dtype=np.int64)])
        return idx

    def _embed(self, idx: np.ndarray) -> np.ndarray:
        x = self.params["emb"][np.maximum(idx, 0)]
        x[idx < 0] = 0.0
        return x

    def _forward(self, grid: EntityGrid):
        p = self.params
        idx = self._indices(grid)
        x = self._embed(idx)  # S' x E x d
        win = sliding_window_view(x, self.cfg.width, axis=0)  # P x E x d x w
        h = np.einsum("pejk,fkj->pef", win, p["conv"]) + p["conv_bias"]
        flat = h.reshape(-1, h.shape[-1])
        arg = flat.argmax(axis=0)
        pooled = flat[arg, np.arange(flat.shape[1])]
        score = float(pooled @ p["out"] + p["out_bias"])
        return score, (idx, x, arg, pooled, h.shape[1])

    def score(self, grid: EntityGrid) -> float:
        return self._forward(grid)[0]

    def gradient(self, grid: EntityGrid) -> tuple[float, dict[str, np.ndarray]]:
        """Score and d(score)/d(parameter) for every tensor (max-pool picks the first argmax)."""
        score, (idx, x, arg, pooled, n_cols) = self._forward(grid)
        p, w = self.params, self.cfg.width
        g = {k: np.zeros_like(v) for k, v in p.items()}
        g["out"] = pooled.copy()
        g["out_bias"] = np.ones(())
        g["conv_bias"] = p["out"].copy()
        for f, a in enumerate(arg):
            pos, col = divmod(int(a), n_cols)
            vf = p["out"][f]
            patch = x[pos : pos + w, col, :]  # w x d
            g["conv"][f] += vf * patch
            for k in range(w):
                t = idx[pos + k, col]
                if t >= 0:
                    g["emb"][t] += vf * p["conv"][f, k]
        return score, g

    def pair_loss(self, original: EntityGrid, permuted: EntityGrid) -> float:
        return max(0.0, self.cfg.margin - self.score(original) + self.score(permuted))

    def pair_gradient(self, original: EntityGrid, permuted: EntityGrid) -> tuple[float, dict[str, np.ndarray] | None]:
        """Hinge loss and its gradient; ``None`` in the flat region (including the kink)."""
        so, go = self.gradient(original)
        sp, gp = self.gradient(permuted)
        loss = self.cfg.margin - so + sp
        if loss <= 0.0:
            return 0.0, None
        return loss, {k: gp[k] - go[k] for k in go}

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.cfg.__dict__,
            "vocab": list(self.vocab),
            "tensors": {k: {"shape": list(v.shape), "data": [float(t) for t in v.ravel()]} for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoherenceModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a coherence checkpoint")
        model = cls(d["vocab"], CoherenceConfig.from_dict(d["config"]), seed=None)
        if list(model.vocab) != list(d["vocab"]):
            raise ValueError("checkpoint vocabulary is not in canonical order")
        for k in PARAMS:
            t = d["tensors"][k]
            arr = np.array(t["data"], dtype=np.float64).reshape(t["shape"])
            if arr.shape != model.params[k].shape:
                raise ValueError(f"tensor {k} has shape {arr.shape}, expected {model.params[k].shape}")
            model.params[k] = arr
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CoherenceModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# permutations, training and evaluation

@dataclass(frozen=True)
class RankingPair:
    original: EntityGrid
    permuted: EntityGrid
    seed: int
    order: tuple[int, ...]


def _permutations(grid: EntityGrid, k: int, seed: int) -> list[tuple[int, tuple[int, ...], EntityGrid]]:
    out = []
    S = grid.n_sentences
    if S < 2 or len(set(grid.presence)) < 2:
        return out  # every row order gives the same grid
    for j in range(k):
        s = derive_seed(seed, str(j))
        rng = random.Random(s)
        while True:
            order = list(range(S))
            rng.shuffle(order)
            g = grid.permute_rows(order)
            if g.presence != grid.presence:
                break
        out.append((s, tuple(order), g))
    return out


def make_pairs(grids: Sequence[EntityGrid], perms_per_doc: int = 20, seed: int = 0) -> list[RankingPair]:
    """``perms_per_doc`` row shuffles per grid, each differing from the original.

    Grids whose row orderings are all identical (fewer than two sentences or
    all rows equal) contribute no pairs.
    """
    pairs = []
    for di, g in enumerate(grids):
        for s, order, p in _permutations(g, perms_per_doc, derive_seed(seed, f"doc{di}")):
            pairs.append(RankingPair(g, p, s, order))
    return pairs


@dataclass
class TrainResult:
    model: CoherenceModel
    losses: list[float] = field(default_factory=list)


def train(model: CoherenceModel, pairs: Sequence[RankingPair], epochs: int = 20, seed: int = 0) -> TrainResult:
    """SGD on the margin ranking loss; records the mean loss of each epoch."""
    if not pairs:
        raise ValueError("no training pairs")
    vocab = model.vocab
    lr = model.cfg.lr
    rng = random.Random(derive_seed(seed, "coherence-train"))
    losses = []
    order = list(range(len(pairs)))
    for epoch in range(epochs):
        rng.shuffle(order)
        total = 0.0
        for i in order:
            pr = pairs[i]
            loss, grad = model.pair_gradient(pr.original, pr.permuted)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss!r} at epoch {epoch + 1}, pair {i}")
            total += loss
            if grad is not None:
                for k, gk in grad.items():
                    model.params[k] -= lr * gk
        mean = total / len(pairs)
        bad = [k for k, v in model.params.items() if not np.all(np.isfinite(v))]
        if bad:
            raise TrainingError(f"non-finite parameters {bad} after epoch {epoch + 1} (mean loss {mean!r})")
        losses.append(mean)
    assert model.vocab == vocab
    return TrainResult(model, losses)


def pairwise_accuracy(model: CoherenceModel, grids: Sequence[EntityGrid], perms_per_doc: int = 20, seed: int = 0) -> float:
    """Share of (grid, shuffle) pairs where the original scores strictly higher."""
    per_doc = per_document_accuracy(model, grids, perms_per_doc, seed)
    hits = sum(h for h, _ in per_doc)
    total = sum(n for _, n in per_doc)
    return hits / total if total else 0.0


def per_document_accuracy(
    model: CoherenceModel, grids: Sequence[EntityGrid], perms_per_doc: int = 20, seed: int = 0
) -> list[tuple[int, int]]:
    """(wins, pairs) per grid, using the same shuffles as :func:`make_pairs`."""
    out = []
    for di, g in enumerate(grids):
        perms = _permutations(g, perms_per_doc, derive_seed(seed, f"doc{di}"))
        if not perms:
            out.append((0, 0))
            continue
        base = model.score(g)
        out.append((sum(base > model.score(p) for _, _, p in perms), len(perms)))
    return out


# ---------------------------------------------------------------------------
# lexical chains in summaries

@dataclass(frozen=True)
class ChainStats:
    singleton_fraction: float
    adjacent_fraction: float
    adjacent_defined: bool
    n_concepts: int
    n_repeated: int


def chain_stats(summaries_mentions: Iterable[Sequence[EntityMention]]) -> ChainStats:
    """Pooled over (summary, concept) pairs.

    A concept is a singleton when it is mentioned once in its summary.  Among
    the rest, it is adjacent when two of its mentions sit in consecutive
    sentences.  With no repeated concept the adjacent fraction is 0 and
    ``adjacent_defined`` is False.
    """
    n = singles = repeated = adjacent = 0
    for mentions in summaries_mentions:
        sents: dict[str, list[int]] = defaultdict(list)
        for m in mentions:
            sents[m.concept_id].append(m.sent_id)
        for ids in sents.values():
            n += 1
            if len(ids) == 1:
                singles += 1
                continue
            repeated += 1
            u = sorted(set(ids))
            adjacent += any(b - a == 1 for a, b in zip(u, u[1:]))
    return ChainStats(
        singleton_fraction=singles / n if n else 0.0,
        adjacent_fraction=adjacent / repeated if repeated else 0.0,
        adjacent_defined=repeated > 0,
        n_concepts=n,
        n_repeated=repeated,
    )
