import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdsumkit.corpus import Split
from mdsumkit.extractor import (
    FEATURES,
    FeatureContext,
    LabelConfig,
    RandomScorer,
    ScorerConfig,
    ScorerModel,
    candidate_pool,
    derive_labels,
    dump_labels,
    featurize,
    gain_rank,
    infer,
    is_eligible,
    kl_loss,
    label_admission,
    load_labels,
    rank_deviation,
    soft_targets,
    train_scorer,
    write_table3,
)
from mdsumkit.oracles import Pool

from .conftest import parsed

F = {name: i for i, name in enumerate(FEATURES)}


@pytest.fixture(scope="module")
def labeled_small(small_corpus, small_parsed):
    gaz = small_corpus[2]
    train = [a for a in small_parsed if a.admission.split is Split.TRAIN]
    return [label_admission(a, gaz, seed=0) for a in train]


# ---------------------------------------------------------------------------
# soft targets and labels


def test_soft_targets_hand_softmax():
    got = soft_targets([0.10, 0.05, 0.0], temperature=5.0)
    e = [math.exp(5.0), math.exp(2.5), 1.0]
    expect = [v / sum(e) for v in e]
    assert np.allclose(got, expect, rtol=0, atol=1e-12)


def test_soft_targets_divide_mode_flattens():
    sharp = soft_targets([0.1, 0.0], 5.0, "multiply")
    flat = soft_targets([0.1, 0.0], 5.0, "divide")
    assert sharp[0] > flat[0] > 0.5
    assert np.allclose(soft_targets([0.2, 0.2], 5.0), [0.5, 0.5])


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=12), st.floats(0.1, 20))
def test_soft_targets_are_monotone_distributions(gains, tau):
    t = soft_targets(gains, tau)
    assert abs(t.sum() - 1.0) < 1e-9
    for i in range(len(gains)):
        for j in range(len(gains)):
            if gains[i] >= gains[j]:
                assert t[i] >= t[j]


def test_label_config_drop_ramp():
    cfg = LabelConfig()
    assert cfg.drop_prob(100) == 0.0
    assert cfg.drop_prob(1200) == pytest.approx(0.5)
    assert cfg.drop_prob(10_000) == 0.8
    with pytest.raises(ValueError):
        LabelConfig(temperature=0)
    with pytest.raises(ValueError):
        LabelConfig(temperature_mode="power")


def test_zero_gain_admission_has_no_steps():
    adm = parsed(["Xx yy zz. Pp qq rr."], "Alpha beta gamma.")
    ls = derive_labels(adm)
    assert ls.steps == [] and ls.flag == "no_steps"


def test_non_alphabetic_sentences_never_candidates():
    adm = parsed(["123 456.\n\nThe patient improved on lasix.\n\nFamily visited this evening."], "The patient improved.")
    pool = Pool(adm.source)
    bad = [i for i, s in enumerate(pool.sents) if s.tokens == ["123", "456"]]
    assert bad and not is_eligible(pool.sents[bad[0]])
    ls = derive_labels(adm)
    assert all(bad[0] not in s.candidate_ids for s in ls.steps)
    assert ls.steps[0].chosen_id != bad[0]


def test_empty_pool_flag():
    adm = parsed(["Ok. Hi."], "Ok hi.")
    assert derive_labels(adm).flag == "empty_pool"


def test_label_steps_obey_filters_and_invariants(labeled_small):
    cfg = LabelConfig()
    n_steps = 0
    for la in labeled_small:
        for st_ in la.labels.steps:
            n_steps += 1
            assert max(st_.gains) >= cfg.min_best_gain
            assert max(st_.gains) - min(st_.gains) >= cfg.min_differential
            assert abs(sum(st_.soft_targets) - 1.0) < 1e-9
            best = max(range(len(st_.gains)), key=lambda k: (st_.gains[k], -k))
            assert st_.chosen_id == st_.candidate_ids[best]
            assert st_.chosen_id not in st_.prefix_ids
    assert n_steps > 0


def test_labels_deterministic_and_round_trip(tmp_path, small_parsed):
    adm = small_parsed[0]
    a, b = derive_labels(adm, seed=3), derive_labels(adm, seed=3)
    assert a == b
    p = tmp_path / "labels.jsonl"
    dump_labels([a], p)
    assert load_labels(p) == [a]


def test_drop_never_removes_overlapping_sentences():
    overlapping = [f"Keep sentence number w{i} alpha." for i in range(30)]
    noise = [f"Unrelated filler zz{i} qq{i}." for i in range(300)]
    text = " ".join(s for pair in zip(overlapping * 10, noise) for s in pair)
    adm = parsed([text], "Alpha summary text.")
    pool = Pool(adm.source)
    cfg = LabelConfig(drop_offset=0, drop_scale=1)  # drop probability pinned at 0.8
    kept = set(candidate_pool(adm, pool, cfg, seed=1))
    for i, s in enumerate(pool.sents):
        if "alpha" in s.tokens:
            assert i in kept
    dropped = sum(1 for i, s in enumerate(pool.sents) if "alpha" not in s.tokens and i not in kept)
    assert dropped > 0.6 * 300


# ---------------------------------------------------------------------------
# features


def test_empty_partial_has_zero_summary_features():
    adm = parsed(["Chf on lasix today. Echo was normal."], "Chf.")
    x = featurize(adm.source[0], [], adm)
    assert x[F["unigram_overlap"]] == 0 and x[F["bigram_overlap"]] == 0 and x[F["redundancy"]] == 0
    assert x[F["length"]] == 4 and x[F["note_admission"]] == 1.0


def test_identical_selected_sentence_gives_full_redundancy():
    adm = parsed(["Chf on lasix today. Echo was normal."], "Chf.")
    x = featurize(adm.source[0], [adm.source[0]], adm)
    assert x[F["redundancy"]] == 1.0
    assert x[F["unigram_overlap"]] == 1.0 and x[F["bigram_overlap"]] == 1.0


def test_centroid_cosine_by_hand():
    adm = parsed(["A b. A. C."], "A.")
    ctx = FeatureContext(adm)
    ia = math.log(4 / 3) + 1
    ib = ic = math.log(4 / 2) + 1
    centroid = [2 * ia / 3, ib / 3, ic / 3]
    cn = math.sqrt(sum(v * v for v in centroid))
    rows = [[ia, ib, 0.0], [ia, 0.0, 0.0], [0.0, 0.0, ic]]
    for r, row in enumerate(rows):
        dot = sum(a * b for a, b in zip(row, centroid))
        expect = dot / (math.sqrt(sum(v * v for v in row)) * cn)
        assert abs(ctx.static[r, F["centroid_cosine"]] - expect) < 1e-9


def test_entity_count_features(small_corpus, small_parsed):
    gaz = small_corpus[2]
    ctx = FeatureContext(small_parsed[0], gaz)
    ent = ctx.static[:, F["n_disorders"] : F["n_labs"] + 1]
    assert ent.sum() > 0
    assert np.all(np.isfinite(ctx.static))


# ---------------------------------------------------------------------------
# loss and scorer


def test_kl_hand_case():
    loss, grad = kl_loss([0.9, 0.1], np.array([0.0, 0.0]))
    expect = 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5)
    assert abs(loss - expect) < 1e-12
    assert np.allclose(grad, [0.5 - 0.9, 0.5 - 0.1])


def test_kl_zero_at_equality():
    s = np.array([1.0, -0.5, 2.0])
    q = np.exp(s) / np.exp(s).sum()
    loss, grad = kl_loss(q, s)
    assert abs(loss) < 1e-15
    assert np.allclose(grad, 0.0, atol=1e-15)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8), st.integers(0, 1000))
def test_kl_non_negative(scores, seed):
    t = np.random.default_rng(seed).dirichlet(np.ones(len(scores)))
    assert kl_loss(t, np.array(scores))[0] >= -1e-12


def test_scorer_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    m = ScorerModel(len(FEATURES), ScorerConfig(hidden=(6, 4)), seed=1)
    m.params["b1"] = rng.normal(0, 0.1, 6)
    m.params["b3"] = np.array(0.2)
    x = rng.normal(size=(5, len(FEATURES)))
    t = rng.dirichlet(np.ones(5))
    _, g = m.loss_and_grad(x, t)
    eps = 1e-5
    for name, tensor in m.params.items():
        for _ in range(10):
            idx = np.unravel_index(int(rng.integers(tensor.size)), tensor.shape)
            orig = tensor[idx]
            tensor[idx] = orig + eps
            up = m.loss_and_grad(x, t)[0]
            tensor[idx] = orig - eps
            down = m.loss_and_grad(x, t)[0]
            tensor[idx] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(g[name][idx]), 1e-8)
            assert abs(numeric - g[name][idx]) / denom < 1e-3, (name, idx)


def test_training_reduces_kl_and_round_trips(tmp_path, labeled_small):
    m = ScorerModel(seed=0)
    res = train_scorer(m, labeled_small, epochs=15, seed=0)
    assert np.mean(res.losses[-3:]) < res.losses[0]
    p = tmp_path / "scorer.json"
    m.save(p)
    back = ScorerModel.load(p)
    x = labeled_small[0].step_features(0)
    assert np.array_equal(back.scores(x), m.scores(x))
    assert np.array_equal(back.mean, m.mean) and np.array_equal(back.std, m.std)


def test_normalizer_frozen_at_training_start(labeled_small):
    m = ScorerModel(seed=0)
    train_scorer(m, labeled_small, epochs=1, seed=0)
    mean = m.mean.copy()
    train_scorer(m, labeled_small, epochs=1, seed=1)
    assert np.array_equal(m.mean, mean)


def test_training_requires_steps():
    adm = parsed(["Xx yy zz."], "Alpha beta gamma.")
    with pytest.raises(ValueError):
        train_scorer(ScorerModel(), [label_admission(adm)], epochs=1)


# ---------------------------------------------------------------------------
# inference and rank deviation


def test_infer_small_pool():
    adm = parsed(["One two three. Four five six. Seven eight nine. Ten eleven twelve. Thirteen fourteen fifteen."], "Four five six.")
    ctx = FeatureContext(adm)
    ext = infer(ScorerModel(seed=2), ctx, max_sents=13)
    assert len(ext.sentences) == 5
    assert len({tuple(s) for s in ext.sentences}) == 5
    assert infer(ScorerModel(seed=2), ctx).sentence_refs == ext.sentence_refs
    assert len(infer(ScorerModel(seed=2), ctx, max_sents=2).sentences) == 2


def test_infer_empty_pool():
    adm = parsed(["Ok. Hi."], "Ok.")
    ext = infer(ScorerModel(), FeatureContext(adm))
    assert ext.sentences == [] and ext.details["flag"] == "empty_pool"


def test_gain_rank():
    assert gain_rank([0.1, 0.3, 0.2], 1) == 1
    assert gain_rank([0.1, 0.3, 0.2], 0) == 3
    assert gain_rank([0.2, 0.2], 1) == 2


def test_random_scorer_rank_is_uniform():
    k = 10
    gains = list(np.linspace(0.0, 1.0, k))
    scorer = RandomScorer(seed=4)
    ranks = [gain_rank(gains, int(np.argmax(scorer.scores(np.zeros((k, 1)))))) for _ in range(20_000)]
    assert abs(np.mean(ranks) - (k + 1) / 2) < 0.05 * (k + 1) / 2


def test_perfect_model_has_rank_one(labeled_small):
    la = next(la for la in labeled_small if la.labels.steps)
    k = 0
    x = la.step_features(k)
    pick = int(np.argmax(np.array(la.labels.steps[k].gains)))
    assert gain_rank(la.labels.steps[k].gains, pick) == 1
    assert len(x) == len(la.labels.steps[k].gains)


def test_rank_deviation_rows_and_csv(tmp_path, labeled_small):
    rows = rank_deviation(RandomScorer(0), labeled_small)
    assert [r["step"] for r in rows] == ["1", "2", "3", "4", "5", ">5"]
    assert rows[0]["n"] > 0 and rows[0]["mean_rank"] >= 1
    p = tmp_path / "t3.csv"
    write_table3(p, rows)
    assert p.read_text().splitlines()[0] == "step,mean_rank,median_rank"
