import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdsumkit.lexical import (
    Accumulator,
    Fragment,
    Reference,
    aggregate,
    coverage,
    density,
    extract_fragments,
    extractiveness,
    fmt,
    fragment_stats,
    r12,
    rank_bin,
    rouge_n,
    sentence_ngrams,
    write_histogram_csv,
    write_rank_csv,
)

from .conftest import parsed


# ---------------------------------------------------------------------------
# independent oracles


def brute_rouge(cand, ref, n):
    """Multiset intersection by repeatedly removing matched reference n-grams."""
    c = [tuple(cand[i : i + n]) for i in range(len(cand) - n + 1)]
    r = [tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)]
    pool = list(r)
    overlap = 0
    for g in c:
        if g in pool:
            pool.remove(g)
            overlap += 1
    if not c or not r or overlap == 0:
        return 0.0, 0.0, 0.0
    rec, prec = overlap / len(r), overlap / len(c)
    return rec, prec, 2 * prec * rec / (prec + rec)


def brute_fragments(summary, source):
    """At each summary position, try every source start and keep the longest (earliest on ties)."""
    out = []
    i = 0
    while i < len(summary):
        best, where = 0, -1
        for j in range(len(source)):
            k = 0
            while i + k < len(summary) and j + k < len(source) and summary[i + k] == source[j + k]:
                k += 1
            if k > best:
                best, where = k, j
        if best:
            out.append((i, where, best))
            i += best
        else:
            i += 1
    return out


tokens = st.lists(st.sampled_from("abcde"), max_size=30)


# ---------------------------------------------------------------------------
# ROUGE


def test_rouge_examples():
    s = rouge_n(["the", "cat"], ["the", "cat"], 1)
    assert (s.recall, s.precision, s.f1) == (1.0, 1.0, 1.0)
    s = rouge_n(["the", "cat", "sat"], ["the", "cat"], 1)
    assert s.recall == 1.0 and s.precision == pytest.approx(2 / 3, abs=1e-15) and s.f1 == pytest.approx(0.8, abs=1e-15)
    s = rouge_n(["a", "b"], ["c", "d"], 1)
    assert (s.recall, s.precision, s.f1) == (0.0, 0.0, 0.0)


def test_rouge_rejects_bad_order():
    with pytest.raises(ValueError):
        rouge_n(["a"], ["a"], 3)


def test_rouge_clips_counts():
    s = rouge_n(["a", "a", "a"], ["a"], 1)
    assert s.recall == 1.0 and s.precision == pytest.approx(1 / 3)


def test_rouge_empty_inputs():
    assert rouge_n([], ["a"], 1).f1 == 0.0
    assert rouge_n(["a"], ["a"], 2).f1 == 0.0  # no bigrams on either side


def test_r12_examples():
    assert r12(["a", "b", "c"], ["a", "b", "c"]) == 1.0
    # R1 F1 0.8, no shared bigram
    assert r12(["the", "x", "cat"], ["the", "cat"]) == pytest.approx(0.4, abs=1e-15)
    assert r12(["a"], ["b"]) == 0.0


def test_rouge_matches_brute_force_oracle():
    rng = random.Random(1234)
    for _ in range(200):
        cand = [rng.choice("abcdef") for _ in range(rng.randint(0, 40))]
        ref = [rng.choice("abcdef") for _ in range(rng.randint(0, 40))]
        for n in (1, 2):
            s = rouge_n(cand, ref, n)
            assert (s.recall, s.precision, s.f1) == brute_rouge(cand, ref, n)


@given(tokens, tokens)
def test_rouge_symmetry(a, b):
    for n in (1, 2):
        x, y = rouge_n(a, b, n), rouge_n(b, a, n)
        assert x.recall == y.precision and x.precision == y.recall
        assert x.f1 == pytest.approx(y.f1, abs=1e-15)
        assert 0.0 <= x.f1 <= 1.0


# ---------------------------------------------------------------------------
# summary-level counting and the incremental accumulator


def test_sentence_ngrams_do_not_cross_boundaries():
    c = sentence_ngrams([["a", "b"], ["c", "d"]], 2)
    assert c == Counter({("a", "b"): 1, ("c", "d"): 1})


sentences = st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=6), min_size=1, max_size=5)


@settings(max_examples=200)
@given(sentences, sentences)
def test_accumulator_matches_recount(ref_sents, picks):
    ref = Reference(ref_sents)
    acc = Accumulator(ref)
    done = []
    for s in picks:
        uni, bi = sentence_ngrams([s], 1), sentence_ngrams([s], 2)
        predicted = acc.r12_with(uni, bi)
        acc.add(uni, bi)
        done.append(s)
        fresh = ref.r12(sentence_ngrams(done, 1), sentence_ngrams(done, 2))
        assert predicted == pytest.approx(fresh, abs=1e-15)
        assert acc.r12() == pytest.approx(fresh, abs=1e-15)


# ---------------------------------------------------------------------------
# fragments


def test_fragment_example():
    summary = ["a", "b", "c", "d", "e"]
    source = ["x", "a", "b", "y", "d", "e"]
    frags = extract_fragments(summary, source)
    assert frags == [Fragment(0, 1, 2), Fragment(3, 4, 2)]
    assert coverage(frags, 5) == pytest.approx(0.8)
    assert density(frags, 5) == pytest.approx(1.6)


def test_fragment_full_copy():
    s = list("abcdefg")
    frags = extract_fragments(s, s)
    assert frags == [Fragment(0, 0, 7)]
    assert coverage(frags, 7) == 1.0 and density(frags, 7) == 7.0


def test_fragment_absent_token_and_tie_break():
    assert extract_fragments(["z"], ["a"]) == []
    # "a b" occurs at 0 and 3: earliest source start wins
    assert extract_fragments(["a", "b"], ["a", "b", "x", "a", "b"]) == [Fragment(0, 0, 2)]


def test_fragments_match_exhaustive_oracle():
    rng = random.Random(99)
    for _ in range(500):
        alpha = "abcde"[: rng.randint(1, 5)]
        summ = [rng.choice(alpha) for _ in range(rng.randint(0, 30))]
        src = [rng.choice(alpha) for _ in range(rng.randint(0, 30))]
        got = [(f.summary_start, f.source_start, f.length) for f in extract_fragments(summ, src)]
        assert got == brute_fragments(summ, src)


@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=25), tokens)
def test_fragment_stat_invariants(summary, source):
    s = fragment_stats(summary, source)
    assert 0.0 <= s.coverage <= 1.0
    assert s.density >= s.coverage - 1e-12
    ends = [f.summary_start + f.length for f in s.fragments]
    assert all(e <= f.summary_start for e, f in zip(ends, s.fragments[1:]))
    total = sum(s.fragment_length_histogram.values())
    if total:
        uni = s.fragment_length_histogram.get(1, 0) / total
        higher = sum(v for k, v in s.fragment_length_histogram.items() if k > 1) / total
        assert uni + higher == pytest.approx(1.0, abs=1e-12)


def test_rank_bin():
    assert [rank_bin(r, 10) for r in range(1, 11)] == list(range(1, 11))
    assert [rank_bin(r, 3) for r in (1, 2, 3)] == [4, 7, 10]
    assert rank_bin(1, 25) == 1 and rank_bin(25, 25) == 10


def test_extractiveness_zero_overlap_and_empty_summary():
    adm = parsed(["alpha beta gamma delta."], "omega psi chi.")
    s = extractiveness(adm)
    assert s.coverage == 0.0 and s.density == 0.0
    with pytest.raises(ValueError):
        fragment_stats([], ["a"])


def test_extractiveness_planted_copy_dominates_density():
    copied = "the patient was started on furosemide for volume overload"
    adm = parsed([f"Admitted overnight. {copied.capitalize()}. Family at bedside."], f"{copied.capitalize()}. Novel words entirely unrelated here.")
    s = extractiveness(adm)
    longest = max(f.length for f in s.fragments)
    assert longest == len(copied.split())
    assert longest**2 / s.density / len(adm.summary_tokens()) > 0.9


def test_aggregate_pools_rank_bins():
    a = fragment_stats(list("abcd"), list("abxcd"))  # fragments "ab", "cd"
    b = fragment_stats(list("xyz"), list("x"))  # fragment "x"
    agg = aggregate([a, b])
    assert agg.frag_len_by_rank[5] == (2.0, 1)
    assert agg.frag_len_by_rank[10] == (1.5, 2)
    assert agg.histogram == {1: 1, 2: 2}
    assert agg.unigram_share == pytest.approx(1 / 3)
    assert agg.coverage_mean == pytest.approx((1.0 + 1 / 3) / 2)


def test_csv_writers(tmp_path):
    p = tmp_path / "rank.csv"
    write_rank_csv(p, {1: (3.0, 2), 10: (1.25, 4)})
    lines = p.read_text().splitlines()
    assert lines[0] == "bin,mean_length,n"
    assert lines[1] == "1,3,2" and lines[2] == "2,0,0" and lines[10] == "10,1.25,4"
    q = tmp_path / "hist.csv"
    write_histogram_csv(q, {2: 5, 1: 7})
    assert q.read_text() == "length,count\n1,7\n2,5\n"


def test_fmt():
    assert fmt(0.1 + 0.2) == "0.3"
    assert fmt(2.0) == "2"
    assert fmt(None) == ""
    assert fmt(float("nan")) == "nan"
    assert fmt(7) == "7"
