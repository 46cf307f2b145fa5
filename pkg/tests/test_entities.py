import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdsumkit.entities import (
    CORE_GROUPS,
    EntityMention,
    Gazetteer,
    LinkedAdmission,
    Ordering,
    SemanticGroup,
    corpus_transitions,
    density_stats,
    global_proportions,
    inclusion_curve,
    link_admission,
    link_tokens,
    macro_ordering,
    macro_summary,
    micro_histogram,
    position_decile,
    positional_groups,
    summary_position_bin,
    transitions,
)

from .conftest import parsed

DIS, DRUG, PROC, LAB = SemanticGroup.DISORDERS, SemanticGroup.DRUGS, SemanticGroup.PROCEDURES, SemanticGroup.LABS

GAZ = Gazetteer(
    [
        ("chf", "C1", "Disorders"),
        ("heart failure", "C1b", "Disorders"),
        ("congestive heart failure", "C1", "Disorders"),
        ("lasix", "C2", "ChemicalsDrugs"),
        ("furosemide", "C2", "ChemicalsDrugs"),
        ("echo", "C3", "Procedures"),
        ("troponin", "C4", "LabResults"),
    ]
)


def _mention(cid, group=DIS, sent_id=0, start=0, note=0, rel=0.0, offset=0, length=1):
    return EntityMention(cid, group, sent_id, start, length, note, rel, offset)


# ---------------------------------------------------------------------------
# gazetteer and linking


def test_link_longest_match_wins():
    toks = "pt with congestive heart failure on lasix".split()
    assert link_tokens(toks, GAZ) == [(2, 3, "C1", DIS), (6, 1, "C2", DRUG)]


def test_link_shorter_form_when_longer_absent():
    assert link_tokens("acute heart failure".split(), GAZ) == [(1, 2, "C1b", DIS)]


def test_link_no_match():
    assert link_tokens("nothing here".split(), GAZ) == []


def test_link_spec_examples():
    g = Gazetteer([("heart failure", "C1", "Disorders"), ("heart", "C9", "Disorders"), ("lasix", "C2", "ChemicalsDrugs")])
    assert link_tokens(["heart", "failure"], g) == [(0, 2, "C1", DIS)]
    assert len(link_tokens("started lasix for heart failure".split(), g)) == 2


@given(st.lists(st.sampled_from("congestive heart failure chf on lasix x".split()), max_size=25))
def test_link_spans_never_overlap(tokens):
    spans = link_tokens(tokens, GAZ)
    assert spans == link_tokens(tokens, GAZ)
    for (s1, l1, *_), (s2, _, *_) in zip(spans, spans[1:]):
        assert s1 + l1 <= s2
    assert all(l >= 1 for _, l, *_ in spans)


def test_gazetteer_rejects_duplicates_and_bad_groups():
    with pytest.raises(ValueError):
        Gazetteer([("chf", "C1", "Disorders"), ("CHF", "C9", "Disorders")])
    with pytest.raises(ValueError):
        Gazetteer([("x", "C1", "Anatomy")])
    assert SemanticGroup.parse("Chemicals & Drugs") is DRUG


def test_gazetteer_round_trip(tmp_path):
    p = tmp_path / "g.csv"
    GAZ.save(p)
    back = Gazetteer.load(p)
    assert back.entries == GAZ.entries
    (tmp_path / "bad.csv").write_text("surface,group\nx,Disorders\n")
    with pytest.raises(ValueError, match="concept_id"):
        Gazetteer.load(tmp_path / "bad.csv")


def test_link_admission_positions():
    adm = parsed(["Chf noted. Started lasix today."], "Chf treated with lasix.")
    la = link_admission(adm, GAZ)
    assert [(m.concept_id, m.sent_id, m.doc_offset) for m in la.source] == [("C1", 0, 0), ("C2", 1, 3)]
    assert la.source[1].rel_pos == pytest.approx(3 / 5)
    assert [m.doc_offset for m in la.summary] == [0, 3]


# ---------------------------------------------------------------------------
# density and compression


def test_density_stats_hand_values():
    a = link_admission(parsed(["Chf and lasix. Echo done. Chf again."], "Chf on lasix."), GAZ)
    d = density_stats([a])
    assert d.summary_entity_token_frac == pytest.approx(2 / 3)
    assert d.source_entity_token_frac == pytest.approx(4 / 7)
    assert d.mean_unique_summary == 2 and d.mean_unique_source == 3
    assert d.entity_compression == pytest.approx(1.5)


def test_density_fully_covered_summary_and_compression():
    a = _linked([{"A", "B", "C", "D"}], ["A", "B"])
    a.summary = [_mention("A", length=2)]
    a.parsed = parsed(["Filler text."], "Heart failure lasix.")
    a.summary.append(_mention("B", start=2))
    d = density_stats([a])
    assert d.summary_entity_token_frac == 1.0
    assert d.entity_compression == 2.0


def test_density_compression_skips_conceptless_summaries(small_linked):
    d = density_stats(small_linked + [_linked([{"A"}], [])])
    assert d.entity_compression == pytest.approx(density_stats(small_linked).entity_compression)
    assert d.entity_compression > 1


# ---------------------------------------------------------------------------
# inclusion probability


def test_inclusion_bins():
    notes = ["Chf. Chf. Chf. Lasix. Echo. Echo."]
    a = link_admission(parsed(notes, "Chf was present."), GAZ)
    bins = {b.label: b for b in inclusion_curve([a], bins=(1, 2, 3))}
    assert (bins["1"].n, bins["1"].included) == (1, 0)  # lasix
    assert (bins["2"].n, bins["2"].included) == (1, 0)  # echo
    assert (bins["3+"].n, bins["3+"].included) == (1, 1)  # chf
    assert bins["3+"].probability == 1.0


def test_inclusion_rises_with_frequency_on_synthetic(small_linked):
    curve = inclusion_curve(small_linked)
    populated = [b.probability for b in curve if b.n >= 20]
    assert populated[-1] > populated[0]


# ---------------------------------------------------------------------------
# macro ordering


def _linked(note_sets, summary):
    src = [_mention(c, note=i) for i, s in enumerate(note_sets) for c in s]
    summ = [_mention(c) for c in summary]
    adm = parsed(["Filler text."] * len(note_sets), "Filler.")
    return LinkedAdmission(adm, src, summ)


def test_macro_two_notes():
    a = _linked([{"A"}, {"B"}], ["A", "B"])
    fwd = macro_ordering(a, "Forward")
    assert fwd.notes_to_read == 2 and fwd.percent == 1.0
    assert fwd.curve[4] == 0.5 and fwd.curve[9] == 1.0
    assert fwd.curve[0] == 0.0  # floor(1 * 2 / 10) = 0 notes read


def test_macro_first_note_has_everything():
    a = _linked([{"A", "B"}, {"C"}], ["A", "B"])
    assert macro_ordering(a, "GreedyOracle").percent == 0.5
    assert macro_ordering(a, "Forward").percent == 0.5
    assert macro_ordering(a, "Backward").percent == 1.0


def test_macro_single_note():
    a = _linked([{"A", "B"}], ["A", "B"])
    for order in Ordering:
        r = macro_ordering(a, order)
        assert r.notes_to_read == 1 and r.percent == 1.0 and r.curve[9] == 1.0


def test_macro_orders():
    a = _linked([{"A"}, {"X"}, {"A", "B"}], ["A", "B"])
    assert macro_ordering(a, Ordering.FORWARD).notes_to_read == 3
    assert macro_ordering(a, Ordering.BACKWARD).notes_to_read == 1
    g = macro_ordering(a, Ordering.GREEDY)
    assert g.note_order[0] == 2 and g.notes_to_read == 1


def test_macro_none_without_summary_concepts():
    assert macro_ordering(_linked([{"A"}], []), "Forward") is None
    s = macro_summary([_linked([{"A"}], [])], "Forward")
    assert s.n_admissions == 0 and s.n_skipped == 1


def test_macro_curves_monotone_with_equal_terminals(small_linked):
    finals = {}
    for order in Ordering:
        s = macro_summary(small_linked, order)
        assert all(x <= y + 1e-12 for x, y in zip(s.curve, s.curve[1:]))
        finals[order] = s.curve[-1]
    assert len({round(v, 12) for v in finals.values()}) == 1


# ---------------------------------------------------------------------------
# micro ordering


def test_position_decile_edges():
    assert position_decile(0.0) == 1
    assert position_decile(0.0999) == 1
    assert position_decile(0.1) == 2
    assert position_decile(1.0) == 10


def test_micro_histogram_uniform_positions():
    rng = np.random.default_rng(0)
    src = [_mention("A", rel=float(x)) for x in rng.random(100_000)]
    a = LinkedAdmission(None, src, [_mention("A")])
    h = micro_histogram([a])
    assert h.sum() == pytest.approx(1.0)
    assert np.all(np.abs(h - 0.1) < 0.002 * 10)


def test_micro_histogram_ignores_non_summary_concepts():
    a = LinkedAdmission(None, [_mention("A", rel=0.05), _mention("B", rel=0.95)], [_mention("A")])
    h = micro_histogram([a])
    assert h[0] == 1.0 and h[9] == 0.0


# ---------------------------------------------------------------------------
# transitions


def test_transition_counts():
    ms = [_mention("a", DIS, start=0), _mention("b", DRUG, start=1), _mention("c", DRUG, start=2), _mention("d", LAB, start=3)]
    t = transitions(ms)
    expect = np.zeros((3, 3))
    expect[0, 1] = expect[1, 1] = 1
    assert np.array_equal(t.counts, expect)
    assert t.diagonal_mass == 0.5
    assert t.uniform_rows == (2,)
    assert np.allclose(t.probabilities[2], 1 / 3)
    assert np.allclose(t.probabilities.sum(axis=1), 1.0)


def test_transitions_empty():
    t = transitions([])
    assert t.empty and t.diagonal_mass == 0.0


def test_corpus_transitions_do_not_cross_notes():
    a = LinkedAdmission(
        parsed(["Filler.", "Filler."], "Filler."),
        [_mention("a", DIS, note=0), _mention("b", DRUG, note=1)],
        [],
    )
    src, summ = corpus_transitions([a])
    assert src.counts.sum() == 0 and summ.empty


@given(st.lists(st.sampled_from(list(SemanticGroup)), max_size=30))
def test_transition_rows_are_distributions(groups):
    ms = [_mention(str(i), g, start=i) for i, g in enumerate(groups)]
    t = transitions(ms)
    core = [g for g in groups if g in CORE_GROUPS]
    assert t.counts.sum() == max(0, len(core) - 1)
    assert np.allclose(t.probabilities.sum(axis=1), 1.0)


# ---------------------------------------------------------------------------
# positional distribution and shares


def test_summary_position_bin():
    assert summary_position_bin(0, 10) == 1
    assert summary_position_bin(9, 10) == 10
    assert summary_position_bin(0, 1) == 1


def test_positional_groups_and_shares_hand():
    a = link_admission(parsed(["Chf. Lasix. Echo."], "Chf then x y z lasix."), GAZ)
    pos = positional_groups([a])
    assert pos[DIS][0] == 1.0 and pos[DRUG][9] == 1.0
    assert pos[PROC].sum() == 0
    sh = global_proportions([a])
    assert sh.source == {DIS: pytest.approx(1 / 3), DRUG: pytest.approx(1 / 3), PROC: pytest.approx(1 / 3)}
    assert sh.summary[PROC] == 0.0 and sum(sh.summary.values()) == pytest.approx(1.0)


def test_synthetic_disorders_lead_summaries(small_linked):
    pos = positional_groups(small_linked)
    assert pos[DIS][0] > pos[DRUG][0]
    for g in SemanticGroup:
        assert pos[g].sum() == pytest.approx(1.0) or pos[g].sum() == 0
