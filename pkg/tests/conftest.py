from __future__ import annotations

import pytest

from mdsumkit.corpus import Admission, Note, NoteType, Split, parse_admission
from mdsumkit.entities import link_admission
from mdsumkit.synthgen import GenConfig, generate


def make_admission(notes, summary, admission_id="a1", split=Split.TRAIN, start=0):
    """Admission from plain note texts, one day apart."""
    return Admission(
        admission_id=admission_id,
        notes=tuple(
            Note(f"{admission_id}-n{i}", NoteType.PROGRESS if i else NoteType.ADMISSION, start + i * 86400, t)
            for i, t in enumerate(notes)
        ),
        summary=summary,
        split=split,
    )


def parsed(notes, summary, **kw):
    return parse_admission(make_admission(notes, summary, **kw))


@pytest.fixture(scope="session")
def small_corpus():
    adms, truth, gaz = generate(GenConfig(n_admissions=60, seed=11))
    return adms, truth, gaz


@pytest.fixture(scope="session")
def small_parsed(small_corpus):
    return [parse_admission(a) for a in small_corpus[0]]


@pytest.fixture(scope="session")
def small_linked(small_corpus, small_parsed):
    gaz = small_corpus[2]
    return [link_admission(p, gaz) for p in small_parsed]


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
