"""Seeded synthetic admissions with planted, knob-controlled corpus properties.

Every admission is generated from its own derived seed, so output does not
depend on generation order or parallelism.  Concept surface forms are
pseudo-words that never collide with the filler vocabulary, which makes the
planted mention sequences exactly recoverable by the gazetteer linker.
"""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Admission, Note, NoteType, Split, dump_jsonl, tokenize
from .entities import Gazetteer, SemanticGroup
from .oracles import derive_seed

BASE_TIME = 1_262_304_000  # 2010-01-01T00:00:00Z
DAY = 86400

NOTE_WORDS = (
    "patient pt noted stable overnight afebrile vitals reviewed continue monitor today reports denies "
    "pain improved tolerating diet ambulating labs will follow with on for of to in was is no new "
    "complaints exam unremarkable resting comfortably bed family at bedside discussed plan appears "
    "well mild moderate tenderness soft nontender clear lungs bilaterally regular rate rhythm neuro "
    "intact oriented cooperative nursing concerns events slept poorly appetite fair urine output adequate "
    "ambulated walker chair dressing wound dry warm edema trace extremities abdomen distended bowel sounds "
    "present voiding independently overnight nausea vomiting cough sputum breathing room air saturating "
    "anxious calm alert awake asleep shift report ordered pending consulted called paged updated"
).split()

# course words that also appear in problem lines of the notes
COURSE_WORDS = (
    "improved tolerated trended held resumed titrated monitored responded persistent worsening "
    "downtrended normalized escalated initiated given"
).split()

SUMMARY_WORDS = (
    "course hospital admitted treated initiated transitioned regimen responded favorably course "
    "complicated managed titrated resolved subsequently underwent uneventfully recommended outpatient "
    "discharged home condition prior baseline remained throughout received therapy improvement gradual "
    "held resumed tolerated escalated monitored serial trended downtrended normalized markedly "
    "clinically significant given persistent episode likely secondary etiology workup unrevealing"
).split()

HPI_FRAMES = (
    "pt reports {} {} {} concerning for",
    "{} {} and {} c w",
    "found to have {} {}",
    "presented {} {} {} r o",
    "{} x days ddx",
)

ONSETS = "b d f g k l m n p r s t v z br dr gr kl pl st tr".split()
VOWELS = "a e i o u".split()
SUFFIXES = {
    SemanticGroup.DISORDERS: ("itis", "osis", "emia", "algia", "opathy", "oma"),
    SemanticGroup.DRUGS: ("pril", "olol", "mab", "azole", "statin", "mycin", "parin"),
    SemanticGroup.PROCEDURES: ("ectomy", "oscopy", "plasty", "otomy", "ography"),
    SemanticGroup.LABS: ("ase", "ine", "ogen", "ulin"),
}
GROUP_PREFIX = {
    SemanticGroup.DISORDERS: "D",
    SemanticGroup.DRUGS: "R",
    SemanticGroup.PROCEDURES: "P",
    SemanticGroup.LABS: "L",
}


@dataclass(frozen=True)
class GenConfig:
    n_admissions: int = 500
    notes_per_adm: tuple[int, int] = (3, 8)
    sents_per_note: tuple[int, int] = (6, 12)
    copy_forward_prob: float = 0.3
    edit_prob: float = 0.1
    n_problems: tuple[int, int] = (2, 4)
    gazetteer_size: int = 40  # concepts per semantic group
    template_pool_size: int = 24
    oneliner_copy: bool = True
    chain_density: float = 0.3
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        for name in ("copy_forward_prob", "edit_prob", "chain_density"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("notes_per_adm", "sents_per_note", "n_problems"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} must be a nonempty positive range")
        if self.n_admissions < 1 or self.gazetteer_size < 16 or self.template_pool_size < 8:
            raise ValueError("n_admissions >= 1, gazetteer_size >= 16, template_pool_size >= 8 required")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split_fractions must sum to 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        for k in ("notes_per_adm", "sents_per_note", "n_problems", "split_fractions"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class AdmissionTruth:
    admission_id: str
    problems: list[str]
    summary_concepts: list[str]
    concept_source_freq: dict[str, int]
    source_mentions: list[list[str]]  # per note, in order
    summary_mentions: list[str]
    copy_fragments: list[dict]  # summary_token_start, length, kind


@dataclass
class GroundTruth:
    admissions: list[AdmissionTruth] = field(default_factory=list)

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for a in self.admissions:
                fh.write(json.dumps(asdict(a), sort_keys=True))
                fh.write("\n")


# ---------------------------------------------------------------------------
# text pieces

@dataclass
class _Sent:
    pieces: list[tuple[str, str | None]]  # (text, concept_id); "," is punctuation
    is_list: bool = False
    tag: str = ""  # e.g. "oneliner", "problem:D00001"

    def render(self) -> str:
        out = ""
        for text, _ in self.pieces:
            if text == ",":
                out += ","
            else:
                out += (" " if out else "") + text
        if self.is_list:
            return "- " + out
        return out[:1].upper() + out[1:] + "."

    def concepts(self) -> list[str]:
        return [cid for _, cid in self.pieces if cid]

    def n_tokens(self) -> int:
        return len(tokenize(self.render()))

    def edited(self, rng: random.Random, prob: float) -> "_Sent":
        pieces = []
        for text, cid in self.pieces:
            if cid is None and text != "," and text.isalpha() and rng.random() < prob:
                text = rng.choice(NOTE_WORDS)
            pieces.append((text, cid))
        return _Sent(pieces, self.is_list, self.tag)


def _words(text: str) -> list[tuple[str, None]]:
    return [(w, None) for w in text.split()]


def _render_note(sents: Sequence[_Sent]) -> str:
    parts = []
    for i, s in enumerate(sents):
        if i:
            parts.append("\n" if (s.is_list or sents[i - 1].is_list) else " ")
        parts.append(s.render())
    return "".join(parts)


# ---------------------------------------------------------------------------
# vocabulary

def _pseudo_root(rng: random.Random) -> str:
    return "".join(rng.choice(ONSETS) + rng.choice(VOWELS) for _ in range(2))


def build_gazetteer(size: int, seed: int) -> tuple[Gazetteer, dict[SemanticGroup, list[tuple[str, str]]]]:
    """``size`` concepts per group; roughly one in five has a two-token surface form."""
    rng = random.Random(derive_seed(seed, "gazetteer"))
    used: set[str] = set(NOTE_WORDS) | set(SUMMARY_WORDS)
    gaz = Gazetteer()
    by_group: dict[SemanticGroup, list[tuple[str, str]]] = {}
    counter = 0
    for group in SemanticGroup:
        items = []
        while len(items) < size:
            head = _pseudo_root(rng) + rng.choice(SUFFIXES[group])
            parts = [head]
            if rng.random() < 0.2:
                parts.insert(0, _pseudo_root(rng) + "ic")
            if any(p in used for p in parts):
                continue
            used.update(parts)
            counter += 1
            cid = f"{GROUP_PREFIX[group]}{counter:05d}"
            surface = " ".join(parts)
            gaz.add(surface, cid, group)
            items.append((cid, surface))
        by_group[group] = items
    return gaz, by_group


@dataclass(frozen=True)
class _Template:
    slots: str  # e.g. "D", "RD"
    words: tuple[str, ...]  # slot markers "{D}" etc.


def build_templates(size: int, seed: int) -> dict[str, list[_Template]]:
    """Shared summary sentence templates, keyed by slot signature."""
    rng = random.Random(derive_seed(seed, "templates"))
    kinds = ["D", "R", "RD", "P", "PD", "L", "LD", "", "open"]
    pool: dict[str, list[_Template]] = {k: [] for k in kinds}
    for i in range(size):
        kind = kinds[i % len(kinds)]
        n = rng.randint(5, 9)
        words = [rng.choice(SUMMARY_WORDS) for _ in range(n)]
        slots = list(kind) if kind != "open" else ["A", "D"]
        for slot in slots:
            words.insert(rng.randint(0, len(words)), "{" + slot + "}")
        pool[kind].append(_Template(kind, tuple(words)))
    return pool


def _fill(tpl: _Template, values: dict[str, tuple[str, str | None]]) -> _Sent:
    pieces = []
    for w in tpl.words:
        if w.startswith("{"):
            pieces.append(values[w[1:-1]])
        else:
            pieces.append((w, None))
    return _Sent(pieces)


# ---------------------------------------------------------------------------
# one admission

def _filler(rng: random.Random) -> _Sent:
    kind = rng.random()
    if kind < 0.15:
        # numeric-only line (dates, vitals exports)
        return _Sent(_words(" ".join(str(rng.randint(1, 199)) for _ in range(rng.randint(2, 4)))))
    if kind < 0.3:
        return _Sent(_words(f"T {rng.randint(97, 101)}.{rng.randint(0, 9)} hr {rng.randint(60, 120)} bp {rng.randint(95, 160)} {rng.randint(50, 95)}"))
    return _Sent(_words(" ".join(rng.choice(NOTE_WORDS) for _ in range(rng.randint(4, 10)))))


class _AdmissionBuilder:
    def __init__(self, cfg: GenConfig, index: int, by_group, templates):
        self.cfg = cfg
        self.adm_id = f"adm{index:05d}"
        self.rng = random.Random(derive_seed(cfg.seed, self.adm_id))
        self.by_group = by_group
        self.templates = templates

    def _pick(self, group: SemanticGroup, k: int, exclude: set[str]) -> list[tuple[str, str | None]]:
        cands = [(s, c) for c, s in self.by_group[group] if c not in exclude]
        picked = self.rng.sample(cands, k)
        exclude.update(c for _, c in picked)
        return picked

    def build(self) -> tuple[Admission, AdmissionTruth]:
        cfg, rng = self.cfg, self.rng
        used: set[str] = set()
        D, R, P, L = (SemanticGroup.DISORDERS, SemanticGroup.DRUGS, SemanticGroup.PROCEDURES, SemanticGroup.LABS)
        problems = []
        for dis in self._pick(D, rng.randint(*cfg.n_problems), used):
            problems.append(
                {
                    "D": dis,
                    "R": self._pick(R, rng.randint(1, 2), used),
                    "P": self._pick(P, 1, used) if rng.random() < 0.5 else [],
                    "L": self._pick(L, 1, used) if rng.random() < 0.5 else [],
                }
            )
        history = self._pick(D, rng.randint(1, 2), used)
        distract_dis = self._pick(D, rng.randint(2, 4), used)
        home_meds = self._pick(R, rng.randint(2, 4), used)
        extra_labs = self._pick(L, rng.randint(1, 2), used)
        age = rng.randint(20, 95)
        sex = rng.choice(["male", "female"])

        n_notes = rng.randint(*cfg.notes_per_adm)
        notes: list[list[_Sent]] = []
        latest_problem_sent: dict[str, _Sent] = {}

        # admission note
        hist_pieces = [history[0]] + ([("and", None), history[1]] if len(history) > 1 else [])
        oneliner = _Sent(
            _words(f"pt is a {age}yo {sex} with history of") + hist_pieces + _words("who presents with") + [problems[0]["D"]],
            tag="oneliner",
        )
        first = [oneliner]
        for pr in problems:
            frame = rng.choice(HPI_FRAMES).format(*(rng.choice(NOTE_WORDS) for _ in range(3)))
            first.append(_Sent(_words(frame) + [pr["D"]], tag="hpi"))
        pmh: list[tuple[str, str | None]] = [("pmh", None)]
        for i, d in enumerate(history + distract_dis):
            if i:
                pmh.append((",", None))
            pmh.append(d)
        first.append(_Sent(pmh, tag="pmh"))
        for med in home_meds:
            first.append(_Sent([med] + _words(f"{rng.choice([5, 10, 20, 40, 81])} mg daily"), is_list=True, tag="med"))
        for lab in [pr["L"][0] for pr in problems if pr["L"]] + extra_labs:
            first.append(_Sent([lab] + _words(f"{rng.randint(1, 9)}.{rng.randint(0, 9)} on admission"), tag="lab"))
        for pr in problems:
            s = _Sent([pr["D"], (",", None)] + _words("start") + [pr["R"][0]] + _words("and " + rng.choice(COURSE_WORDS) + " " + rng.choice(NOTE_WORDS)), tag="plan:" + pr["D"][1])
            first.append(s)
            latest_problem_sent[pr["D"][1]] = s
        target = rng.randint(*cfg.sents_per_note)
        while len(first) < target:
            first.append(_filler(rng))
        notes.append(first)

        for ni in range(1, n_notes):
            prev = notes[-1]
            sents = [_Sent(_words("interval " + " ".join(rng.choice(NOTE_WORDS) for _ in range(rng.randint(3, 6)))))]
            if rng.random() < 0.8:
                sents.append(oneliner.edited(rng, cfg.edit_prob))
            for s in prev:
                if rng.random() < cfg.copy_forward_prob:
                    sents.append(s.edited(rng, cfg.edit_prob))
            for pr in problems:
                if rng.random() < 0.8:
                    drug = rng.choice(pr["R"])
                    s = _Sent(
                        [pr["D"], (",", None)] + _words(rng.choice(COURSE_WORDS) + " " + rng.choice(NOTE_WORDS)) + _words("continue") + [drug],
                        tag="progress:" + pr["D"][1],
                    )
                    sents.append(s)
                    latest_problem_sent[pr["D"][1]] = s
                if pr["P"] and rng.random() < 0.3:
                    sents.append(_Sent(_words("s p") + pr["P"] + _words(" ".join(rng.choice(NOTE_WORDS) for _ in range(3)))))
                if pr["L"] and rng.random() < 0.3:
                    sents.append(_Sent(pr["L"] + _words(f"{rng.randint(1, 9)}.{rng.randint(0, 9)} today")))
            target = rng.randint(*cfg.sents_per_note)
            while len(sents) < target:
                sents.append(_filler(rng))
            notes.append(sents)

        # every concept the summary can mention must occur somewhere in the notes
        seen = {c for n in notes for s in n for c in s.concepts()}
        for pr in problems:
            for lead, items in (("on", pr["R"]), ("s p", pr["P"])):
                for item in items:
                    if item[1] not in seen:
                        notes[-1].append(_Sent(_words(lead) + [item] + _words("noted")))
                        seen.add(item[1])

        summary, fragments = self._summary(oneliner, problems, latest_problem_sent, age, sex)

        texts = [_render_note(n) for n in notes]
        t = BASE_TIME + rng.randint(0, 4 * 365) * DAY
        note_objs = []
        for ni, text in enumerate(texts):
            if ni:
                t += rng.randint(DAY // 2, 2 * DAY)
            if ni == 0:
                ntype = NoteType.ADMISSION
            else:
                ntype = NoteType.CONSULT if rng.random() < 0.15 else NoteType.PROGRESS
            note_objs.append(Note(f"{self.adm_id}-n{ni}", ntype, t, text))
        u = rng.random()
        f_train, f_valid, _ = cfg.split_fractions
        split = Split.TRAIN if u < f_train else (Split.VALID if u < f_train + f_valid else Split.TEST)
        adm = Admission(
            admission_id=self.adm_id,
            notes=tuple(note_objs),
            summary=_render_note(summary),
            split=split,
            patient_id=f"pt{rng.randrange(max(1, int(cfg.n_admissions * 0.7))):05d}",
        )

        src_mentions = [[c for s in n for c in s.concepts()] for n in notes]
        sum_mentions = [c for s in summary for c in s.concepts()]
        freq: dict[str, int] = {}
        for ms in src_mentions:
            for c in ms:
                freq[c] = freq.get(c, 0) + 1
        truth = AdmissionTruth(
            admission_id=self.adm_id,
            problems=[pr["D"][1] for pr in problems],
            summary_concepts=sorted(set(sum_mentions)),
            concept_source_freq=dict(sorted(freq.items())),
            source_mentions=src_mentions,
            summary_mentions=sum_mentions,
            copy_fragments=fragments,
        )
        return adm, truth

    def _summary(self, oneliner, problems, latest, age, sex):
        cfg, rng, tpl = self.cfg, self.rng, self.templates
        sents: list[_Sent] = []
        copies: list[tuple[int, str]] = []  # (sentence index, kind)
        if cfg.oneliner_copy:
            copies.append((len(sents), "oneliner"))
            sents.append(_Sent(list(oneliner.pieces)))
        else:
            sents.append(_fill(rng.choice(tpl["open"]), {"A": (f"{age}yo {sex}", None), "D": problems[0]["D"]}))
        sents.append(_fill(rng.choice(tpl[""]), {}))
        for pr in problems:
            sents.append(_fill(rng.choice(tpl["D"]), {"D": pr["D"]}))
            for kind, items in (("R", pr["R"]), ("P", pr["P"]), ("L", pr["L"])):
                for item in items:
                    chained = rng.random() < cfg.chain_density
                    key = kind + "D" if chained else kind
                    sents.append(_fill(rng.choice(tpl[key]), {kind: item, "D": pr["D"]}))
            if rng.random() < cfg.copy_forward_prob:
                copies.append((len(sents), "copy"))
                sents.append(_Sent(list(latest[pr["D"][1]].pieces)))
        sents.append(_fill(rng.choice(tpl[""]), {}))
        offsets = []
        total = 0
        for s in sents:
            offsets.append(total)
            total += s.n_tokens()
        fragments = [{"summary_token_start": offsets[i], "length": sents[i].n_tokens(), "kind": k} for i, k in copies]
        return sents, fragments


def generate(cfg: GenConfig = GenConfig()) -> tuple[list[Admission], GroundTruth, Gazetteer]:
    """Synthetic corpus, its ground truth and the gazetteer that links it."""
    gaz, by_group = build_gazetteer(cfg.gazetteer_size, cfg.seed)
    templates = build_templates(cfg.template_pool_size, cfg.seed)
    adms, truth = [], GroundTruth()
    for i in range(cfg.n_admissions):
        adm, t = _AdmissionBuilder(cfg, i, by_group, templates).build()
        adms.append(adm)
        truth.admissions.append(t)
    return adms, truth, gaz


def write_corpus(cfg: GenConfig, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    adms, truth, gaz = generate(cfg)
    paths = {"corpus": out / "corpus.jsonl", "gazetteer": out / "gazetteer.csv", "ground_truth": out / "ground_truth.jsonl"}
    dump_jsonl(adms, paths["corpus"])
    gaz.save(paths["gazetteer"])
    truth.dump(paths["ground_truth"])
    return paths


# ---------------------------------------------------------------------------
# planted lexical chains for the coherence model

def generate_chain_docs(
    n_docs: int,
    seed: int,
    n_concepts: int = 30,
    n_sents: tuple[int, int] = (6, 10),
    run_length: tuple[int, int] = (2, 4),
) -> tuple[list[str], Gazetteer]:
    """Documents whose entities each occupy one contiguous run of >= 2 sentences.

    Shuffling sentences breaks the runs, which is the signal a coherence
    ranker has to pick up.
    """
    gaz, by_group = build_gazetteer(max(8, n_concepts), seed)
    concepts = by_group[SemanticGroup.DISORDERS][:n_concepts]
    rng = random.Random(derive_seed(seed, "chains"))
    docs = []
    for _ in range(n_docs):
        n = rng.randint(*n_sents)
        available = list(concepts)
        rng.shuffle(available)
        active: list[list] = []  # [surface, remaining]
        sents = []
        for t in range(n):
            left = n - t
            while left >= 2 and available and (not active or (len(active) < 2 and rng.random() < 0.5)):
                surface = available.pop()[1]
                active.append([surface, min(rng.randint(*run_length), left)])
            words = [rng.choice(NOTE_WORDS) for _ in range(rng.randint(2, 4))]
            pieces: list[str] = []
            for i, (surface, _) in enumerate(active):
                pieces += (["and"] if i else []) + [surface]
            sents.append(" ".join(["the"] + pieces + words).capitalize() + ".")
            for a in active:
                a[1] -= 1
            active = [a for a in active if a[1] > 0]
        docs.append(" ".join(sents))
    return docs, gaz
