"""Command-line entry point: every pipeline, emitting CSV/JSON plot data.

Configuration precedence is defaults < JSON config file < MDSUMKIT_* environment
variables < command-line flags.  Exit codes: 0 ok, 1 usage, 2 data error,
3 internal error; failures print one JSON object to stderr.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
import traceback
from dataclasses import asdict
from functools import partial
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .coherence import (
    CoherenceConfig,
    CoherenceModel,
    NoEntities,
    build_grid,
    chain_stats,
    grid_from_tokens,
    make_pairs,
    pairwise_accuracy,
    per_document_accuracy,
    train as train_coherence,
)
from .corpus import CorpusError, FilterConfig, ParsedAdmission, Split, corpus_stats, filter_admissions, ingest, parse_admission
from .entities import (
    CORE_GROUPS,
    GROUPS,
    Gazetteer,
    LinkedAdmission,
    Ordering,
    corpus_transitions,
    density_stats,
    global_proportions,
    inclusion_curve,
    link_admission,
    macro_summary,
    micro_histogram,
    positional_groups,
)
from .extractor import (
    FeatureContext,
    LabelConfig,
    RandomScorer,
    ScorerConfig,
    ScorerModel,
    dump_labels,
    infer,
    label_admission,
    rank_deviation,
    train_scorer,
    write_table3,
)
from .lexical import aggregate, extractiveness, fmt, write_histogram_csv, write_rank_csv
from .oracles import (
    ALL_METHODS,
    ExtractSummary,
    Method,
    OracleContext,
    build_bm25,
    centrality_salience_corr,
    derive_seed,
    extract_r12,
    gain_curve,
    run_methods,
    score_extract,
    table2_rows,
    write_gain_curve,
    write_table2,
)
from .parallel import pmap
from .synthgen import GenConfig, write_corpus

ENV_PREFIX = "MDSUMKIT_"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "jobs": 1,
    "eval_split": "test",
    "generate": {},
    "filter": {},
    "oracles": {"methods": [m.value for m in ALL_METHODS]},
    "coherence": {"epochs": 10, "perms_per_doc": 20, "model": {}},
    "extractor": {"epochs": 30, "max_sents": 13, "labels": {}, "model": {}},
}

# keys that never change results and so stay out of the config hash
NON_RESULT_KEYS = ("jobs", "input", "out", "gazetteer", "config")


class UsageError(Exception):
    pass


class DataError(Exception):
    def __init__(self, message: str, artifact: str | None = None):
        super().__init__(message)
        self.artifact = artifact


class MissingArtifact(DataError):
    def __init__(self, path: Path, hint: str):
        super().__init__(f"missing artifact {path.name}: {hint}", artifact=path.name)


# ---------------------------------------------------------------------------
# configuration

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _env_overrides(environ) -> dict:
    out: dict[str, Any] = {}
    for key, conv in (("seed", int), ("jobs", int), ("input", str), ("out", str), ("gazetteer", str), ("eval_split", str)):
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            try:
                out[key] = conv(raw)
            except ValueError:
                raise UsageError(f"{ENV_PREFIX}{key.upper()}={raw!r} is not a valid {conv.__name__}")
    return out


def resolve_config(args: argparse.Namespace, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    env = _env_overrides(environ)
    cfg_path = args.config or environ.get(ENV_PREFIX + "CONFIG")
    cfg = copy.deepcopy(DEFAULTS)
    if cfg_path:
        try:
            file_cfg = json.loads(Path(cfg_path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {cfg_path}")
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {cfg_path} is not valid JSON: {e}")
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = _merge(cfg, file_cfg)
    cfg = _merge(cfg, env)
    flags = {k: getattr(args, k) for k in ("seed", "jobs", "input", "out", "gazetteer", "eval_split") if getattr(args, k, None) is not None}
    cfg = _merge(cfg, flags)
    if getattr(args, "n_admissions", None) is not None:
        cfg["generate"]["n_admissions"] = args.n_admissions
    if getattr(args, "epochs", None) is not None:
        cfg[args.target]["epochs"] = args.epochs
    cfg["config"] = cfg_path
    if cfg["jobs"] < 1:
        raise UsageError("--jobs must be at least 1")
    if cfg["eval_split"] not in ("train", "valid", "test", "all"):
        raise UsageError("eval_split must be one of train, valid, test, all")
    return cfg


def config_hash(cfg: dict) -> str:
    keep = {k: v for k, v in cfg.items() if k not in NON_RESULT_KEYS}
    return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()


def _build(cls, d: dict, what: str):
    try:
        return cls.from_dict(d) if hasattr(cls, "from_dict") else cls(**d)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid {what} configuration: {e}")


# ---------------------------------------------------------------------------
# inputs and artifacts

def _out(cfg: dict) -> Path:
    if not cfg.get("out"):
        raise UsageError("--out is required")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _input_path(cfg: dict) -> Path:
    if not cfg.get("input"):
        raise UsageError("--input is required")
    p = Path(cfg["input"])
    if not p.exists():
        raise DataError(f"input not found: {p}", artifact=p.name)
    return p


def load_corpus(cfg: dict) -> tuple[list[ParsedAdmission], dict[str, int]]:
    try:
        adms = ingest(_input_path(cfg))
    except CorpusError as e:
        raise DataError(str(e))
    kept, report = filter_admissions(adms, _build(FilterConfig, cfg["filter"], "filter"))
    if not kept:
        raise DataError("no admissions left after filtering")
    return pmap(parse_admission, kept, cfg["jobs"]), report


def load_gazetteer(cfg: dict) -> Gazetteer:
    path = cfg.get("gazetteer")
    if not path:
        path = _input_path(cfg).parent / "gazetteer.csv"
    path = Path(path)
    if not path.exists():
        raise DataError(f"gazetteer not found: {path}", artifact=path.name)
    try:
        return Gazetteer.load(path)
    except (ValueError, KeyError) as e:
        raise DataError(f"bad gazetteer {path}: {e}", artifact=path.name)


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingArtifact(path, hint)
    return path


def _split(adms: Sequence[ParsedAdmission], split: str) -> list[ParsedAdmission]:
    if split == "all":
        return list(adms)
    return [a for a in adms if a.admission.split is Split(split)]


def _eval_set(adms: Sequence[ParsedAdmission], cfg: dict) -> list[ParsedAdmission]:
    out = _split(adms, cfg["eval_split"])
    if not out:
        raise DataError(f"no admissions in the {cfg['eval_split']} split")
    return out


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _link(gaz: Gazetteer, adm: ParsedAdmission) -> LinkedAdmission:
    return link_admission(adm, gaz)


def _linked(adms, gaz, cfg) -> list[LinkedAdmission]:
    return pmap(partial(_link, gaz), adms, cfg["jobs"])


def _target_words(adms: Sequence[ParsedAdmission]) -> float:
    return float(np.mean([len(a.summary_tokens()) for a in adms]))


# ---------------------------------------------------------------------------
# commands

def cmd_generate(cfg: dict) -> None:
    gen = _merge(cfg["generate"], {"seed": cfg["seed"]})
    write_corpus(_build(GenConfig, gen, "generate"), _out(cfg))


def cmd_stats(cfg: dict) -> None:
    out = _out(cfg)
    adms, report = load_corpus(cfg)
    (out / "filter_report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    stats = corpus_stats(adms)
    _write_rows(out / "table1.csv", ["group", "variable", "value", "std"], [(g, v, float(x), "" if s is None else float(s)) for g, v, x, s in stats.rows()])


def cmd_analyze_extractiveness(cfg: dict) -> None:
    out = _out(cfg)
    adms, _ = load_corpus(cfg)
    stats = pmap(extractiveness, adms, cfg["jobs"])
    agg = aggregate(stats)
    write_rank_csv(out / "frag_rank.csv", agg.frag_len_by_rank)
    write_histogram_csv(out / "frag_histogram.csv", agg.histogram)
    _write_rows(out / "extractiveness.csv", ["admission_id", "coverage", "density"], [(a.admission_id, s.coverage, s.density) for a, s in zip(adms, stats)])
    _write_rows(
        out / "extractiveness_summary.csv",
        ["statistic", "value"],
        [
            ("coverage_mean", agg.coverage_mean),
            ("coverage_std", agg.coverage_std),
            ("density_mean", agg.density_mean),
            ("density_std", agg.density_std),
            ("unigram_fragment_share", agg.unigram_share),
        ],
    )


def cmd_analyze_entities(cfg: dict) -> None:
    out = _out(cfg)
    adms, _ = load_corpus(cfg)
    linked = _linked(adms, load_gazetteer(cfg), cfg)

    _write_rows(out / "fig4.csv", ["bin", "lo", "hi", "n", "included", "probability"], [(b.label, b.lo, "" if b.hi is None else b.hi, b.n, b.included, b.probability) for b in inclusion_curve(linked)])

    macros = [macro_summary(linked, o) for o in Ordering]
    _write_rows(out / "fig5.csv", ["decile"] + [o.value for o in Ordering], [(d + 1, *(m.curve[d] for m in macros)) for d in range(10)])
    _write_rows(out / "table4.csv", ["order", "mean_notes", "mean_percent", "n_admissions"], [(m.order.value, m.mean_notes, m.mean_percent, m.n_admissions) for m in macros])

    hist = micro_histogram(linked)
    _write_rows(out / "fig6.csv", ["decile", "fraction"], [(i + 1, float(v)) for i, v in enumerate(hist)])

    pos = positional_groups(linked)
    _write_rows(out / "fig7.csv", ["bin"] + [g.value for g in GROUPS], [(i + 1, *(float(pos[g][i]) for g in GROUPS)) for i in range(10)])

    src, summ = corpus_transitions(linked)
    for name, tm in (("fig8_source.csv", src), ("fig8_summary.csv", summ)):
        probs = tm.probabilities
        rows = [(a.value, b.value, int(tm.counts[i, j]), float(probs[i, j])) for i, a in enumerate(tm.groups) for j, b in enumerate(tm.groups)]
        _write_rows(out / name, ["from", "to", "count", "probability"], rows)

    dens = density_stats(linked)
    rows = [(k, float(v)) for k, v in asdict(dens).items()]
    rows += [("source_diagonal_mass", src.diagonal_mass), ("summary_diagonal_mass", summ.diagonal_mass)]
    _write_rows(out / "entity_density.csv", ["statistic", "value"], rows)
    shares = global_proportions(linked)
    _write_rows(out / "group_shares.csv", ["group", "source", "summary"], [(g.value, shares.source[g], shares.summary[g]) for g in CORE_GROUPS])


def cmd_analyze_coherence_stats(cfg: dict) -> None:
    out = _out(cfg)
    adms, _ = load_corpus(cfg)
    linked = _linked(adms, load_gazetteer(cfg), cfg)
    cs = chain_stats(a.summary for a in linked)
    _write_rows(
        out / "chain_stats.csv",
        ["statistic", "value"],
        [
            ("singleton_fraction", cs.singleton_fraction),
            ("adjacent_fraction", cs.adjacent_fraction),
            ("adjacent_defined", int(cs.adjacent_defined)),
            ("n_concepts", cs.n_concepts),
            ("n_repeated", cs.n_repeated),
        ],
    )


class LearnedExtractor:
    """Picklable wrapper running the trained scorer on one admission."""

    def __init__(self, model: ScorerModel, gaz: Gazetteer, max_sents: int):
        self.model, self.gaz, self.max_sents = model, gaz, max_sents

    def __call__(self, adm: ParsedAdmission) -> ExtractSummary:
        return infer(self.model, FeatureContext(adm, self.gaz), self.max_sents)


def _run_oracles(methods, ctx: OracleContext, adm: ParsedAdmission) -> dict:
    ex = run_methods(adm, methods, ctx)
    return {"admission_id": adm.admission_id, "extracts": {m.value: e.to_dict() for m, e in ex.items()}}


def cmd_oracles(cfg: dict, with_learned: bool = False) -> None:
    out = _out(cfg)
    adms, _ = load_corpus(cfg)
    try:
        methods = [Method(m) for m in cfg["oracles"]["methods"]]
    except ValueError as e:
        raise UsageError(str(e))
    learned = None
    if with_learned:
        model = ScorerModel.load(_require(out / "scorer_model.json", "run `train extractor` first"))
        learned = LearnedExtractor(model, load_gazetteer(cfg), cfg["extractor"]["max_sents"])
        methods.append(Method.LEARNED)
    index = None
    if Method.RETRIEVAL in methods or Method.SA_RETRIEVAL in methods:
        try:
            index = build_bm25(adms)
        except ValueError as e:
            raise DataError(f"cannot build the retrieval index: {e}")
    ctx = OracleContext(_target_words(adms), cfg["seed"], index, learned)
    evals = _eval_set(adms, cfg)
    records = pmap(partial(_run_oracles, methods, ctx), evals, cfg["jobs"])
    with open(out / "extracts.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    r, p, n = centrality_salience_corr(evals)
    rows = [("lexrank_salience_r", r), ("lexrank_salience_p", p), ("n_sentences", n)]
    shares = [rec["extracts"][Method.SA_RETRIEVAL.value]["details"]["retrieval_share"] for rec in records if Method.SA_RETRIEVAL.value in rec["extracts"]]
    if shares:
        rows.append(("retrieval_share", float(np.mean(shares))))
    _write_rows(out / "oracle_stats.csv", ["statistic", "value"], rows)


def _load_extracts(out: Path) -> dict[str, dict[Method, ExtractSummary]]:
    path = _require(out / "extracts.jsonl", "run `oracles` first")
    res = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                res[rec["admission_id"]] = {Method(k): ExtractSummary.from_dict(v) for k, v in rec["extracts"].items()}
    return res


def cmd_eval_table2(cfg: dict) -> None:
    out = _out(cfg)
    extracts = _load_extracts(out)
    adms, _ = load_corpus(cfg)
    by_id = {a.admission_id: a for a in adms}
    missing = sorted(set(extracts) - set(by_id))
    if missing:
        raise DataError(f"extracts refer to admissions not in the input: {missing[:3]}", artifact="extracts.jsonl")
    methods = [m for m in Method if any(m in ex for ex in extracts.values())]
    scored = {m: [score_extract(ex[m], by_id[aid]) for aid, ex in extracts.items() if m in ex] for m in methods}
    write_table2(out / "table2.csv", table2_rows(scored))
    gains = [ex[Method.GAIN] for ex in extracts.values() if Method.GAIN in ex]
    write_gain_curve(out / "gain_curve.csv", gain_curve(gains))


def _label(gaz, lcfg, seed, adm):
    return label_admission(adm, gaz, lcfg, seed)


def cmd_train_extractor(cfg: dict) -> None:
    out = _out(cfg)
    adms, _ = load_corpus(cfg)
    gaz = load_gazetteer(cfg)
    ecfg = cfg["extractor"]
    lcfg = _build(LabelConfig, ecfg["labels"], "extractor.labels")
    train = _split(adms, "train")
    if not train:
        raise DataError("no admissions in the train split")
    labeled = pmap(partial(_label, gaz, lcfg, cfg["seed"]), train, cfg["jobs"])
    dump_labels([la.labels for la in labeled], out / "labels.jsonl")
    model = ScorerModel(cfg=_build(ScorerConfig, ecfg["model"], "extractor.model"), seed=derive_seed(cfg["seed"], "scorer-init") % 2**32)
    try:
        res = train_scorer(model, labeled, ecfg["epochs"], cfg["seed"])
    except ValueError as e:
        raise DataError(str(e))
    model.save(out / "scorer_model.json")
    _write_rows(out / "scorer_loss.csv", ["epoch", "kl"], [(i + 1, v) for i, v in enumerate(res.losses)])


def cmd_eval_table3(cfg: dict) -> None:
    out = _out(cfg)
    model = ScorerModel.load(_require(out / "scorer_model.json", "run `train extractor` first"))
    adms, _ = load_corpus(cfg)
    gaz = load_gazetteer(cfg)
    lcfg = _build(LabelConfig, cfg["extractor"]["labels"], "extractor.labels")
    labeled = pmap(partial(_label, gaz, lcfg, cfg["seed"]), _eval_set(adms, cfg), cfg["jobs"])
    write_table3(out / "table3.csv", rank_deviation(model, labeled))
    write_table3(out / "table3_random.csv", rank_deviation(RandomScorer(derive_seed(cfg["seed"], "random-scorer")), labeled))


def _summary_grid(la: LinkedAdmission):
    if len(la.parsed.summary) < 2:
        return None
    try:
        return build_grid(la.parsed.summary, la.summary)
    except NoEntities:
        return None


def cmd_train_coherence(cfg: dict) -> None:
    out = _out(cfg)
    adms, _ = load_corpus(cfg)
    gaz = load_gazetteer(cfg)
    ccfg = cfg["coherence"]
    grids = [g for g in (_summary_grid(la) for la in _linked(_split(adms, "train"), gaz, cfg)) if g is not None]
    pairs = make_pairs(grids, ccfg["perms_per_doc"], derive_seed(cfg["seed"], "coherence-pairs"))
    if not pairs:
        raise DataError("no trainable summary grids in the train split")
    model = CoherenceModel.for_grids(grids, _build(CoherenceConfig, ccfg["model"], "coherence.model"), seed=derive_seed(cfg["seed"], "coherence-init") % 2**32)
    res = train_coherence(model, pairs, ccfg["epochs"], cfg["seed"])
    model.save(out / "coherence_model.json")
    _write_rows(out / "coherence_loss.csv", ["epoch", "hinge"], [(i + 1, v) for i, v in enumerate(res.losses)])


def cmd_eval_table5(cfg: dict) -> None:
    out = _out(cfg)
    model = CoherenceModel.load(_require(out / "coherence_model.json", "run `train coherence` first"))
    extracts = _load_extracts(out)
    adms, _ = load_corpus(cfg)
    gaz = load_gazetteer(cfg)
    evals = [a for a in _eval_set(adms, cfg) if a.admission_id in extracts]
    if not evals:
        raise DataError("no evaluated admissions have oracle extracts", artifact="extracts.jsonl")
    perms = cfg["coherence"]["perms_per_doc"]
    seed = derive_seed(cfg["seed"], "coherence-eval")
    linked = _linked(evals, gaz, cfg)

    ref_ids, ref_grids = [], []
    for la in linked:
        g = _summary_grid(la)
        if g is not None:
            ref_ids.append(la.admission_id)
            ref_grids.append(g)
    per_doc = per_document_accuracy(model, ref_grids, perms, seed)
    _write_rows(out / "coherence_eval.csv", ["summary_id", "accuracy"], [(i, h / n if n else 0.0) for i, (h, n) in zip(ref_ids, per_doc)])

    rows = [("Reference", pairwise_accuracy(model, ref_grids, perms, seed), 1.0, len(ref_grids))]
    for m in (Method.GAIN, Method.SENT_ALIGN):
        grids, r12s = [], []
        for a in evals:
            ext = extracts[a.admission_id].get(m)
            if ext is None:
                continue
            r12s.append(extract_r12(ext, a))
            if len(ext.sentences) < 2:
                continue
            try:
                grids.append(grid_from_tokens(ext.sentences, gaz))
            except NoEntities:
                pass
        if r12s:
            rows.append((m.value, pairwise_accuracy(model, grids, perms, seed), float(np.mean(r12s)), len(grids)))
    _write_rows(out / "table5.csv", ["summary", "accuracy", "r12", "n_docs"], rows)


def write_manifest(cfg: dict, out: Path) -> None:
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    keep = {k: v for k, v in cfg.items() if k not in NON_RESULT_KEYS}
    manifest = {"toolkit": "mdsumkit", "version": __version__, "config_hash": config_hash(cfg), "config": keep, "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def cmd_report(cfg: dict) -> None:
    out = _out(cfg)
    if not cfg.get("input"):
        cmd_generate(cfg)
        cfg = dict(cfg, input=str(out / "corpus.jsonl"), gazetteer=str(out / "gazetteer.csv"))
    cmd_stats(cfg)
    cmd_analyze_extractiveness(cfg)
    cmd_analyze_entities(cfg)
    cmd_analyze_coherence_stats(cfg)
    cmd_train_extractor(cfg)
    cmd_oracles(cfg, with_learned=True)
    cmd_eval_table2(cfg)
    cmd_eval_table3(cfg)
    cmd_train_coherence(cfg)
    cmd_eval_table5(cfg)
    write_manifest(cfg, out)


# ---------------------------------------------------------------------------
# parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "usage", "message": message}) + "\n")
        sys.exit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser, input_: bool = True, gazetteer: bool = False) -> None:
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--jobs", type=int, help="worker processes (default 1); never changes results")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--eval-split", dest="eval_split", help="split evaluated by oracles/eval (train|valid|test|all; default test)")
    if input_:
        p.add_argument("--input", help="corpus JSONL")
    if gazetteer:
        p.add_argument("--gazetteer", help="gazetteer CSV (default: gazetteer.csv next to --input)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdsumkit", description="Summarization corpus analysis toolkit.")
    parser.add_argument("--version", action="version", version=f"mdsumkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic corpus, gazetteer and ground truth")
    _common(p, input_=False)
    p.add_argument("--n-admissions", dest="n_admissions", type=int)

    p = sub.add_parser("stats", help="filter report and corpus statistics (table1.csv)")
    _common(p)

    p = sub.add_parser("analyze", help="extractiveness, entity or summary-chain analyses")
    p.add_argument("what", choices=["extractiveness", "entities", "coherence-stats"])
    _common(p, gazetteer=True)

    p = sub.add_parser("oracles", help="run baselines and oracle extractors (extracts.jsonl)")
    _common(p, gazetteer=True)
    p.add_argument("--with-learned", dest="with_learned", action="store_true", help="also run the trained scorer from --out")

    p = sub.add_parser("train", help="train the coherence ranker or the sentence scorer")
    p.add_argument("target", choices=["coherence", "extractor"])
    _common(p, gazetteer=True)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", help="emit table2, table3 or table5 from artifacts in --out")
    p.add_argument("table", choices=["table2", "table3", "table5"])
    _common(p, gazetteer=True)

    p = sub.add_parser("report", help="run every pipeline and write manifest.json")
    _common(p, gazetteer=True)
    p.add_argument("--n-admissions", dest="n_admissions", type=int)
    return parser


def _dispatch(args: argparse.Namespace, cfg: dict) -> None:
    c = args.command
    if c == "generate":
        cmd_generate(cfg)
    elif c == "stats":
        cmd_stats(cfg)
    elif c == "analyze":
        {"extractiveness": cmd_analyze_extractiveness, "entities": cmd_analyze_entities, "coherence-stats": cmd_analyze_coherence_stats}[args.what](cfg)
    elif c == "oracles":
        cmd_oracles(cfg, with_learned=args.with_learned)
    elif c == "train":
        (cmd_train_coherence if args.target == "coherence" else cmd_train_extractor)(cfg)
    elif c == "eval":
        {"table2": cmd_eval_table2, "table3": cmd_eval_table3, "table5": cmd_eval_table5}[args.table](cfg)
    elif c == "report":
        cmd_report(cfg)


def _fail(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = resolve_config(args)
        _dispatch(args, cfg)
    except UsageError as e:
        return _fail("usage", str(e), EXIT_USAGE)
    except DataError as e:
        extra = {"artifact": e.artifact} if e.artifact else {}
        return _fail("data", str(e), EXIT_DATA, **extra)
    except CorpusError as e:
        return _fail("data", str(e), EXIT_DATA)
    except Exception as e:  # noqa: BLE001 - last-resort reporting
        return _fail("internal", f"{type(e).__name__}: {e}", EXIT_INTERNAL, traceback=traceback.format_exc())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
