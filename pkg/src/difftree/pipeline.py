"""Staged pipeline: parse -> topics -> classify -> stages/trees/forecast/qstat -> report.

Each stage writes plain-text artifacts into the output directory. A stage's
cache key hashes its parameters and the digests of everything it reads; when
the key and the artifact digests match the previous manifest the stage is
skipped.
"""
from __future__ import annotations

import configparser
import csv
import datetime
import hashlib
import io
import json
import logging
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import __version__
from . import corpus as corpus_mod
from . import diffusion, forecast, qstat, topics, tree
from .errors import (ConfigInvalid, DifftreeError, EmptyDocument, MissingArtifact, MissingProfile,
                     StageFailure)

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "DIFFTREE_OUTPUT_DIR"
MANIFEST = "manifest.json"
STAGES = ("parse", "topics", "classify", "stages", "trees", "forecast", "qstat", "report")
DEPENDS = {
    "parse": (),
    "topics": ("parse",),
    "classify": ("topics",),
    "stages": ("classify",),
    "trees": ("classify", "stages"),
    "forecast": ("classify",),
    "qstat": ("classify",),
    "report": (),
}
DATA_DIR = Path(__file__).parent / "data"

_PATH_FIELDS = ("corpus", "stopwords", "gazetteer", "label_map", "taxonomy", "profiles")


@dataclass(frozen=True)
class PipelineConfig:
    corpus: Path
    label_map: Path
    taxonomy: Path
    profiles: Path
    stopwords: Path = DATA_DIR / "stopwords.txt"
    gazetteer: Path = DATA_DIR / "gazetteer.tsv"
    output_dir: Path = Path("difftree-out")
    seed: int = 0
    min_year: int = 2010
    max_year: int = 2020
    discipline_k: tuple = (5,)
    direction_k: tuple = (30,)
    alpha: Optional[float] = None
    beta: float = 0.01
    iterations: int = 1000
    restarts: int = 1
    selection_tolerance: float = 0.02
    stage_threshold: int = 3
    cv_folds: int = 10
    cv_repeats: int = 100
    horizon_year: int = 2030
    q_permutations: int = 999
    q_log1p: bool = False
    q_exclude: tuple = ()

    def params(self) -> dict:
        d = asdict(self)
        for k in _PATH_FIELDS + ("output_dir",):
            d.pop(k)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


_INT_PARAMS = {"seed", "min_year", "max_year", "iterations", "restarts", "stage_threshold", "cv_folds",
               "cv_repeats", "horizon_year", "q_permutations"}
_FLOAT_PARAMS = {"beta", "selection_tolerance"}
_LIST_INT_PARAMS = {"discipline_k", "direction_k"}


def _parse_bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_config(path, overrides: Optional[dict] = None, output_dir=None) -> PipelineConfig:
    """Read an INI-style config; relative input paths resolve against the config file.

    ``overrides`` maps ``section.key`` (or bare ``key``) to string values and
    wins over the file. The output directory is, in priority order: the
    ``output_dir`` argument, the environment override, the config file.
    """
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None)
    if not path.is_file():
        raise ConfigInvalid({"config": f"file not found: {path}"})
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigInvalid({"config": str(exc)}) from None
    flat = {}
    for section in cp.sections():
        for key, value in cp[section].items():
            flat[key] = value
    for key, value in (overrides or {}).items():
        flat[key.split(".")[-1]] = value
    base = path.parent

    errors = {}
    kwargs = {}
    for key in _PATH_FIELDS:
        if key in flat:
            p = Path(flat.pop(key))
            kwargs[key] = p if p.is_absolute() else base / p
        elif key not in ("stopwords", "gazetteer"):
            errors[f"inputs.{key}"] = "required"
    out = output_dir or os.environ.get(OUTPUT_DIR_ENV) or flat.get("directory")
    flat.pop("directory", None)
    if out is not None:
        kwargs["output_dir"] = Path(out)
    if "seed" not in flat:
        errors["parameters.seed"] = "required (no implicit nondeterminism)"
    for key, raw in flat.items():
        try:
            if key in _INT_PARAMS:
                kwargs[key] = int(raw)
            elif key in _FLOAT_PARAMS:
                kwargs[key] = float(raw)
            elif key == "alpha":
                kwargs[key] = None if raw.strip().lower() in ("", "auto") else float(raw)
            elif key in _LIST_INT_PARAMS:
                kwargs[key] = tuple(int(v) for v in raw.replace(",", " ").split())
            elif key == "q_log1p":
                kwargs[key] = _parse_bool(raw)
            elif key == "q_exclude":
                kwargs[key] = tuple(v.strip() for v in raw.split(",") if v.strip())
            else:
                errors[key] = "unknown setting"
        except ValueError as exc:
            errors[key] = str(exc)
    if errors:
        raise ConfigInvalid(errors)
    cfg = PipelineConfig(**kwargs)
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    errors = {}
    for key in _PATH_FIELDS:
        p = getattr(cfg, key)
        if not Path(p).is_file():
            errors[f"inputs.{key}"] = f"file not found: {p}"
    if cfg.min_year > cfg.max_year:
        errors["parameters.min_year"] = f"min_year {cfg.min_year} > max_year {cfg.max_year}"
    for key in ("discipline_k", "direction_k"):
        ks = getattr(cfg, key)
        if not ks or any(k < 2 for k in ks) or list(ks) != sorted(set(ks)):
            errors[f"parameters.{key}"] = "need ascending topic counts, each >= 2"
    if cfg.alpha is not None and cfg.alpha <= 0:
        errors["parameters.alpha"] = "must be positive"
    if cfg.beta <= 0:
        errors["parameters.beta"] = "must be positive"
    if cfg.iterations < 1:
        errors["parameters.iterations"] = "must be >= 1"
    if cfg.restarts < 1:
        errors["parameters.restarts"] = "must be >= 1"
    if cfg.cv_folds < 2 or cfg.cv_repeats < 1:
        errors["parameters.cv_folds"] = "need folds >= 2 and repeats >= 1"
    if cfg.horizon_year <= cfg.max_year:
        errors["parameters.horizon_year"] = "must be after max_year"
    if cfg.q_permutations < 99:
        errors["parameters.q_permutations"] = "must be >= 99"
    if errors:
        raise ConfigInvalid(errors)


# ---------------------------------------------------------------------------
# digests and manifest


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_file(path) -> str:
    return digest_bytes(Path(path).read_bytes())


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()


def config_digest(cfg: PipelineConfig) -> str:
    inputs = {k: digest_file(getattr(cfg, k)) for k in _PATH_FIELDS}
    return digest_bytes(_canonical({"params": cfg.params(), "inputs": inputs}))


@dataclass
class RunManifest:
    config_digest: str
    version: str = __version__
    stages: dict = field(default_factory=dict)  # name -> entry dict
    order: list = field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(d["config_digest"], d.get("version", ""), d.get("stages", {}), d.get("order", []),
                   d.get("started_at", ""), d.get("finished_at", ""))

    def output_digests(self) -> dict:
        return {name: entry.get("outputs", {}) for name, entry in self.stages.items()}

    def ran(self, stage: str) -> bool:
        return self.stages.get(stage, {}).get("status") in ("ran", "skipped")


def load_manifest(out_dir) -> Optional[RunManifest]:
    p = Path(out_dir) / MANIFEST
    if not p.is_file():
        return None
    return RunManifest.from_dict(json.loads(p.read_text(encoding="utf-8")))


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out_dir: Path, manifest: RunManifest) -> None:
    tmp = out_dir / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(out_dir / MANIFEST)


# ---------------------------------------------------------------------------
# stage context


class Context:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.written: list[str] = []

    def path(self, name: str) -> Path:
        return self.out / name

    def write(self, name: str, text: str) -> None:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
        self.written.append(name)

    def write_json(self, name: str, obj) -> None:
        self.write(name, json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")

    def read(self, name: str) -> str:
        p = self.path(name)
        if not p.is_file():
            raise MissingArtifact(f"missing artifact {name}")
        return p.read_text(encoding="utf-8")

    def read_json(self, name: str):
        return json.loads(self.read(name))

    def corpus(self) -> corpus_mod.Corpus:
        return corpus_mod.read_jsonl(io.StringIO(self.read("corpus.jsonl")))

    def labels(self) -> list[dict]:
        rows = list(csv.DictReader(io.StringIO(self.read("labels.csv"))))
        for r in rows:
            r["year"] = int(r["year"])
            r["topic"] = int(r["topic"])
        return rows

    def taxonomy(self) -> topics.Taxonomy:
        return topics.Taxonomy.load(self.cfg.taxonomy)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# stages


def stage_parse(ctx: Context) -> None:
    cfg = ctx.cfg
    raw = corpus_mod.read_wos_file(cfg.corpus)
    deduped, report = corpus_mod.deduplicate(raw)
    kept = corpus_mod.filter_year_window(deduped, cfg.min_year, cfg.max_year)
    gaz = corpus_mod.load_gazetteer(cfg.gazetteer)
    points = [(r.record_id, corpus_mod.geocode_record(r, gaz)) for r in kept.records]

    buf = io.StringIO()
    corpus_mod.write_jsonl(kept, buf)
    ctx.write("corpus.jsonl", buf.getvalue())
    ctx.write("corpus.csv", corpus_mod.corpus_to_csv(kept))
    ctx.write("geocodes.csv", _csv_text(
        ["record_id", "country", "latitude", "longitude", "resolved"],
        [(rid, p.country, "" if p.latitude is None else p.latitude,
          "" if p.longitude is None else p.longitude, int(p.resolved)) for rid, p in points]))
    ctx.write_json("parse_report.json", {
        "source": raw.source_label,
        "parsed": len(raw),
        "parse_warnings": list(raw.warnings),
        "after_dedup": report.kept,
        "duplicates_removed": report.removed,
        "after_year_filter": len(kept),
        "year_window": [cfg.min_year, cfg.max_year],
        "excluded_by_year": report.kept - len(kept),
        "geocoded": sum(p.resolved for _, p in points),
        "unresolved": sum(not p.resolved for _, p in points),
    })


def _topic_pass(name, docs, candidates, vocab_size, cfg):
    if len(candidates) == 1:
        chosen, ks, perps = candidates[0], list(candidates), []
    else:
        sel = topics.select_topic_count(docs, candidates, cfg.selection_tolerance, cfg.seed,
                                        alpha=cfg.alpha, beta=cfg.beta, iterations=cfg.iterations,
                                        vocab_size=vocab_size, restarts=cfg.restarts,
                                        return_details=True)
        chosen, ks, perps = sel.chosen, list(sel.candidates), list(sel.perplexities)
    model = topics.fit_lda(docs, chosen, cfg.alpha, cfg.beta, cfg.iterations, cfg.seed,
                           vocab_size=vocab_size, restarts=cfg.restarts)
    info = {"name": name, "candidates": list(candidates), "evaluated": ks,
            "perplexities": perps, "chosen_k": chosen, "alpha": model.alpha, "beta": model.beta}
    return model, info


def stage_topics(ctx: Context) -> None:
    cfg = ctx.cfg
    stop = topics.load_stopwords(cfg.stopwords)
    vocab = topics.Vocabulary()
    docs, dropped = [], []
    for rec in ctx.corpus():
        try:
            docs.append(topics.preprocess(rec, stop, vocab))
        except EmptyDocument:
            dropped.append(rec.record_id)
    passes = []
    for name, candidates in (("discipline", cfg.discipline_k), ("direction", cfg.direction_k)):
        model, info = _topic_pass(name, docs, list(candidates), len(vocab), cfg)
        topics.save_model(model, ctx.path(f"model_{name}.txt"), vocab)
        ctx.written.append(f"model_{name}.txt")
        info["top_words"] = model.top_words(vocab, 8)
        passes.append(info)
    ctx.write_json("topics.json", {"documents": len(docs), "vocabulary": len(vocab),
                                   "dropped_empty": dropped, "passes": passes})


def stage_classify(ctx: Context) -> None:
    model, _ = topics.load_model(ctx.path("model_direction.txt"))
    taxonomy = ctx.taxonomy()
    label_map = topics.LabelMap.load(ctx.cfg.label_map)
    label_map.validate(taxonomy, model.K)
    years = {r.record_id: r.year for r in ctx.corpus()}
    assigned = [(doc_id, topics.dominant_topic(model, i)) for i, doc_id in enumerate(model.doc_ids)]
    rows = topics.apply_label_map(assigned, label_map, taxonomy)
    ctx.write("labels.csv", _csv_text(
        ["doc_id", "year", "topic", "direction", "discipline"],
        [(doc_id, years[doc_id], topic, direction, discipline)
         for (doc_id, topic), (_, direction, discipline) in zip(assigned, rows)]))


def _labeled_rows(ctx):
    return [(r["doc_id"], r["direction"], r["discipline"], r["year"]) for r in ctx.labels()]


def stage_stages(ctx: Context) -> None:
    cfg = ctx.cfg
    labeled = _labeled_rows(ctx)
    series = diffusion.compute_diffusion_series([(d, k, y) for d, k, _, y in labeled],
                                                (cfg.min_year, cfg.max_year))
    timeline = diffusion.classify_stage_timeline(series, cfg.stage_threshold)
    ctx.write("diffusion_series.csv", diffusion.series_to_csv(series))
    ctx.write("stage_timeline.csv", diffusion.timeline_to_csv(timeline))

    blocks = timeline.blocks()
    per_block = Counter()
    for _, _, discipline, year in labeled:
        for i, (_, lo, hi) in enumerate(blocks):
            if lo <= year <= hi:
                per_block[discipline, i] += 1
    disciplines = sorted({d for _, _, d, _ in labeled})
    flags = diffusion.PatternFlags()
    if len(blocks) >= 2:
        flags = diffusion.detect_decay_patterns(
            (d, [per_block[d, i] for i in range(len(blocks))]) for d in disciplines)
    rates = sorted(c for s in series for c in s.counts.values())
    ctx.write_json("stages.json", {
        "threshold": cfg.stage_threshold,
        "boundaries": {s.label: y for s, y in timeline.boundaries.items()},
        "periods": [{"stage": s.label, "from": lo, "to": hi} for s, lo, hi in blocks],
        "warnings": list(timeline.warnings),
        "rate_summary": ({"min": rates[0], "median": rates[len(rates) // 2], "max": rates[-1]}
                         if rates else {}),
        "senescence": [list(x) for x in flags.senescence_at],
        "moth_decay": [[b, list(t)] for b, t in flags.moth_decay_at],
    })


def _period_label(lo, hi):
    return str(lo) if lo == hi else f"{lo}-{hi}"


def _country_counts(ctx, doc_ids):
    counts = Counter()
    for row in csv.DictReader(io.StringIO(ctx.read("geocodes.csv"))):
        if row["record_id"] in doc_ids and row["resolved"] == "1":
            counts[row["country"]] += 1
    return counts


def stage_trees(ctx: Context) -> None:
    labeled = _labeled_rows(ctx)
    timeline = diffusion.timeline_from_csv(ctx.read("stage_timeline.csv"))
    order = ctx.taxonomy().disciplines
    first_years = {}
    for _, _, discipline, year in labeled:
        first_years[discipline] = min(year, first_years.get(discipline, year))

    summary = {}

    def emit(name, t):
        ctx.write(f"trees/{name}.json", tree.serialize_tree(t, "JSON"))
        ctx.write(f"trees/{name}.dot", tree.serialize_tree(t, "DOT"))
        summary[name] = {"kind": t.kind.value, "root": t.root_label, **t.counts()}

    # Budding years form one period; later years get a tree each
    periods = []
    for stage, lo, hi in timeline.blocks():
        if stage == diffusion.Stage.BUDDING:
            periods.append((lo, hi))
        else:
            periods += [(y, y) for y in range(lo, hi + 1)]
    for lo, hi in periods:
        t = tree.build_discipline_direction_tree(labeled, (lo, hi), order, first_years)
        emit(f"dd_{_period_label(lo, hi)}", t)
    emit("knowledge", tree.build_knowledge_evolution_tree(labeled, timeline, order))
    profiles = tree.load_profiles(ctx.cfg.profiles)
    counts = _country_counts(ctx, {d for d, _, _, _ in labeled})
    emit("factor", tree.build_factor_tree(counts, profiles))
    ctx.write_json("trees.json", summary)


def stage_forecast(ctx: Context) -> None:
    cfg = ctx.cfg
    labeled = _labeled_rows(ctx)
    series = diffusion.compute_diffusion_series([(d, k, y) for d, k, _, y in labeled],
                                                (cfg.min_year, cfg.max_year))
    discipline_of = {k: disc for _, k, disc, _ in labeled}
    rows = forecast.as_rows(series, discipline_of)
    reports = [forecast.cross_validate(rows, m, cfg.cv_folds, cfg.cv_repeats, cfg.seed)
               for m in forecast.MODELS]
    ctx.write("cv.csv", forecast.cv_reports_to_csv(reports))
    ctx.write_json("cv.json", [r.to_dict() for r in reports])

    fits = forecast.fit_lr2(series, origin=cfg.min_year)
    pooled = forecast.fit_lr1(series, origin=cfg.min_year)
    mixed = forecast.fit_mixed([(r.year, r.count, r.discipline) for r in rows], origin=cfg.min_year)
    ctx.write("lr2_fits.csv", forecast.fits_to_csv(fits))
    mlm = {k: v for k, v in asdict(mixed).items() if k != "loglik_trace"}
    if not math.isfinite(mlm["loglik"]):
        mlm["loglik"] = None  # exact fit: the likelihood is unbounded
    ctx.write_json("models.json", {"LR1": asdict(pooled), "MLM": mlm})
    table = forecast.forecast_cumulative(fits, forecast.last_observed_from_series(series), cfg.horizon_year)
    ctx.write("forecast.csv", forecast.forecast_to_csv(table))
    ctx.write("forecast.json", forecast.forecast_to_json(table))


def stage_qstat(ctx: Context) -> None:
    cfg = ctx.cfg
    labeled = _labeled_rows(ctx)
    counts = _country_counts(ctx, {d for d, _, _, _ in labeled})
    profiles = {p.country: p for p in tree.load_profiles(cfg.profiles)}
    missing = sorted(c for c in counts if c not in profiles)
    if missing:
        raise MissingProfile(missing[0])
    results = []
    variants = [("all", ())]
    if cfg.q_exclude:
        variants.append(("excluding " + ", ".join(cfg.q_exclude), cfg.q_exclude))
    for variant, excluded in variants:
        countries = sorted(c for c in counts if c not in excluded)
        values = [counts[c] for c in countries]
        if cfg.q_log1p:
            values = [math.log1p(v) for v in values]
        for factor, stratum_of in (("dev_stage", lambda p: p.dev_stage),
                                   ("income_type", lambda p: p.income_type.label)):
            sample = qstat.StratifiedSample(values, [stratum_of(profiles[c]) for c in countries])
            entry = {"factor": factor, "variant": variant, "n": sample.N, "strata": sample.L}
            try:
                res = qstat.q_permutation_test(sample, cfg.q_permutations, cfg.seed)
                entry.update(q=res.q, ssw=res.ssw, sst=res.sst, p_value=res.p_value,
                             permutations=res.permutations, seed=res.seed)
            except (DifftreeError, ValueError) as exc:
                entry.update(error=str(exc))
            results.append(entry)
    ctx.write_json("qstat.json", results)
    ctx.write("qstat.csv", _csv_text(
        ["factor", "variant", "n", "strata", "q", "ssw", "sst", "p_value", "permutations", "seed"],
        [[r.get(k, "") for k in ("factor", "variant", "n", "strata", "q", "ssw", "sst", "p_value",
                                 "permutations", "seed")] for r in results]))


STAGE_FUNCS: dict[str, Callable[[Context], None]] = {
    "parse": stage_parse,
    "topics": stage_topics,
    "classify": stage_classify,
    "stages": stage_stages,
    "trees": stage_trees,
    "forecast": stage_forecast,
    "qstat": stage_qstat,
}

# which config fields each stage reads; changes elsewhere never invalidate it
STAGE_PARAMS = {
    "parse": ("min_year", "max_year"),
    "topics": ("seed", "discipline_k", "direction_k", "alpha", "beta", "iterations", "restarts",
               "selection_tolerance"),
    "classify": (),
    "stages": ("min_year", "max_year", "stage_threshold"),
    "trees": (),
    "forecast": ("seed", "min_year", "max_year", "cv_folds", "cv_repeats", "horizon_year"),
    "qstat": ("seed", "q_permutations", "q_log1p", "q_exclude"),
    "report": (),
}
STAGE_FILES = {
    "parse": ("corpus", "gazetteer"),
    "topics": ("stopwords",),
    "classify": ("label_map", "taxonomy"),
    "stages": (),
    "trees": ("taxonomy", "profiles"),
    "forecast": (),
    "qstat": ("profiles",),
    "report": (),
}


# ---------------------------------------------------------------------------
# report

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "config_digest", "corpus", "topics", "stages", "trees", "forecast", "qstat"],
    "properties": {
        "version": {"type": "string"},
        "config_digest": {"type": "string"},
        "corpus": {"oneOf": [
            {"$ref": "#/$defs/not_run"},
            {"type": "object", "required": ["status", "parsed", "after_dedup", "after_year_filter"],
             "properties": {"status": {"const": "ok"}, "parsed": {"type": "integer"},
                            "after_dedup": {"type": "integer"}, "after_year_filter": {"type": "integer"}}}]},
        "topics": {"oneOf": [
            {"$ref": "#/$defs/not_run"},
            {"type": "object", "required": ["status", "passes"],
             "properties": {"status": {"const": "ok"}, "passes": {"type": "array", "items": {
                 "type": "object", "required": ["name", "chosen_k"],
                 "properties": {"name": {"type": "string"}, "chosen_k": {"type": "integer", "minimum": 2}}}}}}]},
        "stages": {"oneOf": [
            {"$ref": "#/$defs/not_run"},
            {"type": "object", "required": ["status", "timeline"],
             "properties": {"status": {"const": "ok"}, "timeline": {"type": "array", "items": {
                 "type": "object", "required": ["year", "stage"],
                 "properties": {"year": {"type": "integer"},
                                "stage": {"enum": ["Budding", "Growing", "Mature"]}}}}}}]},
        "trees": {"oneOf": [
            {"$ref": "#/$defs/not_run"},
            {"type": "object", "required": ["status", "trees"],
             "properties": {"status": {"const": "ok"}, "trees": {"type": "object", "additionalProperties": {
                 "type": "object", "required": ["branches", "twigs", "leaves", "total_size"]}}}}]},
        "forecast": {"oneOf": [
            {"$ref": "#/$defs/not_run"},
            {"type": "object", "required": ["status", "cv", "forecast_head"],
             "properties": {"status": {"const": "ok"}, "cv": {"type": "array", "items": {
                 "type": "object", "required": ["model", "train", "test"],
                 "properties": {"model": {"enum": ["LR1", "LR2", "MLM"]},
                                "train": {"$ref": "#/$defs/metrics"}, "test": {"$ref": "#/$defs/metrics"}}}},
                            "forecast_head": {"type": "array"}}}]},
        "qstat": {"oneOf": [
            {"$ref": "#/$defs/not_run"},
            {"type": "object", "required": ["status", "results"],
             "properties": {"status": {"const": "ok"}, "results": {"type": "array"}}}]},
    },
    "$defs": {
        "not_run": {"type": "object", "required": ["status"], "properties": {"status": {"const": "not run"}},
                    "additionalProperties": False},
        "metrics": {"type": "object", "required": ["r2", "rmsfe", "mafe"],
                    "properties": {"r2": {"type": "number"}, "rmsfe": {"type": "number", "minimum": 0},
                                   "mafe": {"type": "number", "minimum": 0}}},
    },
}

NOT_RUN = {"status": "not run"}


def validate_report(report: dict) -> None:
    import jsonschema
    jsonschema.validate(report, REPORT_SCHEMA)


def build_report(manifest: RunManifest, out_dir) -> dict:
    ctx = Context.__new__(Context)
    ctx.out = Path(out_dir)

    def section(stage, fn):
        if not manifest.ran(stage):
            return dict(NOT_RUN)
        for name in manifest.stages[stage].get("outputs", {}):
            if not ctx.path(name).is_file():
                raise MissingArtifact(f"stage {stage!r} artifact {name} is missing from {out_dir}")
        return {"status": "ok", **fn()}

    def corpus_section():
        return ctx.read_json("parse_report.json")

    def topics_section():
        data = ctx.read_json("topics.json")
        return {"documents": data["documents"], "vocabulary": data["vocabulary"],
                "passes": [{k: p[k] for k in ("name", "candidates", "evaluated", "perplexities", "chosen_k")}
                           for p in data["passes"]]}

    def stages_section():
        tl = diffusion.timeline_from_csv(ctx.read("stage_timeline.csv"))
        info = ctx.read_json("stages.json")
        return {"timeline": [{"year": y, "stage": tl.stages[y].label} for y in tl.years],
                "periods": info["periods"], "warnings": info["warnings"],
                "rate_summary": info["rate_summary"],
                "senescence": info["senescence"], "moth_decay": info["moth_decay"]}

    def trees_section():
        return {"trees": ctx.read_json("trees.json")}

    def forecast_section():
        cv = ctx.read_json("cv.json")
        rows = list(csv.DictReader(io.StringIO(ctx.read("forecast.csv"))))
        last = {}
        for r in rows:
            last[r["direction"]] = r
        head = [{"direction": d, "year": int(r["year"]),
                 "predicted_cumulative": float(r["predicted_cumulative"])} for d, r in sorted(last.items())]
        return {"cv": [{"model": r["model_name"], "train": r["train"], "test": r["test"],
                        "folds": r["folds"], "repeats": r["repeats"], "n_fits": r["n_fits"]} for r in cv],
                "forecast_head": head}

    def qstat_section():
        return {"results": ctx.read_json("qstat.json")}

    report = {
        "version": manifest.version,
        "config_digest": manifest.config_digest,
        "corpus": section("parse", corpus_section),
        "topics": section("topics", topics_section),
        "stages": section("stages", stages_section),
        "trees": section("trees", trees_section),
        "forecast": section("forecast", forecast_section),
        "qstat": section("qstat", qstat_section),
    }
    validate_report(report)
    return report


def _fmt(x, nd=3):
    return f"{x:.{nd}f}" if isinstance(x, float) else str(x)


def render_report_text(report: dict) -> str:
    out = [f"difftree report (version {report['version']}, config {report['config_digest'][:12]})", ""]

    def header(title):
        out.extend([title, "-" * len(title)])

    c = report["corpus"]
    header("Corpus")
    if c["status"] == "ok":
        out.append(f"parsed {c['parsed']}, after dedup {c['after_dedup']} "
                   f"({c['duplicates_removed']} removed), in {c['year_window'][0]}-{c['year_window'][1]}: "
                   f"{c['after_year_filter']}; geocoded {c['geocoded']}, unresolved {c['unresolved']}")
    else:
        out.append("not run")
    out.append("")

    t = report["topics"]
    header("Topics")
    if t["status"] == "ok":
        for p in t["passes"]:
            perps = ", ".join(f"K={k}: {v:.2f}" for k, v in zip(p["evaluated"], p["perplexities"]))
            out.append(f"{p['name']} pass: chosen K = {p['chosen_k']}" + (f" ({perps})" if perps else ""))
    else:
        out.append("not run")
    out.append("")

    s = report["stages"]
    header("Diffusion stages")
    if s["status"] == "ok":
        for p in s["periods"]:
            out.append(f"{p['stage']:8s} {_period_label(p['from'], p['to'])}")
        for w in s["warnings"]:
            out.append(f"warning: {w}")
        if s["senescence"]:
            out.append("senescence: " + ", ".join(f"{b} (period {p})" for b, p in s["senescence"]))
        if s["moth_decay"]:
            out.append("moth decay: " + ", ".join(f"{b} {tuple(p)}" for b, p in s["moth_decay"]))
    else:
        out.append("not run")
    out.append("")

    tr = report["trees"]
    header("Evolution trees")
    if tr["status"] == "ok":
        for name, info in tr["trees"].items():
            out.append(f"{name:16s} branches {info['branches']:3d}  twigs {info['twigs']:3d}  "
                       f"leaves {info['leaves']:4d}  total {info['total_size']}")
    else:
        out.append("not run")
    out.append("")

    f = report["forecast"]
    header("Cross-validation and forecast")
    if f["status"] == "ok":
        out.append(f"{'model':5s} {'train R2':>9s} {'test R2':>9s} {'RMSFE':>8s} {'MAFE':>8s}")
        for row in f["cv"]:
            out.append(f"{row['model']:5s} {row['train']['r2']:9.3f} {row['test']['r2']:9.3f} "
                       f"{row['test']['rmsfe']:8.3f} {row['test']['mafe']:8.3f}")
        for row in f["forecast_head"]:
            out.append(f"  {row['direction']}: {row['predicted_cumulative']:.1f} cumulative by {row['year']}")
    else:
        out.append("not run")
    out.append("")

    q = report["qstat"]
    header("q-statistic")
    if q["status"] == "ok":
        for r in q["results"]:
            if "error" in r:
                out.append(f"{r['factor']} ({r['variant']}): {r['error']}")
            else:
                out.append(f"{r['factor']} ({r['variant']}): q = {r['q']:.3f}, p = {r['p_value']:.4f} "
                           f"(n = {r['n']}, {r['permutations']} permutations)")
    else:
        out.append("not run")
    return "\n".join(out) + "\n"


def emit_report(manifest: RunManifest, out_dir) -> tuple[str, dict]:
    report = build_report(manifest, out_dir)
    text = render_report_text(report)
    out_dir = Path(out_dir)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    return text, report


# ---------------------------------------------------------------------------
# orchestration


def schedule(requested) -> list[str]:
    """Requested stages plus their prerequisites, in pipeline order."""
    requested = set(requested)
    unknown = requested - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stage(s): {sorted(unknown)}")
    needed = set()
    stack = list(requested)
    while stack:
        s = stack.pop()
        if s not in needed:
            needed.add(s)
            stack.extend(DEPENDS[s])
    return [s for s in STAGES if s in needed]


def _downstream(stage: str) -> set[str]:
    out = set()
    for s in STAGES:
        if stage in DEPENDS[s] or any(d in out for d in DEPENDS[s]):
            out.add(s)
    return out


def run_pipeline(cfg: PipelineConfig, stages=STAGES) -> RunManifest:
    """Run ``stages`` (and whatever they need), reusing unchanged artifacts."""
    validate_config(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    previous = load_manifest(out)
    plan = schedule(stages)
    cdigest = config_digest(cfg)
    manifest = RunManifest(cdigest, started_at=_now())
    if previous is not None:
        # keep entries for stages outside this run so the report can still see them
        manifest.stages = {k: v for k, v in previous.stages.items() if k not in plan and k != "report"}
    params = cfg.params()
    for name in plan:
        if name == "report":
            inputs = {f"{s}/{p}": d for s, e in sorted(manifest.stages.items())
                      for p, d in sorted(e.get("outputs", {}).items())}
            key_material = {"stage": name, "version": __version__, "inputs": inputs,
                            "config": cdigest}
        else:
            inputs = {f"file:{k}": digest_file(getattr(cfg, k)) for k in STAGE_FILES[name]}
            for dep in DEPENDS[name]:
                for p, d in sorted(manifest.stages[dep]["outputs"].items()):
                    inputs[f"{dep}/{p}"] = d
            key_material = {"stage": name, "version": __version__, "inputs": inputs,
                            "params": {k: params[k] for k in STAGE_PARAMS[name]}}
        key = digest_bytes(_canonical(key_material))
        prev = previous.stages.get(name) if previous is not None else None
        if prev is not None and prev.get("key") == key and prev.get("status") in ("ran", "skipped") \
                and all((out / p).is_file() and digest_file(out / p) == d for p, d in prev["outputs"].items()):
            manifest.stages[name] = {**prev, "status": "skipped"}
            manifest.order.append(name)
            logger.info("stage %s unchanged, skipped", name)
            continue

        ctx = Context(cfg)
        try:
            logger.info("running stage %s", name)
            if name == "report":
                emit_report(manifest, out)
                ctx.written = ["report.json", "report.txt"]
            else:
                STAGE_FUNCS[name](ctx)
        except Exception as exc:
            manifest.stages[name] = {"status": "failed", "key": key, "inputs": inputs, "outputs": {},
                                     "error": f"{exc.__class__.__name__}: {exc}"}
            manifest.order.append(name)
            manifest.finished_at = _now()
            _write_manifest(out, manifest)
            raise StageFailure(name, exc) from exc
        outputs = {p: digest_file(out / p) for p in sorted(set(ctx.written))}
        manifest.stages[name] = {"status": "ran", "key": key, "inputs": inputs, "outputs": outputs}
        manifest.order.append(name)
        # downstream results not rerun in this invocation are now stale
        for stale in _downstream(name) - set(plan):
            manifest.stages.pop(stale, None)
    manifest.finished_at = _now()
    _write_manifest(out, manifest)
    return manifest
