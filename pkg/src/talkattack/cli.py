"""Pipeline driver: one subcommand per stage, all state passed through files."""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
import zlib
from dataclasses import asdict
from datetime import timedelta
from typing import Any, Callable

import numpy as np
import scipy

from . import __version__
from .analytics import (ACTIVITY_BUCKETS, TOXICITY_BUCKETS, ScoredComment, ScoreStats,
                        activity_histogram, diff_of_means_test, iter_scored,
                        moderation_conditional_curves, moderation_followup,
                        neighboring_attack_fraction, prevalence_by_group, toxicity_concentration)
from .corpus import (FilterRules, FilterStats, extract_corpus, iter_filter, read_comments,
                     read_events, read_jsonl, read_revisions, write_jsonl)
from .evaluation import (EnsembleBaselineConfig, UndefinedMetric, auc, ensemble_baseline, equal_error_threshold,
                         spearman)
from .features import FeatureSpec, build_vocab, vectorize_batch
from .labels import (LabelDistribution, aggregate_labels, clean_annotations, gate_workers,
                     ingest_annotations, krippendorff_alpha, read_gold, split_dataset,
                     units_from_records, write_annotations)
from .model import (DEFAULT_GRID, Hyperparameters, LabeledTexts, SearchSpace, label_targets,
                    load_model, random_search, save_model, train)

STAGES = ("extract", "filter", "ingest", "aggregate", "split", "train", "tune", "evaluate",
          "baseline", "calibrate", "score", "analyze")

# artifact -> stage that writes it
PRODUCERS = {
    "comments.jsonl": "extract",
    "comments.filtered.jsonl": "filter",
    "annotations.clean.csv": "ingest",
    "labels.jsonl": "aggregate",
    "split.jsonl": "split",
    "model.json": "tune",
    "threshold.json": "calibrate",
    "scored.jsonl": "score",
}

DEFAULTS = """\
[paths]
# relative paths resolve against the config file's directory
revisions = revisions.jsonl
annotations = annotations.csv
gold =
moderation = moderation.jsonl
bot_rules =
admin_rules =
labeled_comments =
out = out

[run]
seed = 0

[corpus]
token_unit = word
min_match = 2
block_sample_k = 5

[labels]
min_accuracy = 0.7
alpha_on = cleaned

[features]
ngram_kind = char
n_min = 1
n_max = 5
max_features = 30000
weighting = count
lowercase = true
normalize = false

[model]
kind = LR
label_type = ED
learning_rate = 0.1
l2 = 1e-5
epochs = 5
batch_size = 32
hidden = 64

[tune]
kinds = LR, MLP
ngram_kinds = word, char
label_types = OH, ED
objective = AUC
n_iter = 15

[evaluate]
splits = dev, test

[baseline]
n_t = 10
n_p_values = 1, 3, 5, 7, 9, 10
runs = 25

[calibrate]
splits = dev, test

[score]
threads = 1

[analyze]
year = 2015
bootstrap_b = 1000
level = 0.95
window_days = 7
naf_n = 1, 3, 5
ngram = thank
activity_buckets = 1-5, 6-20, 21-100, 101-
toxicity_buckets = 1-1, 2-4, 5-20, 21-
"""


class PipelineError(Exception):
    kind = "PipelineError"

    def __init__(self, message: str, **extra: Any) -> None:
        super().__init__(message)
        self.extra = extra


class ConfigError(PipelineError):
    kind = "ConfigError"


class DependencyError(PipelineError):
    kind = "DependencyError"


# --------------------------------------------------------------------------
# config helpers


def _list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _scalar(v: str):
    low = v.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def _hidden(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(v).lower().split("x"))


def _buckets(value: str) -> list[tuple[int, float]]:
    out = []
    for part in _list(value):
        lo, _, hi = part.partition("-")
        out.append((int(lo), float(hi) if hi else math.inf))
    return out


class Pipeline:
    def __init__(self, config_path: str, out: str | None = None, seed: int | None = None,
                 threads: int | None = None) -> None:
        self.cfg = configparser.ConfigParser(interpolation=None)
        self.cfg.read_string(DEFAULTS)
        if not os.path.exists(config_path):
            raise ConfigError(f"config file {config_path} does not exist", key="--config")
        with open(config_path, encoding="utf-8") as fh:
            self.cfg.read_file(fh)
        self.base = os.path.dirname(os.path.abspath(config_path))
        self.out = os.path.abspath(out) if out else self.path("out", required=True)
        os.makedirs(self.out, exist_ok=True)
        self.seed = seed if seed is not None else self.getint("run", "seed")
        self.threads = threads if threads is not None else self.getint("score", "threads")
        self._inputs: dict[str, str] = {}
        self._outputs: dict[str, str] = {}
        self._seeds: dict[str, int] = {}

    # -- config access
    def get(self, section: str, key: str) -> str:
        try:
            return self.cfg.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError):
            raise ConfigError(f"missing configuration key [{section}] {key}", key=f"{section}.{key}")

    def getint(self, section: str, key: str) -> int:
        try:
            return int(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer", key=f"{section}.{key}")

    def getfloat(self, section: str, key: str) -> float:
        try:
            return float(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number", key=f"{section}.{key}")

    def path(self, key: str, required: bool = True) -> str | None:
        value = self.get("paths", key).strip()
        if not value:
            if required:
                raise ConfigError(f"missing configuration key [paths] {key}", key=f"paths.{key}")
            return None
        return value if os.path.isabs(value) else os.path.join(self.base, value)

    def input_path(self, key: str, required: bool = True) -> str | None:
        p = self.path(key, required)
        if p is not None and not os.path.exists(p):
            raise ConfigError(f"input file for [paths] {key} not found: {p}", key=f"paths.{key}")
        if p is not None:
            self._inputs[key] = p
        return p

    def artifact(self, name: str) -> str:
        """Path of an upstream artifact; it must already exist."""
        p = os.path.join(self.out, name)
        if not os.path.exists(p):
            producer = PRODUCERS.get(name, "?")
            raise DependencyError(f"{name} not found in {self.out}; run `{producer}` first",
                                  missing=name, producer=producer)
        self._inputs[name] = p
        return p

    def output(self, name: str) -> str:
        p = os.path.join(self.out, name)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        self._outputs[name] = p
        return p

    def stage_seed(self, stage: str) -> int:
        s = int(np.random.SeedSequence([self.seed, zlib.crc32(stage.encode())]).generate_state(1)[0])
        self._seeds[stage] = s
        return s

    def feature_spec(self, kind: str | None = None) -> FeatureSpec:
        kind = kind or self.get("features", "ngram_kind")
        sec = "features"
        spec = FeatureSpec.default_for(kind)
        if kind == self.get("features", "ngram_kind"):
            spec = spec.with_(n_min=self.getint(sec, "n_min"), n_max=self.getint(sec, "n_max"))
        return spec.with_(max_features=self.getint(sec, "max_features"),
                          weighting=self.get(sec, "weighting"),
                          lowercase=self.cfg.getboolean(sec, "lowercase"),
                          normalize=self.cfg.getboolean(sec, "normalize"))

    # -- io helpers
    def write_json(self, name: str, obj: Any) -> str:
        p = self.output(name)
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default)
            fh.write("\n")
        return p

    def write_text(self, name: str, text: str) -> str:
        p = self.output(name)
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(text)
        return p

    def write_csv(self, name: str, header: list[str], rows: list[list]) -> str:
        p = self.output(name)
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        return p

    def write_manifest(self, stage: str, started: float) -> None:
        manifest = {
            "stage": stage,
            "master_seed": self.seed,
            "stage_seeds": self._seeds,
            "inputs": {k: {"path": v, "sha256": _sha256(v)} for k, v in sorted(self._inputs.items())},
            "outputs": {k: {"path": v, "sha256": _sha256(v)} for k, v in sorted(self._outputs.items())},
            "versions": {"talkattack": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "config": {s: dict(self.cfg[s]) for s in self.cfg.sections()},
            "wall_time_seconds": time.perf_counter() - started,
        }
        os.makedirs(os.path.join(self.out, "manifests"), exist_ok=True)
        with open(os.path.join(self.out, "manifests", f"{stage}.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    # -- shared loaders
    def labels(self) -> dict[str, LabelDistribution]:
        return {d["comment_id"]: LabelDistribution.from_dict(d) for d in read_jsonl(self.artifact("labels.jsonl"))}

    def split(self) -> dict[str, str]:
        return {d["comment_id"]: d["split"] for d in read_jsonl(self.artifact("split.jsonl"))}

    def texts(self) -> dict[str, str]:
        p = self.path("labeled_comments", required=False)
        if p is None:
            p = self.artifact("comments.filtered.jsonl")
        elif not os.path.exists(p):
            raise ConfigError(f"input file for [paths] labeled_comments not found: {p}",
                              key="paths.labeled_comments")
        else:
            self._inputs["labeled_comments"] = p
        return {d["comment_id"]: d["clean_text"] for d in read_jsonl(p)}

    def labeled_split(self, names: list[str]) -> tuple[list[str], LabeledTexts]:
        labels, split, texts = self.labels(), self.split(), self.texts()
        ids = [cid for cid in sorted(split) if split[cid] in names and cid in texts and cid in labels]
        return ids, LabeledTexts([texts[c] for c in ids],
                                 np.array([labels[c].attack_fraction for c in ids]))


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (set, tuple)):
        return sorted(o) if isinstance(o, set) else list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _finite(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return x


# --------------------------------------------------------------------------
# stages


def stage_extract(p: Pipeline) -> None:
    revs = read_revisions(p.input_path("revisions"))
    unit = p.get("corpus", "token_unit")
    comments = extract_corpus(revs, unit=unit, min_match=p.getint("corpus", "min_match"))
    write_jsonl(p.output("comments.jsonl"), (c.to_dict() for c in comments))


def stage_filter(p: Pipeline) -> None:
    rules = FilterRules.from_files(p.input_path("bot_rules", False), p.input_path("admin_rules", False))
    stats = FilterStats()
    kept = iter_filter(read_comments(p.artifact("comments.jsonl")), rules, stats)
    write_jsonl(p.output("comments.filtered.jsonl"), (c.to_dict() for c in kept))
    p.write_json("filter_stats.json", {"master_seed": p.seed, "per_namespace": stats.to_dict()})


def stage_ingest(p: Pipeline) -> None:
    res = ingest_annotations(p.input_path("annotations"))
    cleaned = clean_annotations(res.records)
    report: dict[str, Any] = {"master_seed": p.seed, "records": len(res.records), "errors": res.errors,
                              "warnings": res.warnings, "after_cleaning": len(cleaned)}
    gold_path = p.input_path("gold", required=False)
    if gold_path:
        gate = gate_workers(cleaned, read_gold(gold_path), p.getfloat("labels", "min_accuracy"))
        cleaned = [r for r in cleaned if r.worker_id in gate.retained]
        report["worker_accuracy"] = dict(sorted(gate.accuracy.items()))
        report["ungated_workers"] = sorted(gate.ungated)
        report["removed_workers"] = sorted(set(gate.accuracy) - gate.retained)
    report["after_gating"] = len(cleaned)
    write_annotations(p.output("annotations.clean.csv"), cleaned)
    p.write_json("ingest_report.json", report)


def stage_aggregate(p: Pipeline) -> None:
    res = ingest_annotations(p.artifact("annotations.clean.csv"))
    labels = aggregate_labels(res.records)
    write_jsonl(p.output("labels.jsonl"), (d.to_dict() for d in labels.values()))
    which = p.get("labels", "alpha_on")
    if which == "raw":
        records = ingest_annotations(p.input_path("annotations")).records
    elif which == "cleaned":
        records = res.records
    else:
        raise ConfigError("[labels] alpha_on must be 'cleaned' or 'raw'", key="labels.alpha_on")
    alpha = krippendorff_alpha(units_from_records(records))
    p.write_json("agreement.json", {"master_seed": p.seed, "krippendorff_alpha": _finite(alpha),
                                    "computed_on": which, "comments": len(labels)})


def stage_split(p: Pipeline) -> None:
    labels = p.labels()
    sa = split_dataset(labels, seed=p.stage_seed("split"))
    write_jsonl(p.output("split.jsonl"), ({"comment_id": c, "split": s} for c, s in sa.assignment.items()))


def stage_train(p: Pipeline) -> None:
    _, tr = p.labeled_split(["train"])
    kind = p.get("model", "kind")
    label_type = p.get("model", "label_type")
    spec = p.feature_spec()
    hp = Hyperparameters(p.getfloat("model", "learning_rate"), p.getfloat("model", "l2"),
                         p.getint("model", "epochs"), p.getint("model", "batch_size"),
                         _hidden(p.get("model", "hidden")) if kind == "MLP" else ())
    vocab = build_vocab(tr.texts, spec)
    model = train(vectorize_batch(tr.texts, vocab), label_targets(tr.fractions, label_type), kind, hp,
                  p.stage_seed("train"), label_type=label_type, vocab=vocab)
    save_model(model, p.output(f"models/train-{kind}-{spec.ngram_kind}-{label_type}.json"))


def _search_space(p: Pipeline, seed: int) -> SearchSpace:
    grids = {k: list(v) for k, v in DEFAULT_GRID.items()}
    for key, value in p.cfg["tune"].items():
        if key.startswith("grid."):
            name = key[5:]
            if name not in grids:
                raise ConfigError(f"unknown hyperparameter grid {name!r}", key=f"tune.{key}")
            grids[name] = [_hidden(v) if name == "hidden" else _scalar(v) for v in _list(value)]
    return SearchSpace(grids, p.getint("tune", "n_iter"), seed)


def stage_tune(p: Pipeline) -> None:
    _, tr = p.labeled_split(["train"])
    _, dev = p.labeled_split(["dev"])
    objective = p.get("tune", "objective")
    base_seed = p.stage_seed("tune")
    summary = []
    best: tuple[float, str] | None = None
    for kind in _list(p.get("tune", "kinds")):
        for ngram in _list(p.get("tune", "ngram_kinds")):
            for label_type in _list(p.get("tune", "label_types")):
                name = f"{kind}-{ngram}-{label_type}"
                space = _search_space(p, int(np.random.SeedSequence([base_seed, zlib.crc32(name.encode())]).generate_state(1)[0]))
                res = random_search(space, tr, dev, objective, kind=kind, label_type=label_type,
                                    base_spec=p.feature_spec(ngram))
                save_model(res.best, p.output(f"models/{name}.json"))
                score = res.trials[res.best_trial]["score"]
                summary.append({"model": name, "objective": objective, "dev_score": score,
                                "best_trial": res.best_trial, "trials": res.trials})
                if best is None or score > best[0]:
                    best = (score, name)
    assert best is not None
    save_model(load_model(os.path.join(p.out, "models", f"{best[1]}.json")), p.output("model.json"))
    p.write_json("tune_report.json", {"master_seed": p.seed, "best": best[1], "runs": summary})


def _metric(fn: Callable[..., float], *args: Any) -> float | None:
    # a saturated model scores every comment alike; report that instead of aborting the table
    try:
        return fn(*args)
    except UndefinedMetric:
        return None


def stage_evaluate(p: Pipeline) -> None:
    p.artifact("model.json")
    model_dir = os.path.join(p.out, "models")
    names = sorted(f[:-5] for f in os.listdir(model_dir) if f.endswith(".json") and not f.startswith("train-"))
    rows = []
    for split_name in _list(p.get("evaluate", "splits")):
        _, data = p.labeled_split([split_name])
        for name in names:
            path = os.path.join(model_dir, name + ".json")
            p._inputs[f"models/{name}.json"] = path
            m = load_model(path)
            scores = m.score_texts(data.texts)
            fractions = np.asarray(data.fractions, dtype=float)
            rows.append({"model": name, "kind": m.kind, "ngram": m.feature_spec.ngram_kind,
                         "label_type": m.label_type, "split": split_name, "n_comments": len(fractions),
                         "auc": _metric(auc, scores, (fractions > 0.5).astype(int)),
                         "spearman": _metric(spearman, scores, fractions)})
    p.write_json("eval_report.json", {"master_seed": p.seed, "rows": rows})
    lines = [f"{'Split':<6}{'Model':<6}{'N-Gram':<8}{'Label':<7}{'AUC':>8}{'Spearman':>10}"]
    pct = lambda v: "n/a" if v is None else f"{100 * v:.2f}"  # noqa: E731
    for r in rows:
        lines.append(f"{r['split']:<6}{r['kind']:<6}{r['ngram']:<8}{r['label_type']:<7}"
                     f"{pct(r['auc']):>8}{pct(r['spearman']):>10}")
    p.write_text("table2.txt", "\n".join(lines) + "\n")


def stage_baseline(p: Pipeline) -> None:
    model = load_model(p.artifact("model.json"))
    cfg = EnsembleBaselineConfig(p.getint("baseline", "n_t"),
                                 tuple(int(x) for x in _list(p.get("baseline", "n_p_values"))),
                                 p.getint("baseline", "runs"), p.stage_seed("baseline"))
    records = ingest_annotations(p.artifact("annotations.clean.csv")).records
    units = units_from_records(records)
    need = cfg.n_t + max(cfg.n_p_values)
    texts = p.texts()
    units = {c: v for c, v in units.items() if len(v) >= need and c in texts}
    if not units:
        raise PipelineError(f"no comment has the {need} annotations the baseline needs")
    ids = sorted(units)
    scores = dict(zip(ids, map(float, model.score_texts([texts[c] for c in ids]))))
    report = ensemble_baseline(units, scores, cfg)
    p.write_json("baseline_report.json", {"master_seed": p.seed, "comments": len(ids), **report.to_dict()})
    p.write_text("table4.txt", report.to_text())


def stage_calibrate(p: Pipeline) -> None:
    model = load_model(p.artifact("model.json"))
    splits = _list(p.get("calibrate", "splits"))
    _, data = p.labeled_split(splits)
    rep = equal_error_threshold(model.score_texts(data.texts), (data.fractions > 0.5).astype(int),
                                split="+".join(splits))
    p.write_json("threshold.json", {"master_seed": p.seed, **rep.to_dict()})


def stage_score(p: Pipeline) -> None:
    model = load_model(p.artifact("model.json"))
    with open(p.artifact("threshold.json"), encoding="utf-8") as fh:
        t = float(json.load(fh)["t"])
    stats = ScoreStats()
    rows = iter_scored(model, read_jsonl(p.artifact("comments.filtered.jsonl")), t, stats, p.threads)
    write_jsonl(p.output("scored.jsonl"), (s.to_dict() for s in rows))
    report = stats.to_dict()
    # throughput is wall-clock dependent; keep it out of the deterministic artifact
    p.write_json("score_stats.json", {"master_seed": p.seed, "scored": report["scored"],
                                      "skipped": report["skipped"], "errors": report["errors"]})
    print(json.dumps({"scored": stats.scored, "comments_per_second": round(stats.throughput, 1)}))


def stage_analyze(p: Pipeline) -> None:
    scored = [ScoredComment.from_dict(d) for d in read_jsonl(p.artifact("scored.jsonl"))]
    year = p.getint("analyze", "year")
    in_year = [s for s in scored if s.comment.timestamp.year == year]
    B = p.getint("analyze", "bootstrap_b")
    level = p.getfloat("analyze", "level")
    seed = p.stage_seed("analyze")
    out: dict[str, Any] = {"master_seed": p.seed, "year": year, "comments_in_year": len(in_year)}

    prevalence = {}
    csv_rows = []
    for i, grouping in enumerate(("anonymity", "namespace", "year", "activity_bucket", "contains_ngram")):
        data = scored if grouping == "year" else in_year
        if not data:
            continue
        groups = prevalence_by_group(data, grouping, B=B, seed=seed + i, level=level,
                                     ngram=p.get("analyze", "ngram"))
        prevalence[grouping] = [asdict(g) for g in groups]
        csv_rows += [[grouping, g.group, g.n_accounts, g.n_comments, g.n_attacks, g.prevalence,
                      g.ci_low, g.ci_high] for g in groups]
    out["prevalence"] = prevalence
    p.write_csv("analysis/prevalence.csv", ["grouping", "group", "accounts", "comments", "attacks",
                                            "prevalence", "ci_low", "ci_high"], csv_rows)

    anon = [int(s.is_attack) for s in in_year if not s.comment.author_registered]
    reg = [int(s.is_attack) for s in in_year if s.comment.author_registered]
    out["anonymity_test"] = {k: _finite(v) for k, v in asdict(diff_of_means_test(anon, reg)).items()}

    act = activity_histogram(scored, year, _buckets(p.get("analyze", "activity_buckets")))
    out["activity"] = [asdict(r) for r in act]
    p.write_csv("analysis/activity.csv", ["bucket", "users", "comments", "attacks", "pct_comments",
                                          "pct_attacks", "pct_attacks_registered"],
                [list(asdict(r).values()) for r in act])

    tox = toxicity_concentration(scored, year, _buckets(p.get("analyze", "toxicity_buckets")))
    out["toxicity"] = {"total_attacks": tox.total_attacks,
                       "by_level": {str(k): {"pct_attacks": v[0], "users": v[1]} for k, v in tox.by_level.items()},
                       "buckets": [{"bucket": b, "pct_attacks": a, "users": u} for b, a, u in tox.buckets]}
    p.write_csv("analysis/toxicity.csv", ["level", "pct_attacks", "users"],
                [[k, v[0], v[1]] for k, v in tox.by_level.items()])

    window = timedelta(days=p.getfloat("analyze", "window_days"))
    mod_path = p.input_path("moderation", required=False)
    events = read_events(mod_path) if mod_path else []
    precision = 1.0
    th_path = os.path.join(p.out, "threshold.json")
    if os.path.exists(th_path):
        p._inputs["threshold.json"] = th_path
        with open(th_path, encoding="utf-8") as fh:
            precision = json.load(fh).get("precision") or 1.0
    out["moderation"] = asdict(moderation_followup(in_year, events, window, precision))
    curves = moderation_conditional_curves(scored, events, year, window)
    out["moderation_curves"] = asdict(curves)
    p.write_csv("analysis/moderation_curves.csv", ["curve", "x", "probability", "n"],
                [[name, pt.x, pt.probability, pt.n] for name, pts in
                 (("warn_given_attacks", curves.warn_given_attacks),
                  ("block_given_attacks", curves.block_given_attacks),
                  ("block_given_prior_blocks", curves.block_given_prior_blocks)) for pt in pts])

    naf = [neighboring_attack_fraction(scored, int(n)) for n in _list(p.get("analyze", "naf_n"))]
    out["neighboring_attack_fraction"] = [{k: _finite(v) for k, v in asdict(r).items()} for r in naf]
    p.write_csv("analysis/naf.csv", ["n", "attacking_mean", "non_attacking_mean", "attacking_count",
                                     "non_attacking_count", "t", "p_value"],
                [list(asdict(r).values()) for r in naf])
    p.write_json("analysis/report.json", out)


STAGE_FUNCS: dict[str, Callable[[Pipeline], None]] = {
    name: globals()[f"stage_{name}"] for name in STAGES
}


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="talkattack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sp = sub.add_parser(name, help=f"run the {name} stage")
        sp.add_argument("--config", required=True, help="pipeline config file (INI)")
        sp.add_argument("--threads", type=int, default=None, help="parallelism cap")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", default=None, help="output directory")
    cp = sub.add_parser("config", help="print configuration")
    cp.add_argument("--defaults", action="store_true", help="print built-in defaults")
    fx = sub.add_parser("fixture", help="write a synthetic input set and config")
    fx.add_argument("directory")
    fx.add_argument("--comments", type=int, default=200)
    fx.add_argument("--seed", type=int, default=7)
    return parser


def run_stage(name: str, config: str, out: str | None = None, seed: int | None = None,
              threads: int | None = None) -> Pipeline:
    started = time.perf_counter()
    p = Pipeline(config, out=out, seed=seed, threads=threads)
    STAGE_FUNCS[name](p)
    p.write_manifest(name, started)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config":
        sys.stdout.write(DEFAULTS)
        return 0
    if args.command == "fixture":
        from .synthetic import write_fixture
        paths = write_fixture(args.directory, n=args.comments, seed=args.seed)
        print(json.dumps(paths, indent=2))
        return 0
    try:
        run_stage(args.command, args.config, args.out, args.seed, args.threads)
    except PipelineError as exc:
        err = {"error": exc.kind, "stage": args.command, "message": str(exc), **exc.extra}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - one machine-readable line for any failure
        err = {"error": type(exc).__name__, "stage": args.command, "message": str(exc)}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
