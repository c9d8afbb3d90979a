"""Ranking metrics, annotator-ensemble baselining and threshold calibration."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np


class UndefinedMetric(ValueError):
    pass


def average_ranks(values) -> np.ndarray:
    """1-based ranks, ties sharing the mean of the ranks they span."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = len(x)
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    ranks = np.empty(n)
    # tie block [s, e) covers ranks s+1..e, mean (s + e + 1) / 2
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; score ties between a positive and a negative count 1/2."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores but {len(y)} labels")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs both classes present")
    r = average_ranks(s)
    # rank sums are half-integers, exact in float64 at any realistic n
    u = r[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def spearman(a, b) -> float:
    """Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or len(a) < 2:
        raise ValueError("spearman needs two equal-length inputs of length >= 2")
    ra = average_ranks(a)
    rb = average_ranks(b)
    da = ra - ra.mean()
    db = rb - rb.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0.0:
        raise UndefinedMetric("spearman is undefined for a constant input")
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


@dataclass
class EvalReport:
    auc: float
    spearman: float
    n_comments: int
    split: str

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_scores(scores, fractions, split: str = "dev") -> EvalReport:
    """AUC against majority labels and Spearman against attack fractions."""
    f = np.asarray(fractions, dtype=float)
    return EvalReport(auc(scores, (f > 0.5).astype(int)), spearman(scores, f), len(f), split)


# --------------------------------------------------------------------------
# annotator ensemble baselining


@dataclass
class EnsembleBaselineConfig:
    n_t: int = 10
    n_p_values: tuple[int, ...] = (1, 3, 5, 7, 9, 10)
    runs: int = 25
    seed: int = 0


@dataclass
class BaselineRow:
    label: str
    auc_mean: float
    auc_se: float
    spearman_mean: float
    spearman_se: float
    auc_runs: list[float] = field(default_factory=list)
    spearman_runs: list[float] = field(default_factory=list)


@dataclass
class EnsembleBaselineReport:
    rows: list[BaselineRow]
    config: EnsembleBaselineConfig

    def row(self, label: str) -> BaselineRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["n_p_values"] = list(self.config.n_p_values)
        return {"config": cfg, "rows": [asdict(r) for r in self.rows]}

    def to_text(self) -> str:
        lines = [f"{'n_p':<8}{'AUC':>16}{'Spearman':>18}"]
        for r in self.rows:
            lines.append(f"{r.label:<8}{100 * r.auc_mean:>9.2f} ({100 * r.auc_se:4.2f})"
                         f"{100 * r.spearman_mean:>11.2f} ({100 * r.spearman_se:4.2f})")
        return "\n".join(lines) + "\n"


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


def ensemble_baseline(annotations: Mapping[str, Sequence[int]], model_scores: Mapping[str, float] | None,
                      config: EnsembleBaselineConfig) -> EnsembleBaselineReport:
    """Compare pooled prediction-groups of annotators (and the model) to truth-groups.

    Run ``r`` draws one permutation per comment (comments in sorted id order)
    from ``default_rng([seed, r])``: the first ``n_t`` annotations form the
    truth-group, the next ``n_p`` the prediction-group for each ``n_p``.
    Every row of a run is scored against the same truth labels.
    """
    need = config.n_t + max(config.n_p_values)
    ids = sorted(annotations)
    for cid in ids:
        if len(annotations[cid]) < need:
            raise ValueError(f"comment {cid!r} has {len(annotations[cid])} annotations, needs {need}")
    if model_scores is not None:
        missing = [cid for cid in ids if cid not in model_scores]
        if missing:
            raise ValueError(f"no model score for comment {missing[0]!r}")
        ml = np.array([model_scores[cid] for cid in ids], dtype=float)
    votes = [np.asarray(annotations[cid], dtype=float) for cid in ids]
    per_np: dict[int, tuple[list, list]] = {k: ([], []) for k in config.n_p_values}
    model_runs: tuple[list, list] = ([], [])
    for run in range(config.runs):
        rng = np.random.default_rng([config.seed, run])
        perms = [rng.permutation(len(v)) for v in votes]
        truth = np.array([v[p[:config.n_t]].mean() for v, p in zip(votes, perms)])
        y_oh = (truth > 0.5).astype(int)
        for k in config.n_p_values:
            pred = np.array([v[p[config.n_t:config.n_t + k]].mean() for v, p in zip(votes, perms)])
            per_np[k][0].append(auc(pred, y_oh))
            per_np[k][1].append(spearman(pred, truth))
        if model_scores is not None:
            model_runs[0].append(auc(ml, y_oh))
            model_runs[1].append(spearman(ml, truth))
    rows = []
    for k in config.n_p_values:
        a, s = per_np[k]
        rows.append(BaselineRow(str(k), *_mean_se(a), *_mean_se(s), a, s))
    if model_scores is not None:
        a, s = model_runs
        rows.append(BaselineRow("model", *_mean_se(a), *_mean_se(s), a, s))
    return EnsembleBaselineReport(rows, config)


# --------------------------------------------------------------------------
# thresholds


@dataclass
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class ClassificationMetrics:
    precision: float | None
    recall: float | None
    false_positive_rate: float | None
    f1: float | None
    confusion: Confusion


def _rates(tp: int, fp: int, fn: int, tn: int) -> ClassificationMetrics:
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    fpr = fp / (fp + tn) if fp + tn else None
    f1 = None
    if precision is not None and recall is not None:
        f1 = 2 * tp / (2 * tp + fp + fn)
    return ClassificationMetrics(precision, recall, fpr, f1, Confusion(tp, fp, fn, tn))


def classification_metrics(scores, labels, t: float) -> ClassificationMetrics:
    """Confusion-matrix rates for the rule ``attack iff score > t``.

    Rates whose denominator is zero come back as None.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    pred = s > t
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    return _rates(tp, fp, fn, tn)


@dataclass
class ThresholdReport:
    t: float
    precision: float | None
    recall: float | None
    false_positive_rate: float | None
    f1: float | None
    fp: int
    fn: int
    n: int
    calibration_split: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def candidate_thresholds(scores) -> np.ndarray:
    distinct = np.unique(np.asarray(scores, dtype=float))
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.unique(np.concatenate(([0.0], mids, [1.0])))


def equal_error_threshold(scores, oh_labels, split: str = "") -> ThresholdReport:
    """Threshold where false positives balance false negatives.

    Candidates are 0, 1 and the midpoints between adjacent distinct scores.
    Minimises |FP - FN|, then prefers larger F1, then the smaller threshold.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(oh_labels).astype(bool)
    if len(s) != len(y):
        raise ValueError(f"{len(s)} scores but {len(y)} labels")
    if y.all() or not y.any():
        raise UndefinedMetric("calibration set needs both classes")
    cands = candidate_thresholds(s)
    pos_sorted = np.sort(s[y])
    neg_sorted = np.sort(s[~y])
    # counts of scores strictly above each candidate
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, cands, side="right")
    fp = len(neg_sorted) - np.searchsorted(neg_sorted, cands, side="right")
    fn = len(pos_sorted) - tp
    gap = np.abs(fp - fn)
    f1 = 2 * tp / (2 * tp + fp + fn)
    best = min(range(len(cands)), key=lambda i: (gap[i], -f1[i], cands[i]))
    m = _rates(int(tp[best]), int(fp[best]), int(fn[best]), int(len(neg_sorted) - fp[best]))
    return ThresholdReport(float(cands[best]), m.precision, m.recall, m.false_positive_rate, m.f1,
                           int(fp[best]), int(fn[best]), len(s), split)
