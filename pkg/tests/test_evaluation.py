import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from talkattack.evaluation import (EnsembleBaselineConfig, UndefinedMetric, auc, classification_metrics,
                                   ensemble_baseline, equal_error_threshold, evaluate_scores, spearman)

scores_labels = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 50).map(lambda k: k / 50), min_size=n, max_size=n), st.lists(st.integers(0, 1), min_size=n, max_size=n)))


def test_auc_examples():
    assert auc([1, 1, 0, 0], [1, 1, 0, 0]) == 1.0
    assert auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    s = [0.1, 0.4, 0.4, 0.35, 0.8, 0.4, 0.1, 0.9, 0.35, 0.6]
    y = [0, 1, 0, 1, 1, 0, 0, 1, 0, 1]
    # all 25 positive/negative pairs counted by hand: 20 wins, 3 ties
    assert auc(s, y) == pytest.approx(21.5 / 25, abs=1e-15)
    with pytest.raises(UndefinedMetric):
        auc([0.1, 0.2], [1, 1])


def test_spearman_examples():
    a = [3.0, 1.0, 2.0, 5.0]
    assert spearman(a, a) == 1.0
    assert spearman(a, [-x for x in a]) == -1.0
    # ranks (1.5, 1.5, 3) vs (1, 2, 3): pearson = 0.8660...
    assert spearman([1, 1, 2], [1, 2, 3]) == pytest.approx(np.sqrt(3) / 2, abs=1e-15)
    with pytest.raises(UndefinedMetric):
        spearman([1, 1, 1], [1, 2, 3])


@given(scores_labels)
def test_auc_monotone_invariance_and_flip(sl):
    s, y = np.array(sl[0]), np.array(sl[1])
    if y.sum() in (0, len(y)):
        return
    assert auc(np.exp(3 * s) - 7, y) == pytest.approx(auc(s, y), abs=1e-12)
    if len(set(s.tolist())) == len(s):
        assert auc(s, y) + auc(s, 1 - y) == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)).map(lambda t: (t[0] / 10, t[1] / 10)),
                min_size=2, max_size=30))
def test_spearman_monotone_invariance(pairs):
    a, b = np.array(pairs).T
    if len(set(a)) < 2 or len(set(b)) < 2:
        return
    r = spearman(a, b)
    assert -1 <= r <= 1
    assert spearman(np.arctan(a), b ** 3) == pytest.approx(r, abs=1e-12)


def test_evaluate_scores():
    rep = evaluate_scores([0.9, 0.2, 0.6, 0.1], [0.8, 0.1, 0.6, 0.0], "dev")
    assert rep.auc == 1.0 and rep.spearman == 1.0 and rep.n_comments == 4 and rep.split == "dev"


def test_classification_metrics_examples():
    m = classification_metrics([0.9, 0.1], [1, 0], 0.5)
    assert (m.precision, m.recall, m.false_positive_rate) == (1.0, 1.0, 0.0)
    m = classification_metrics([0.1, 0.2], [1, 0], 0.5)
    assert m.precision is None and m.recall == 0.0
    m = classification_metrics([0.9, 0.8, 0.7, 0.2, 0.1, 0.0], [1, 1, 0, 1, 0, 0], 0.5)
    assert (m.confusion.tp, m.confusion.fp, m.confusion.fn, m.confusion.tn) == (2, 1, 1, 2)
    assert m.precision == pytest.approx(2 / 3) and m.recall == pytest.approx(2 / 3)
    assert m.false_positive_rate == pytest.approx(1 / 3)
    # score equal to t is not an attack
    assert classification_metrics([0.5], [1], 0.5).confusion.fn == 1
    with pytest.raises(ValueError):
        classification_metrics([0.5], [1], 1.5)


def test_threshold_separated():
    rep = equal_error_threshold([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert 0.2 < rep.t < 0.8 and rep.fp == rep.fn == 0
    assert rep.precision == rep.recall == 1.0
    json.loads(rep.to_json())


def test_threshold_eight_points_one_error_each_side():
    s = [0.05, 0.15, 0.25, 0.55, 0.45, 0.65, 0.75, 0.85]
    y = [0, 0, 0, 0, 1, 1, 1, 1]
    rep = equal_error_threshold(s, y)
    # scan oracle over every gap
    u = sorted(s)
    cands = [(a + b) / 2 for a, b in zip(u, u[1:])]
    gaps = {t: abs(sum(x > t and not l for x, l in zip(s, y)) - sum(x <= t and l for x, l in zip(s, y)))
            for t in cands}
    assert min(gaps.values()) == 0
    assert rep.fp == rep.fn == 1 and rep.t == pytest.approx(0.5)


def test_threshold_single_class_rejected():
    with pytest.raises(UndefinedMetric):
        equal_error_threshold([0.1, 0.2], [0, 0])


def test_ensemble_unanimous_and_errors():
    votes = {f"c{i}": [i % 2] * 20 for i in range(10)}
    scores = {c: 0.9 if v[0] else 0.1 for c, v in votes.items()}
    rep = ensemble_baseline(votes, scores, EnsembleBaselineConfig(10, (1, 3, 5), 3, 1))
    for k in ("1", "3", "5"):
        assert rep.row(k).auc_mean == 1.0 and rep.row(k).auc_se == 0.0
    assert rep.row("model").auc_mean == 1.0 and rep.row("model").spearman_mean == pytest.approx(1.0)
    assert len(rep.rows) == 4
    with pytest.raises(ValueError, match="c0"):
        ensemble_baseline({"c0": [1] * 5}, None, EnsembleBaselineConfig(10, (1,), 1, 0))


def test_ensemble_deterministic_and_text():
    rng = np.random.default_rng(1)
    votes = {f"c{i}": [int(x) for x in rng.random(20) < rng.random()] for i in range(30)}
    cfg = EnsembleBaselineConfig(10, (1, 3), 4, 7)
    a, b = ensemble_baseline(votes, None, cfg), ensemble_baseline(votes, None, cfg)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert all(r.auc_se >= 0 and r.spearman_se >= 0 for r in a.rows)
    assert a.to_text().splitlines()[0].split() == ["n_p", "AUC", "Spearman"]
