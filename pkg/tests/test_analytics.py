import math
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from talkattack.analytics import (ScoredComment, activity_histogram, bootstrap_ci, diff_of_means_test,
                                  moderation_conditional_curves, moderation_followup,
                                  neighboring_attack_fraction, neighbor_fractions, prevalence_by_group,
                                  score_corpus, toxicity_concentration)
from talkattack.corpus import BlockEvent
from talkattack.features import FeatureSpec, build_vocab, vectorize, vectorize_batch
from talkattack.model import Hyperparameters, label_targets, predict_proba, train
from talkattack.synthetic import generate_comments

from conftest import T0, scored


def ev(user, days, kind):
    return BlockEvent(user, T0 + timedelta(days=days), kind)


@pytest.fixture(scope="module")
def small_model():
    corpus = generate_comments(300, 0.2, seed=4)
    texts = [c.clean_text for c in corpus.comments]
    v = build_vocab(texts, FeatureSpec("char", 1, 3, max_features=2000))
    y = label_targets([float(corpus.truth[c.comment_id]) for c in corpus.comments], "OH")
    return train(vectorize_batch(texts, v), y, "LR", Hyperparameters(0.3, 0.0, 3, 16, ()), 0, vocab=v), corpus


# scoring


def test_score_empty():
    out, stats = score_corpus(None, [], 0.5)
    assert out == [] and stats.scored == 0 and stats.skipped == 0


def test_score_batch_matches_single(small_model):
    model, _ = small_model
    comments = generate_comments(1000, 0.1, seed=5).comments
    out, stats = score_corpus(model, comments, 0.5)
    assert stats.scored == 1000
    for s in out[::50]:
        p = predict_proba(model, vectorize(s.comment.clean_text, model.vocab))
        assert s.attack_score == pytest.approx(p[1], abs=1e-12)
        assert s.is_attack == (s.attack_score > 0.5)


def test_score_parallel_identical(small_model):
    model, _ = small_model
    comments = generate_comments(3000, 0.1, seed=6).comments
    seq, _ = score_corpus(model, comments, 0.3, threads=1, chunk=100)
    par, _ = score_corpus(model, comments, 0.3, threads=4, chunk=100)
    assert [(s.comment.comment_id, s.attack_score) for s in seq] == \
        [(s.comment.comment_id, s.attack_score) for s in par]


def test_score_skips_malformed(small_model):
    model, corpus = small_model
    rows = [c.to_dict() for c in corpus.comments[:5]] + [{"comment_id": "broken"}]
    out, stats = score_corpus(model, rows, 0.5)
    assert len(out) == 5 and stats.skipped == 1 and stats.errors


def test_scored_round_trip():
    s = scored("p", 1, "u", True)
    assert ScoredComment.from_dict(s.to_dict()) == s


# bootstrap and prevalence


def _quantile(sorted_vals, q):
    pos = q * (len(sorted_vals) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_vals) - 1)
    return sorted_vals[lo] + (pos - lo) * (sorted_vals[hi] - sorted_vals[lo])


def _bootstrap_oracle(values, B, level, seed):
    means = []
    for b in range(B):
        idx = np.random.default_rng([seed, b]).integers(0, len(values), size=len(values))
        means.append(sum(values[i] for i in idx) / len(values))
    means.sort()
    a = 1 - level
    return _quantile(means, a / 2), _quantile(means, 1 - a / 2)


def test_bootstrap_examples():
    assert bootstrap_ci([0.3] * 7, B=50) == (pytest.approx(0.3), pytest.approx(0.3))
    with pytest.raises(ValueError):
        bootstrap_ci([1, 2], level=0)
    with pytest.raises(ValueError):
        bootstrap_ci([], B=5)
    vals = [0.2, 1.5, 3.3, 0.0, 2.2, 4.1, 0.7, 1.1, 2.9, 3.8, 0.4, 1.9, 2.5, 0.9, 3.0, 1.2, 4.4, 0.1, 2.0, 1.7]
    lo, hi = bootstrap_ci(vals, B=1000, level=0.95, seed=123)
    olo, ohi = _bootstrap_oracle(vals, 1000, 0.95, 123)
    assert lo == pytest.approx(olo, abs=1e-12) and hi == pytest.approx(ohi, abs=1e-12)
    assert lo <= hi


def test_prevalence_examples():
    none = [scored("p", i, f"u{i}", False) for i in range(10)]
    g = prevalence_by_group(none, "anonymity", B=100)[0]
    assert (g.prevalence, g.ci_low, g.ci_high) == (0.0, 0.0, 0.0)
    fifty = [scored("p", i, f"u{i % 7}", i % 10 == 0) for i in range(50)]
    g = prevalence_by_group(fifty, "custom", B=300, seed=9, key_fn=lambda s: "all")[0]
    assert g.prevalence == 0.1 and g.n_attacks == 5 and g.n_accounts == 7
    seed0 = int(np.random.SeedSequence([9, 0]).generate_state(1)[0])
    lo, hi = _bootstrap_oracle([int(s.is_attack) for s in fifty], 300, 0.95, seed0)
    assert g.ci_low == pytest.approx(lo, abs=1e-12) and g.ci_high == pytest.approx(hi, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.sampled_from(["user_talk", "article_talk"]),
                          st.integers(0, 4)), min_size=1, max_size=40))
def test_prevalence_partitions_corpus(rows):
    data = [scored("p", i, f"u{u}", a, registered=r, namespace=ns) for i, (a, r, ns, u) in enumerate(rows)]
    overall = sum(s.is_attack for s in data) / len(data)
    for grouping in ("anonymity", "namespace", "year", "activity_bucket"):
        groups = prevalence_by_group(data, grouping, B=20)
        assert sum(g.n_comments for g in groups) == len(data)
        assert sum(g.prevalence * g.n_comments for g in groups) / len(data) == pytest.approx(overall)
        assert all(g.ci_low <= g.prevalence <= g.ci_high for g in groups)


def test_contains_ngram_grouping():
    data = [scored("p", 1, "a", False, text="Thanks a lot"), scored("p", 2, "b", True, text="you fool")]
    groups = {g.group: g for g in prevalence_by_group(data, "contains_ngram", B=10, ngram="thank")}
    assert groups["contains:thank"].n_comments == 1 and groups["lacks:thank"].n_attacks == 1


# t test


def test_t_examples():
    assert diff_of_means_test([0, 1, 0, 1], [0, 1, 0, 1]).t == 0.0
    assert diff_of_means_test([1] * 10, [0] * 10).p_value < 1e-4
    a, b = [1, 0, 1, 1, 0], [0, 0, 1, 0, 0, 0, 0]
    ma, mb = 3 / 5, 1 / 7
    va = sum((x - ma) ** 2 for x in a) / 4
    vb = sum((x - mb) ** 2 for x in b) / 6
    t = (ma - mb) / math.sqrt(va / 5 + vb / 7)
    assert diff_of_means_test(a, b).t == pytest.approx(t, abs=1e-12)
    assert math.isnan(diff_of_means_test([1], [0, 1]).t)


# activity and toxicity


def test_activity_all_single():
    data = [scored("p", i, f"u{i}", i % 3 == 0) for i in range(9)]
    rows = activity_histogram(data, 2015)
    assert rows[0].pct_comments == 100.0 and rows[0].pct_attacks == 100.0
    assert all(r.pct_comments == 0 for r in rows[1:])


def test_activity_five_users_by_hand():
    # users with 1, 3, 6, 6, 25 comments; attacks: u1 1, u6a 2, u25 3
    counts = {"u1": 1, "u3": 3, "u6a": 6, "u6b": 6, "u25": 25}
    attacks = {"u1": 1, "u3": 0, "u6a": 2, "u6b": 0, "u25": 3}
    data, i = [], 0
    for u, n in counts.items():
        for k in range(n):
            data.append(scored("p", i, u, k < attacks[u], registered=u != "u1"))
            i += 1
    rows = {r.bucket: r for r in activity_histogram(data, 2015)}
    assert list(rows) == ["1-5", "6-20", "21-100", ">100"]
    assert rows["1-5"].pct_comments == pytest.approx(100 * 4 / 41)
    assert rows["6-20"].pct_comments == pytest.approx(100 * 12 / 41)
    assert rows["21-100"].pct_comments == pytest.approx(100 * 25 / 41)
    assert rows["1-5"].pct_attacks == pytest.approx(100 / 6)
    assert rows["1-5"].pct_attacks_registered == 0.0
    assert rows["21-100"].pct_attacks == pytest.approx(50.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=1, max_size=60))
def test_activity_and_toxicity_properties(rows):
    data = [scored("p", i, f"u{u}", a) for i, (u, a) in enumerate(rows)]
    hist = activity_histogram(data, 2015)
    assert sum(r.pct_comments for r in hist) == pytest.approx(100.0, abs=1e-9)
    if any(a for _, a in rows):
        assert sum(r.pct_attacks for r in hist) == pytest.approx(100.0, abs=1e-9)
    tox = toxicity_concentration(data, 2015)
    activity = {}
    for u, _ in rows:
        activity[u] = activity.get(u, 0) + 1
    for u in activity:
        level = sum(1 for uu, a in rows if uu == u and a)
        assert level <= activity[u]
    assert sum(n for _, n in tox.by_level.values()) == len({u for u, a in rows if a})


def test_toxicity_examples():
    data = [scored("p", i, "solo", True) for i in range(4)] + [scored("p", 9, "other", False)]
    tox = toxicity_concentration(data, 2015)
    assert tox.by_level == {4: (100.0, 1)}
    planted = {f"u{i}": n for i, n in enumerate([1, 1, 1, 2, 2, 3, 5, 8, 21, 0])}
    data = [scored("p", 0, u, True) for u, n in planted.items() for _ in range(n)]
    tox = toxicity_concentration(data, 2015)
    total = sum(planted.values())
    assert tox.total_attacks == total == 44
    assert tox.by_level[1] == (pytest.approx(100 * 3 / 44), 3)
    assert tox.by_level[21] == (pytest.approx(100 * 21 / 44), 1)
    buckets = {b: (p, u) for b, p, u in tox.buckets}
    assert buckets["1"] == (pytest.approx(100 * 3 / 44), 3)
    assert buckets["2-4"] == (pytest.approx(100 * 7 / 44), 3)
    assert buckets["5-20"] == (pytest.approx(100 * 13 / 44), 2)
    assert buckets[">20"] == (pytest.approx(100 * 21 / 44), 1)


# moderation


def test_moderation_hand_timeline():
    attacks = [scored("p", i, "U", True, hours=24 * d) for i, d in enumerate([0, 10, 20, 30, 40])]
    events = [ev("U", 1, "warn"), ev("U", 17, "warn"), ev("U", 27.5, "warn")]
    rep = moderation_followup(attacks, events)
    assert rep.warned == 0.4 and rep.blocked == 0.0 and rep.either == 0.4
    assert rep.n_attacks == 5
    # window is half-open: simultaneous events do not count, +7d exactly does
    edge = moderation_followup(attacks[:1], [ev("U", 0, "block"), ev("U", 7, "warn")])
    assert edge.blocked == 0.0 and edge.warned == 1.0


def test_moderation_no_events_and_normalisation():
    attacks = [scored("p", i, "U", True) for i in range(3)]
    rep = moderation_followup(attacks, [])
    assert (rep.warned, rep.blocked, rep.either) == (0.0, 0.0, 0.0)
    rep = moderation_followup(attacks, [ev("U", 0.5, "warn")], precision=0.63)
    assert rep.warned_normalized == rep.warned / 0.63
    assert rep.either >= max(rep.warned, rep.blocked)
    with pytest.raises(ValueError):
        moderation_followup(attacks, [], precision=0)


def test_moderation_reference_normalisation():
    assert round(100 * 0.077 / 0.63, 1) == 12.2
    assert round(100 * 0.070 / 0.63, 1) == 11.1
    assert round(100 * 0.113 / 0.63, 1) == 17.9


def test_curves_single_and_empty():
    data = [scored("p", 0, "U", True)]
    curves = moderation_conditional_curves(data, [ev("U", 1, "block")], 2015)
    assert [(p.x, p.probability) for p in curves.block_given_attacks] == [(1, 1.0)]
    curves = moderation_conditional_curves(data + [scored("p", 1, "V", False)], [], 2015)
    for pts in (curves.warn_given_attacks, curves.block_given_attacks, curves.block_given_prior_blocks):
        assert all(p.probability == 0 for p in pts)


def test_curves_hand_built():
    data = [scored("p", 0, "A", True, hours=0), scored("p", 1, "A", True, hours=48),
            scored("p", 2, "B", True, hours=24), scored("p", 3, "C", False, hours=24),
            scored("p", 4, "D", True, hours=24), scored("p", 5, "E", True, hours=240)]
    events = [ev("A", 30, "warn"), ev("B", 3, "block"), ev("C", 2, "warn"),
              ev("E", 5, "block"), ev("E", 12, "block")]
    c = moderation_conditional_curves(data, events, 2015)
    assert [(p.x, p.probability, p.n) for p in c.warn_given_attacks] == [(0, 1.0, 1), (1, 0.0, 3), (2, 1.0, 1)]
    assert [(p.x, p.probability, p.n) for p in c.block_given_attacks] == \
        [(0, 0.0, 1), (1, pytest.approx(2 / 3), 3), (2, 0.0, 1)]
    assert [(p.x, p.probability, p.n) for p in c.block_given_prior_blocks] == [(0, 0.25, 4), (1, 1.0, 1)]


# neighbouring attack fraction


def test_naf_examples():
    calm = [scored("p", i, "u", False) for i in range(6)]
    r = neighboring_attack_fraction(calm, 2)
    assert r.attacking_mean == 0.0 and r.non_attacking_mean == 0.0
    pattern = [scored("p", i, "u", a) for i, a in enumerate([True, False, True, False, False])]
    r = neighboring_attack_fraction(pattern, 1)
    # centres: A->0, N->1, A->0, N->1/2, N->0
    assert r.attacking_mean == 0.0 and r.non_attacking_mean == pytest.approx(0.5)
    assert (r.attacking_count, r.non_attacking_count) == (2, 3)


def test_naf_singleton_pages_excluded_and_tie_break():
    data = [scored("solo", 1, "u", True), scored("p", 2, "u", True, hours=5), scored("p", 10, "u", False, hours=5),
            scored("p", 3, "u", False, hours=6)]
    pairs = neighbor_fractions(data, 1)
    assert len(pairs) == 3
    # same timestamp: rev 2 precedes rev 10 numerically
    assert pairs == [(True, 0.0), (False, 0.5), (False, 0.0)]


@given(st.lists(st.booleans(), min_size=2, max_size=15), st.integers(1, 20))
def test_naf_bounds_and_whole_page(flags, n):
    data = [scored("p", i, "u", a) for i, a in enumerate(flags)]
    pairs = neighbor_fractions(data, n)
    assert all(0 <= f <= 1 for _, f in pairs)
    if n >= len(flags):
        total = sum(flags)
        for (a, f) in pairs:
            assert f == pytest.approx((total - a) / (len(flags) - 1))
