"""Corpus scoring and longitudinal attack analyses over machine-labelled comments."""
from __future__ import annotations

import math
import time
from bisect import bisect_left, bisect_right
from collections import Counter, defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Callable, Hashable, Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy import stats

from .corpus import BlockEvent, Comment, events_by_user, format_timestamp, rev_sort_key
from .model import AttackModel

SCORE_CHUNK = 1024

ACTIVITY_BUCKETS: list[tuple[int, float]] = [(1, 5), (6, 20), (21, 100), (101, math.inf)]
TOXICITY_BUCKETS: list[tuple[int, float]] = [(1, 1), (2, 4), (5, 20), (21, math.inf)]


def bucket_label(lo: int, hi: float) -> str:
    if hi == math.inf:
        return f">{lo - 1}"
    return str(lo) if lo == hi else f"{lo}-{int(hi)}"


def bucket_of(value: int, buckets: Sequence[tuple[int, float]]) -> str | None:
    for lo, hi in buckets:
        if lo <= value <= hi:
            return bucket_label(lo, hi)
    return None


@dataclass(frozen=True)
class ScoredComment:
    comment: Comment
    attack_score: float
    is_attack: bool
    threshold: float

    @property
    def author_key(self) -> tuple[str, bool]:
        return (self.comment.author_id, self.comment.author_registered)

    def to_dict(self) -> dict:
        d = self.comment.to_dict()
        d.update(attack_score=self.attack_score, is_attack=self.is_attack, threshold=self.threshold)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScoredComment":
        t = float(d["threshold"])
        score = float(d["attack_score"])
        return cls(Comment.from_dict(d), score, score > t, t)


@dataclass
class ScoreStats:
    scored: int = 0
    skipped: int = 0
    errors: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def throughput(self) -> float:
        return self.scored / self.seconds if self.seconds > 0 else 0.0

    def to_dict(self) -> dict:
        return {"scored": self.scored, "skipped": self.skipped, "seconds": self.seconds,
                "comments_per_second": self.throughput, "errors": self.errors[:100]}


def _chunks(items: Iterable, size: int) -> Iterator[list]:
    buf = []
    for it in items:
        buf.append(it)
        if len(buf) == size:
            yield buf
            buf = []
    if buf:
        yield buf


def _coerce(records: list, stats: ScoreStats) -> list[Comment]:
    out = []
    for rec in records:
        if isinstance(rec, Comment):
            out.append(rec)
            continue
        try:
            out.append(Comment.from_dict(rec))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            stats.skipped += 1
            stats.errors.append(f"malformed comment record: {exc!r}")
    return out


def iter_scored(model: AttackModel, comments: Iterable[Comment | dict], t: float,
                stats: ScoreStats, threads: int = 1, chunk: int = SCORE_CHUNK) -> Iterator[ScoredComment]:
    """Stream scored comments in input order.

    Work is cut into fixed-size chunks regardless of ``threads`` so a
    parallel run computes exactly the same floating-point results; at most
    ``2 * threads`` chunks are in flight.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    start = time.perf_counter()

    def work(batch: list[Comment]) -> list[ScoredComment]:
        if not batch:
            return []
        scores = model.score_texts([c.clean_text for c in batch])
        return [ScoredComment(c, float(s), bool(s > t), t) for c, s in zip(batch, scores)]

    batches = (_coerce(b, stats) for b in _chunks(comments, chunk))
    try:
        if threads <= 1:
            for b in batches:
                res = work(b)
                stats.scored += len(res)
                yield from res
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                pending: deque = deque()
                for b in batches:
                    pending.append(pool.submit(work, b))
                    if len(pending) >= 2 * threads:
                        res = pending.popleft().result()
                        stats.scored += len(res)
                        yield from res
                while pending:
                    res = pending.popleft().result()
                    stats.scored += len(res)
                    yield from res
    finally:
        stats.seconds = time.perf_counter() - start


def score_corpus(model: AttackModel, comments: Iterable[Comment | dict], t: float,
                 threads: int = 1, chunk: int = SCORE_CHUNK) -> tuple[list[ScoredComment], ScoreStats]:
    """Score every comment once; malformed records are counted and skipped."""
    stats = ScoreStats()
    out = list(iter_scored(model, comments, t, stats, threads, chunk))
    return out, stats


# --------------------------------------------------------------------------
# prevalence and bootstrap


def bootstrap_ci(values: Sequence[float], B: int = 1000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile interval of B resample means.

    Resample ``b`` draws its indices from ``default_rng([seed, b])`` so any
    subset of resamples can be recomputed independently.
    """
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        raise ValueError("bootstrap needs at least one value")
    if B < 1:
        raise ValueError("B must be at least 1")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie strictly between 0 and 1, got {level}")
    n = len(v)
    means = np.empty(B)
    for b in range(B):
        idx = np.random.default_rng([seed, b]).integers(0, n, size=n)
        means[b] = v[idx].mean()
    alpha = 1.0 - level
    lo, hi = np.quantile(means, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


@dataclass
class GroupPrevalence:
    group: str
    n_comments: int
    n_attacks: int
    prevalence: float
    ci_low: float
    ci_high: float
    n_accounts: int = 0


def activity_levels(scored: Iterable[ScoredComment], year: int | None = None) -> Counter:
    levels: Counter = Counter()
    for s in scored:
        if year is None or s.comment.timestamp.year == year:
            levels[s.author_key] += 1
    return levels


def group_key_fn(grouping: str, scored: Sequence[ScoredComment],
                 ngram: str | None = None,
                 buckets: Sequence[tuple[int, float]] = ACTIVITY_BUCKETS) -> Callable[[ScoredComment], str]:
    if grouping == "anonymity":
        return lambda s: "registered" if s.comment.author_registered else "anonymous"
    if grouping == "namespace":
        return lambda s: s.comment.namespace
    if grouping == "year":
        return lambda s: str(s.comment.timestamp.year)
    if grouping == "activity_bucket":
        per_year: dict[int, Counter] = defaultdict(Counter)
        for s in scored:
            per_year[s.comment.timestamp.year][s.author_key] += 1
        return lambda s: bucket_of(per_year[s.comment.timestamp.year][s.author_key], buckets) or "none"
    if grouping == "contains_ngram":
        if not ngram:
            raise ValueError("contains_ngram grouping needs an n-gram")
        g = ngram.lower()
        return lambda s: f"contains:{ngram}" if g in s.comment.clean_text.lower() else f"lacks:{ngram}"
    raise ValueError(f"unknown grouping {grouping!r}")


def derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def prevalence_by_group(scored: Sequence[ScoredComment], grouping: str, B: int = 1000,
                        seed: int = 0, level: float = 0.95, ngram: str | None = None,
                        key_fn: Callable[[ScoredComment], Hashable] | None = None) -> list[GroupPrevalence]:
    """Attack prevalence per group with bootstrap confidence intervals.

    Groups are reported in sorted key order; group ``i`` bootstraps with
    seed ``derived_seed(seed, i)``.
    """
    key_fn = key_fn or group_key_fn(grouping, scored, ngram)
    flags: dict[str, list[int]] = defaultdict(list)
    accounts: dict[str, set] = defaultdict(set)
    for s in scored:
        k = str(key_fn(s))
        flags[k].append(int(s.is_attack))
        accounts[k].add(s.author_key)
    out = []
    for i, k in enumerate(sorted(flags)):
        f = flags[k]
        prev = sum(f) / len(f)
        lo, hi = bootstrap_ci(f, B, level, derived_seed(seed, i))
        out.append(GroupPrevalence(k, len(f), sum(f), prev, min(lo, prev), max(hi, prev),
                                   len(accounts[k])))
    return out


@dataclass
class TTest:
    t: float
    p_value: float
    mean_a: float
    mean_b: float
    n_a: int
    n_b: int


def diff_of_means_test(group_a: Sequence[float], group_b: Sequence[float]) -> TTest:
    """Welch two-sample t statistic with a normal-approximation two-sided p-value.

    Equal means give t = 0.  Unequal means with zero variance in both groups
    give an infinite t (p = 0).  Groups with fewer than two members give NaN.
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        return TTest(math.nan, math.nan, float(a.mean()) if na else math.nan,
                     float(b.mean()) if nb else math.nan, na, nb)
    ma, mb = float(a.mean()), float(b.mean())
    se = math.sqrt(float(a.var(ddof=1)) / na + float(b.var(ddof=1)) / nb)
    if ma == mb:
        t = 0.0
    elif se == 0.0:
        t = math.copysign(math.inf, ma - mb)
    else:
        t = (ma - mb) / se
    p = float(2.0 * stats.norm.sf(abs(t)))
    return TTest(t, p, ma, mb, na, nb)


# --------------------------------------------------------------------------
# activity and toxicity


def _in_year(scored: Iterable[ScoredComment], year: int | None) -> list[ScoredComment]:
    return [s for s in scored if year is None or s.comment.timestamp.year == year]


@dataclass
class BucketRow:
    bucket: str
    users: int
    comments: int
    attacks: int
    pct_comments: float
    pct_attacks: float
    pct_attacks_registered: float


def activity_histogram(scored: Iterable[ScoredComment], year: int | None = None,
                       buckets: Sequence[tuple[int, float]] = ACTIVITY_BUCKETS) -> list[BucketRow]:
    """Share of all comments and of all attacks per user-activity bucket."""
    rows = _in_year(scored, year)
    activity: Counter = Counter(s.author_key for s in rows)
    comments: Counter = Counter()
    attacks: Counter = Counter()
    reg_attacks: Counter = Counter()
    users: dict[str, set] = defaultdict(set)
    for s in rows:
        b = bucket_of(activity[s.author_key], buckets)
        comments[b] += 1
        users[b].add(s.author_key)
        if s.is_attack:
            attacks[b] += 1
            if s.comment.author_registered:
                reg_attacks[b] += 1
    total_c = sum(comments.values())
    total_a = sum(attacks.values())

    def pct(x, total):
        return 100.0 * x / total if total else 0.0

    out = []
    for lo, hi in buckets:
        b = bucket_label(lo, hi)
        out.append(BucketRow(b, len(users[b]), comments[b], attacks[b], pct(comments[b], total_c),
                             pct(attacks[b], total_a), pct(reg_attacks[b], total_a)))
    return out


@dataclass
class ToxicityReport:
    by_level: dict[int, tuple[float, int]]
    buckets: list[tuple[str, float, int]]
    total_attacks: int


def toxicity_concentration(scored: Iterable[ScoredComment], year: int | None = None,
                           buckets: Sequence[tuple[int, float]] = TOXICITY_BUCKETS) -> ToxicityReport:
    """How attacks spread over users by their yearly attack count.

    ``by_level`` maps toxicity level -> (% of attacks, number of users);
    ``buckets`` is the same aggregated into ranges.
    """
    tox: Counter = Counter()
    for s in _in_year(scored, year):
        if s.is_attack:
            tox[s.author_key] += 1
    total = sum(tox.values())
    level_users: Counter = Counter(tox.values())
    by_level = {lvl: (100.0 * lvl * n / total if total else 0.0, n)
                for lvl, n in sorted(level_users.items())}
    rows = []
    for lo, hi in buckets:
        attacks = sum(lvl * n for lvl, n in level_users.items() if lo <= lvl <= hi)
        users = sum(n for lvl, n in level_users.items() if lo <= lvl <= hi)
        rows.append((bucket_label(lo, hi), 100.0 * attacks / total if total else 0.0, users))
    return ToxicityReport(by_level, rows, total)


# --------------------------------------------------------------------------
# moderation


@dataclass
class ModerationReport:
    n_attacks: int
    warned: float
    blocked: float
    either: float
    warned_normalized: float
    blocked_normalized: float
    either_normalized: float
    precision: float
    window_days: float


def _event_times(events: Iterable[BlockEvent]) -> dict[tuple[str, str], list[datetime]]:
    out: dict[tuple[str, str], list[datetime]] = defaultdict(list)
    for user, evs in events_by_user(events).items():
        for ev in evs:
            out[(user, ev.kind)].append(ev.timestamp)
    return out


def _followed(times: list[datetime], t0: datetime, window: timedelta) -> bool:
    # half-open (t0, t0 + window]
    return bisect_right(times, t0 + window) > bisect_right(times, t0)


def moderation_followup(attacks: Iterable[ScoredComment], events: Iterable[BlockEvent],
                        window: timedelta = timedelta(days=7), precision: float = 1.0) -> ModerationReport:
    """Fraction of attacks followed by a warning / block / either within ``window``."""
    if not 0.0 < precision <= 1.0:
        raise ValueError(f"precision must lie in (0, 1], got {precision}")
    times = _event_times(events)
    n = w = b = e = 0
    for s in attacks:
        if not s.is_attack:
            continue
        n += 1
        user = s.comment.author_id
        fw = _followed(times.get((user, "warn"), []), s.comment.timestamp, window)
        fb = _followed(times.get((user, "block"), []), s.comment.timestamp, window)
        w += fw
        b += fb
        e += fw or fb
    rate = (lambda k: k / n) if n else (lambda k: 0.0)
    return ModerationReport(n, rate(w), rate(b), rate(e), rate(w) / precision, rate(b) / precision,
                            rate(e) / precision, precision, window.total_seconds() / 86400.0)


@dataclass
class CurvePoint:
    x: int
    probability: float
    n: int


@dataclass
class ModerationCurves:
    warn_given_attacks: list[CurvePoint]
    block_given_attacks: list[CurvePoint]
    block_given_prior_blocks: list[CurvePoint]


def moderation_conditional_curves(scored: Iterable[ScoredComment], events: Iterable[BlockEvent],
                                  year: int | None = None,
                                  window: timedelta = timedelta(days=7)) -> ModerationCurves:
    """Empirical moderation probabilities with per-point sample sizes.

    P(warn | k) and P(block | k): among users with k attacks in ``year``, the
    share with at least one such event in ``year``.  P(block | j): among
    attacks whose author had j earlier blocks, the share followed by a block
    within ``window``.
    """
    rows = _in_year(scored, year)
    ev = [x for x in events if year is None or x.timestamp.year == year]
    times = _event_times(ev)
    attacks: Counter = Counter()
    users = set()
    for s in rows:
        users.add(s.comment.author_id)
        if s.is_attack:
            attacks[s.comment.author_id] += 1
    warn_k: dict[int, list[int]] = defaultdict(list)
    block_k: dict[int, list[int]] = defaultdict(list)
    for u in users:
        k = attacks[u]
        warn_k[k].append(int(bool(times.get((u, "warn")))))
        block_k[k].append(int(bool(times.get((u, "block")))))
    prior: dict[int, list[int]] = defaultdict(list)
    for s in rows:
        if not s.is_attack:
            continue
        blocks = times.get((s.comment.author_id, "block"), [])
        j = bisect_left(blocks, s.comment.timestamp)
        prior[j].append(int(_followed(blocks, s.comment.timestamp, window)))

    def curve(d):
        return [CurvePoint(k, sum(v) / len(v), len(v)) for k, v in sorted(d.items())]

    return ModerationCurves(curve(warn_k), curve(block_k), curve(prior))


# --------------------------------------------------------------------------
# neighbouring attack fraction


@dataclass
class NeighborReport:
    n: int
    attacking_mean: float
    non_attacking_mean: float
    attacking_count: int
    non_attacking_count: int
    t: float
    p_value: float


def page_sequences(scored: Iterable[ScoredComment]) -> dict[str, list[ScoredComment]]:
    pages: dict[str, list[ScoredComment]] = defaultdict(list)
    for s in scored:
        pages[s.comment.page_id].append(s)
    for lst in pages.values():
        lst.sort(key=lambda s: (s.comment.timestamp, rev_sort_key(s.comment.rev_id)))
    return pages


def neighbor_fractions(scored: Iterable[ScoredComment], n: int) -> list[tuple[bool, float]]:
    """(center is attack, neighbouring attack fraction) for every comment with neighbours."""
    if n < 1:
        raise ValueError("n must be at least 1")
    out = []
    for page in page_sequences(scored).values():
        flags = np.array([s.is_attack for s in page], dtype=np.int64)
        csum = np.concatenate(([0], np.cumsum(flags)))
        m = len(flags)
        for i in range(m):
            lo, hi = max(0, i - n), min(m, i + n + 1)
            size = hi - lo - 1
            if size == 0:
                continue
            out.append((bool(flags[i]), float((csum[hi] - csum[lo] - flags[i]) / size)))
    return out


def neighboring_attack_fraction(scored: Iterable[ScoredComment], n: int) -> NeighborReport:
    """Mean per-comment neighbouring attack fraction for attacking vs other centres."""
    pairs = neighbor_fractions(scored, n)
    att = [f for a, f in pairs if a]
    non = [f for a, f in pairs if not a]
    test = diff_of_means_test(att, non)
    return NeighborReport(n, float(np.mean(att)) if att else 0.0, float(np.mean(non)) if non else 0.0,
                          len(att), len(non), test.t, test.p_value)


def scored_to_rows(scored: Iterable[ScoredComment]) -> Iterator[dict]:
    for s in scored:
        yield s.to_dict()


__all__ = [
    "ScoredComment", "ScoreStats", "score_corpus", "bootstrap_ci", "GroupPrevalence",
    "prevalence_by_group", "diff_of_means_test", "activity_histogram", "toxicity_concentration",
    "moderation_followup", "moderation_conditional_curves", "neighboring_attack_fraction",
    "format_timestamp",
]
