"""Talk-page comment extraction from revision histories.

A comment is whatever text an edit added to a talk page, found by diffing
each revision against its predecessor.  The diff is a recursive
longest-common-substring alignment over tokens; everything in the new
revision that the alignment leaves unmatched counts as added.
"""
from __future__ import annotations

import bisect
import json
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from itertools import groupby
from typing import Iterable, Iterator, Sequence

NAMESPACES = ("user_talk", "article_talk")
EVENT_KINDS = ("warn", "block")

_WORD_TOKEN = re.compile(r"\s+|\S+")


class OrderingError(ValueError):
    """Revisions of a page arrived out of order."""

    def __init__(self, page_id: str, rev_id: str, detail: str = "") -> None:
        self.page_id = page_id
        self.rev_id = rev_id
        msg = f"revision {rev_id!r} of page {page_id!r} is out of order"
        super().__init__(f"{msg}: {detail}" if detail else msg)


def parse_timestamp(value: str | datetime) -> datetime:
    if isinstance(value, datetime):
        ts = value
    else:
        ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def rev_sort_key(rev_id: str) -> tuple:
    # numeric ids compare numerically, anything else lexicographically
    return (0, int(rev_id), "") if rev_id.isdigit() else (1, 0, rev_id)


@dataclass(frozen=True)
class Revision:
    page_id: str
    namespace: str
    rev_id: str
    timestamp: datetime
    author_id: str
    author_registered: bool
    text: str

    @classmethod
    def from_dict(cls, d: dict) -> "Revision":
        ns = d["namespace"]
        if ns not in NAMESPACES:
            raise ValueError(f"unknown namespace {ns!r}")
        return cls(
            page_id=str(d["page_id"]),
            namespace=ns,
            rev_id=str(d["rev_id"]),
            timestamp=parse_timestamp(d["timestamp"]),
            author_id=str(d["author_id"]),
            author_registered=bool(d["author_registered"]),
            text=d.get("text") or "",
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["timestamp"] = format_timestamp(self.timestamp)
        return d


@dataclass(frozen=True)
class Comment:
    comment_id: str
    page_id: str
    namespace: str
    timestamp: datetime
    author_id: str
    author_registered: bool
    raw_markup: str
    clean_text: str

    @property
    def rev_id(self) -> str:
        return self.comment_id.rsplit(":", 1)[-1]

    @classmethod
    def from_dict(cls, d: dict) -> "Comment":
        raw = d["raw_markup"]
        if not isinstance(raw, str):
            raise ValueError("raw_markup must be a string")
        clean = d.get("clean_text")
        if clean is None:
            clean = strip_markup(raw)
        return cls(
            comment_id=str(d["comment_id"]),
            page_id=str(d["page_id"]),
            namespace=d["namespace"],
            timestamp=parse_timestamp(d["timestamp"]),
            author_id=str(d["author_id"]),
            author_registered=bool(d["author_registered"]),
            raw_markup=raw,
            clean_text=clean,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["timestamp"] = format_timestamp(self.timestamp)
        return d


@dataclass
class FilterRules:
    bot_author_patterns: list[str] = field(default_factory=list)
    admin_template_patterns: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        # re.error surfaces here rather than mid-stream
        self._bot = [re.compile(p) for p in self.bot_author_patterns]
        self._admin = [re.compile(p) for p in self.admin_template_patterns]

    @classmethod
    def from_files(cls, bot_path=None, admin_path=None) -> "FilterRules":
        def read(path):
            if path is None:
                return []
            with open(path, encoding="utf-8") as fh:
                return [ln.rstrip("\n") for ln in fh if ln.strip()]

        return cls(read(bot_path), read(admin_path))

    def is_bot(self, author_id: str) -> bool:
        return any(p.search(author_id) for p in self._bot)

    def is_admin(self, raw_markup: str) -> bool:
        return any(p.search(raw_markup) for p in self._admin)


@dataclass(frozen=True)
class BlockEvent:
    user_id: str
    timestamp: datetime
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"event kind must be one of {EVENT_KINDS}, got {self.kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "BlockEvent":
        return cls(str(d["user_id"]), parse_timestamp(d["timestamp"]), d["kind"])

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "timestamp": format_timestamp(self.timestamp),
                "kind": self.kind}


# --------------------------------------------------------------------------
# diff


def tokenize(text: str, unit: str = "word") -> list[str]:
    """Split text into diff tokens.

    ``word`` yields alternating runs of non-whitespace and whitespace, so the
    tokens concatenate back to ``text``; ``char`` yields single characters.
    """
    if unit == "char":
        return list(text)
    if unit == "word":
        return _WORD_TOKEN.findall(text)
    raise ValueError(f"unknown token unit {unit!r}")


def _longest_common_run(old, new, olo, ohi, nlo, nhi, positions):
    """Longest common token run of old[olo:ohi] and new[nlo:nhi].

    Ties go to the run starting earliest in ``new``, then earliest in ``old``.
    Returns (old_start, new_start, length).
    """
    best_o = best_n = best_len = 0
    prev: dict[int, int] = {}
    for j in range(nlo, nhi):
        cur: dict[int, int] = {}
        occ = positions.get(new[j])
        if not occ:
            prev = cur
            continue
        for idx in range(bisect.bisect_left(occ, olo), len(occ)):
            k = occ[idx]
            if k >= ohi:
                break
            run = prev.get(k - 1, 0) + 1
            cur[k] = run
            if run > best_len:
                best_len = run
                best_o = k - run + 1
                best_n = j - run + 1
        prev = cur
    return best_o, best_n, best_len


def align(old: Sequence[str], new: Sequence[str], min_match: int = 2) -> list[bool]:
    """Per-token flags for ``new``: True where the token is aligned to ``old``.

    A common run shorter than ``min_match`` is only accepted when one of the
    two sub-sequences is itself too short to hold a run of that length.
    """
    # intern tokens so the inner loop compares ints
    ids: dict[str, int] = {}
    o = [ids.setdefault(t, len(ids)) for t in old]
    n = [ids.setdefault(t, len(ids)) for t in new]
    positions: dict[int, list[int]] = defaultdict(list)
    for i, t in enumerate(o):
        positions[t].append(i)

    matched = [False] * len(n)
    stack = [(0, len(o), 0, len(n))]
    while stack:
        olo, ohi, nlo, nhi = stack.pop()
        if olo >= ohi or nlo >= nhi:
            continue
        bo, bn, length = _longest_common_run(o, n, olo, ohi, nlo, nhi, positions)
        need = min(min_match, ohi - olo, nhi - nlo)
        if length == 0 or length < need:
            continue
        for j in range(bn, bn + length):
            matched[j] = True
        stack.append((bo + length, ohi, bn + length, nhi))
        stack.append((olo, bo, nlo, bn))
    return matched


def added_runs(tokens: Sequence[str], matched: Sequence[bool]) -> list[str]:
    segments, run = [], []
    for tok, m in zip(tokens, matched):
        if m:
            if run:
                segments.append("".join(run))
                run = []
        else:
            run.append(tok)
    if run:
        segments.append("".join(run))
    return segments


def diff_added_text(prev: str, next: str, unit: str = "word", min_match: int = 2) -> list[str]:
    """Text segments present in ``next`` but not aligned to ``prev``, in order."""
    if prev == next:
        return []
    new_tokens = tokenize(next, unit)
    matched = align(tokenize(prev, unit), new_tokens, min_match)
    return added_runs(new_tokens, matched)


# --------------------------------------------------------------------------
# markup


def _drop_templates(text: str) -> str:
    # innermost-first so nested templates disappear whole
    pattern = re.compile(r"\{\{(?:(?!\{\{|\}\}).)*\}\}", re.S)
    while True:
        stripped = pattern.sub("", text)
        if stripped == text:
            return text
        text = stripped


# Applied in order; the table is run to a fixed point so stripping is idempotent.
MARKUP_RULES: list[tuple[str, object]] = [
    ("html_comment", (re.compile(r"<!--.*?(?:-->|$)", re.S), "")),
    ("template", _drop_templates),
    ("piped_link", (re.compile(r"\[\[[^\[\]|]*\|([^\[\]]*)\]\]"), r"\1")),
    ("plain_link", (re.compile(r"\[\[([^\[\]|]*)\]\]"), r"\1")),
    ("labelled_url", (re.compile(r"\[(?:https?:)?//[^\s\]]+\s+([^\]]*)\]"), r"\1")),
    ("bare_bracket_url", (re.compile(r"\[(?:https?:)?//[^\s\]]*\]"), "")),
    ("html_tag", (re.compile(r"</?[A-Za-z][^<>]*>"), "")),
    ("emphasis", (re.compile(r"'{2,}"), "")),
    ("signature", (re.compile(r"~{3,5}"), "")),
    ("heading", (re.compile(r"^\s*=+\s*(.*?)\s*=+\s*$", re.M), r"\1")),
    ("whitespace", (re.compile(r"\s+"), " ")),
]


def _apply_rules(text: str) -> str:
    for _, rule in MARKUP_RULES:
        if callable(rule):
            text = rule(text)
        else:
            pattern, repl = rule
            text = pattern.sub(repl, text)
    return text.strip()


def strip_markup(wikitext: str) -> str:
    """Reduce MediaWiki/HTML markup to plain text."""
    text = wikitext
    for _ in range(100):
        stripped = _apply_rules(text)
        if stripped == text:
            break
        text = stripped
    return text


# --------------------------------------------------------------------------
# extraction / filtering / sampling


def extract_comments(
    revisions: Iterable[Revision], unit: str = "word", min_match: int = 2
) -> Iterator[Comment]:
    """Yield one Comment per revision of a single page that added text."""
    prev_text = ""
    prev = None
    for rev in revisions:
        if prev is not None:
            if rev.page_id != prev.page_id:
                raise OrderingError(rev.page_id, rev.rev_id,
                                    f"stream mixes pages {prev.page_id!r} and {rev.page_id!r}")
            if (rev.timestamp, rev_sort_key(rev.rev_id)) <= (prev.timestamp, rev_sort_key(prev.rev_id)):
                raise OrderingError(rev.page_id, rev.rev_id,
                                    f"follows revision {prev.rev_id!r}")
        segments = diff_added_text(prev_text, rev.text, unit, min_match)
        raw = "".join(segments)
        if raw:
            yield Comment(
                comment_id=f"{rev.page_id}:{rev.rev_id}",
                page_id=rev.page_id,
                namespace=rev.namespace,
                timestamp=rev.timestamp,
                author_id=rev.author_id,
                author_registered=rev.author_registered,
                raw_markup=raw,
                clean_text=strip_markup(raw),
            )
        prev_text = rev.text
        prev = rev


def extract_corpus(revisions: Iterable[Revision], unit: str = "word",
                   min_match: int = 2) -> Iterator[Comment]:
    """Extract comments from a stream holding many pages, each contiguous."""
    seen: set[str] = set()
    for page_id, page_revs in groupby(revisions, key=lambda r: r.page_id):
        if page_id in seen:
            first = next(page_revs)
            raise OrderingError(page_id, first.rev_id, "page revisions are not contiguous")
        seen.add(page_id)
        yield from extract_comments(page_revs, unit, min_match)


@dataclass
class FilterStats:
    counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def bump(self, namespace: str, stage: str) -> None:
        per_ns = self.counts.setdefault(namespace, {"all": 0, "no_bot": 0, "no_bot_admin": 0})
        per_ns[stage] += 1

    def to_dict(self) -> dict:
        return {ns: dict(v) for ns, v in sorted(self.counts.items())}


def iter_filter(comments: Iterable[Comment], rules: FilterRules,
                stats: FilterStats) -> Iterator[Comment]:
    for c in comments:
        stats.bump(c.namespace, "all")
        if rules.is_bot(c.author_id):
            continue
        stats.bump(c.namespace, "no_bot")
        if rules.is_admin(c.raw_markup):
            continue
        stats.bump(c.namespace, "no_bot_admin")
        yield c


def filter_comments(comments: Iterable[Comment], rules: FilterRules) -> tuple[list[Comment], FilterStats]:
    """Drop bot-authored comments, then administrative template comments."""
    stats = FilterStats()
    kept = list(iter_filter(comments, rules, stats))
    return kept, stats


def sample_around_blocks(comments: Iterable[Comment], events: Iterable[BlockEvent],
                         k: int = 5) -> list[Comment]:
    """The ``k`` comments by each sanctioned user closest in time to each event."""
    if k < 1:
        raise ValueError("k must be at least 1")
    by_user: dict[str, list[Comment]] = defaultdict(list)
    for c in comments:
        by_user[c.author_id].append(c)
    for lst in by_user.values():
        lst.sort(key=lambda c: (c.timestamp, rev_sort_key(c.rev_id), c.comment_id))

    picked: dict[str, Comment] = {}
    for ev in events:
        mine = by_user.get(ev.user_id)
        if not mine:
            continue
        nearest = sorted(
            enumerate(mine),
            key=lambda ic: (abs((ic[1].timestamp - ev.timestamp).total_seconds()), ic[0]),
        )[:k]
        for _, c in nearest:
            picked.setdefault(c.comment_id, c)
    return sorted(picked.values(), key=lambda c: (c.timestamp, c.comment_id))


# --------------------------------------------------------------------------
# jsonl io


def read_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def write_jsonl(path, rows: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=False))
            fh.write("\n")
            n += 1
    return n


def read_revisions(path) -> Iterator[Revision]:
    for d in read_jsonl(path):
        yield Revision.from_dict(d)


def read_comments(path) -> Iterator[Comment]:
    for d in read_jsonl(path):
        yield Comment.from_dict(d)


def read_events(path) -> list[BlockEvent]:
    return [BlockEvent.from_dict(d) for d in read_jsonl(path)]


def events_by_user(events: Iterable[BlockEvent]) -> dict[str, list[BlockEvent]]:
    out: dict[str, list[BlockEvent]] = defaultdict(list)
    for ev in events:
        out[ev.user_id].append(ev)
    for lst in out.values():
        lst.sort(key=lambda e: e.timestamp)
    return dict(out)


def count_in_window(times: list[datetime], start: datetime, end: datetime) -> int:
    """Number of sorted ``times`` in the half-open window (start, end]."""
    return bisect.bisect_right(times, end) - bisect.bisect_right(times, start)
