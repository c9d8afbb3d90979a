"""Synthetic talk-page corpora with planted attacks, for tests and demos.

Attacking comments mix a few words from a small attack vocabulary (with
character-level obfuscations) into ordinary discussion text.  Simulated
annotators see the planted truth and flip it with a fixed noise rate.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .corpus import Comment, Revision, format_timestamp, strip_markup

NEUTRAL = (
    "the article source page edit revert citation section talk please thanks for your help "
    "consensus policy reference image template discussion wording paragraph sentence link "
    "would could should maybe think agree disagree about this that with have been added "
    "removed changed review draft history notable reliable summary update infobox category "
    "merge move rename propose support oppose comment question answer here there again also"
).split()

ATTACK = (
    "idiot moron stupid loser pathetic clown dumb ignorant imbecile jerk"
).split()

HEDGES = ("you are a", "what a", "stop being a", "such a", "you")

BOT_NAMES = ("CleanupBot", "ArchiveBot", "LinkFixBot")
ADMIN_TEMPLATE = "{{welcome}} Welcome to the encyclopedia! == Welcome =="


def _obfuscate(word: str, rng: np.random.Generator) -> str:
    r = rng.random()
    if r < 0.15:
        return word.replace("o", "0").replace("i", "1")
    if r < 0.25:
        return word.upper()
    if r < 0.35:
        i = int(rng.integers(1, len(word)))
        return word[:i] + "*" + word[i:]
    return word


def make_text(attack: bool, rng: np.random.Generator, length: int = 40) -> str:
    words = [NEUTRAL[int(i)] for i in rng.integers(0, len(NEUTRAL), size=length)]
    if attack:
        for _ in range(int(rng.integers(1, 3))):
            phrase = f"{HEDGES[int(rng.integers(len(HEDGES)))]} {_obfuscate(ATTACK[int(rng.integers(len(ATTACK)))], rng)}"
            words.insert(int(rng.integers(0, len(words) + 1)), phrase)
    text = " ".join(words)
    return text[0].upper() + text[1:] + "."


@dataclass
class SyntheticCorpus:
    comments: list[Comment]
    truth: dict[str, bool]


def generate_comments(n: int, prevalence: float, seed: int, n_pages: int | None = None,
                      n_users: int | None = None, start: datetime | None = None,
                      length: int = 40) -> SyntheticCorpus:
    """``n`` comments, exactly ``round(n * prevalence)`` of them attacks."""
    rng = np.random.default_rng(seed)
    n_pages = n_pages or max(1, n // 20)
    n_users = n_users or max(2, n // 8)
    start = start or datetime(2015, 1, 1, tzinfo=timezone.utc)
    n_attack = int(round(n * prevalence))
    is_attack = np.zeros(n, dtype=bool)
    is_attack[rng.choice(n, size=n_attack, replace=False)] = True
    # heavy-tailed activity: a few prolific users, many occasional ones
    weights = 1.0 / np.arange(1, n_users + 1) ** 0.8
    weights /= weights.sum()
    authors = rng.choice(n_users, size=n, p=weights)
    pages = rng.integers(0, n_pages, size=n)
    offsets = np.sort(rng.integers(0, 365 * 86400, size=n))
    comments = []
    truth = {}
    for i in range(n):
        a = int(authors[i])
        registered = a % 3 != 0
        author = f"User{a}" if registered else f"10.0.{a // 256}.{a % 256}"
        text = make_text(bool(is_attack[i]), rng, length)
        cid = f"p{int(pages[i])}:{i + 1}"
        comments.append(Comment(
            comment_id=cid, page_id=f"p{int(pages[i])}",
            namespace="user_talk" if int(pages[i]) % 2 else "article_talk",
            timestamp=start + timedelta(seconds=int(offsets[i])),
            author_id=author, author_registered=registered,
            raw_markup=text, clean_text=strip_markup(text)))
        truth[cid] = bool(is_attack[i])
    return SyntheticCorpus(comments, truth)


def annotate(truth: dict[str, bool], seed: int, per_comment: int = 10, noise: float = 0.1,
             n_workers: int = 100, overrides: dict[str, int] | None = None) -> list[tuple[str, str, int, int]]:
    """(comment_id, worker_id, is_attack, not_english) rows from noisy simulated workers."""
    rng = np.random.default_rng(seed)
    rows = []
    for cid in sorted(truth):
        k = (overrides or {}).get(cid, per_comment)
        workers = rng.choice(n_workers, size=k, replace=k > n_workers)
        flips = rng.random(k) < noise
        for w, flip in zip(workers, flips):
            rows.append((cid, f"w{int(w)}", int(truth[cid] != bool(flip)), 0))
    return rows


def revisions_from_comments(comments: list[Comment]) -> list[Revision]:
    """Page histories whose successive diffs reproduce ``comments``."""
    by_page: dict[str, list[Comment]] = {}
    for c in comments:
        by_page.setdefault(c.page_id, []).append(c)
    revs = []
    for page in sorted(by_page):
        text = ""
        for c in sorted(by_page[page], key=lambda c: (c.timestamp, int(c.rev_id))):
            text = text + ("\n\n" if text else "") + c.raw_markup
            revs.append(Revision(page, c.namespace, c.rev_id, c.timestamp, c.author_id,
                                 c.author_registered, text))
    return revs


def moderation_events(corpus: SyntheticCorpus, seed: int, p_warn: float = 0.3,
                      p_block: float = 0.2) -> list[dict]:
    rng = np.random.default_rng(seed)
    events = []
    for c in corpus.comments:
        if not corpus.truth[c.comment_id]:
            continue
        if rng.random() < p_warn:
            events.append({"user_id": c.author_id, "kind": "warn",
                           "timestamp": format_timestamp(c.timestamp + timedelta(hours=int(rng.integers(1, 240))))})
        if rng.random() < p_block:
            events.append({"user_id": c.author_id, "kind": "block",
                           "timestamp": format_timestamp(c.timestamp + timedelta(hours=int(rng.integers(1, 240))))})
    events.sort(key=lambda e: (e["user_id"], e["timestamp"], e["kind"]))
    return events


def write_fixture(directory, n: int = 200, seed: int = 7, prevalence: float = 0.1,
                  baseline: int = 40) -> dict[str, str]:
    """Write a complete pipeline input set and a config file into ``directory``.

    The first ``baseline`` comment ids (sorted) get 20 annotations each so
    the ensemble baseline stage has material; a few bot and administrative
    comments are mixed in for the filter stage.
    """
    os.makedirs(directory, exist_ok=True)
    corpus = generate_comments(n, prevalence, seed, n_pages=max(2, n // 25), n_users=max(4, n // 5))
    comments = list(corpus.comments)
    # a bot comment and an admin template comment on top of the labelled corpus
    extra_ts = comments[-1].timestamp + timedelta(days=1)
    comments.append(Comment("p0:900001", "p0", "article_talk", extra_ts, BOT_NAMES[0], True,
                            "Archiving old threads.", "Archiving old threads."))
    comments.append(Comment("p1:900002", "p1", "user_talk", extra_ts + timedelta(hours=1), "User1", True,
                            ADMIN_TEMPLATE, strip_markup(ADMIN_TEMPLATE)))
    revs = revisions_from_comments(comments)
    paths = {k: os.path.join(directory, v) for k, v in {
        "revisions": "revisions.jsonl", "annotations": "annotations.csv", "gold": "gold.csv",
        "moderation": "moderation.jsonl", "bot_rules": "bot_rules.txt",
        "admin_rules": "admin_rules.txt", "config": "pipeline.ini"}.items()}
    with open(paths["revisions"], "w", encoding="utf-8") as fh:
        for r in revs:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")
    ids = sorted(corpus.truth)
    rows = annotate(corpus.truth, seed + 1, per_comment=10, noise=0.1, n_workers=30,
                    overrides={cid: 20 for cid in ids[:baseline]})
    with open(paths["annotations"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["comment_id", "worker_id", "is_attack", "not_english"])
        w.writerows(rows)
    with open(paths["gold"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["comment_id", "is_attack"])
        for cid in ids[:20]:
            w.writerow([cid, int(corpus.truth[cid])])
    with open(paths["moderation"], "w", encoding="utf-8") as fh:
        for ev in moderation_events(corpus, seed + 2):
            fh.write(json.dumps(ev) + "\n")
    with open(paths["bot_rules"], "w", encoding="utf-8") as fh:
        fh.write("Bot$\n")
    with open(paths["admin_rules"], "w", encoding="utf-8") as fh:
        fh.write(r"\{\{welcome\}\}" + "\n")
    with open(paths["config"], "w", encoding="utf-8") as fh:
        fh.write(FIXTURE_CONFIG.format(**{k: os.path.basename(v) for k, v in paths.items()}, seed=seed))
    return paths


FIXTURE_CONFIG = """\
[paths]
revisions = {revisions}
annotations = {annotations}
gold = {gold}
moderation = {moderation}
bot_rules = {bot_rules}
admin_rules = {admin_rules}
out = out

[run]
seed = {seed}

[features]
ngram_kind = char
n_min = 1
n_max = 4

[tune]
kinds = LR
ngram_kinds = char, word
label_types = ED, OH
n_iter = 3
grid.max_features = 2000, 5000
grid.learning_rate = 0.3, 0.1
grid.epochs = 5, 10
grid.batch_size = 16
grid.l2 = 0, 1e-5
grid.weighting = count
grid.normalize = false

[baseline]
n_t = 10
n_p_values = 1, 3, 5
runs = 5

[analyze]
year = 2015
bootstrap_b = 200
"""
