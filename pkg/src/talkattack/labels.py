"""Crowd annotation ingest, cleaning, worker gating and label aggregation."""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
SPLIT_RATIO = (3, 1, 1)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    comment_id: str
    worker_id: str
    is_attack: bool
    not_english: bool = False


@dataclass(frozen=True)
class LabelDistribution:
    comment_id: str
    n: int
    n_attack: int

    @property
    def attack_fraction(self) -> float:
        return self.n_attack / self.n

    @property
    def oh_label(self) -> int:
        # strict majority; a tie is not an attack
        return int(2 * self.n_attack > self.n)

    def target(self, label_type: str) -> tuple[float, float]:
        """Training distribution (p_not_attack, p_attack)."""
        if label_type == "ED":
            f = Fraction(self.n_attack, self.n)
            return float(1 - f), float(f)
        if label_type == "OH":
            y = self.oh_label
            return float(1 - y), float(y)
        raise ValueError(f"unknown label type {label_type!r}")

    def to_dict(self) -> dict:
        return {"comment_id": self.comment_id, "n": self.n,
                "attack_fraction": self.attack_fraction, "oh_label": self.oh_label}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelDistribution":
        n = int(d["n"])
        return cls(str(d["comment_id"]), n, int(round(float(d["attack_fraction"]) * n)))


@dataclass
class IngestResult:
    records: list[AnnotationRecord]
    errors: list[str]
    warnings: list[str]


def _flag(value: str) -> bool:
    if value not in ("0", "1"):
        raise ValueError(f"expected 0 or 1, got {value!r}")
    return value == "1"


def ingest_annotations(path) -> IngestResult:
    """Parse an annotations CSV, reporting every malformed row by line number.

    Exact (comment, worker, is_attack) duplicates collapse to one record.
    """
    required = ["comment_id", "worker_id", "is_attack", "not_english"]
    records: list[AnnotationRecord] = []
    errors: list[str] = []
    warnings: list[str] = []
    seen: set[tuple[str, str, bool]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: header lacks columns {missing}")
        for row in reader:
            line = reader.line_num
            try:
                cid = (row["comment_id"] or "").strip()
                wid = (row["worker_id"] or "").strip()
                if not cid or not wid:
                    raise ValueError("empty comment_id or worker_id")
                rec = AnnotationRecord(cid, wid, _flag((row["is_attack"] or "").strip()),
                                       _flag((row["not_english"] or "").strip()))
            except (ValueError, AttributeError) as exc:
                errors.append(f"line {line}: {exc}")
                continue
            key = (rec.comment_id, rec.worker_id, rec.is_attack)
            if key in seen:
                msg = f"line {line}: duplicate annotation {key} dropped"
                warnings.append(msg)
                log.warning(msg)
                continue
            seen.add(key)
            records.append(rec)
    return IngestResult(records, errors, warnings)


def write_annotations(path, records: Iterable[AnnotationRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["comment_id", "worker_id", "is_attack", "not_english"])
        for r in records:
            w.writerow([r.comment_id, r.worker_id, int(r.is_attack), int(r.not_english)])


def clean_annotations(records: Sequence[AnnotationRecord]) -> list[AnnotationRecord]:
    """Remove self-contradicting workers per comment, then non-English comments."""
    values: dict[tuple[str, str], set[bool]] = defaultdict(set)
    for r in records:
        values[(r.comment_id, r.worker_id)].add(r.is_attack)
    kept = [r for r in records if len(values[(r.comment_id, r.worker_id)]) == 1]

    flags: dict[str, dict[str, bool]] = defaultdict(dict)
    for r in kept:
        prev = flags[r.comment_id].get(r.worker_id, False)
        flags[r.comment_id][r.worker_id] = prev or r.not_english
    non_english = {cid for cid, fl in flags.items() if 2 * sum(fl.values()) > len(fl)}
    return [r for r in kept if r.comment_id not in non_english]


@dataclass
class WorkerGate:
    retained: set[str]
    accuracy: dict[str, float]
    ungated: set[str]


def gate_workers(records: Sequence[AnnotationRecord], gold: Mapping[str, bool],
                 min_accuracy: float = 0.7) -> WorkerGate:
    """Keep workers whose accuracy on gold comments is at least ``min_accuracy``.

    Workers who never saw a gold comment are kept and reported as ungated.
    """
    if not gold:
        raise ConfigurationError("worker gating requested with an empty gold set")
    hits: Counter = Counter()
    seen: Counter = Counter()
    workers = set()
    for r in records:
        workers.add(r.worker_id)
        if r.comment_id in gold:
            seen[r.worker_id] += 1
            hits[r.worker_id] += int(r.is_attack == gold[r.comment_id])
    accuracy = {w: hits[w] / seen[w] for w in seen}
    ungated = workers - set(seen)
    # compare as fractions so 7/10 vs 0.7 is not at the mercy of rounding
    threshold = Fraction(str(min_accuracy))
    passed = {w for w in seen if Fraction(hits[w], seen[w]) >= threshold}
    return WorkerGate(passed | ungated, accuracy, ungated)


def read_gold(path) -> dict[str, bool]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["comment_id"]: _flag(row["is_attack"].strip()) for row in csv.DictReader(fh)}


def aggregate_labels(records: Iterable[AnnotationRecord]) -> dict[str, LabelDistribution]:
    """Per-comment annotation count and attack count; OH and ED both derive from it."""
    n: Counter = Counter()
    pos: Counter = Counter()
    for r in records:
        n[r.comment_id] += 1
        pos[r.comment_id] += int(r.is_attack)
    return {cid: LabelDistribution(cid, n[cid], pos[cid]) for cid in sorted(n)}


def units_from_records(records: Iterable[AnnotationRecord]) -> dict[str, list[int]]:
    units: dict[str, list[int]] = defaultdict(list)
    for r in records:
        units[r.comment_id].append(int(r.is_attack))
    return dict(units)


def krippendorff_alpha(units: Mapping[Hashable, Sequence[Hashable]] | Sequence[AnnotationRecord]) -> float:
    """Nominal Krippendorff's alpha via the coincidence matrix.

    ``units`` maps each comment to the list of values its annotators gave
    (or is a sequence of AnnotationRecord).  Units with fewer than two
    values are not pairable and are ignored.  Returns NaN when expected
    disagreement is zero (every pairable value identical).
    """
    if not isinstance(units, Mapping):
        units = units_from_records(units)
    coincidence: dict[tuple, Fraction] = defaultdict(Fraction)
    for values in units.values():
        m = len(values)
        if m < 2:
            continue
        counts = Counter(values)
        for c, nc in counts.items():
            for k, nk in counts.items():
                pairs = nc * (nc - 1) if c == k else nc * nk
                coincidence[(c, k)] += Fraction(pairs, m - 1)
    if not coincidence:
        raise ValueError("no unit has two or more annotations")
    marginals: dict = defaultdict(Fraction)
    for (c, _), v in coincidence.items():
        marginals[c] += v
    total = sum(marginals.values())
    observed = sum(v for (c, k), v in coincidence.items() if c != k)
    expected = sum(marginals[c] * marginals[k] for c in marginals for k in marginals if c != k)
    if expected == 0:
        return math.nan
    return float(1 - (total - 1) * observed / expected)


@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    seed: int

    def ids(self, split: str) -> list[str]:
        return [cid for cid, s in self.assignment.items() if s == split]

    def sizes(self) -> dict[str, int]:
        c = Counter(self.assignment.values())
        return {s: c.get(s, 0) for s in SPLITS}


def _split_sizes(n: int) -> list[int]:
    total = sum(SPLIT_RATIO)
    ideal = [Fraction(n * r, total) for r in SPLIT_RATIO]
    sizes = [math.floor(x) for x in ideal]
    # largest remainder, earlier split wins ties
    order = sorted(range(len(sizes)), key=lambda i: (-(ideal[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_dataset(comment_ids: Iterable[str], seed: int,
                  stratify_by: Mapping[str, Hashable] | None = None) -> SplitAssignment:
    """Seeded 3:1:1 train/dev/test partition, optionally per stratum."""
    ids = sorted(set(comment_ids))
    if len(ids) < sum(SPLIT_RATIO):
        raise ValueError(f"need at least {sum(SPLIT_RATIO)} comments to split, got {len(ids)}")
    strata: dict = defaultdict(list)
    for cid in ids:
        key = stratify_by[cid] if stratify_by is not None else None
        strata[repr(key)].append(cid)
    assignment: dict[str, str] = {}
    for si, key in enumerate(sorted(strata)):
        members = strata[key]
        rng = np.random.default_rng([seed, si])
        order = rng.permutation(len(members))
        start = 0
        for split, size in zip(SPLITS, _split_sizes(len(members))):
            for idx in order[start:start + size]:
                assignment[members[idx]] = split
            start += size
    return SplitAssignment(dict(sorted(assignment.items())), seed)
