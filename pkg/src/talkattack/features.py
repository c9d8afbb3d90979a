"""Bag-of-n-gram featurization (word or character n-grams)."""
from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

VOCAB_VERSION = 1
# documents per vectorization chunk; keeps int32 keys and working set small
CHUNK = 512

_EDGE_PUNCT = re.compile(r"^[^\w]+|[^\w]+$")


@dataclass(frozen=True)
class FeatureSpec:
    ngram_kind: str = "char"
    n_min: int = 1
    n_max: int = 5
    max_features: int = 30000
    weighting: str = "count"
    lowercase: bool = True
    normalize: bool = False

    def __post_init__(self) -> None:
        if self.ngram_kind not in ("word", "char"):
            raise ValueError(f"ngram_kind must be 'word' or 'char', got {self.ngram_kind!r}")
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError(f"need 1 <= n_min <= n_max, got {self.n_min}..{self.n_max}")
        if self.max_features < 1:
            raise ValueError("max_features must be positive")
        if self.weighting not in ("count", "binary"):
            raise ValueError(f"weighting must be 'count' or 'binary', got {self.weighting!r}")

    @classmethod
    def default_for(cls, kind: str, **overrides) -> "FeatureSpec":
        n_max = 2 if kind == "word" else 5
        return cls(ngram_kind=kind, n_min=1, n_max=n_max, **overrides)

    def with_(self, **changes) -> "FeatureSpec":
        return replace(self, **changes)


def word_tokens(text: str) -> list[str]:
    """Whitespace split with punctuation trimmed from token edges."""
    out = []
    for tok in text.split():
        tok = _EDGE_PUNCT.sub("", tok)
        if tok:
            out.append(tok)
    return out


def ngrams(text: str, spec: FeatureSpec) -> list[str]:
    """Every n-gram occurrence in ``text`` (with repeats)."""
    if spec.lowercase:
        text = text.lower()
    grams: list[str] = []
    if spec.ngram_kind == "char":
        for n in range(spec.n_min, spec.n_max + 1):
            grams.extend(text[i:i + n] for i in range(len(text) - n + 1))
    else:
        toks = word_tokens(text)
        for n in range(spec.n_min, spec.n_max + 1):
            grams.extend(" ".join(toks[i:i + n]) for i in range(len(toks) - n + 1))
    return grams


@dataclass(frozen=True)
class SparseVector:
    indices: tuple[int, ...]
    values: tuple[float, ...]
    dim: int

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[list(self.indices)] = self.values
        return out

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (np.asarray(self.values, dtype=float), np.asarray(self.indices, dtype=np.int64),
             np.array([0, len(self.indices)])),
            shape=(1, self.dim))


class Vocabulary:
    """Immutable n-gram -> column map."""

    def __init__(self, ngrams: Sequence[str], spec: FeatureSpec, built_from: str = "") -> None:
        self.ngrams = tuple(ngrams)
        self.spec = spec
        self.built_from = built_from
        self.index = {g: i for i, g in enumerate(self.ngrams)}
        if len(self.index) != len(self.ngrams):
            raise ValueError("duplicate n-grams in vocabulary")
        self._packer = _CharAutomaton.build(self) if spec.ngram_kind == "char" else None

    def __len__(self) -> int:
        return len(self.ngrams)

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256(self.to_json().encode("utf-8"))
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"version": VOCAB_VERSION, "spec": asdict(self.spec),
                "built_from": self.built_from, "ngrams": list(self.ngrams)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        if d.get("version") != VOCAB_VERSION:
            raise ValueError(f"unsupported vocabulary version {d.get('version')!r}")
        return cls(d["ngrams"], FeatureSpec(**d["spec"]), d.get("built_from", ""))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def corpus_fingerprint(texts: Iterable[str]) -> str:
    h = hashlib.sha256()
    for t in texts:
        h.update(t.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


def build_vocab(texts: Sequence[str], spec: FeatureSpec) -> Vocabulary:
    """Top ``max_features`` n-grams by corpus frequency; ties lexicographic."""
    if len(texts) == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter = Counter()
    for t in texts:
        counts.update(ngrams(t, spec))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: spec.max_features]
    return Vocabulary([g for g, _ in ranked], spec, corpus_fingerprint(texts))


class _CharAutomaton:
    """Prefix automaton over the vocabulary's character n-grams.

    State 0 is dead, state 1 the empty prefix.  Characters outside the
    vocabulary alphabet get code 0 and kill every gram that spans them, as
    do document boundaries.  Walking all start positions in lock-step turns
    gram lookup into one table gather per gram length.
    """

    MAX_TABLE = 50_000_000

    @classmethod
    def build(cls, vocab: Vocabulary) -> "_CharAutomaton | None":
        chars = sorted({ch for g in vocab.ngrams for ch in g})
        code = {c: i + 1 for i, c in enumerate(chars)}
        edges: list[dict[int, int]] = [{}, {}]
        cols = [-1, -1]
        for col, g in enumerate(vocab.ngrams):
            s = 1
            for ch in g:
                nxt = edges[s].get(code[ch])
                if nxt is None:
                    nxt = len(edges)
                    edges[s][code[ch]] = nxt
                    edges.append({})
                    cols.append(-1)
                s = nxt
            cols[s] = col
        if len(edges) * (len(chars) + 1) > cls.MAX_TABLE:
            return None
        width = len(chars) + 1
        table = np.zeros(len(edges) * width, dtype=np.int32)
        for s, out in enumerate(edges):
            for c, t in out.items():
                table[s * width + c] = t * width
        alphabet = np.array([ord(c) for c in chars], dtype=np.int64)
        # states are stored as offsets (state * width) so a step is one add + gather
        offset_col = np.full(len(edges) * width, -1, dtype=np.int32)
        offset_col[np.arange(len(edges)) * width] = cols
        return cls(alphabet, table, offset_col, vocab.spec, width)

    def __init__(self, alphabet, table, offset_col, spec, width) -> None:
        self.alphabet = alphabet
        self.table = table
        self.offset_col = offset_col
        self.spec = spec
        self.width = width

    def transform(self, texts: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """(row, col) for every in-vocabulary gram occurrence, as int32."""
        spec = self.spec
        if spec.lowercase:
            texts = [t.lower() for t in texts]
        lengths = np.fromiter((len(t) + 1 for t in texts), dtype=np.int32, count=len(texts))
        joined = "\x00".join(texts) + "\x00"
        cp = np.frombuffer(joined.encode("utf-32-le"), dtype=np.uint32)
        if len(self.alphabet):
            pos = np.minimum(np.searchsorted(self.alphabet, cp), len(self.alphabet) - 1)
            codes = np.where(self.alphabet[pos] == cp, pos + 1, 0).astype(np.int32)
        else:
            codes = np.zeros(len(cp), dtype=np.int32)
        # separators are code 0 whatever character they happen to be
        codes[np.cumsum(lengths) - 1] = 0
        doc = np.repeat(np.arange(len(texts), dtype=np.int32), lengths)
        rows, cols = [], []
        offset = np.full(len(codes), self.width, dtype=np.int32)  # root state
        for n in range(1, spec.n_max + 1):
            m = len(codes) - n + 1
            if m <= 0:
                break
            offset = self.table[offset[:m] + codes[n - 1:]]
            if n < spec.n_min:
                continue
            col = self.offset_col[offset]
            hit = np.flatnonzero(col >= 0)
            if not len(hit):
                if not offset.any():
                    break
                continue
            rows.append(doc[hit])
            cols.append(col[hit])
        if rows:
            return np.concatenate(rows), np.concatenate(cols)
        return np.empty(0, np.int32), np.empty(0, np.int32)


def _finish(rows, cols, n_docs: int, vocab: Vocabulary) -> sp.csr_matrix:
    V = len(vocab)
    dtype = np.int32 if n_docs * V < 2**31 else np.int64
    key = np.sort(rows.astype(dtype) * dtype(V) + cols.astype(dtype))
    if len(key):
        start = np.empty(len(key), dtype=bool)
        start[0] = True
        np.not_equal(key[1:], key[:-1], out=start[1:])
        first = np.flatnonzero(start)
        uniq = key[first]
        counts = np.diff(first, append=len(key)).astype(float)
    else:
        uniq = key
        counts = np.empty(0)
    r, c = np.divmod(uniq, dtype(V))
    indptr = np.zeros(n_docs + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n_docs), out=indptr[1:])
    data = np.ones_like(counts) if vocab.spec.weighting == "binary" else counts
    if vocab.spec.normalize and len(data):
        nnz = np.diff(indptr)
        norms = np.sqrt(np.add.reduceat(data * data, indptr[:-1][nnz > 0]))
        data = data / np.repeat(norms, nnz[nnz > 0])
    return sp.csr_matrix((data, c.astype(np.int32), indptr), shape=(n_docs, V))


def vectorize_reference(texts: Sequence[str], vocab: Vocabulary) -> sp.csr_matrix:
    """Pure-Python featurization; the numpy path must agree with it exactly."""
    rows, cols = [], []
    for r, t in enumerate(texts):
        for g in ngrams(t, vocab.spec):
            c = vocab.index.get(g)
            if c is not None:
                rows.append(r)
                cols.append(c)
    return _finish(np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64),
                   len(texts), vocab)


def vectorize_batch(texts: Sequence[str], vocab: Vocabulary) -> sp.csr_matrix:
    """Featurize many texts into a CSR matrix with one row per text."""
    if vocab._packer is None or not texts:
        return vectorize_reference(texts, vocab)
    if len(texts) <= CHUNK:
        rows, cols = vocab._packer.transform(texts)
        return _finish(rows, cols, len(texts), vocab)
    return sp.vstack([vectorize_batch(texts[i:i + CHUNK], vocab)
                      for i in range(0, len(texts), CHUNK)], format="csr")


def vectorize(text: str, vocab: Vocabulary) -> SparseVector:
    X = vectorize_batch([text], vocab)
    return SparseVector(tuple(int(i) for i in X.indices), tuple(float(v) for v in X.data),
                        len(vocab))
