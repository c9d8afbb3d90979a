"""Logistic-regression and MLP attack classifiers.

Both architectures end in a two-way softmax and are trained on mean
cross-entropy plus an L2 penalty on weight matrices (biases are not
penalised), using plain mini-batch SGD with a constant learning rate.
Targets are probability pairs, so the same code trains on one-hot (OH) and
empirical-distribution (ED) labels.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .features import FeatureSpec, SparseVector, Vocabulary, build_vocab, vectorize_batch

log = logging.getLogger(__name__)

MODEL_VERSION = 1
EPS = 1e-12
MAX_ANNOTATIONS = 10000
KINDS = ("LR", "MLP")


class TrainingDiverged(FloatingPointError):
    pass


class ModelLoadError(ValueError):
    pass


class SearchFailed(RuntimeError):
    def __init__(self, msg: str, trials: list[dict]) -> None:
        super().__init__(msg)
        self.trials = trials


def cross_entropy(y: Sequence[float], yhat: Sequence[float]) -> float:
    """-sum_i y_i log(yhat_i), with yhat floored at EPS.

    Only the floor matters for finiteness; capping at 1 - EPS as well would
    make a perfect one-hot prediction cost ~1e-12 instead of 0.
    """
    total = 0.0
    for yi, pi in zip(y, yhat):
        if yi:
            total -= yi * math.log(min(max(pi, EPS), 1.0))
    return total + 0.0


def _complement(p: float) -> float:
    r = Fraction(p).limit_denominator(MAX_ANNOTATIONS)
    return float(1 - r) if float(r) == p else 1.0 - p


def label_targets(fractions: Sequence[float], label_type: str) -> np.ndarray:
    """(n, 2) training targets from attack fractions.

    ED keeps the fraction itself; OH takes the strict majority.  Fractions
    are annotation ratios k/n, so 1 - f is taken on the recovered rational:
    0.7 gives (0.3, 0.7) rather than (0.30000000000000004, 0.7).
    """
    f = np.asarray(fractions, dtype=float)
    if label_type == "ED":
        p = f
    elif label_type == "OH":
        p = (f > 0.5).astype(float)
    else:
        raise ValueError(f"unknown label type {label_type!r}")
    uniq, inv = np.unique(p, return_inverse=True)
    comp = np.array([_complement(u) for u in uniq])
    return np.column_stack([comp[inv.ravel()], p])


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass
class Hyperparameters:
    learning_rate: float = 0.1
    l2: float = 1e-5
    epochs: int = 5
    batch_size: int = 32
    hidden: tuple[int, ...] = (64,)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Hyperparameters":
        d = dict(d)
        if "hidden" in d:
            h = d["hidden"]
            d["hidden"] = (int(h),) if isinstance(h, (int, np.integer)) else tuple(int(x) for x in h)
        known = {k: d[k] for k in ("learning_rate", "l2", "epochs", "batch_size", "hidden") if k in d}
        return cls(**known)


# --------------------------------------------------------------------------
# forward / backward on a flat parameter list
#
# params layout: [W_0, b_0, W_1, b_1, ...] with W_i of shape (fan_in, fan_out).
# LR is the zero-hidden-layer case, so W_0 is (V, 2).


def init_params(kind: str, dim: int, hidden: Sequence[int], rng: np.random.Generator) -> list[np.ndarray]:
    sizes = [dim] + (list(hidden) if kind == "MLP" else []) + [2]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if kind == "LR":
            W = np.zeros((fan_in, fan_out))
        else:
            bound = 1.0 / math.sqrt(fan_in)
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params.extend([W, np.zeros(fan_out)])
    return params


def _matmul(X, W: np.ndarray) -> np.ndarray:
    out = X @ W
    return np.asarray(out)


def forward(params: Sequence[np.ndarray], X) -> tuple[np.ndarray, list]:
    """Logits and the per-layer inputs needed for backprop."""
    acts = [X]
    h = X
    n_layers = len(params) // 2
    for i in range(n_layers):
        W, b = params[2 * i], params[2 * i + 1]
        z = _matmul(h, W) + b
        if i < n_layers - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            return z, acts
    raise AssertionError("unreachable")


def loss_and_grad(params: Sequence[np.ndarray], X, Y: np.ndarray, l2: float,
                  with_grad: bool = True) -> tuple[float, list[np.ndarray] | None]:
    """Mean cross-entropy + (l2/2)·sum ||W||² and its gradient."""
    n = Y.shape[0]
    logits, acts = forward(params, X)
    logp = log_softmax(logits)
    loss = -float(np.sum(Y * logp)) / n
    weights = params[0::2]
    loss += 0.5 * l2 * sum(float(np.sum(W * W)) for W in weights)
    if not with_grad:
        return loss, None
    delta = (np.exp(logp) * Y.sum(axis=1, keepdims=True) - Y) / n
    grads: list[np.ndarray] = [None] * len(params)  # type: ignore[list-item]
    n_layers = len(params) // 2
    for i in reversed(range(n_layers)):
        a = acts[i]
        W = params[2 * i]
        gW = a.T @ delta
        gW = np.asarray(gW.todense()) if sp.issparse(gW) else np.asarray(gW)
        grads[2 * i] = gW + l2 * W
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ W.T) * (acts[i] > 0)
    return loss, grads


# --------------------------------------------------------------------------


@dataclass
class AttackModel:
    kind: str
    label_type: str
    params: list[np.ndarray]
    feature_spec: FeatureSpec
    vocab_fingerprint: str
    hyperparameters: Hyperparameters
    seed: int
    train_loss: float = math.nan
    vocab: Vocabulary | None = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.params[0].shape[0]

    def _check_dim(self, X) -> None:
        if X.shape[1] != self.dim:
            raise ValueError(f"feature dimension mismatch: model expects V={self.dim}, got V={X.shape[1]}")

    def predict_proba_matrix(self, X) -> np.ndarray:
        """Row-wise softmax output for a CSR (or dense) feature matrix."""
        if not sp.issparse(X):
            X = np.atleast_2d(np.asarray(X, dtype=float))
        self._check_dim(X)
        logits, _ = forward(self.params, X)
        return softmax(logits)

    def attack_scores(self, X) -> np.ndarray:
        return self.predict_proba_matrix(X)[:, 1]

    def score_texts(self, texts: Sequence[str]) -> np.ndarray:
        if self.vocab is None:
            raise ValueError("model has no vocabulary attached")
        return self.attack_scores(vectorize_batch(texts, self.vocab))


def predict_proba(model: AttackModel, x: SparseVector) -> tuple[float, float]:
    if x.dim != model.dim:
        raise ValueError(f"feature dimension mismatch: model expects V={model.dim}, got V={x.dim}")
    p = model.predict_proba_matrix(x.to_csr())[0]
    return float(p[0]), float(p[1])


def _all_finite(arrays) -> bool:
    return all(np.isfinite(a).all() for a in arrays)


def _sparse_step(params: list[np.ndarray], scale: float, Xb: sp.csr_matrix, Yb: np.ndarray,
                 lr: float, l2: float) -> tuple[float, float]:
    """One SGD step where the first weight matrix is ``scale * params[0]``.

    Only rows of the first layer touched by the batch receive the data
    gradient; the L2 shrinkage every row gets is folded into ``scale``.
    Returns (batch loss, new scale, whether the touched rows stayed finite).
    """
    cols, inverse = np.unique(Xb.indices, return_inverse=True)
    Xc = sp.csr_matrix((Xb.data, inverse.ravel(), Xb.indptr), shape=(Xb.shape[0], len(cols)))
    U0 = params[0]
    local = [scale * U0[cols]] + params[1:]
    n = Yb.shape[0]
    logits, acts = forward(local, Xc)
    logp = log_softmax(logits)
    loss = -float(np.sum(Yb * logp)) / n
    delta = (np.exp(logp) - Yb) / n
    n_layers = len(params) // 2
    for i in reversed(range(n_layers)):
        W = local[2 * i]
        gW = np.asarray(acts[i].T @ delta)
        gb = delta.sum(axis=0)
        if i > 0:
            next_delta = (delta @ W.T) * (acts[i] > 0)
            params[2 * i] -= lr * (gW + l2 * W)
        else:
            next_delta = None
        params[2 * i + 1] -= lr * gb
        if i == 0:
            new_scale = scale * (1.0 - lr * l2)
            U0[cols] -= (lr / new_scale) * gW
            scale = new_scale
        delta = next_delta
    finite = bool(np.isfinite(U0[cols]).all()) and _all_finite(params[1:])
    return loss, scale, finite


def sgd_train(params: list[np.ndarray], X, Y: np.ndarray, hp: Hyperparameters,
              rng: np.random.Generator) -> float:
    """Mini-batch SGD in place; returns the final full-data training loss."""
    n = Y.shape[0]
    lr = hp.learning_rate
    lazy = sp.issparse(X) and 0.0 < 1.0 - lr * hp.l2
    scale = 1.0
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            idx = order[start:start + hp.batch_size]
            Xb = X[idx]
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                if lazy:
                    loss, scale, finite = _sparse_step(params, scale, Xb, Y[idx], lr, hp.l2)
                    if scale < 1e-100:
                        params[0] *= scale
                        scale = 1.0
                else:
                    loss, grads = loss_and_grad(params, Xb, Y[idx], hp.l2)
                    for p, g in zip(params, grads):
                        p -= lr * g
                    finite = _all_finite(params)
            if not (math.isfinite(loss) and finite):
                raise TrainingDiverged(
                    f"non-finite loss or parameters in epoch {epoch} with learning_rate={lr}")
    if scale != 1.0:
        params[0] *= scale
    with np.errstate(over="ignore", invalid="ignore"):
        loss, _ = loss_and_grad(params, X, Y, hp.l2, with_grad=False)
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite training loss with learning_rate={lr}")
    return loss


def train(X, Y: np.ndarray, kind: str, hp: Hyperparameters, seed: int, *,
          label_type: str = "ED", vocab: Vocabulary | None = None) -> AttackModel:
    """Fit an LR or MLP on features ``X`` and target distributions ``Y`` (n, 2)."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] != 2 or Y.shape[0] < 1:
        raise ValueError("targets must be an (n, 2) array with n >= 1")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows but {Y.shape[0]} targets")
    if not np.allclose(Y.sum(axis=1), 1.0, atol=1e-12, rtol=0) or (Y < 0).any():
        raise ValueError("every target must be a probability pair")
    X = sp.csr_matrix(X) if sp.issparse(X) else np.asarray(X, dtype=float)
    init_rng, shuffle_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    params = init_params(kind, X.shape[1], hp.hidden, init_rng)
    loss = sgd_train(params, X, Y, hp, shuffle_rng)
    return AttackModel(
        kind=kind, label_type=label_type, params=params,
        feature_spec=vocab.spec if vocab is not None else FeatureSpec(),
        vocab_fingerprint=vocab.fingerprint if vocab is not None else "",
        hyperparameters=hp, seed=seed, train_loss=loss, vocab=vocab)


# --------------------------------------------------------------------------
# persistence


def model_to_dict(model: AttackModel) -> dict:
    return {
        "version": MODEL_VERSION,
        "kind": model.kind,
        "label_type": model.label_type,
        "feature_spec": asdict(model.feature_spec),
        "vocab_fingerprint": model.vocab_fingerprint,
        "hyperparameters": model.hyperparameters.to_dict(),
        "seed": model.seed,
        "train_loss": model.train_loss,
        "parameters": [{"shape": list(p.shape), "values": p.ravel().tolist()} for p in model.params],
        "vocabulary": None if model.vocab is None else model.vocab.to_dict(),
    }


def save_model(model: AttackModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        # repr-based float output round-trips every float64 exactly
        json.dump(model_to_dict(model), fh, ensure_ascii=False, separators=(",", ":"))


def load_model(path) -> AttackModel:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelLoadError(f"{path}: corrupt model file ({exc})") from exc
    if not isinstance(d, dict) or d.get("version") != MODEL_VERSION:
        version = d.get("version") if isinstance(d, dict) else None
        raise ModelLoadError(f"{path}: unsupported model version {version!r} (expected {MODEL_VERSION})")
    try:
        params = [np.array(p["values"], dtype=float).reshape(p["shape"]) for p in d["parameters"]]
        vocab = Vocabulary.from_dict(d["vocabulary"]) if d.get("vocabulary") else None
        model = AttackModel(
            kind=d["kind"], label_type=d["label_type"], params=params,
            feature_spec=FeatureSpec(**d["feature_spec"]),
            vocab_fingerprint=d["vocab_fingerprint"],
            hyperparameters=Hyperparameters.from_dict(d["hyperparameters"]),
            seed=int(d["seed"]), train_loss=float(d["train_loss"]), vocab=vocab)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelLoadError(f"{path}: malformed model file ({exc})") from exc
    if vocab is not None and vocab.fingerprint != model.vocab_fingerprint:
        raise ModelLoadError(f"{path}: vocabulary fingerprint does not match")
    if len(params) % 2 or any(not np.isfinite(p).all() for p in params):
        raise ModelLoadError(f"{path}: inconsistent or non-finite parameters")
    return model


# --------------------------------------------------------------------------
# random search

FEATURE_KEYS = ("max_features", "weighting", "normalize")
MODEL_KEYS = ("learning_rate", "l2", "epochs", "batch_size", "hidden")

DEFAULT_GRID: dict[str, list] = {
    "learning_rate": [0.3, 0.1, 0.03],
    "batch_size": [32, 128],
    "epochs": [5, 20],
    "l2": [0.0, 1e-5, 1e-4],
    "hidden": [(64,), (256,), (64, 64), (256, 256)],
    "max_features": [10000, 30000, 100000],
    "weighting": ["count", "binary"],
    "normalize": [False, True],
}


@dataclass
class SearchSpace:
    grids: dict[str, list] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_GRID.items()})
    n_iter: int = 15
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_iter < 1:
            raise ValueError("n_iter must be at least 1")
        for k, v in self.grids.items():
            if not len(v):
                raise ValueError(f"grid {k!r} is empty")

    def sample(self) -> list[dict]:
        """n_iter configurations drawn uniformly with replacement."""
        rng = np.random.default_rng(self.seed)
        keys = sorted(self.grids)
        configs = []
        for _ in range(self.n_iter):
            configs.append({k: self.grids[k][int(rng.integers(len(self.grids[k])))] for k in keys})
        return configs


def trial_seed(space_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([space_seed, trial]).generate_state(1)[0])


@dataclass
class LabeledTexts:
    """Texts with their attack fractions (ED) from which OH labels derive."""
    texts: list[str]
    fractions: np.ndarray

    @property
    def oh(self) -> np.ndarray:
        return (np.asarray(self.fractions) > 0.5).astype(int)


def dev_objective(objective: str, scores: np.ndarray, dev: LabeledTexts) -> float:
    from .evaluation import auc, spearman
    if objective == "AUC":
        return auc(scores, dev.oh)
    if objective == "Spearman":
        return spearman(scores, dev.fractions)
    raise ValueError(f"unknown objective {objective!r}")


@dataclass
class SearchResult:
    best: AttackModel
    trials: list[dict]
    best_trial: int


def random_search(space: SearchSpace, train_set: LabeledTexts, dev_set: LabeledTexts,
                  objective: str = "AUC", *, kind: str = "LR", label_type: str = "ED",
                  base_spec: FeatureSpec | None = None,
                  on_trial: Callable[[dict], None] | None = None) -> SearchResult:
    """Tune ``kind`` on train, pick the configuration with the best dev objective."""
    base_spec = base_spec or FeatureSpec.default_for("char")
    Y = label_targets(train_set.fractions, label_type)
    vocab_cache: dict[FeatureSpec, tuple[Vocabulary, Any, Any]] = {}
    trials: list[dict] = []
    best: tuple[float, int, AttackModel] | None = None
    for i, cfg in enumerate(space.sample()):
        spec = base_spec.with_(**{k: cfg[k] for k in FEATURE_KEYS if k in cfg})
        hp = Hyperparameters.from_dict({k: cfg[k] for k in MODEL_KEYS if k in cfg})
        if kind == "LR":
            hp.hidden = ()
        seed = trial_seed(space.seed, i)
        record = {"trial": i, "seed": seed, "config": _jsonable(cfg)}
        try:
            if spec not in vocab_cache:
                vocab = build_vocab(train_set.texts, spec)
                vocab_cache[spec] = (vocab, vectorize_batch(train_set.texts, vocab),
                                     vectorize_batch(dev_set.texts, vocab))
            vocab, Xtr, Xdev = vocab_cache[spec]
            model = train(Xtr, Y, kind, hp, seed, label_type=label_type, vocab=vocab)
            score = dev_objective(objective, model.attack_scores(Xdev), dev_set)
            record.update(status="ok", score=score, train_loss=model.train_loss)
            if best is None or score > best[0]:
                best = (score, i, model)
        except (TrainingDiverged, ValueError) as exc:
            record.update(status="aborted", error=str(exc))
        trials.append(record)
        log.info("trial %d %s", i, record)
        if on_trial:
            on_trial(record)
    if best is None:
        raise SearchFailed("every random-search trial aborted", trials)
    return SearchResult(best[2], trials, best[1])


def _jsonable(cfg: Mapping[str, Any]) -> dict:
    out = {}
    for k, v in cfg.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out


def grid_product(grids: Mapping[str, Sequence]) -> list[dict]:
    keys = sorted(grids)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grids[k] for k in keys))]
