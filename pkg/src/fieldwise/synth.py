"""Planted-model data generation and brute-force reference computations.

The oracles here deliberately avoid the fast kernels in :mod:`fieldwise.model`
and :mod:`fieldwise.training`: they build full one-hot vectors and dense
weight matrices and evaluate the definitions literally. They are only meant
for small models.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .metrics import auc, logloss
from .model import FieldWiseModel
from .schema import Dataset, Vocabulary


@dataclass(frozen=True)
class PlantedSpec:
    cardinalities: tuple[int, ...]
    rank: int = 3
    weight_scale: float = 0.5
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))
        if any(c < 1 for c in self.cardinalities):
            raise ValueError("cardinalities must be >= 1")
        if not 0 <= self.noise < 0.5:
            raise ValueError("label noise rate must be in [0, 0.5)")
        if self.rank < 0 or self.weight_scale < 0:
            raise ValueError("rank and weight_scale must be non-negative")

    @property
    def m(self) -> int:
        return len(self.cardinalities)


def planted_model(spec: PlantedSpec) -> FieldWiseModel:
    """Ground-truth model with Gaussian factors of standard deviation ``weight_scale``.

    Ranks are ``min(rank, d_i)`` so every field stays full-rank-capable.
    """
    rng = np.random.default_rng([spec.seed, 1])
    dims = spec.cardinalities
    d = sum(dims)
    U, V, b = [], [], []
    for di in dims:
        r = min(spec.rank, di)
        U.append(rng.normal(0.0, 1.0, (r, d - di)) * spec.weight_scale)
        V.append(rng.normal(0.0, 1.0, (r, di)) * spec.weight_scale)
        b.append(rng.normal(0.0, 1.0, di) * spec.weight_scale)
    vocab = Vocabulary.synthetic(dims)
    return FieldWiseModel(dims, U, V, b, vocab.names)


def _entropy(p):
    p = np.clip(p, 1e-300, 1.0)
    q = np.clip(1.0 - p, 1e-300, 1.0)
    return -(p * np.log(p) + q * np.log(q))


def generate_planted(spec: PlantedSpec, n: int, seed_offset: int = 0):
    """Draw ``n`` instances from the planted model.

    Features are uniform per field; a label is +1 with probability
    ``sigmoid(score)`` and is then flipped with probability ``noise``.
    Returns ``(dataset, planted_model, bayes_logloss)`` where the last value
    is the mean conditional entropy of the labels over the drawn features, i.e.
    the expected Logloss of the best possible predictor.
    ``seed_offset`` draws an independent sample from the same planted model.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    model = planted_model(spec)
    rng = np.random.default_rng([spec.seed, 2, seed_offset])
    X = np.column_stack([rng.integers(0, di, size=n) for di in spec.cardinalities])
    scores = model.scores(X)
    p = expit(scores)
    p_eff = (1.0 - spec.noise) * p + spec.noise * (1.0 - p)
    y = np.where(rng.random(n) < p_eff, 1.0, -1.0)
    vocab = Vocabulary.synthetic(spec.cardinalities)
    return Dataset(X, y, vocab), model, float(np.mean(_entropy(p_eff)))


# -- dense oracles -------------------------------------------------------------


def one_hot(model: FieldWiseModel, active) -> list[np.ndarray]:
    """Per-field one-hot vectors for an instance."""
    out = []
    for i, di in enumerate(model.dims):
        x = np.zeros(di)
        x[active[i]] = 1.0
        out.append(x)
    return out


def dense_weights(model: FieldWiseModel, i: int) -> np.ndarray:
    """``[W; b^T]`` for field ``i`` as a sum of rank-one outer products."""
    U, V, b = model.U[i], model.V[i], model.b[i]
    W = np.zeros((U.shape[1] + 1, V.shape[1]))
    for t in range(U.shape[0]):
        W[:-1] += np.outer(U[t], V[t])
    W[-1] = b
    return W


def oracle_dense_predict(model: FieldWiseModel, active, weights=None) -> float:
    """Sum over fields of ``x_i^T (W_i^T x_{-i} + b_i)`` on explicit vectors."""
    xs = one_hot(model, active)
    total = 0.0
    for i in range(model.m):
        Wb = dense_weights(model, i) if weights is None else weights[i]
        x_rest = np.concatenate([xs[j] for j in range(model.m) if j != i] + [np.ones(1)])
        total += float(xs[i] @ (Wb.T @ x_rest))
    return total


def oracle_dense_norms(model: FieldWiseModel, i: int, Wb=None) -> tuple[float, float]:
    """Spread and mean norms of ``W_b`` computed on the dense matrix."""
    Wb = dense_weights(model, i) if Wb is None else Wb
    mean_col = Wb.mean(axis=1)
    spread = Wb - mean_col[:, None]
    return float(np.sqrt(np.sum(spread**2))), float(np.sqrt(np.sum(mean_col**2)))


def oracle_objective(model: FieldWiseModel, X, y, lam: float) -> float:
    weights = [dense_weights(model, i) for i in range(model.m)]
    scores = np.array([oracle_dense_predict(model, row, weights) for row in np.asarray(X)])
    reg = 0.0
    for i in range(model.m):
        n1, n2 = oracle_dense_norms(model, i, weights[i])
        reg += n1**2 + n2**2
    return float(np.mean(logloss(scores, y))) + lam * reg


def oracle_finite_diff(model: FieldWiseModel, X, y, lam: float, step: float = 1e-6,
                       max_params: int = 5000) -> list[np.ndarray]:
    """Central differences of the full objective for every parameter.

    Returns arrays shaped like ``model.parameters()``. Perturbs a private copy.
    """
    if model.n_params > max_params:
        raise ValueError(f"model too large for finite differences ({model.n_params} parameters)")
    work = model.copy()
    out = []
    for p in work.parameters():
        g = np.zeros_like(p)
        for idx in itertools.product(*(range(s) for s in p.shape)):
            orig = p[idx]
            p[idx] = orig + step
            fp = oracle_objective(work, X, y, lam)
            p[idx] = orig - step
            fm = oracle_objective(work, X, y, lam)
            p[idx] = orig
            g[idx] = (fp - fm) / (2 * step)
        out.append(g)
    return out


def relative_error(analytic, numeric) -> float:
    """``max |a - f| / max(1, |a|, |f|)`` over all entries."""
    a, f = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - f) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(f)))))


def oracle_auc(scores, labels) -> float:
    """Pair counting over every positive/negative pair; ties count one half."""
    pos = [s for s, l in zip(scores, labels) if l > 0]
    neg = [s for s, l in zip(scores, labels) if l <= 0]
    if not pos or not neg:
        raise ValueError("need both classes")
    hits = 0.0
    for sp_ in pos:
        for sn in neg:
            hits += 1.0 if sp_ > sn else 0.5 if sp_ == sn else 0.0
    return hits / (len(pos) * len(neg))


def oracle_lr(train: Dataset, l2: float, val: Dataset | None = None, iters: int = 20000, tol: float = 1e-13):
    """Full-batch gradient descent logistic regression on the one-hot vectors.

    Minimizes ``mean logloss + (l2 / 2) * ||w||**2`` without an intercept.
    Returns ``(weights, final_train_logloss, final_val_logloss_or_None)``.
    """
    dims = train.vocab.dims
    offsets = np.concatenate([[0], np.cumsum(dims)[:-1]])
    d = sum(dims)

    def design(data):
        A = np.zeros((data.n, d))
        rows = np.arange(data.n)
        for i in range(len(dims)):
            A[rows, offsets[i] + data.indices[:, i]] = 1.0
        return A

    A, y = design(train), train.labels
    m = len(dims)
    # each row has exactly m ones, so the logistic Hessian is below m/4 + l2
    lipschitz = 0.25 * m + l2
    w = np.zeros(d)
    for _ in range(iters):
        z = A @ w
        g = A.T @ (-y / (1.0 + np.exp(y * z))) / len(y) + l2 * w
        w -= g / lipschitz
        if np.max(np.abs(g)) < tol:
            break
    train_ll = float(np.mean(logloss(A @ w, y)))
    val_ll = None
    if val is not None:
        val_ll = float(np.mean(logloss(design(val) @ w, val.labels)))
    return w, train_ll, val_ll


def planted_auc(model: FieldWiseModel, data: Dataset) -> float:
    """AUC of the planted scores against the drawn (noisy) labels."""
    return auc(model.scores(data.indices), data.labels)
