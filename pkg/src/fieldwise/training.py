"""Mini-batch Adagrad training of the field-wise model.

The objective is mean Logloss plus ``lam * sum_i (N1_i**2 + N2_i**2)``, where
``N1_i`` is the Frobenius norm of the column spread of ``W_b`` for field ``i``
and ``N2_i`` the norm of its column mean. Loss gradients are sparse (only the
columns of active features); regularization gradients are dense and are only
computed every ``reg_period`` steps.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .metrics import logloss, mean_logloss
from .model import FieldWiseModel


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, last_good_epoch: int = 0):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    reg_lambda: float = 0.0
    weight_decay: float = 0.0
    batch_size: int = 2048
    reg_period: int = 1000
    max_epochs: int = 20
    patience: int = 1
    seed: int = 0
    eps: float = 1e-8
    # multiply the periodic regularization gradient by reg_period
    scale_reg_by_period: bool = False
    # stop as soon as the full-pass train Logloss reaches this value
    target_train_logloss: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.reg_lambda < 0 or self.weight_decay < 0:
            raise ValueError("reg_lambda and weight_decay must be non-negative")
        if self.batch_size < 1 or self.reg_period < 1:
            raise ValueError("batch_size and reg_period must be >= 1")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass
class FieldGrad:
    """Gradient for one field's block.

    ``*_cols`` list the touched columns (``None`` means every column) and the
    matching arrays hold one gradient column per entry.
    """

    u_cols: np.ndarray | None
    u: np.ndarray
    v_cols: np.ndarray | None
    v: np.ndarray
    b_cols: np.ndarray | None
    b: np.ndarray

    def touched(self, model: FieldWiseModel, i: int) -> dict[str, set[int]]:
        full = {"U": model.d - model.dims[i], "V": model.dims[i], "b": model.dims[i]}
        out = {}
        for name, cols in (("U", self.u_cols), ("V", self.v_cols), ("b", self.b_cols)):
            out[name] = set(range(full[name])) if cols is None else set(cols.tolist())
        return out


def _segment_sum(keys: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum rows of ``values`` ``(n, r)`` sharing a key; returns ``(unique_keys, (r, k) sums)``."""
    uniq, inv = np.unique(keys, return_inverse=True)
    agg = sp.csr_matrix((np.ones(len(keys)), (inv, np.arange(len(keys)))), shape=(len(uniq), len(keys)))
    return uniq, np.asarray((agg @ values).T)


def loss_gradients(model: FieldWiseModel, X: np.ndarray, y: np.ndarray) -> tuple[list[FieldGrad], float]:
    """Sparse gradients of the batch-mean Logloss, and the batch-mean Logloss itself."""
    X = np.asarray(X, dtype=np.int64)
    n = len(X)
    if n == 0:
        raise ValueError("empty batch")
    cache = []
    scores = np.zeros(n)
    for i in range(model.m):
        k = X[:, i]
        scores += model.b[i][k]
        if model.m == 1 or model.ranks[i] == 0:
            cache.append(None)
            continue
        cols = model.exclusive_positions(X, i)
        usum = model.U[i][:, cols].sum(axis=2)
        vk = model.V[i][:, k]
        scores += np.einsum("rn,rn->n", usum, vk)
        cache.append((cols, usum, vk))

    # d loss / d score for each instance, averaged over the batch
    s = -y * expit(-y * scores) / n
    grads = []
    for i in range(model.m):
        k = X[:, i]
        r = model.ranks[i]
        b_cols, gb = _segment_sum(k, s[:, None])
        gb = gb[0]
        if cache[i] is None:
            empty = np.empty(0, dtype=np.int64)
            grads.append(FieldGrad(empty, np.zeros((r, 0)), empty, np.zeros((r, 0)), b_cols, gb))
            continue
        cols, usum, vk = cache[i]
        v_cols, gv = _segment_sum(k, (usum * s).T)
        per_inst = (vk * s).T  # (n, r)
        u_cols, gu = _segment_sum(cols.ravel(), np.repeat(per_inst, cols.shape[1], axis=0))
        grads.append(FieldGrad(u_cols, gu, v_cols, gv, b_cols, gb))
    return grads, float(np.mean(logloss(scores, y)))


def regularizer(model: FieldWiseModel) -> float:
    """``sum_i N1_i**2 + N2_i**2`` from the factored norms."""
    return sum(fn.variance_norm**2 + fn.mean_norm**2 for fn in model.all_field_norms())


def objective(model: FieldWiseModel, X, y, lam: float) -> float:
    return mean_logloss(model.scores(X), y) + lam * regularizer(model)


def reg_gradients(model: FieldWiseModel, lam: float, bias_projection: bool = False) -> list[FieldGrad]:
    """Dense gradients of ``lam * (N1**2 + N2**2)`` for every field.

    ``bias_projection`` evaluates the spread term's bias gradient in its
    unsimplified projected form; the two forms agree because the centred bias
    already has zero mean.
    """
    out = []
    for i in range(model.m):
        U, V, b = model.U[i], model.V[i], model.b[i]
        di = model.dims[i]
        v_mean = V.mean(axis=1, keepdims=True)
        dv = V - v_mean
        uut = U @ U.T
        K = uut @ dv
        kvec = uut @ v_mean
        b_mean = b.mean()
        b_diff = b - b_mean

        gu = 2.0 * (dv @ dv.T) @ U + 2.0 * (v_mean @ v_mean.T) @ U
        gv = 2.0 * (K - K.mean(axis=1, keepdims=True)) + (2.0 / di) * kvec @ np.ones((1, di))
        if bias_projection:
            gb1 = 2.0 * (b_diff - np.ones((di, di)) / di @ b_diff)
        else:
            gb1 = 2.0 * b_diff
        gb = gb1 + 2.0 * b_mean * np.ones(di) / di
        out.append(FieldGrad(None, lam * gu, None, lam * gv, None, lam * gb))
    return out


def _densify(model: FieldWiseModel, i: int, g: FieldGrad) -> FieldGrad:
    r, di = model.ranks[i], model.dims[i]
    gu = np.zeros((r, model.d - di))
    gv = np.zeros((r, di))
    gb = np.zeros(di)
    for dst, cols, vals in ((gu, g.u_cols, g.u), (gv, g.v_cols, g.v), (gb, g.b_cols, g.b)):
        if cols is None:
            dst += vals
        else:
            dst[..., cols] += vals
    return FieldGrad(None, gu, None, gv, None, gb)


def add_dense(model: FieldWiseModel, sparse: list[FieldGrad], dense: list[FieldGrad]) -> list[FieldGrad]:
    out = []
    for i, (gs, gd) in enumerate(zip(sparse, dense)):
        g = _densify(model, i, gs)
        out.append(FieldGrad(None, g.u + gd.u, None, g.v + gd.v, None, g.b + gd.b))
    return out


class AdagradState:
    """Squared-gradient accumulators, one array per parameter block."""

    def __init__(self, model: FieldWiseModel, eps: float = 1e-8):
        self.G = [np.zeros_like(p) for p in model.parameters()]
        self.eps = eps


def adagrad_step(model: FieldWiseModel, state: AdagradState, grads: list[FieldGrad],
                 learning_rate: float, weight_decay: float = 0.0) -> None:
    """Apply one Adagrad update in place, touching only the listed columns.

    Weight decay adds ``weight_decay * theta`` to the gradient before it is
    accumulated.
    """
    params = model.parameters()
    names = model.block_names()
    for i, g in enumerate(grads):
        for j, (cols, vals) in enumerate(((g.u_cols, g.u), (g.v_cols, g.v), (g.b_cols, g.b))):
            slot = 3 * i + j
            if cols is not None and len(cols) == 0:
                continue
            idx = (Ellipsis, slice(None) if cols is None else cols)
            theta, acc = params[slot], state.G[slot]
            step_g = vals + weight_decay * theta[idx] if weight_decay else vals
            if not np.all(np.isfinite(step_g)):
                raise NonFiniteGradient(f"non-finite gradient in block {names[slot]}")
            acc[idx] += step_g * step_g
            theta[idx] -= learning_rate * step_g / (np.sqrt(acc[idx]) + state.eps)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_logloss: float
    val_logloss: float | None
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    stop_epoch: int = 0
    best_epoch: int = 0
    reached_target: bool = False
    steps: int = 0

    def lines(self, with_time: bool = True) -> list[str]:
        out = []
        for rec in self.records:
            val = "nan" if rec.val_logloss is None else repr(rec.val_logloss)
            row = [str(rec.epoch), repr(rec.train_logloss), val]
            if with_time:
                row.append(f"{rec.seconds:.3f}")
            out.append("\t".join(row))
        return out

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("".join(line + "\n" for line in self.lines()))


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffle order for one epoch from a counter-based generator keyed by (seed, epoch)."""
    return np.random.Generator(np.random.Philox(key=seed, counter=epoch)).permutation(n)


def train(model: FieldWiseModel, train_data, val_data=None, cfg: TrainConfig = TrainConfig(),
          callback=None) -> tuple[FieldWiseModel, TrainHistory]:
    """Train a copy of ``model``.

    With validation data the model with the lowest validation Logloss is
    returned and training stops after ``patience`` epochs without improvement.
    Without it, the final model is returned. ``callback(epoch, model)`` runs
    after every epoch.
    """
    model = model.copy()
    state = AdagradState(model, cfg.eps)
    X, y = train_data.indices, train_data.labels
    n = len(y)
    reg_lam = cfg.reg_lambda * (cfg.reg_period if cfg.scale_reg_by_period else 1)
    history = TrainHistory()
    best, best_val, bad = None, math.inf, 0
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        perm = epoch_permutation(n, cfg.seed, epoch)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            grads, _ = loss_gradients(model, X[idx], y[idx])
            step += 1
            if reg_lam > 0 and step % cfg.reg_period == 0:
                grads = add_dense(model, grads, reg_gradients(model, reg_lam))
            adagrad_step(model, state, grads, cfg.learning_rate, cfg.weight_decay)
        train_ll = mean_logloss(model.scores(X), y)
        val_ll = mean_logloss(model.scores(val_data.indices), val_data.labels) if val_data is not None else None
        if not math.isfinite(train_ll) or (val_ll is not None and not math.isfinite(val_ll)):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", last_good_epoch=epoch - 1)
        history.records.append(EpochRecord(epoch, train_ll, val_ll, time.perf_counter() - t0))
        history.stop_epoch = epoch
        history.steps = step
        if callback is not None:
            callback(epoch, model)
        if val_data is not None:
            if val_ll < best_val:
                best, best_val, bad = model.copy(), val_ll, 0
                history.best_epoch = epoch
            else:
                bad += 1
        else:
            history.best_epoch = epoch
        if cfg.target_train_logloss is not None and train_ll <= cfg.target_train_logloss:
            history.reached_target = True
            break
        if val_data is not None and bad >= cfg.patience:
            break
    if val_data is not None and cfg.target_train_logloss is None:
        return best, history
    return model, history
