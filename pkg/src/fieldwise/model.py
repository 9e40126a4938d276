"""Field-wise linear model with low-rank per-field weight matrices.

For field ``i`` with cardinality ``d_i`` the model keeps factors ``U_i``
(``r_i x (d - d_i)``) and ``V_i`` (``r_i x d_i``) plus a bias vector ``b_i``.
Column ``k`` of ``W_i = U_i.T @ V_i`` is the linear model selected when
category ``k`` of field ``i`` is active; it is applied to the one-hot vector
of all *other* fields, laid out in field order with field ``i`` skipped.
The decision score is the sum of the ``m`` per-field scores.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

MODEL_MAGIC = b"FWMODEL\0"
MODEL_VERSION = 1
DEFAULT_MAX_ELEMENTS = 20_000_000


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RankPolicy:
    """How ranks are assigned to fields.

    ``RankPolicy.constant(r)`` gives every field rank ``r``;
    ``RankPolicy.log_base(b)`` gives ``round(log_b d_i)``. Both are clamped to
    ``[1, d_i]``. ``constant(0)`` is the bias-only degenerate mode, which
    reduces the model to logistic regression on the one-hot features.
    """

    mode: str
    value: float

    def __post_init__(self):
        if self.mode == "constant":
            if self.value < 0 or int(self.value) != self.value:
                raise ValueError(f"constant rank must be a non-negative integer, got {self.value}")
        elif self.mode == "log_base":
            if not self.value > 1:
                raise ValueError(f"log base must be > 1, got {self.value}")
        else:
            raise ValueError(f"unknown rank policy mode {self.mode!r}")

    @classmethod
    def constant(cls, r: int) -> "RankPolicy":
        return cls("constant", int(r))

    @classmethod
    def log_base(cls, b: float) -> "RankPolicy":
        return cls("log_base", float(b))

    def __str__(self):
        return f"rank={int(self.value)}" if self.mode == "constant" else f"rank_log_base={self.value:g}"


def rank_for_field(d_i: int, policy: RankPolicy) -> int:
    if d_i < 1:
        raise ValueError(f"field cardinality must be >= 1, got {d_i}")
    if policy.mode == "constant":
        r = int(policy.value)
        if r == 0:
            return 0
    else:
        # round half up; Python's round() would round half to even
        r = int(math.floor(math.log(d_i) / math.log(policy.value) + 0.5))
    return max(1, min(r, d_i))


@dataclass(frozen=True)
class FieldNorms:
    variance_norm: float
    mean_norm: float


class FieldWiseModel:
    """Parameters of the field-wise model plus the scoring kernels.

    Parameters are plain float64 arrays in ``U``, ``V`` and ``b`` (one entry
    per field); the trainer mutates them in place.
    """

    def __init__(self, dims: Sequence[int], U, V, b, names: Sequence[str] | None = None):
        self.dims = tuple(int(x) for x in dims)
        if any(di < 1 for di in self.dims):
            raise ValueError("every field cardinality must be >= 1")
        self.m = len(self.dims)
        self.d = sum(self.dims)
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)[:-1]]).astype(np.int64)
        self.U = [np.asarray(u, dtype=np.float64) for u in U]
        self.V = [np.asarray(v, dtype=np.float64) for v in V]
        self.b = [np.asarray(x, dtype=np.float64) for x in b]
        self.names = list(names) if names is not None else [f"field{i}" for i in range(self.m)]
        for i, di in enumerate(self.dims):
            r = self.U[i].shape[0]
            if self.U[i].shape != (r, self.d - di) or self.V[i].shape != (r, di) or self.b[i].shape != (di,):
                raise ValueError(f"parameter shapes of field {i} do not match d_i={di}, r_i={r}")

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(u.shape[0] for u in self.U)

    @property
    def n_params(self) -> int:
        return sum(u.size + v.size + x.size for u, v, x in zip(self.U, self.V, self.b))

    def parameters(self) -> list[np.ndarray]:
        """Arrays in the canonical order U_0, V_0, b_0, U_1, ..."""
        out = []
        for i in range(self.m):
            out += [self.U[i], self.V[i], self.b[i]]
        return out

    def copy(self) -> "FieldWiseModel":
        return FieldWiseModel(self.dims, [u.copy() for u in self.U], [v.copy() for v in self.V],
                              [x.copy() for x in self.b], self.names)

    def block_names(self) -> list[str]:
        return [f"{p}[{self.names[i]}]" for i in range(self.m) for p in ("U", "V", "b")]

    # -- scoring --------------------------------------------------------------

    def exclusive_positions(self, X: np.ndarray, i: int) -> np.ndarray:
        """Column positions of the other fields' active features inside x^(-i).

        ``X`` is ``(n, m)`` local indices; result is ``(n, m - 1)``.
        """
        G = X + self.offsets
        G = np.delete(G, i, axis=1)
        G[:, i:] -= self.dims[i]
        return G

    def scores(self, X) -> np.ndarray:
        """Decision scores for an ``(n, m)`` array of active local indices."""
        X = np.asarray(X, dtype=np.int64).reshape(-1, self.m)
        out = np.zeros(len(X))
        for i in range(self.m):
            out += self.b[i][X[:, i]]
            if self.m == 1 or self.U[i].shape[0] == 0:
                continue
            cols = self.exclusive_positions(X, i)
            usum = self.U[i][:, cols].sum(axis=2)
            out += np.einsum("rn,rn->n", usum, self.V[i][:, X[:, i]])
        return out

    def predict_score(self, inst) -> float:
        active = getattr(inst, "active", inst)
        return float(self.scores(np.asarray(active)[None, :])[0])

    # -- dense views and norms ------------------------------------------------

    def materialize_weights(self, i: int, max_elements: int = DEFAULT_MAX_ELEMENTS) -> np.ndarray:
        """Dense ``W_b`` of field ``i``: ``U.T @ V`` stacked over the bias row."""
        if not 0 <= i < self.m:
            raise IndexError(f"field index {i} out of range")
        rows, cols = self.d - self.dims[i] + 1, self.dims[i]
        if rows * cols > max_elements:
            raise MemoryError(f"materializing field {i} needs {rows * cols} elements (limit {max_elements})")
        return np.vstack([self.U[i].T @ self.V[i], self.b[i][None, :]])

    def field_norms(self, i: int) -> FieldNorms:
        """Norms of the column spread and column mean of ``W_b``, in factored form."""
        U, V, b = self.U[i], self.V[i], self.b[i]
        C = U @ U.T
        vbar = V.mean(axis=1)
        D = V - vbar[:, None]
        bbar = b.mean()
        n1sq = np.einsum("rk,rs,sk->", D, C, D) + np.sum((b - bbar) ** 2)
        n2sq = vbar @ C @ vbar + bbar**2
        return FieldNorms(math.sqrt(max(n1sq, 0.0)), math.sqrt(max(n2sq, 0.0)))

    def all_field_norms(self) -> list[FieldNorms]:
        return [self.field_norms(i) for i in range(self.m)]

    # -- serialization ----------------------------------------------------------

    def to_bytes(self, vocab_ref: str = "") -> bytes:
        parts = [MODEL_MAGIC, struct.pack("<IIQ", MODEL_VERSION, self.m, self.d)]
        for i in range(self.m):
            parts.append(struct.pack("<QQ", self.dims[i], self.ranks[i]))
            for arr in (self.U[i], self.V[i], self.b[i]):
                parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        ref = vocab_ref.encode("utf-8")
        parts.append(struct.pack("<I", len(ref)) + ref)
        return b"".join(parts)

    def save(self, path, vocab_ref: str = "") -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes(vocab_ref))

    @classmethod
    def from_bytes(cls, data: bytes, names: Sequence[str] | None = None) -> tuple["FieldWiseModel", str]:
        """Inverse of :meth:`to_bytes`; returns ``(model, vocab_ref)``."""
        if data[:8] != MODEL_MAGIC:
            raise ModelFormatError("not a field-wise model file")
        try:
            version, m, d = struct.unpack_from("<IIQ", data, 8)
            if version != MODEL_VERSION:
                raise ModelFormatError(f"unsupported model format version {version}")
            pos = 24
            dims, U, V, b = [], [], [], []
            for _ in range(m):
                di, ri = struct.unpack_from("<QQ", data, pos)
                pos += 16
                arrays = []
                for shape in ((ri, d - di), (ri, di), (di,)):
                    count = int(np.prod(shape))
                    arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos)
                    arrays.append(arr.astype(np.float64).reshape(shape))
                    pos += 8 * count
                dims.append(di)
                U.append(arrays[0])
                V.append(arrays[1])
                b.append(arrays[2])
            (nref,) = struct.unpack_from("<I", data, pos)
            pos += 4
            ref = data[pos:pos + nref].decode("utf-8")
            if pos + nref != len(data):
                raise ModelFormatError("trailing bytes after model payload")
        except (struct.error, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"truncated or corrupt model file: {exc}") from None
        if sum(dims) != d:
            raise ModelFormatError(f"header d={d} but fields sum to {sum(dims)}")
        return cls(dims, U, V, b, names), ref

    @classmethod
    def load(cls, path, names: Sequence[str] | None = None) -> tuple["FieldWiseModel", str]:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), names)


def init_model(vocab_or_dims, policy: RankPolicy, init_scale: float = 0.1, seed: int = 0) -> FieldWiseModel:
    """Random factors uniform in ``+-init_scale / sqrt(r_i)``, zero biases."""
    if not init_scale > 0:
        raise ValueError("init_scale must be positive")
    if hasattr(vocab_or_dims, "dims"):
        dims, names = vocab_or_dims.dims, vocab_or_dims.names
    else:
        dims, names = tuple(vocab_or_dims), None
    if any(di < 1 for di in dims):
        raise ValueError("every field cardinality must be >= 1")
    d = sum(dims)
    rng = np.random.default_rng(seed)
    U, V, b = [], [], []
    for di in dims:
        r = rank_for_field(di, policy)
        a = init_scale / math.sqrt(r) if r else 0.0
        U.append(rng.uniform(-a, a, size=(r, d - di)))
        V.append(rng.uniform(-a, a, size=(r, di)))
        b.append(np.zeros(di))
    return FieldWiseModel(dims, U, V, b, names)


def predict_proba(score):
    """Logistic link; stable for large ``|score|``."""
    return expit(score)
