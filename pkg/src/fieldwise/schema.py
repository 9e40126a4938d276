"""Reading multi-field categorical data and encoding it per field.

Every field is discretized: numeric columns go through a log transform into
string tokens, rare tokens collapse into one bucket per field, and each row
becomes one active local index per field.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

MISSING = "MISSING"
VOCAB_MAGIC = "FWVOCAB"
VOCAB_VERSION = 1


class EncodingError(ValueError):
    """Raised when a raw value or label cannot be encoded."""


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str = "categorical"

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise ValueError(f"unknown field kind {self.kind!r} for field {self.name!r}")


def make_specs(names: Sequence[str], numeric: Iterable[str] = ()) -> list[FieldSpec]:
    numeric = set(numeric)
    unknown = numeric - set(names)
    if unknown:
        raise ValueError(f"numeric fields not in schema: {sorted(unknown)}")
    specs = [FieldSpec(n, "numeric" if n in numeric else "categorical") for n in names]
    _check_unique(specs)
    return specs


def _check_unique(specs: Sequence[FieldSpec]) -> None:
    names = [s.name for s in specs]
    dup = [n for n, c in Counter(names).items() if c > 1]
    if dup:
        raise ValueError(f"duplicate field names: {dup}")


def log_transform_numeric(value, field: str = "?", row: int | None = None) -> str:
    """Map a raw numeric value to a categorical token.

    Missing values (None or empty string) become ``"MISSING"``; values up to 2
    keep their integer part; larger values become ``floor(ln(v)**2)``.
    """
    if value is None:
        return MISSING
    if isinstance(value, str):
        text = value.strip()
        if text == "":
            return MISSING
        try:
            v = float(text)
        except ValueError:
            raise EncodingError(f"non-numeric value {value!r} in field {field!r} (row {row})") from None
    else:
        v = float(value)
    if not math.isfinite(v):
        raise EncodingError(f"non-finite value {v!r} in field {field!r} (row {row})")
    if v <= 2:
        return str(math.floor(v))
    return str(math.floor(math.log(v) ** 2))


def parse_label(raw: str, row: int | None = None) -> int:
    text = raw.strip() if isinstance(raw, str) else str(raw)
    if text == "1":
        return 1
    if text == "0":
        return -1
    raise EncodingError(f"malformed label {raw!r} at row {row}")


@dataclass(frozen=True)
class Vocabulary:
    """Per-field token maps.

    Local indices ``0 .. d_i - 2`` are kept tokens in first-appearance order;
    index ``d_i - 1`` is the rare bucket, shared by grouped and unseen tokens.
    """

    specs: tuple[FieldSpec, ...]
    tokens: tuple[tuple[str, ...], ...]
    _lookup: tuple[dict, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.specs) != len(self.tokens):
            raise ValueError("specs and token lists differ in length")
        _check_unique(self.specs)
        lookup = []
        for spec, toks in zip(self.specs, self.tokens):
            table = {t: k for k, t in enumerate(toks)}
            if len(table) != len(toks):
                raise ValueError(f"duplicate tokens in field {spec.name!r}")
            lookup.append(table)
        object.__setattr__(self, "_lookup", tuple(lookup))

    @property
    def m(self) -> int:
        return len(self.specs)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(len(t) + 1 for t in self.tokens)

    @property
    def d(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for di in self.dims:
            out.append(acc)
            acc += di
        return tuple(out)

    def rare_index(self, i: int) -> int:
        return len(self.tokens[i])

    def index(self, i: int, token: str) -> int:
        return self._lookup[i].get(token, len(self.tokens[i]))

    def token(self, i: int, k: int) -> str | None:
        """Reverse lookup; ``None`` for the rare bucket."""
        if not 0 <= k < self.dims[i]:
            raise IndexError(f"local index {k} out of range for field {i}")
        toks = self.tokens[i]
        return toks[k] if k < len(toks) else None

    def tokenize(self, i: int, raw, row: int | None = None) -> str:
        spec = self.specs[i]
        if spec.kind == "numeric":
            return log_transform_numeric(raw, spec.name, row)
        return "" if raw is None else str(raw)

    @classmethod
    def synthetic(cls, dims: Sequence[int], prefix: str = "f") -> "Vocabulary":
        """Vocabulary with tokens ``c0 .. c{d_i-2}`` per field plus the rare bucket."""
        if any(di < 1 for di in dims):
            raise ValueError("every cardinality must be >= 1")
        specs = tuple(FieldSpec(f"{prefix}{i}") for i in range(len(dims)))
        tokens = tuple(tuple(f"c{k}" for k in range(di - 1)) for di in dims)
        return cls(specs, tokens)

    # -- sidecar file -------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{VOCAB_MAGIC} {VOCAB_VERSION} m={self.m} d={self.d}\n")
            for i, spec in enumerate(self.specs):
                fh.write(f"#field\t{i}\t{_escape(spec.name)}\t{spec.kind}\t{self.dims[i]}\t{self.rare_index(i)}\n")
            for i, toks in enumerate(self.tokens):
                for k, tok in enumerate(toks):
                    fh.write(f"{i}\t{_escape(tok)}\t{k}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8", newline="\n") as fh:
            lines = fh.read().split("\n")
        head = lines[0].split(" ")
        if len(head) != 4 or head[0] != VOCAB_MAGIC:
            raise EncodingError(f"{path}: not a vocabulary file")
        if int(head[1]) != VOCAB_VERSION:
            raise EncodingError(f"{path}: unsupported vocabulary version {head[1]}")
        m = int(head[2].removeprefix("m="))
        d = int(head[3].removeprefix("d="))
        specs: list[FieldSpec | None] = [None] * m
        dims = [0] * m
        tokens: list[list[str | None]] = [[] for _ in range(m)]
        for line in lines[1:]:
            if not line:
                continue
            parts = line.split("\t")
            if parts[0] == "#field":
                i = int(parts[1])
                specs[i] = FieldSpec(_unescape(parts[2]), parts[3])
                dims[i] = int(parts[4])
                tokens[i] = [None] * (dims[i] - 1)
                continue
            i, tok, k = int(parts[0]), _unescape(parts[1]), int(parts[2])
            tokens[i][k] = tok
        if any(s is None for s in specs) or any(t is None for ts in tokens for t in ts):
            raise EncodingError(f"{path}: incomplete vocabulary")
        vocab = cls(tuple(specs), tuple(tuple(ts) for ts in tokens))
        if vocab.d != d:
            raise EncodingError(f"{path}: header d={d} but fields sum to {vocab.d}")
        return vocab


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def _unescape(s: str) -> str:
    out, it = [], iter(s)
    for ch in it:
        if ch == "\\":
            nxt = next(it, "")
            out.append({"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}.get(nxt, nxt))
        else:
            out.append(ch)
    return "".join(out)


def build_vocabulary(rows: Sequence[Sequence], specs: Sequence[FieldSpec], min_count=1) -> Vocabulary:
    """Count tokens per field and keep those seen at least ``min_count`` times.

    ``rows`` are raw records laid out as in the data files: label first, then
    one value per field. ``min_count`` is an int or one int per field.
    """
    specs = tuple(specs)
    m = len(specs)
    if not rows:
        raise EncodingError("cannot build a vocabulary from an empty corpus")
    if isinstance(min_count, int):
        thresholds = [min_count] * m
    else:
        thresholds = list(min_count)
        if len(thresholds) != m:
            raise ValueError(f"expected {m} min_count values, got {len(thresholds)}")
    if any(t < 1 for t in thresholds):
        raise ValueError("min_count must be >= 1")

    proto = Vocabulary(specs, tuple(() for _ in specs))
    counts = [Counter() for _ in range(m)]
    for r, rec in enumerate(rows):
        if len(rec) != m + 1:
            raise EncodingError(f"row {r}: expected {m + 1} columns, got {len(rec)}")
        for i in range(m):
            counts[i][proto.tokenize(i, rec[i + 1], r)] += 1
    # Counter preserves insertion order, i.e. first appearance.
    tokens = tuple(tuple(t for t, c in counts[i].items() if c >= thresholds[i]) for i in range(m))
    return Vocabulary(specs, tokens)


@dataclass(frozen=True)
class EncodedInstance:
    active: tuple[int, ...]
    label: int


def encode_instance(row: Sequence, vocab: Vocabulary, row_number: int | None = None) -> EncodedInstance:
    if len(row) != vocab.m + 1:
        raise EncodingError(f"row {row_number}: expected {vocab.m + 1} columns, got {len(row)}")
    label = parse_label(row[0], row_number)
    active = tuple(vocab.index(i, vocab.tokenize(i, row[i + 1], row_number)) for i in range(vocab.m))
    return EncodedInstance(active, label)


class Dataset:
    """Encoded instances stored column-wise.

    ``indices`` is an ``(n, m)`` integer array of active local indices and
    ``labels`` holds +1/-1 as floats.
    """

    def __init__(self, indices, labels, vocab: Vocabulary):
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        labels = np.ascontiguousarray(labels, dtype=np.float64)
        if indices.ndim != 2 or indices.shape[1] != vocab.m:
            raise ValueError(f"indices must have shape (n, {vocab.m})")
        if len(indices) != len(labels):
            raise ValueError("indices and labels differ in length")
        if len(labels) < 1:
            raise ValueError("a dataset needs at least one instance")
        dims = np.asarray(vocab.dims)
        if (indices < 0).any() or (indices >= dims).any():
            raise ValueError("active index outside its field's range")
        if not np.isin(labels, (-1.0, 1.0)).all():
            raise ValueError("labels must be +1 or -1")
        indices.setflags(write=False)
        labels.setflags(write=False)
        self.indices = indices
        self.labels = labels
        self.vocab = vocab

    @property
    def n(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, j: int) -> EncodedInstance:
        return EncodedInstance(tuple(int(k) for k in self.indices[j]), int(self.labels[j]))

    def __iter__(self) -> Iterator[EncodedInstance]:
        return (self[j] for j in range(self.n))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.indices[idx], self.labels[idx], self.vocab)

    @classmethod
    def from_instances(cls, instances: Sequence[EncodedInstance], vocab: Vocabulary) -> "Dataset":
        idx = np.array([inst.active for inst in instances], dtype=np.int64).reshape(-1, vocab.m)
        lab = np.array([inst.label for inst in instances], dtype=np.float64)
        return cls(idx, lab, vocab)


def encode_rows(rows: Sequence[Sequence], vocab: Vocabulary) -> Dataset:
    return Dataset.from_instances([encode_instance(r, vocab, j) for j, r in enumerate(rows)], vocab)


def split_indices(n: int, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[np.ndarray, ...]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    if n < 3:
        raise ValueError(f"need at least 3 instances to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    cut1 = int(math.floor(n * ratios[0] + 0.5))
    cut2 = int(math.floor(n * (ratios[0] + ratios[1]) + 0.5))
    # every part keeps at least one instance
    cut1 = min(max(cut1, 1), n - 2)
    cut2 = min(max(cut2, cut1 + 1), n - 1)
    return perm[:cut1], perm[cut1:cut2], perm[cut2:]


def split_dataset(data: Dataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Random train/validation/test partition, deterministic under ``seed``."""
    return tuple(data.subset(np.sort(p)) for p in split_indices(data.n, ratios, seed))


def read_delimited(path, delimiter: str = "\t", header: bool = False):
    """Read a label-first delimited file.

    Returns ``(rows, names)``; ``names`` are the field column names from the
    header line (label column dropped) or ``None`` when there is no header.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter, quoting=csv.QUOTE_NONE if delimiter == "\t" else csv.QUOTE_MINIMAL)
        rows = [r for r in reader if r]
    names = None
    if header:
        if not rows:
            raise EncodingError(f"{path}: missing header line")
        names = rows[0][1:]
        rows = rows[1:]
    if not rows:
        raise EncodingError(f"{path}: no data rows")
    width = len(rows[0])
    for j, r in enumerate(rows):
        if len(r) != width:
            raise EncodingError(f"{path}: row {j} has {len(r)} columns, expected {width}")
    return rows, names


def write_delimited(path, data: Dataset, delimiter: str = "\t", header: bool = False) -> None:
    """Write a dataset back out as label-first tokens.

    Rare-bucket entries are written as ``<rare>``, which any vocabulary without
    that token maps back to the rare bucket.
    """
    vocab = data.vocab
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(delimiter.join(["label", *vocab.names]) + "\n")
        for active, y in zip(data.indices.tolist(), data.labels.tolist()):
            toks = []
            for i, k in enumerate(active):
                tok = vocab.token(i, k)
                toks.append("<rare>" if tok is None else tok)
            fh.write(delimiter.join(["1" if y > 0 else "0", *toks]) + "\n")
