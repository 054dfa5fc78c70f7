"""Data model, token vocabulary, subset handling and file I/O."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, SOS, EOS = 0, 1, 2
N_SPECIAL = 3
SPECIAL_NAMES = {PAD: "<PAD>", SOS: "<SOS>", EOS: "<EOS>"}
LABEL_COLUMN = "label"
UTILITY_DECIMALS = 6


class GerbilError(Exception):
    """Base class for all errors raised by this package."""


class EmptySubset(GerbilError):
    pass


class TokenOutOfRange(GerbilError):
    pass


class ParseError(GerbilError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class SchemaError(GerbilError):
    pass


class ConfigError(GerbilError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Maps feature columns to token ids; column ``j`` is token ``j + 3``."""

    n_features: int

    def __post_init__(self):
        if self.n_features < 1:
            raise ConfigError("vocabulary needs at least one feature")

    @property
    def size(self) -> int:
        return self.n_features + N_SPECIAL

    def token(self, column: int) -> int:
        if not 0 <= column < self.n_features:
            raise TokenOutOfRange(f"column {column} outside [0, {self.n_features})")
        return column + N_SPECIAL

    def column(self, token: int) -> int:
        col = token - N_SPECIAL
        if not 0 <= col < self.n_features:
            raise TokenOutOfRange(f"token {token} does not map to a column of {self.n_features}")
        return col

    def tokens(self, columns: Iterable[int]) -> list[int]:
        return [self.token(int(c)) for c in columns]

    def columns(self, tokens: Iterable[int]) -> list[int]:
        return [self.column(int(t)) for t in tokens]

    def is_feature(self, token: int) -> bool:
        return N_SPECIAL <= token < self.size


@dataclass(frozen=True, eq=False)
class TabularDataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise SchemaError(f"features must be 2-D, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise SchemaError("labels must be a vector with one entry per sample")
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise SchemaError(f"need at least 2 samples and 1 feature, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise SchemaError("features contain NaN or Inf")
        if not np.all(np.isin(y, (0, 1))):
            raise SchemaError("labels must be 0/1")
        names = tuple(self.feature_names) or tuple(f"f{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise SchemaError("feature_names length does not match the number of columns")
        X = X.copy()
        y = y.astype(np.int64)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.n_features)

    def has_both_classes(self) -> bool:
        return bool(np.any(self.labels == 0) and np.any(self.labels == 1))


@dataclass(frozen=True)
class SubsetRecord:
    tokens: tuple[int, ...]
    utility: float

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if not self.tokens:
            raise EmptySubset("a record needs a non-empty token sequence")
        if not (0.0 <= self.utility <= 1.0) or math.isnan(self.utility):
            raise ValueError(f"utility {self.utility} outside [0, 1]")


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    auc: float
    per_fold: tuple[tuple[float, float, float, float], ...] = field(default=())
    accuracy: float = float("nan")
    auc_undefined: bool = False

    @classmethod
    def from_folds(cls, folds, accuracies=None, auc_undefined=False) -> "MetricsReport":
        arr = np.asarray(folds, dtype=np.float64)
        mean = arr.mean(axis=0)
        acc = float(np.mean(accuracies)) if accuracies is not None else float("nan")
        return cls(
            precision=float(mean[0]),
            recall=float(mean[1]),
            f1=float(mean[2]),
            auc=float(mean[3]),
            per_fold=tuple(tuple(float(v) for v in row) for row in arr),
            accuracy=acc,
            auc_undefined=auc_undefined,
        )

    def to_dict(self, subset: Sequence[int] | None = None) -> dict:
        out = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "per_fold": [
                {"precision": p, "recall": r, "f1": f, "auc": a} for p, r, f, a in self.per_fold
            ],
        }
        if subset is not None:
            out["subset"] = [int(t) for t in subset]
            out["subset_size"] = len(subset)
        return out


def canonicalize(tokens: Iterable[int]) -> tuple[int, ...]:
    """Cut at the first EOS, drop specials, dedupe and sort ascending."""
    kept = set()
    for t in tokens:
        t = int(t)
        if t == EOS:
            break
        if t >= N_SPECIAL:
            kept.add(t)
    return tuple(sorted(kept))


def is_canonical(tokens: Sequence[int]) -> bool:
    return (
        len(tokens) > 0
        and all(t >= N_SPECIAL for t in tokens)
        and all(a < b for a, b in zip(tokens, tokens[1:]))
    )


def apply_subset(ds: TabularDataset, tokens: Sequence[int]) -> TabularDataset:
    if len(tokens) == 0:
        raise EmptySubset("cannot select an empty subset")
    cols = ds.vocab.columns(sorted(tokens))
    return TabularDataset(
        ds.features[:, cols],
        ds.labels,
        tuple(ds.feature_names[c] for c in cols),
    )


def load_dataset(path) -> TabularDataset:
    """Read a CSV with a header row and a 0/1 ``label`` column."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        header = [h.strip() for h in header]
        if LABEL_COLUMN not in header:
            raise SchemaError(f"{path}: missing {LABEL_COLUMN!r} column")
        label_idx = header.index(LABEL_COLUMN)
        names = [h for i, h in enumerate(header) if i != label_idx]
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(row)}", line=lineno)
            values = []
            for i, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", line=lineno, column=header[i]) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite cell {cell!r}", line=lineno, column=header[i])
                if i == label_idx:
                    if v not in (0.0, 1.0):
                        raise ParseError(f"label must be 0 or 1, got {cell!r}", line=lineno, column=LABEL_COLUMN)
                    labels.append(int(v))
                else:
                    values.append(v)
            rows.append(values)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return TabularDataset(np.array(rows, dtype=np.float64), np.array(labels), tuple(names))


def save_dataset(ds: TabularDataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*ds.feature_names, LABEL_COLUMN])
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def round_utility(u: float) -> float:
    return round(float(u), UTILITY_DECIMALS)


def save_records(records: Iterable[SubsetRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            line = {"tokens": list(rec.tokens), "utility": round_utility(rec.utility)}
            fh.write(json.dumps(line) + "\n")


def load_records(path) -> list[SubsetRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not isinstance(obj, dict) or "tokens" not in obj or "utility" not in obj:
                raise SchemaError(f"line {lineno}: record needs 'tokens' and 'utility'")
            tokens = obj["tokens"]
            if not isinstance(tokens, list) or not all(isinstance(t, int) for t in tokens):
                raise ParseError("tokens must be a list of integers", line=lineno)
            try:
                records.append(SubsetRecord(tuple(tokens), float(obj["utility"])))
            except (ValueError, EmptySubset) as exc:
                raise ParseError(str(exc), line=lineno) from None
    return records
