"""Feature schema, CSV ingestion and ordinal encoding of categorical features."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    MissingColumn,
    NonBinaryLabel,
    OutOfBoundsValue,
    SchemaError,
    UnknownCategory,
)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    lower: float
    upper: float
    actionable: bool = True
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.lower > self.upper:
            raise SchemaError(f"feature {self.name!r}: lower > upper")
        if self.lower == self.upper and self.actionable:
            raise SchemaError(
                f"feature {self.name!r}: degenerate bounds only allowed for non-actionable features"
            )
        if self.kind == CATEGORICAL:
            if self.categories is None:
                raise SchemaError(f"feature {self.name!r}: categorical without categories")
            if self.lower != int(self.lower) or self.upper != int(self.upper):
                raise SchemaError(f"feature {self.name!r}: categorical bounds must be integers")
            if int(self.upper) - int(self.lower) + 1 != len(self.categories):
                raise SchemaError(
                    f"feature {self.name!r}: bounds span does not match {len(self.categories)} categories"
                )
            object.__setattr__(self, "categories", tuple(self.categories))
        elif self.categories is not None:
            raise SchemaError(f"feature {self.name!r}: continuous feature with categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureSpec, ...]
    label: str = "label"

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if not names:
            raise SchemaError("schema has no features")

    def __len__(self):
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def bounds(self) -> np.ndarray:
        return np.array([[f.lower, f.upper] for f in self.features], dtype=float)

    @property
    def categorical_columns(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.is_categorical]

    @property
    def frozen_columns(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if not f.actionable]

    @classmethod
    def from_dict(cls, obj: Mapping) -> "FeatureSchema":
        try:
            feats = [
                FeatureSpec(
                    name=str(f["name"]),
                    kind=str(f["kind"]),
                    lower=float(f["lower"]),
                    upper=float(f["upper"]),
                    actionable=bool(f.get("actionable", True)),
                    categories=tuple(f["categories"]) if f.get("categories") is not None else None,
                )
                for f in obj["features"]
            ]
        except KeyError as exc:
            raise SchemaError(f"schema entry missing key {exc}") from None
        return cls(tuple(feats), label=str(obj.get("label", "label")))

    def to_dict(self) -> dict:
        out = []
        for f in self.features:
            d = {"name": f.name, "kind": f.kind, "lower": f.lower, "upper": f.upper,
                 "actionable": f.actionable}
            if f.categories is not None:
                d["categories"] = list(f.categories)
            out.append(d)
        return {"features": out, "label": self.label}


def load_schema(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_dict(json.load(fh))


def save_schema(schema: FeatureSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)


def feature_stds(X: np.ndarray) -> np.ndarray:
    """Per-column sample standard deviation (ddof=0, matching ``np.std``)."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        return np.zeros(X.shape[1])
    return X.std(axis=0)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    t: np.ndarray
    stds: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        t = np.asarray(self.t, dtype=int)
        if X.ndim != 2 or t.shape != (X.shape[0],):
            raise SchemaError("X must be 2-D and t must have one label per row")
        if not np.isin(t, (0, 1)).all():
            raise NonBinaryLabel("labels must be 0 or 1")
        X.setflags(write=False)
        t.setflags(write=False)
        stds = feature_stds(X)
        stds.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "stds", stds)

    def __len__(self):
        return self.X.shape[0]

    def without(self, rows) -> "Dataset":
        keep = np.ones(len(self), dtype=bool)
        keep[np.atleast_1d(rows)] = False
        return Dataset(self.X[keep], self.t[keep])


def _parse_value(spec: FeatureSpec, raw: str, where: str) -> float:
    raw = raw.strip()
    if spec.is_categorical:
        try:
            idx = spec.categories.index(raw)
        except ValueError:
            # a bare ordinal is accepted too, as long as it is a known index
            try:
                val = float(raw)
            except ValueError:
                raise UnknownCategory(f"{where}: unknown category {raw!r} for {spec.name!r}") from None
            if val != int(val) or not spec.lower <= val <= spec.upper:
                raise UnknownCategory(f"{where}: unknown category {raw!r} for {spec.name!r}")
            return val
        return float(spec.lower + idx)
    try:
        val = float(raw)
    except ValueError:
        raise SchemaError(f"{where}: cannot parse {raw!r} as a number for {spec.name!r}") from None
    if not spec.lower <= val <= spec.upper:
        raise OutOfBoundsValue(
            f"{where}: value {val} outside [{spec.lower}, {spec.upper}] for {spec.name!r}"
        )
    return val


def load_csv(path, schema: FeatureSchema, label_column: str | None = None) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Categorical strings are mapped to their ordinal index in the schema's
    declared category order (offset by the feature's lower bound).
    """
    label_column = label_column or schema.label
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: empty file") from None
        missing = [c for c in schema.names + [label_column] if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing columns {missing}")
        cols = [header.index(n) for n in schema.names]
        lab = header.index(label_column)
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            where = f"{path.name}:{lineno}"
            rows.append([_parse_value(s, rec[c], f"{where} column {s.name!r}")
                         for s, c in zip(schema.features, cols)])
            raw = rec[lab].strip()
            try:
                lv = float(raw)
            except ValueError:
                raise NonBinaryLabel(f"{where}: label {raw!r} is not 0/1") from None
            if lv not in (0.0, 1.0):
                raise NonBinaryLabel(f"{where}: label {raw!r} is not 0/1")
            labels.append(int(lv))
    X = np.array(rows, dtype=float).reshape(len(rows), len(schema))
    return Dataset(X, np.array(labels, dtype=int))


def write_csv(path, schema: FeatureSchema, data: Dataset) -> None:
    """Write a dataset back out, decoding categorical columns to their labels."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(schema.names + [schema.label])
        for x, t in zip(data.X, data.t):
            w.writerow(decode_instance(x, schema, as_list=True) + [str(int(t))])


def encode_instance(raw: Mapping[str, str], schema: FeatureSchema) -> np.ndarray:
    missing = [n for n in schema.names if n not in raw]
    if missing:
        raise MissingColumn(f"instance missing features {missing}")
    return np.array([_parse_value(s, str(raw[s.name]), "instance") for s in schema.features])


def decode_instance(x: Sequence[float], schema: FeatureSchema, as_list: bool = False):
    """Inverse of :func:`encode_instance`; continuous values are rendered with ``repr``."""
    out = {}
    for s, v in zip(schema.features, x):
        if s.is_categorical:
            out[s.name] = s.categories[int(round(v - s.lower))]
        else:
            out[s.name] = repr(float(v))
    return list(out.values()) if as_list else out


def check_instance(x: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != len(schema):
        raise SchemaError(f"instance has {x.shape[0]} values, schema has {len(schema)} features")
    for s, v in zip(schema.features, x):
        if not s.lower <= v <= s.upper:
            raise OutOfBoundsValue(f"instance value {v} outside [{s.lower}, {s.upper}] for {s.name!r}")
        if s.is_categorical and v != int(v):
            raise OutOfBoundsValue(f"instance value {v} for categorical {s.name!r} is not integral")
    return x


def effective_bounds(schema: FeatureSchema, anchor) -> np.ndarray:
    """Search-space bounds with non-actionable features frozen at the anchor's value."""
    anchor = check_instance(anchor, schema)
    b = schema.bounds
    for j in schema.frozen_columns:
        b[j] = anchor[j]
    return b
