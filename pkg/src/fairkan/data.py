"""Dataset loading, splitting, scaling, and a synthetic biased-data generator.

CSV layout: comma-separated, UTF-8, mandatory header, plain decimal
numerics.  Rows missing a value in any schema column are dropped (and
counted); imputation is deliberately out of scope since it would confound
the fairness measurements downstream.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, SchemaError, ShapeError

__all__ = [
    "Dataset",
    "load_csv",
    "save_csv",
    "split",
    "split_indices",
    "Scaler",
    "fit_scaler",
    "apply_scaler",
    "SyntheticSpec",
    "generate_synthetic",
]

log = logging.getLogger(__name__)

_MISSING = {"", "na", "nan", "null", "none"}


@dataclass
class Dataset:
    """Feature matrix plus binary sensitive columns and binary labels."""

    features: np.ndarray
    sensitive: np.ndarray
    labels: np.ndarray
    feature_names: list
    sensitive_names: list
    label_name: str = "y"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.sensitive = np.asarray(self.sensitive, dtype=int)
        self.labels = np.asarray(self.labels, dtype=int)
        m = self.features.shape[0]
        if self.features.ndim != 2:
            raise ShapeError("features must be 2-D")
        if self.sensitive.shape != (m, len(self.sensitive_names)):
            raise ShapeError(
                f"sensitive shape {self.sensitive.shape} != "
                f"({m}, {len(self.sensitive_names)})"
            )
        if self.labels.shape != (m,):
            raise ShapeError(f"labels shape {self.labels.shape} != ({m},)")
        if not np.isfinite(self.features).all():
            raise DataError("features contain non-finite values")
        if self.sensitive.size and not np.isin(self.sensitive, (0, 1)).all():
            raise DataError("sensitive columns must be binary")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be binary")
        for arr in (self.features, self.sensitive, self.labels):
            arr.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_sensitive(self) -> int:
        return self.sensitive.shape[1]

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            self.features[idx].copy(), self.sensitive[idx].copy(),
            self.labels[idx].copy(), list(self.feature_names),
            list(self.sensitive_names), self.label_name,
        )

    def with_features(self, features) -> "Dataset":
        return Dataset(
            features, self.sensitive.copy(), self.labels.copy(),
            list(self.feature_names), list(self.sensitive_names),
            self.label_name,
        )


def _parse_binary(raw: str, column: str, row_number: int) -> int:
    try:
        v = float(raw)
    except ValueError:
        raise DataError(
            f"row {row_number}: column {column!r} value {raw!r} is not numeric"
        ) from None
    if v not in (0.0, 1.0):
        raise DataError(
            f"row {row_number}: column {column!r} must be 0 or 1, got {raw!r}"
        )
    return int(v)


def load_csv(path, feature_columns, sensitive_columns, label_column):
    """Read a dataset; returns ``(Dataset, dropped_row_count)``.

    Row numbers in errors are 1-based counting the header as row 1.
    """
    feature_columns = list(feature_columns)
    sensitive_columns = list(sensitive_columns)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file (no header row)") from None
        col_index = {name: i for i, name in enumerate(header)}
        needed = feature_columns + sensitive_columns + [label_column]
        for name in needed:
            if name not in col_index:
                raise SchemaError(f"{path}: column {name!r} not found in header")
        feats, sens, labs = [], [], []
        dropped = 0
        for row_number, row in enumerate(reader, start=2):
            raw = {}
            missing = False
            for name in needed:
                idx = col_index[name]
                value = row[idx].strip() if idx < len(row) else ""
                if value.lower() in _MISSING:
                    missing = True
                    break
                raw[name] = value
            if missing:
                dropped += 1
                continue
            frow = []
            for name in feature_columns:
                try:
                    frow.append(float(raw[name]))
                except ValueError:
                    raise DataError(
                        f"row {row_number}: column {name!r} value "
                        f"{raw[name]!r} is not numeric"
                    ) from None
            feats.append(frow)
            sens.append([
                _parse_binary(raw[name], name, row_number)
                for name in sensitive_columns
            ])
            labs.append(_parse_binary(raw[label_column], label_column, row_number))
    if not feats:
        raise DataError(f"{path}: no usable rows after dropping {dropped}")
    ds = Dataset(
        np.array(feats, dtype=float),
        np.array(sens, dtype=int).reshape(len(sens), len(sensitive_columns)),
        np.array(labs, dtype=int),
        feature_columns, sensitive_columns, label_column,
    )
    return ds, dropped


def save_csv(path, dataset: Dataset):
    """Write a dataset with full float precision (round-trip exact)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            dataset.feature_names + dataset.sensitive_names + [dataset.label_name]
        )
        for i in range(dataset.n_rows):
            writer.writerow(
                [repr(float(v)) for v in dataset.features[i]]
                + [int(v) for v in dataset.sensitive[i]]
                + [int(dataset.labels[i])]
            )


# ---------------------------------------------------------------------------
# Train/test split, stratified on the joint (sensitive..., label) cell.
# ---------------------------------------------------------------------------

def split_indices(dataset: Dataset, test_fraction: float, seed: int):
    """Deterministic stratified split; returns sorted (train, test) indices.

    The global test count is round(m * fraction) exactly; per-stratum test
    counts stay within one row of proportional (largest-remainder rule).
    Strata with fewer than two rows are pooled and shuffled globally.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    m = dataset.n_rows
    keys = [
        tuple(dataset.sensitive[i]) + (int(dataset.labels[i]),)
        for i in range(m)
    ]
    strata = {}
    for i, key in enumerate(keys):
        strata.setdefault(key, []).append(i)

    rng = np.random.default_rng(int(seed))
    target_test = int(round(m * test_fraction))
    pooled = []
    eligible = []
    for key in sorted(strata):
        idx = strata[key]
        if len(idx) < 2:
            pooled.extend(idx)
        else:
            eligible.append(idx)
    if pooled:
        log.warning(
            "%d row(s) in strata smaller than 2; falling back to a plain "
            "shuffle for them", len(pooled),
        )

    # Largest-remainder apportionment of the test quota across strata.
    quotas = [len(idx) * test_fraction for idx in eligible]
    base = [int(q) for q in quotas]
    leftover = target_test - sum(base) - int(round(len(pooled) * test_fraction))
    remainders = sorted(
        range(len(eligible)), key=lambda i: (quotas[i] - base[i]), reverse=True
    )
    counts = list(base)
    for i in remainders:
        if leftover <= 0:
            break
        if counts[i] < len(eligible[i]):
            counts[i] += 1
            leftover -= 1

    test_idx = []
    for idx, n_test in zip(eligible, counts):
        perm = rng.permutation(len(idx))
        test_idx.extend(idx[j] for j in perm[:n_test])
    if pooled:
        n_test_pooled = target_test - len(test_idx)
        perm = rng.permutation(len(pooled))
        test_idx.extend(pooled[j] for j in perm[:n_test_pooled])

    test_mask = np.zeros(m, dtype=bool)
    test_mask[test_idx] = True
    return np.nonzero(~test_mask)[0], np.nonzero(test_mask)[0]


def split(dataset: Dataset, test_fraction: float, seed: int):
    train_idx, test_idx = split_indices(dataset, test_fraction, seed)
    return dataset.take(train_idx), dataset.take(test_idx)


# ---------------------------------------------------------------------------
# Feature scaling onto the spline domain.
# ---------------------------------------------------------------------------

@dataclass
class Scaler:
    """Min-max statistics fitted on training rows; maps onto [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray


def fit_scaler(dataset: Dataset) -> Scaler:
    return Scaler(
        lo=dataset.features.min(axis=0).copy(),
        hi=dataset.features.max(axis=0).copy(),
    )


def scale_features(scaler: Scaler, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[1] != scaler.lo.shape[0]:
        raise ShapeError(
            f"scaler fitted on {scaler.lo.shape[0]} features, got {x.shape[1]}"
        )
    span = scaler.hi - scaler.lo
    safe = np.where(span > 0, span, 1.0)
    scaled = 2.0 * (x - scaler.lo) / safe - 1.0
    scaled = np.where(span > 0, scaled, 0.0)   # constant feature -> 0
    return np.clip(scaled, -1.0, 1.0)          # test rows beyond train range


def apply_scaler(scaler: Scaler, dataset: Dataset) -> Dataset:
    return dataset.with_features(scale_features(scaler, dataset.features))


# ---------------------------------------------------------------------------
# Synthetic generator with a planted demographic-parity violation.
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Generator settings.

    ``gamma`` shifts the label logit down for members of each sensitive
    group (the planted bias); ``mixing`` leaks group membership into the
    features along fixed random directions, which is what lets a classifier
    pick the bias up from x alone.
    """

    m: int = 8000
    n: int = 10
    n_sensitive: int = 2
    balance: float = 0.4
    gamma: float = 2.0
    noise: float = 0.7
    mixing: float = 1.5
    seed: int = 0

    def validate(self):
        if self.m < 10:
            raise ConfigError(f"m must be >= 10, got {self.m}")
        if self.n < 2:
            raise ConfigError(f"n must be >= 2, got {self.n}")
        if self.n_sensitive < 1:
            raise ConfigError(f"n_sensitive must be >= 1, got {self.n_sensitive}")
        if not 0.0 < self.balance < 1.0:
            raise ConfigError(f"balance must be in (0, 1), got {self.balance}")
        if self.noise < 0 or self.mixing < 0 or self.gamma < 0:
            raise ConfigError("noise, mixing, and gamma must be >= 0")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset with group-shifted features and biased labels.

    z_j ~ Bernoulli(balance); x = noise * N(0, I) + mixing * sum_j z_j u_j
    with fixed random unit directions u_j; y ~ Bernoulli(sigmoid(w.x + b -
    gamma * sum_j z_j)) with b centering the overall label rate near 1/2.
    Deterministic given the seed.
    """
    spec.validate()
    rng = np.random.default_rng(int(spec.seed))
    m, n, s = spec.m, spec.n, spec.n_sensitive
    z = (rng.uniform(size=(m, s)) < spec.balance).astype(int)
    directions = rng.normal(size=(s, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    w = rng.normal(size=n) / np.sqrt(n)
    x = spec.noise * rng.normal(size=(m, n)) + spec.mixing * (z @ directions)
    logits = x @ w - spec.gamma * z.sum(axis=1)
    logits += -logits.mean()
    probs = 1.0 / (1.0 + np.exp(-logits))
    y = (rng.uniform(size=m) < probs).astype(int)
    return Dataset(
        x, z, y,
        [f"x{i}" for i in range(n)],
        [f"z{j}" for j in range(s)],
        "y",
    )
