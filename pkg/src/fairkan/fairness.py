"""Group fairness metrics and the adaptive fairness-penalty controller.

Demographic-parity gap and the p%-rule are computed on hard (thresholded)
decisions; AUROC on raw scores via the rank statistic.  Undefined values
(an empty group, a single-class label vector) are returned as NaN rather
than silently coerced to a number.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError

__all__ = [
    "dp_gap",
    "p_percent_rule",
    "threshold",
    "accuracy",
    "auroc",
    "group_rates",
    "FairnessReport",
    "evaluate_fairness",
    "LambdaController",
    "make_controller",
    "update_lambda",
]

log = logging.getLogger(__name__)


def _as_binary(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise DataError(f"{name} must contain only 0/1 values")
    return arr.astype(int)


def _check_same_length(a, b, names: str):
    if len(a) != len(b):
        raise ShapeError(f"{names} lengths differ: {len(a)} vs {len(b)}")


def group_rates(predicted_labels, z):
    """Positive-prediction rate and size per group.

    Parameters
    ----------
    predicted_labels : array-like of 0/1
        Hard decisions.
    z : array-like of 0/1
        Group membership, same length.

    Returns
    -------
    (r0, r1, n0, n1) : rates are NaN for an empty group.
    """
    pred = _as_binary(predicted_labels, "predicted_labels")
    zz = _as_binary(z, "z")
    _check_same_length(pred, zz, "predicted_labels/z")
    if pred.size == 0:
        raise ShapeError("need at least one sample")
    n1 = int(zz.sum())
    n0 = int(zz.size - n1)
    r0 = float(pred[zz == 0].mean()) if n0 else float("nan")
    r1 = float(pred[zz == 1].mean()) if n1 else float("nan")
    return r0, r1, n0, n1


def dp_gap(predicted_labels, z) -> float:
    """Demographic-parity gap |P(pred=1 | z=1) - P(pred=1 | z=0)|.

    NaN when either group is empty.
    """
    r0, r1, n0, n1 = group_rates(predicted_labels, z)
    if n0 == 0 or n1 == 0:
        return float("nan")
    return abs(r1 - r0)


def p_percent_rule(predicted_labels, z) -> float:
    """p%-rule: 100 * min(r0, r1) / max(r0, r1).

    Returns 100.0 when neither group receives a positive prediction
    (equal treatment), NaN when a group is empty.
    """
    r0, r1, n0, n1 = group_rates(predicted_labels, z)
    if n0 == 0 or n1 == 0:
        return float("nan")
    top = max(r0, r1)
    if top == 0.0:
        return 100.0
    return 100.0 * min(r0, r1) / top


def threshold(scores, cutoff: float = 0.5) -> np.ndarray:
    """Hard decisions from probabilities: label 1 iff score > cutoff (strict)."""
    s = np.asarray(scores, dtype=float)
    return (s > cutoff).astype(int)


def accuracy(predicted_labels, y) -> float:
    """Fraction of agreements between hard decisions and labels."""
    pred = _as_binary(predicted_labels, "predicted_labels")
    yy = _as_binary(y, "y")
    _check_same_length(pred, yy, "predicted_labels/y")
    if pred.size == 0:
        raise ShapeError("need at least one sample")
    return float((pred == yy).mean())


def _average_ranks(x: np.ndarray) -> np.ndarray:
    # 1-based ranks with ties sharing their average rank.
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=float)
    ranks[order] = np.arange(1, x.size + 1, dtype=float)
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    sums = np.zeros(counts.size)
    np.add.at(sums, inverse, ranks)
    return sums[inverse] / counts[inverse]


def auroc(scores, y) -> float:
    """Area under the ROC curve via the rank (Mann-Whitney) statistic.

    Ties contribute 1/2.  NaN when ``y`` holds a single class.
    """
    s = np.asarray(scores, dtype=float)
    yy = _as_binary(y, "y")
    _check_same_length(s, yy, "scores/y")
    if not np.isfinite(s).all():
        raise DataError("scores contain non-finite values")
    n1 = int(yy.sum())
    n0 = int(yy.size - n1)
    if n0 == 0 or n1 == 0:
        return float("nan")
    ranks = _average_ranks(s)
    rank_sum = float(ranks[yy == 1].sum())
    return (rank_sum - n1 * (n1 + 1) / 2.0) / (n0 * n1)


@dataclass
class FairnessReport:
    """Metrics for one evaluation pass; per-attribute fields are lists."""

    accuracy: float
    auroc: float
    dp_gap: list
    p_rule: list
    r0: list
    r1: list
    group_sizes: list

    def to_dict(self) -> dict:
        """JSON-safe mapping (NaN becomes null)."""
        def clean(v):
            if isinstance(v, float) and not np.isfinite(v):
                return None
            return v

        return {
            "accuracy": clean(self.accuracy),
            "auroc": clean(self.auroc),
            "dp_gap": [clean(v) for v in self.dp_gap],
            "p_rule": [clean(v) for v in self.p_rule],
            "r0": [clean(v) for v in self.r0],
            "r1": [clean(v) for v in self.r1],
            "group_sizes": [list(g) for g in self.group_sizes],
        }


def evaluate_fairness(scores, y, sensitive, cutoff: float = 0.5) -> FairnessReport:
    """Full metric sweep: threshold once, then per-attribute group metrics.

    ``sensitive`` is ``(n, n_attrs)`` (a single column may be passed 1-D).
    """
    s = np.asarray(scores, dtype=float)
    z = np.asarray(sensitive)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2 or z.shape[0] != s.shape[0]:
        raise ShapeError(
            f"sensitive must be ({s.shape[0]}, n_attrs), got {z.shape}"
        )
    pred = threshold(s, cutoff)
    gaps, prules, rates0, rates1, sizes = [], [], [], [], []
    for j in range(z.shape[1]):
        r0, r1, n0, n1 = group_rates(pred, z[:, j])
        rates0.append(r0)
        rates1.append(r1)
        sizes.append((n0, n1))
        gaps.append(dp_gap(pred, z[:, j]))
        prules.append(p_percent_rule(pred, z[:, j]))
    return FairnessReport(
        accuracy=accuracy(pred, y),
        auroc=auroc(s, y),
        dp_gap=gaps,
        p_rule=prules,
        r0=rates0,
        r1=rates1,
        group_sizes=sizes,
    )


# ---------------------------------------------------------------------------
# Adaptive fairness penalty: one lambda per sensitive attribute, pushed up
# whenever the observed p%-rule falls short of the target tau and relaxed
# when it exceeds it, always clipped to [lo, hi].
# ---------------------------------------------------------------------------

@dataclass
class LambdaController:
    lambdas: np.ndarray
    eta: float = 0.04
    tau: float = 90.0
    lo: float = 0.1
    hi: float = 1.0
    shared: bool = False
    history: list = field(default_factory=list)


def make_controller(n_attrs: int, eta: float = 0.04, tau: float = 90.0,
                    initial: float = 0.1, lo: float = 0.1, hi: float = 1.0,
                    shared: bool = False) -> LambdaController:
    if n_attrs < 1:
        raise ConfigError("need at least one sensitive attribute")
    if not eta > 0:
        raise ConfigError(f"eta must be > 0, got {eta}")
    if not 0 < tau <= 100:
        raise ConfigError(f"tau must lie in (0, 100], got {tau}")
    if not lo <= initial <= hi:
        raise ConfigError(f"initial lambda {initial} outside [{lo}, {hi}]")
    return LambdaController(
        lambdas=np.full(n_attrs, float(initial)),
        eta=float(eta), tau=float(tau), lo=float(lo), hi=float(hi),
        shared=shared,
    )


def update_lambda(controller: LambdaController, p_rules) -> LambdaController:
    """One controller step: lambda_j <- clip(lambda_j + eta*(tau - p_j)/tau).

    An undefined (NaN) p%-rule leaves the matching lambda unchanged and
    logs a warning.  In shared mode one delta — from the mean of the
    defined p%-rules — is applied to every lambda.
    """
    p = np.asarray(p_rules, dtype=float)
    if p.shape != controller.lambdas.shape:
        raise ShapeError(
            f"expected {controller.lambdas.shape[0]} p-rule values, "
            f"got shape {p.shape}"
        )
    defined = np.isfinite(p)
    if not defined.all():
        log.warning(
            "p%%-rule undefined for attribute(s) %s; leaving lambda unchanged",
            np.nonzero(~defined)[0].tolist(),
        )
    if controller.shared:
        if defined.any():
            delta = (controller.tau - float(p[defined].mean())) / controller.tau
            controller.lambdas[...] = np.clip(
                controller.lambdas + controller.eta * delta,
                controller.lo, controller.hi,
            )
    else:
        delta = (controller.tau - p[defined]) / controller.tau
        controller.lambdas[defined] = np.clip(
            controller.lambdas[defined] + controller.eta * delta,
            controller.lo, controller.hi,
        )
    controller.history.append(controller.lambdas.copy())
    return controller
