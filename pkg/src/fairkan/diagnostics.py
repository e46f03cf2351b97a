"""Numerical checks of the theory the model is built on.

Everything here treats networks as frozen: finite-difference gradient
validation, empirical Lipschitz and smoothness constants with their
analytic bounds, the 1-D Wasserstein distance, the group-pushforward
contraction inequality, and per-group score histograms.

The Lipschitz chain bound multiplies, per layer, the largest edge-function
slope by the fan-in; since a spline's derivative is a lower-degree spline
whose coefficients are scaled first differences, the slope bound needs
only parameter magnitudes.  The contraction check compares the classifier
score W1 between groups against this bound times a projection-based lower
bound of the input W1 — a pass therefore certifies the true inequality.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, UsageError
from .network import KanNetwork
from .training import composite_objective

__all__ = [
    "grad_check",
    "composite_grad_check",
    "lipschitz_estimate",
    "smoothness_estimate",
    "wasserstein1_1d",
    "contraction_check",
    "export_score_distributions",
    "write_histogram_csv",
    "group_tv_distances",
    "TheoryReport",
    "theory_report",
]


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def grad_check(net: KanNetwork, probes: int = 50, step: float = 1e-4,
               seed: int = 0) -> float:
    """Max relative error between analytic and central-FD gradients.

    The probed scalar is 0.5 * sum(f(x)^2) on a random in-domain batch;
    probe coordinates are drawn over all parameters and the inputs.
    """
    rng = np.random.default_rng(int(seed))
    lo = net.layers[0].grid.domain_lo
    hi = net.layers[0].grid.domain_hi
    # keep the batch strictly interior so input FD never crosses the clamp
    pad = 10.0 * step
    x = rng.uniform(lo + pad, hi - pad, size=(16, net.in_dim))

    def loss():
        out, _ = net.forward(x)
        return 0.5 * float(np.sum(out * out))

    out, cache = net.forward(x, want_cache=True)
    grads = net.backward(cache, out)
    arrays = list(zip(net.parameters(), grads.to_list())) + [(x, grads.input_grad)]
    sizes = np.array([a.size for a, _ in arrays])
    cdf = np.cumsum(sizes)
    worst = 0.0
    for _ in range(int(probes)):
        flat_idx = int(rng.integers(0, cdf[-1]))
        which = int(np.searchsorted(cdf, flat_idx, side="right"))
        offset = flat_idx - (cdf[which - 1] if which else 0)
        arr, garr = arrays[which]
        flat = arr.reshape(-1)
        old = flat[offset]
        flat[offset] = old + step
        up = loss()
        flat[offset] = old - step
        down = loss()
        flat[offset] = old
        worst = max(worst, _rel_err(garr.reshape(-1)[offset], (up - down) / (2 * step)))
    return worst


def composite_grad_check(classifier: KanNetwork, adversary: KanNetwork,
                         lambdas, x, y, z, probes: int = 50,
                         step: float = 1e-4, seed: int = 0,
                         l1: float = 0.0, l2: float = 0.0) -> float:
    """grad_check for the debiasing objective through the frozen adversary."""
    rng = np.random.default_rng(int(seed))

    def loss():
        total, *_ = composite_objective(
            classifier, adversary, lambdas, x, y, z, l1, l2
        )
        return total

    _, _, _, grads, _ = composite_objective(
        classifier, adversary, lambdas, x, y, z, l1, l2
    )
    arrays = list(zip(classifier.parameters(), grads.to_list()))
    sizes = np.array([a.size for a, _ in arrays])
    cdf = np.cumsum(sizes)
    worst = 0.0
    for _ in range(int(probes)):
        flat_idx = int(rng.integers(0, cdf[-1]))
        which = int(np.searchsorted(cdf, flat_idx, side="right"))
        offset = flat_idx - (cdf[which - 1] if which else 0)
        arr, garr = arrays[which]
        flat = arr.reshape(-1)
        old = flat[offset]
        flat[offset] = old + step
        up = loss()
        flat[offset] = old - step
        down = loss()
        flat[offset] = old
        worst = max(worst, _rel_err(garr.reshape(-1)[offset], (up - down) / (2 * step)))
    return worst


def lipschitz_estimate(net: KanNetwork, features, pairs: int = 10000,
                       seed: int = 0) -> float:
    """Empirical Lipschitz constant over sampled in-domain pairs.

    Samples both independent random pairs and 1e-3-scale perturbation
    pairs around dataset rows, returning the max |f(x)-f(x')| / ||x-x'||.
    Raises if the estimate ever exceeds the analytic layer-product bound
    (that would mean the bound derivation is wrong).
    """
    x = np.asarray(features, dtype=float)
    rng = np.random.default_rng(int(seed))
    lo = net.layers[0].grid.domain_lo
    hi = net.layers[0].grid.domain_hi
    n_half = pairs // 2

    a = rng.uniform(lo, hi, size=(n_half, net.in_dim))
    b = rng.uniform(lo, hi, size=(n_half, net.in_dim))

    base = x[rng.integers(0, x.shape[0], size=pairs - n_half)]
    step = rng.normal(size=base.shape)
    step *= 1e-3 / np.linalg.norm(step, axis=1, keepdims=True)
    pert = np.clip(base + step, lo, hi)

    xs = np.vstack([a, base])
    ys = np.vstack([b, pert])
    fx, _ = net.forward(xs)
    fy, _ = net.forward(ys)
    num = np.abs(fx - fy).max(axis=1)
    den = np.linalg.norm(xs - ys, axis=1)
    # Separations below 1e-4 (a clamped perturbation collapsing onto its
    # base point) measure evaluation roundoff, not slope.
    keep = den > 1e-4
    l_hat = float((num[keep] / den[keep]).max()) if keep.any() else 0.0
    bound = net.lipschitz_bound()
    # tight cases (exactly linear nets) can overshoot by float roundoff
    if l_hat > bound * (1.0 + 1e-9) + 1e-9:
        raise NumericError(
            f"sampled Lipschitz ratio {l_hat} exceeds analytic bound {bound}"
        )
    return min(l_hat, bound)


def smoothness_estimate(net: KanNetwork, features, lines: int = 200,
                        seed: int = 0, h: float = 1e-3) -> float:
    """Max central second difference along random in-domain directions.

    Probes |f(x+hu) - 2f(x) + f(x-hu)| / h^2 at dataset rows; probes whose
    three-point stencil leaves any grid domain (input box or a deeper
    layer's calibrated range) are discarded, since the clamp kink is not
    part of the differentiable model.
    """
    x = np.asarray(features, dtype=float)
    rng = np.random.default_rng(int(seed))
    lo = net.layers[0].grid.domain_lo
    hi = net.layers[0].grid.domain_hi
    idx = rng.integers(0, x.shape[0], size=int(lines))
    u = rng.normal(size=(int(lines), net.in_dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    base = x[idx]
    plus = base + h * u
    minus = base - h * u
    inside = ((plus >= lo) & (plus <= hi) & (minus >= lo) & (minus <= hi)).all(axis=1)
    if not inside.any():
        raise UsageError("no probe stayed inside the input domain")
    base, plus, minus = base[inside], plus[inside], minus[inside]

    stack = np.vstack([base, plus, minus])
    out, cache = net.forward(stack, want_cache=True)
    clamped = np.zeros(stack.shape[0], dtype=bool)
    for mask in cache.clamp_masks:
        clamped |= mask.any(axis=1)
    n = base.shape[0]
    ok = ~(clamped[:n] | clamped[n:2 * n] | clamped[2 * n:])
    if not ok.any():
        raise UsageError("every probe hit a clamped region")
    f0 = out[:n, 0][ok]
    fp = out[n:2 * n, 0][ok]
    fm = out[2 * n:, 0][ok]
    return float(np.abs(fp - 2.0 * f0 + fm).max() / (h * h))


def wasserstein1_1d(samples_a, samples_b) -> float:
    """Empirical W1 between two 1-D samples via sorted coupling.

    Equal sizes reduce to the mean absolute difference of sorted samples;
    unequal sizes integrate |F_a^{-1} - F_b^{-1}| over the merged quantile
    grid.
    """
    a = np.sort(np.asarray(samples_a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(samples_b, dtype=float).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise UsageError("wasserstein1_1d needs non-empty samples")
    if a.size == b.size:
        return float(np.abs(a - b).mean())
    qa = np.arange(1, a.size) / a.size
    qb = np.arange(1, b.size) / b.size
    edges = np.unique(np.concatenate([[0.0], qa, qb, [1.0]]))
    widths = np.diff(edges)
    mids = edges[:-1] + widths / 2.0
    va = a[np.minimum((mids * a.size).astype(int), a.size - 1)]
    vb = b[np.minimum((mids * b.size).astype(int), b.size - 1)]
    return float(np.sum(widths * np.abs(va - vb)))


def contraction_check(net: KanNetwork, dataset, attribute: int,
                      projections: int = 100, seed: int = 0,
                      slack: float = 1.1, l_hat: float | None = None):
    """Group-pushforward contraction: score W1 vs bound * input W1.

    Input W1 is the max 1-D W1 of ``projections`` random unit projections
    of the group-conditioned features (a lower bound on the multivariate
    W1, so a pass is conservative); output W1 uses raw classifier scores.
    Returns ``(w1_input, w1_output, l_hat, ok)``.
    """
    z = dataset.sensitive[:, attribute]
    x0 = dataset.features[z == 0]
    x1 = dataset.features[z == 1]
    if len(x0) == 0 or len(x1) == 0:
        raise UsageError(f"attribute {attribute}: one group is empty")
    rng = np.random.default_rng(int(seed))
    dirs = rng.normal(size=(int(projections), dataset.features.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    w1_in = max(
        wasserstein1_1d(x0 @ d, x1 @ d) for d in dirs
    )
    s0, _ = net.forward(x0)
    s1, _ = net.forward(x1)
    w1_out = wasserstein1_1d(s0[:, 0], s1[:, 0])
    if l_hat is None:
        l_hat = lipschitz_estimate(net, dataset.features, seed=seed)
    ok = w1_out <= l_hat * w1_in * slack
    return float(w1_in), float(w1_out), float(l_hat), bool(ok)


# ---------------------------------------------------------------------------
# Score-distribution export (the histogram stand-in for the KDE figures).
# ---------------------------------------------------------------------------

def export_score_distributions(net: KanNetwork, dataset, bins: int = 20):
    """Per-(attribute, group) histograms of post-sigmoid scores on [0, 1].

    Returns a list of row dicts with keys attribute, group, bin_lo,
    bin_hi, count, density; densities sum to 1 within each group.
    """
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    raw, _ = net.forward(dataset.features)
    scores = 1.0 / (1.0 + np.exp(-raw[:, 0]))
    edges = np.linspace(0.0, 1.0, bins + 1)
    rows = []
    for j in range(dataset.n_sensitive):
        zj = dataset.sensitive[:, j]
        for group in (0, 1):
            member = scores[zj == group]
            counts, _ = np.histogram(member, bins=edges)
            total = max(int(member.size), 1)
            for b in range(bins):
                rows.append({
                    "attribute": j,
                    "group": group,
                    "bin_lo": float(edges[b]),
                    "bin_hi": float(edges[b + 1]),
                    "count": int(counts[b]),
                    "density": float(counts[b] / total),
                })
    return rows


def write_histogram_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["attribute", "group", "bin_lo", "bin_hi", "count",
                            "density"],
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def group_tv_distances(rows) -> list:
    """Total-variation distance between the two group densities, per attribute."""
    attrs = sorted({r["attribute"] for r in rows})
    out = []
    for j in attrs:
        d0 = np.array([r["density"] for r in rows
                       if r["attribute"] == j and r["group"] == 0])
        d1 = np.array([r["density"] for r in rows
                       if r["attribute"] == j and r["group"] == 1])
        out.append(0.5 * float(np.abs(d0 - d1).sum()))
    return out


@dataclass
class TheoryReport:
    lipschitz_estimate: float
    lipschitz_bound: float
    smoothness_estimate: float
    w1_input: list
    w1_output: list
    contraction_ok: list
    n_rows: int
    n_pairs: int
    n_lines: int

    def to_dict(self) -> dict:
        return {
            "lipschitz_estimate": self.lipschitz_estimate,
            "lipschitz_bound": self.lipschitz_bound,
            "smoothness_estimate": self.smoothness_estimate,
            "w1_input": list(self.w1_input),
            "w1_output": list(self.w1_output),
            "contraction_ok": list(self.contraction_ok),
            "n_rows": self.n_rows,
            "n_pairs": self.n_pairs,
            "n_lines": self.n_lines,
        }


def theory_report(net: KanNetwork, dataset, seed: int = 0,
                  pairs: int = 10000, lines: int = 200) -> TheoryReport:
    """Run every theory check against one dataset and collect the results."""
    l_hat = lipschitz_estimate(net, dataset.features, pairs=pairs, seed=seed)
    beta = smoothness_estimate(net, dataset.features, lines=lines, seed=seed)
    w1_in, w1_out, oks = [], [], []
    for j in range(dataset.n_sensitive):
        wi, wo, _, ok = contraction_check(net, dataset, j, seed=seed, l_hat=l_hat)
        w1_in.append(wi)
        w1_out.append(wo)
        oks.append(ok)
    return TheoryReport(
        lipschitz_estimate=l_hat,
        lipschitz_bound=net.lipschitz_bound(),
        smoothness_estimate=beta,
        w1_input=w1_in,
        w1_output=w1_out,
        contraction_ok=oks,
        n_rows=dataset.n_rows,
        n_pairs=pairs,
        n_lines=lines,
    )
