"""Kolmogorov-Arnold layers and networks on uniform spline grids.

Every edge of a layer carries its own learnable univariate function

    edge(x) = base_weight * silu(x) + spline_scale * sum_i c_i B_i(x)

evaluated on a grid shared across the layer; node outputs are plain sums
over incoming edges.  Forward evaluation caches layer inputs so that
``backward`` can produce exact analytic gradients for every parameter and
for the inputs (inputs clamped to the grid domain get zero gradient).

Layer coefficient arrays are stored as ``(in_dim, n_basis, out_dim)`` so
the spline term of a whole layer is one matrix product between the dense
basis matrix and the scale-folded coefficients.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ModelFormatError, ShapeError, UsageError
from .splines import (
    SplineGrid,
    design_matrix,
    fit_coefficients,
    spline_eval,
    _scatter,
    _window_bases,
    _window_derivs,
)

__all__ = [
    "KanLayer",
    "KanNetwork",
    "GradientSet",
    "init_network",
    "regularization",
    "serialize",
    "deserialize",
    "network_to_text",
    "calibrate_grid_domains",
    "refine_network",
]

MODEL_MAGIC = b"FKAN"
MODEL_VERSION = 1

# sup |d/dx (x * sigmoid(x))| = 1.0998...; 1.1 is a safe upper bound used
# by the analytic Lipschitz estimates.
SILU_SLOPE_BOUND = 1.1


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_deriv(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


class KanLayer:
    """One layer of edge-wise splines over a shared grid."""

    def __init__(self, in_dim: int, out_dim: int, grid: SplineGrid,
                 coeffs: np.ndarray, base_weight: np.ndarray,
                 spline_scale: np.ndarray):
        nb = grid.basis_count
        if coeffs.shape != (in_dim, nb, out_dim):
            raise ShapeError(
                f"coeffs shape {coeffs.shape} != {(in_dim, nb, out_dim)}"
            )
        if base_weight.shape != (in_dim, out_dim):
            raise ShapeError(f"base_weight shape {base_weight.shape}")
        if spline_scale.shape != (in_dim, out_dim):
            raise ShapeError(f"spline_scale shape {spline_scale.shape}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.grid = grid
        self.coeffs = coeffs
        self.base_weight = base_weight
        self.spline_scale = spline_scale

    def edge_coefficients(self, i: int, o: int) -> np.ndarray:
        """Spline coefficients of the edge from input ``i`` to output ``o``."""
        return self.coeffs[i, :, o]

    def folded_weights(self) -> np.ndarray:
        """Scale-folded coefficients reshaped for the dense basis matmul."""
        return (self.coeffs * self.spline_scale[:, None, :]).reshape(
            self.in_dim * self.grid.basis_count, self.out_dim
        )

    def edge_derivative_bound(self, use_base: bool) -> float:
        """Upper bound on sup |edge'(x)| over all edges of this layer.

        The spline derivative is a degree k-1 spline whose coefficients are
        the scaled first differences of the edge coefficients, so its sup is
        at most the largest such difference (partition of unity).
        """
        if self.grid.order >= 1:
            diffs = np.abs(np.diff(self.coeffs, axis=1)).max(axis=1)
            spline_part = np.abs(self.spline_scale) * diffs / self.grid.spacing
        else:
            spline_part = np.zeros_like(self.spline_scale)
        total = spline_part
        if use_base:
            total = total + SILU_SLOPE_BOUND * np.abs(self.base_weight)
        return float(total.max())


@dataclass
class LayerGradients:
    coeffs: np.ndarray
    base_weight: np.ndarray
    spline_scale: np.ndarray


@dataclass
class GradientSet:
    """Gradients mirroring the network layout, plus input gradients."""

    layers: list
    input_grad: np.ndarray

    def to_list(self):
        out = []
        for lg in self.layers:
            out.extend([lg.coeffs, lg.base_weight, lg.spline_scale])
        return out

    def add_scaled(self, other: "GradientSet", factor: float = 1.0):
        for a, b in zip(self.to_list(), other.to_list()):
            a += factor * b
        return self


@dataclass
class ForwardCache:
    net_id: int
    batch: int
    layer_inputs: list       # clamped inputs per layer
    clamp_masks: list        # True where clamping was active
    basis_dense: list        # (batch, in_dim * n_basis) per layer


class KanNetwork:
    """Stack of KAN layers with matching widths."""

    def __init__(self, layers: list, use_base: bool = True):
        self.layers = layers
        self.use_base = use_base

    @property
    def widths(self):
        return [self.layers[0].in_dim] + [l.out_dim for l in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self):
        """Flat list of parameter arrays, updated in place by optimizers."""
        out = []
        for layer in self.layers:
            out.extend([layer.coeffs, layer.base_weight, layer.spline_scale])
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_gradients(self) -> GradientSet:
        grads = [
            LayerGradients(
                np.zeros_like(l.coeffs),
                np.zeros_like(l.base_weight),
                np.zeros_like(l.spline_scale),
            )
            for l in self.layers
        ]
        return GradientSet(grads, np.zeros((0, self.in_dim)))

    def _check_inputs(self, inputs) -> np.ndarray:
        x = np.asarray(inputs, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"inputs must be (batch, {self.in_dim}), got {x.shape}"
            )
        if not np.isfinite(x).all():
            raise DataError("inputs contain non-finite values")
        return x

    def _apply_layer(self, layer: KanLayer, xc: np.ndarray):
        """Layer output on already-clamped inputs; returns (out, basis_dense)."""
        g = layer.grid
        n = xc.shape[0]
        iv, w = _window_bases(g, xc.reshape(-1), g.order)
        bdense = _scatter(g, iv, w).reshape(n, layer.in_dim * g.basis_count)
        out = bdense @ layer.folded_weights()
        if self.use_base:
            out += silu(xc) @ layer.base_weight
        return out, bdense

    def forward(self, inputs, want_cache: bool = False):
        """Evaluate raw scores for a batch; optionally keep activations.

        Returns ``(outputs, cache)``; ``cache`` is None unless requested.
        """
        x = self._check_inputs(inputs)
        cache = ForwardCache(id(self), x.shape[0], [], [], []) if want_cache else None
        for layer in self.layers:
            g = layer.grid
            mask = (x < g.domain_lo) | (x > g.domain_hi)
            xc = g.clamp(x)
            out, bdense = self._apply_layer(layer, xc)
            if want_cache:
                cache.layer_inputs.append(xc)
                cache.clamp_masks.append(mask)
                cache.basis_dense.append(bdense)
            x = out
        return x, cache

    def backward(self, cache: ForwardCache, output_grad) -> GradientSet:
        """Exact gradients of the cached forward pass.

        ``output_grad`` is d(loss)/d(outputs); the returned set holds
        d(loss)/d(parameter) for every parameter plus d(loss)/d(inputs).
        """
        if cache is None or cache.net_id != id(self):
            raise UsageError("cache does not belong to this network")
        g_out = np.asarray(output_grad, dtype=float)
        if g_out.shape != (cache.batch, self.out_dim):
            raise ShapeError(
                f"output_grad must be ({cache.batch}, {self.out_dim}), "
                f"got {g_out.shape}"
            )
        layer_grads = [None] * len(self.layers)
        for li in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[li]
            grid = layer.grid
            nb = grid.basis_count
            xc = cache.layer_inputs[li]
            mask = cache.clamp_masks[li]
            bdense = cache.basis_dense[li]
            n = xc.shape[0]

            m = (bdense.T @ g_out).reshape(layer.in_dim, nb, layer.out_dim)
            grad_coeffs = m * layer.spline_scale[:, None, :]
            grad_scale = np.einsum("ibo,ibo->io", layer.coeffs, m)
            if self.use_base:
                grad_base = silu(xc).T @ g_out
            else:
                grad_base = np.zeros_like(layer.base_weight)
            layer_grads[li] = LayerGradients(grad_coeffs, grad_base, grad_scale)

            # Input gradient: spline slope term plus (optionally) base term.
            p = (g_out @ layer.folded_weights().T).reshape(n, layer.in_dim, nb)
            if grid.order >= 1:
                iv, dw = _window_derivs(grid, xc.reshape(-1), 1)
                cols = (iv[:, None] + np.arange(grid.order + 1)[None, :]).reshape(
                    n, layer.in_dim, grid.order + 1
                )
                dx = np.sum(
                    np.take_along_axis(p, cols, axis=2)
                    * dw.reshape(n, layer.in_dim, grid.order + 1),
                    axis=2,
                )
            else:
                dx = np.zeros((n, layer.in_dim))
            if self.use_base:
                dx += silu_deriv(xc) * (g_out @ layer.base_weight.T)
            dx[mask] = 0.0
            g_out = dx
        return GradientSet(layer_grads, g_out)

    def lipschitz_bound(self) -> float:
        """Product of per-layer (max edge slope x fan-in) factors."""
        bound = 1.0
        for layer in self.layers:
            bound *= layer.edge_derivative_bound(self.use_base) * layer.in_dim
        return bound


def init_network(widths, grid_intervals: int, order: int, seed: int,
                 domain=(-1.0, 1.0), base_term: bool = True) -> KanNetwork:
    """Build a network with freshly initialized parameters.

    Spline coefficients are zero-mean normal with scale ``0.1 / sqrt(in_dim)``;
    base weights and spline scales start at 1.  Deterministic given ``seed``.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigError(f"need >= 2 positive widths, got {widths}")
    rng = np.random.default_rng(int(seed))
    lo, hi = float(domain[0]), float(domain[1])
    layers = []
    for in_dim, out_dim in zip(widths[:-1], widths[1:]):
        grid = SplineGrid(order, grid_intervals, lo, hi)
        coeffs = rng.normal(
            0.0, 0.1 / np.sqrt(in_dim), size=(in_dim, grid.basis_count, out_dim)
        )
        base = np.full((in_dim, out_dim), 1.0 if base_term else 0.0)
        scale = np.ones((in_dim, out_dim))
        layers.append(KanLayer(in_dim, out_dim, grid, coeffs, base, scale))
    return KanNetwork(layers, use_base=base_term)


def regularization(net: KanNetwork, l1: float, l2: float):
    """L1 + L2 penalty over spline coefficients only (subgradient 0 at 0)."""
    if l1 < 0 or l2 < 0:
        raise ConfigError("regularization strengths must be >= 0")
    grads = net.zero_gradients()
    loss = 0.0
    for layer, lg in zip(net.layers, grads.layers):
        c = layer.coeffs
        loss += l1 * np.abs(c).sum() + 0.5 * l2 * np.square(c).sum()
        lg.coeffs += l1 * np.sign(c) + l2 * c
    return float(loss), grads


# ---------------------------------------------------------------------------
# Grid maintenance: domain calibration and coarse-to-fine refinement.
# ---------------------------------------------------------------------------

def _transfer_layer(layer: KanLayer, new_grid: SplineGrid):
    """Least-squares re-fit of every edge spline onto ``new_grid``.

    Returns the new coefficient array and the max absolute mismatch over
    the sample points (the old spline is evaluated with its own clamping).
    """
    xs = np.linspace(
        new_grid.domain_lo, new_grid.domain_hi, 4 * new_grid.basis_count
    )
    old_dense = design_matrix(layer.grid, layer.grid.clamp(xs))
    targets = old_dense @ layer.coeffs.transpose(1, 0, 2).reshape(
        layer.grid.basis_count, -1
    )
    new_flat = fit_coefficients(new_grid, xs, targets)
    resid = float(np.max(np.abs(design_matrix(new_grid, xs) @ new_flat - targets)))
    new_coeffs = new_flat.reshape(
        new_grid.basis_count, layer.in_dim, layer.out_dim
    ).transpose(1, 0, 2)
    return np.ascontiguousarray(new_coeffs), resid


def calibrate_grid_domains(net: KanNetwork, inputs, percentile: float = 99.0,
                           margin: float = 0.10) -> KanNetwork:
    """Fit the grids of layers past the first to observed activation ranges.

    Walks the layers with *pre-clamp* activations, rebuilding each deeper
    layer's grid on ``[-r, r]`` where ``r`` is the given percentile of the
    absolute raw activation plus the margin, transferring coefficients by
    least squares.  The first layer's grid (the data domain) is untouched.
    Using pre-clamp values matters: a saturated layer would otherwise never
    report activity beyond its current domain and could not recover.
    """
    x = net._check_inputs(inputs)
    for li, layer in enumerate(net.layers):
        if li >= 1:
            r = (1.0 + margin) * float(np.percentile(np.abs(x), percentile))
            r = max(r, 1e-3)
            new_grid = SplineGrid(layer.grid.order, layer.grid.intervals, -r, r)
            new_coeffs, _ = _transfer_layer(layer, new_grid)
            layer = KanLayer(
                layer.in_dim, layer.out_dim, new_grid, new_coeffs,
                layer.base_weight, layer.spline_scale,
            )
            net.layers[li] = layer
        x, _ = net._apply_layer(layer, layer.grid.clamp(x))
    return net


def refine_network(net: KanNetwork, new_intervals: int):
    """Move every layer to a finer grid, preserving each edge function.

    Returns ``(refined_network, output_bound)`` where ``output_bound``
    bounds how much network outputs can move on any in-domain batch: each
    layer's worst edge residual is amplified by its fan-in and by the
    analytic slope bounds of all downstream layers (with a 2x margin for
    the sampled sup).
    """
    new_layers = []
    per_layer_resid = []
    for layer in net.layers:
        if new_intervals <= layer.grid.intervals:
            raise ConfigError(
                f"refinement needs more than {layer.grid.intervals} intervals,"
                f" got {new_intervals}"
            )
        new_grid = SplineGrid(
            layer.grid.order, new_intervals,
            layer.grid.domain_lo, layer.grid.domain_hi,
        )
        new_coeffs, resid = _transfer_layer(layer, new_grid)
        per_layer_resid.append(resid)
        new_layers.append(
            KanLayer(
                layer.in_dim, layer.out_dim, new_grid, new_coeffs,
                layer.base_weight.copy(), layer.spline_scale.copy(),
            )
        )
    refined = KanNetwork(new_layers, use_base=net.use_base)
    bound = 0.0
    for li, resid in enumerate(per_layer_resid):
        amp = refined.layers[li].in_dim
        for downstream in refined.layers[li + 1:]:
            amp *= downstream.edge_derivative_bound(net.use_base) * downstream.in_dim
        bound += 2.0 * resid * amp
    return refined, bound


# ---------------------------------------------------------------------------
# Serialization: versioned binary container plus a text export.
#
# Layout: magic "FKAN" | u32 version | u32 header length | UTF-8 JSON header
# | raw little-endian float64 parameter blocks, per layer in order coeffs
# (in_dim x n_basis x out_dim, C order), base_weight (in_dim x out_dim),
# spline_scale (in_dim x out_dim).
# ---------------------------------------------------------------------------

def serialize(net: KanNetwork) -> bytes:
    header = {
        "widths": net.widths,
        "use_base": net.use_base,
        "layers": [
            {
                "order": l.grid.order,
                "intervals": l.grid.intervals,
                "domain_lo": l.grid.domain_lo,
                "domain_hi": l.grid.domain_hi,
            }
            for l in net.layers
        ],
        "dtype": "<f8",
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(np.uint32(MODEL_VERSION).tobytes())
    buf.write(np.uint32(len(hbytes)).tobytes())
    buf.write(hbytes)
    for layer in net.layers:
        for arr in (layer.coeffs, layer.base_weight, layer.spline_scale):
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def _read_exact(buf: io.BytesIO, count: int, what: str) -> bytes:
    data = buf.read(count)
    if len(data) != count:
        raise ModelFormatError(f"model stream truncated while reading {what}")
    return data


def deserialize(data: bytes) -> KanNetwork:
    buf = io.BytesIO(data)
    if _read_exact(buf, 4, "magic") != MODEL_MAGIC:
        raise ModelFormatError("not a model stream (bad magic)")
    version = int(np.frombuffer(_read_exact(buf, 4, "version"), "<u4")[0])
    if version != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model version {version} (this build reads "
            f"{MODEL_VERSION})"
        )
    hlen = int(np.frombuffer(_read_exact(buf, 4, "header length"), "<u4")[0])
    try:
        header = json.loads(_read_exact(buf, hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from exc
    widths = header["widths"]
    layers = []
    for (in_dim, out_dim), desc in zip(
        zip(widths[:-1], widths[1:]), header["layers"]
    ):
        grid = SplineGrid(
            desc["order"], desc["intervals"], desc["domain_lo"], desc["domain_hi"]
        )
        nb = grid.basis_count
        coeffs = np.frombuffer(
            _read_exact(buf, in_dim * nb * out_dim * 8, "coefficients"), "<f8"
        ).reshape(in_dim, nb, out_dim).copy()
        base = np.frombuffer(
            _read_exact(buf, in_dim * out_dim * 8, "base weights"), "<f8"
        ).reshape(in_dim, out_dim).copy()
        scale = np.frombuffer(
            _read_exact(buf, in_dim * out_dim * 8, "spline scales"), "<f8"
        ).reshape(in_dim, out_dim).copy()
        layers.append(KanLayer(in_dim, out_dim, grid, coeffs, base, scale))
    if buf.read(1):
        raise ModelFormatError("trailing bytes after model payload")
    return KanNetwork(layers, use_base=header["use_base"])


def clone_network(net: KanNetwork) -> KanNetwork:
    """Deep copy via the serial format (guarantees bit-identical parameters)."""
    return deserialize(serialize(net))


def network_to_text(net: KanNetwork) -> str:
    """Human-readable dump of everything the binary container holds."""
    lines = [
        f"fairkan model v{MODEL_VERSION}",
        f"widths: {net.widths}",
        f"base term: {'enabled' if net.use_base else 'disabled'}",
    ]
    for li, layer in enumerate(net.layers):
        g = layer.grid
        lines.append(
            f"layer {li}: {layer.in_dim} -> {layer.out_dim}, "
            f"order {g.order}, intervals {g.intervals}, "
            f"domain [{g.domain_lo!r}, {g.domain_hi!r}]"
        )
        for name, arr in (
            ("coeffs", layer.coeffs),
            ("base_weight", layer.base_weight),
            ("spline_scale", layer.spline_scale),
        ):
            flat = " ".join(repr(v) for v in arr.reshape(-1))
            lines.append(f"  {name} {arr.shape}: {flat}")
    return "\n".join(lines) + "\n"


def evaluate_edge(layer: KanLayer, i: int, o: int, x, use_base: bool = True):
    """Evaluate a single edge function (useful for inspection and tests)."""
    val = layer.spline_scale[i, o] * spline_eval(
        layer.grid, layer.edge_coefficients(i, o), layer.grid.clamp(x)
    )
    if use_base:
        val = val + layer.base_weight[i, o] * silu(layer.grid.clamp(x))
    return val
