"""Gradient, Lipschitz, smoothness, Wasserstein, and histogram diagnostics."""

import csv
import json

import numpy as np
import pytest
from scipy import stats

from fairkan import diagnostics as dg
from fairkan.data import Dataset, SyntheticSpec, generate_synthetic
from fairkan.errors import UsageError
from fairkan.network import (KanLayer, KanNetwork, calibrate_grid_domains,
                             init_network)
from fairkan.splines import SplineGrid, fit_coefficients
from fairkan.training import TrainConfig, make_state


def zeroed(widths, intervals=6, seed=0):
    net = init_network(widths, intervals, 3, seed=seed)
    for layer in net.layers:
        layer.coeffs[:] = 0.0
        layer.base_weight[:] = 0.0
        layer.spline_scale[:] = 0.0
    return net


def spline_net(target, intervals=8, order=3, lo=-1.0, hi=1.0):
    """Single 1->1 edge realizing ``target`` on [lo, hi], no base term."""
    grid = SplineGrid(order, intervals, lo, hi)
    xs = np.linspace(lo, hi, 400)
    coeffs = fit_coefficients(grid, xs, target(xs)).reshape(1, -1, 1)
    layer = KanLayer(1, 1, grid, coeffs, np.zeros((1, 1)), np.ones((1, 1)))
    return KanNetwork([layer], use_base=False)


def grouped_dataset(m=800, shift=1.0, seed=0):
    """One feature, one attribute; group 1 shifted by ``shift``."""
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, size=m)
    x = rng.normal(size=m) * 0.3 + shift * z
    return Dataset(x[:, None], z[:, None], rng.integers(0, 2, size=m),
                   ["a"], ["z0"])


# ------------------------------------------------------------------ gradients


def test_grad_check_zero_network():
    assert dg.grad_check(zeroed([3, 2, 1]), probes=40, seed=1) == 0.0


def test_grad_check_random_network_passes():
    net = init_network([4, 6, 1], 6, 3, seed=2)
    assert dg.grad_check(net, probes=50, step=1e-4, seed=0) < 1e-3


def test_grad_check_coarse_step_degrades():
    net = init_network([4, 6, 1], 6, 3, seed=2)
    fine = dg.grad_check(net, probes=50, step=1e-4, seed=0)
    coarse = dg.grad_check(net, probes=50, step=1e-1, seed=0)
    assert coarse > 10.0 * fine


def test_composite_grad_check_small_network():
    cfg = TrainConfig(classifier_widths=[3, 4, 1], adversary_widths=[1, 4, 2],
                      grid_schedule=[6])
    state = make_state(cfg, 3, 2)
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.9, 0.9, size=(24, 3))
    y = rng.integers(0, 2, size=24).astype(float)
    z = rng.integers(0, 2, size=(24, 2)).astype(float)
    err = dg.composite_grad_check(state.classifier, state.adversary,
                                  [0.4, 0.7], x, y, z, probes=60, seed=3,
                                  l2=1e-4)
    assert err < 1e-3


# ------------------------------------------------------------------ lipschitz


def test_lipschitz_zero_network():
    net = zeroed([3, 2, 1])
    assert dg.lipschitz_estimate(net, np.zeros((4, 3)), pairs=300, seed=0) == 0.0


def test_lipschitz_linear_case_exact():
    net = spline_net(lambda x: 2.0 * x, intervals=8)
    l_hat = dg.lipschitz_estimate(net, np.array([[0.0], [0.5]]),
                                  pairs=2000, seed=0)
    assert l_hat == pytest.approx(2.0, abs=1e-6)


def test_lipschitz_below_analytic_bound():
    net = init_network([5, 6, 1], 6, 3, seed=11)
    feats = np.random.default_rng(0).uniform(-1, 1, size=(60, 5))
    l_hat = dg.lipschitz_estimate(net, feats, pairs=3000, seed=1)
    assert 0.0 <= l_hat <= net.lipschitz_bound()


# ----------------------------------------------------------------- smoothness


def test_smoothness_linear_is_tiny():
    net = spline_net(lambda x: 2.0 * x)
    probe = np.linspace(-0.9, 0.9, 50)[:, None]
    assert dg.smoothness_estimate(net, probe, lines=80, seed=0) < 1e-4


def test_smoothness_quadratic_and_mesh_stability():
    net = spline_net(np.square, intervals=10)
    probe = np.linspace(-0.9, 0.9, 50)[:, None]
    beta = dg.smoothness_estimate(net, probe, lines=100, seed=0)
    beta_half = dg.smoothness_estimate(net, probe, lines=100, seed=0, h=5e-4)
    assert beta == pytest.approx(2.0, abs=0.05)
    assert abs(beta_half / beta - 1.0) < 0.10


def test_smoothness_no_valid_probes_raises():
    net = spline_net(np.square)
    # Every row clamps to the domain edge, so all stencils are discarded.
    probe = np.full((10, 1), 5.0)
    with pytest.raises(UsageError):
        dg.smoothness_estimate(net, probe, lines=20, seed=0)


# ---------------------------------------------------------------- wasserstein


def test_w1_hand_values():
    assert dg.wasserstein1_1d([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert dg.wasserstein1_1d([0, 0], [1, 1]) == pytest.approx(1.0, abs=1e-12)
    assert dg.wasserstein1_1d([0, 1], [0, 3]) == pytest.approx(1.0, abs=1e-12)


def test_w1_matches_scipy_mixed_sizes():
    rng = np.random.default_rng(9)
    for na, nb in [(10, 10), (7, 13), (100, 37), (3, 500)]:
        a = rng.normal(size=na)
        b = rng.normal(1.3, 2.0, size=nb)
        assert dg.wasserstein1_1d(a, b) == pytest.approx(
            stats.wasserstein_distance(a, b), abs=1e-10
        )


def test_w1_metric_properties():
    rng = np.random.default_rng(3)
    a, b, c = (rng.normal(size=n) for n in (20, 20, 20))
    ab = dg.wasserstein1_1d(a, b)
    assert ab == pytest.approx(dg.wasserstein1_1d(b, a), abs=1e-12)
    assert ab >= 0.0
    assert dg.wasserstein1_1d(a, a) == 0.0
    assert ab <= dg.wasserstein1_1d(a, c) + dg.wasserstein1_1d(c, b) + 1e-12


def test_w1_translation():
    rng = np.random.default_rng(4)
    a = rng.normal(size=30)
    assert dg.wasserstein1_1d(a + 2.5, a) == pytest.approx(2.5, abs=1e-12)
    b = rng.normal(size=50)
    base = dg.wasserstein1_1d(a, b)
    assert dg.wasserstein1_1d(a + 5.0, b + 5.0) == pytest.approx(base, abs=1e-9)


def test_w1_empty_input_rejected():
    with pytest.raises(UsageError):
        dg.wasserstein1_1d([], [1.0])
    with pytest.raises(UsageError):
        dg.wasserstein1_1d([1.0], [])


# ---------------------------------------------------------------- contraction


def test_contraction_constant_classifier():
    data = grouped_dataset()
    net = zeroed([1, 2, 1])
    w1_in, w1_out, l_hat, ok = dg.contraction_check(net, data, 0, seed=0)
    assert w1_out == 0.0 and ok
    assert w1_in > 0.0


def test_contraction_identity_transports_w1():
    data = grouped_dataset(shift=1.0, seed=2)
    lo = data.features.min() - 0.1
    hi = data.features.max() + 0.1
    net = spline_net(lambda x: x, intervals=8, lo=lo, hi=hi)
    w1_in, w1_out, l_hat, ok = dg.contraction_check(net, data, 0, seed=0)
    assert ok
    assert l_hat == pytest.approx(1.0, abs=0.02)
    assert w1_out == pytest.approx(w1_in, rel=0.02)


def test_contraction_holds_on_random_network():
    data = generate_synthetic(SyntheticSpec(m=1200, n=6, seed=4))
    net = init_network([6, 8, 1], 6, 3, seed=8)
    calibrate_grid_domains(net, data.features)
    for j in range(2):
        w1_in, w1_out, l_hat, ok = dg.contraction_check(net, data, j, seed=0)
        assert ok
        assert w1_out <= l_hat * w1_in * 1.1 + 1e-12


# ----------------------------------------------------------------- histograms


def test_histogram_constant_scores_land_in_middle_bin():
    data = grouped_dataset(m=100)
    net = zeroed([1, 2, 1])          # raw score 0 -> sigmoid 0.5 everywhere
    rows = dg.export_score_distributions(net, data, bins=10)
    for row in rows:
        if abs(row["bin_lo"] - 0.5) < 1e-12:
            n_group = int(data.sensitive[:, 0].sum()) if row["group"] == 1 \
                else data.n_rows - int(data.sensitive[:, 0].sum())
            assert row["count"] == n_group
            assert row["density"] == 1.0
        else:
            assert row["count"] == 0


def test_histogram_densities_sum_to_one():
    data = generate_synthetic(SyntheticSpec(m=600, n=5, seed=1))
    net = init_network([5, 4, 1], 5, 3, seed=3)
    calibrate_grid_domains(net, data.features)
    rows = dg.export_score_distributions(net, data, bins=12)
    sums = {}
    for r in rows:
        key = (r["attribute"], r["group"])
        sums[key] = sums.get(key, 0.0) + r["density"]
    assert len(sums) == 4
    for total in sums.values():
        assert total == pytest.approx(1.0, abs=1e-9)


def test_histogram_csv_round_trip(tmp_path):
    data = grouped_dataset(m=60)
    net = init_network([1, 3, 1], 5, 3, seed=0)
    calibrate_grid_domains(net, data.features)
    rows = dg.export_score_distributions(net, data, bins=8)
    path = tmp_path / "hist.csv"
    dg.write_histogram_csv(path, rows)
    with open(path, newline="") as fh:
        got = list(csv.DictReader(fh))
    assert len(got) == len(rows) == 2 * 8
    assert set(got[0]) == {"attribute", "group", "bin_lo", "bin_hi",
                           "count", "density"}
    assert float(got[0]["bin_hi"]) == pytest.approx(rows[0]["bin_hi"])


def test_group_tv_distance_hand_cases():
    def row(attr, group, lo, dens):
        return {"attribute": attr, "group": group, "bin_lo": lo,
                "bin_hi": lo + 0.5, "count": 0, "density": dens}

    disjoint = [row(0, 0, 0.0, 1.0), row(0, 0, 0.5, 0.0),
                row(0, 1, 0.0, 0.0), row(0, 1, 0.5, 1.0)]
    assert dg.group_tv_distances(disjoint) == [pytest.approx(1.0)]
    same = [row(0, 0, 0.0, 0.3), row(0, 0, 0.5, 0.7),
            row(0, 1, 0.0, 0.3), row(0, 1, 0.5, 0.7)]
    assert dg.group_tv_distances(same) == [pytest.approx(0.0)]


# -------------------------------------------------------------- theory report


def test_theory_report_fields_and_json():
    data = generate_synthetic(SyntheticSpec(m=500, n=5, seed=6))
    net = init_network([5, 4, 1], 5, 3, seed=2)
    calibrate_grid_domains(net, data.features)
    rep = dg.theory_report(net, data, seed=0, pairs=800, lines=60)
    d = rep.to_dict()
    for key in ("lipschitz_estimate", "lipschitz_bound",
                "smoothness_estimate", "w1_input", "w1_output",
                "contraction_ok", "n_rows", "n_pairs", "n_lines"):
        assert key in d
    assert d["lipschitz_estimate"] <= d["lipschitz_bound"]
    assert d["lipschitz_estimate"] >= 0.0
    assert d["smoothness_estimate"] >= 0.0
    assert len(d["w1_input"]) == 2 and len(d["contraction_ok"]) == 2
    assert all(v >= 0.0 for v in d["w1_input"] + d["w1_output"])
    json.dumps(d)
