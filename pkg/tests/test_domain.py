import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adavar import (
    ConfigError,
    DomainError,
    TorusDomain,
    cosine_well_1d,
    custom_polynomial,
    double_well_1d,
    eval_grad,
    eval_potential,
    load_grid_file,
    scan_extrema_curvature,
    sine_modes_2d,
    tabulated_grid,
)

ANALYTIC = {
    "dw1": lambda: double_well_1d(1),
    "dw5": lambda: double_well_1d(5),
    "dw9": lambda: double_well_1d(9),
    "modes2d": lambda: sine_modes_2d(),
    "cosine": lambda: cosine_well_1d(),
    "poly2d": lambda: custom_polynomial([0.3, -0.2, 0.1, 0.05], dim=2),
}

finite = st.floats(-50, 50, allow_nan=False)


def test_double_well_values():
    p = double_well_1d(1)
    assert eval_potential(p, [0.0]) == pytest.approx(1 / 80, abs=1e-15)
    assert eval_potential(p, [1.0]) == 0.0
    assert eval_potential(p, [-1.0]) == 0.0


def test_sine_modes_zero_at_shift():
    assert eval_potential(sine_modes_2d(), [0.1, 0.1]) == pytest.approx(0.0, abs=1e-28)


def test_double_well_gradients():
    assert eval_grad(double_well_1d(1), [0.0])[0] == 0.0
    assert eval_grad(double_well_1d(1), [1.0])[0] == 0.0
    assert eval_grad(double_well_1d(5), [2.0])[0] == pytest.approx(-0.1, rel=1e-14)


def test_non_finite_points_rejected():
    with pytest.raises(DomainError):
        eval_potential(double_well_1d(1), [math.nan])
    with pytest.raises(DomainError):
        eval_grad(sine_modes_2d(), [0.0, math.inf])


def test_domain_validation():
    with pytest.raises(ConfigError):
        TorusDomain(0, 1.0)
    with pytest.raises(ConfigError):
        TorusDomain(1, -1.0)
    d = TorusDomain(2, 2.0)
    assert d.lo == -1.0 and d.hi == 1.0 and d.diam == pytest.approx(math.sqrt(2))


@given(st.lists(finite, min_size=2, max_size=2))
def test_wrap_lands_in_cell_and_is_idempotent(x):
    d = TorusDomain(2, 2 * math.pi)
    w = d.wrap(x)
    assert np.all(w >= d.lo) and np.all(w < d.hi)
    assert np.array_equal(d.wrap(w), w)


@pytest.mark.parametrize("name", sorted(ANALYTIC))
def test_gradient_matches_central_differences(name):
    p = ANALYTIC[name]()
    rs = np.random.default_rng(0)
    d = p.domain
    X = d.lo + 0.02 * d.period + 0.96 * d.period * rs.random((100, p.dim))
    G = p.grad(X)
    h = 1e-5
    for a in range(p.dim):
        e = np.zeros(p.dim)
        e[a] = h
        fd = (p.value(X + e) - p.value(X - e)) / (2 * h)
        assert np.all(np.abs(G[:, a] - fd) <= 1e-6 * (1 + np.abs(G[:, a])))


@pytest.mark.parametrize("name", ["modes2d", "cosine"])
def test_periodic_kinds_translate_exactly(name):
    p = ANALYTIC[name]()
    rs = np.random.default_rng(1)
    X = p.domain.lo + p.domain.period * rs.random((200, p.dim))
    for a in range(p.dim):
        shifted = X.copy()
        shifted[:, a] += p.domain.period
        # wrap maps x + period back onto x up to one rounding of the sum
        assert np.allclose(p.value(shifted), p.value(X), rtol=0, atol=1e-13)


def test_wrapped_evaluation_is_periodic_for_every_kind():
    p = double_well_1d(5)
    assert eval_potential(p, [2.0 + 2 * math.pi]) == pytest.approx(eval_potential(p, [2.0]), abs=1e-13)


@pytest.mark.parametrize("name", sorted(ANALYTIC))
def test_scan_bounds_fresh_points(name):
    p = ANALYTIC[name]()
    scan = p.scan()
    rs = np.random.default_rng(2)
    X = p.domain.lo + p.domain.period * rs.random((10_000, p.dim))
    F = p.value(X)
    slack = 1e-6 * max(1.0, abs(scan.F_max))
    assert F.min() >= scan.F_min - slack
    assert F.max() <= scan.F_max + slack


def test_scan_constant_potential():
    s = scan_extrema_curvature(custom_polynomial([0.0]), 64)
    assert s.F_min == 0.0 and s.F_max == 0.0 and s.kappa == 0.0


def test_scan_double_well_minima():
    s = double_well_1d(1).scan()
    assert s.F_min == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(np.sort(s.minimizers[:, 0]), [-1.0, 1.0], atol=1e-6)


def test_scan_resolution_floor():
    with pytest.raises(ConfigError):
        scan_extrema_curvature(double_well_1d(1), 32)


def _brute_min_second_derivative(c, n=2**14 + 1):
    # oracle: central second differences of the formula on a fine grid
    x = np.linspace(-math.pi, math.pi, n)
    h = x[1] - x[0]
    F = (x**2 - c) ** 2 / 80
    return float(np.min((F[2:] - 2 * F[1:-1] + F[:-2]) / h**2))


def test_kappa_decreases_with_c():
    k1, k9 = double_well_1d(1).kappa, double_well_1d(9).kappa
    o1, o9 = _brute_min_second_derivative(1), _brute_min_second_derivative(9)
    assert k1 == pytest.approx(o1, abs=1e-5) and k9 == pytest.approx(o9, abs=1e-5)
    assert k9 < k1
    # frozen from the oracle: min F'' = -c / 20 at x = 0
    assert o1 == pytest.approx(-0.05, abs=1e-6) and o9 == pytest.approx(-0.45, abs=1e-6)


def test_sixteen_modes_in_2d():
    s = sine_modes_2d().scan(256)
    assert len(s.minimizers) == 16
    assert s.F_max == pytest.approx(4.0, abs=1e-9)


def test_cosine_well_structure():
    s = cosine_well_1d().scan()
    assert np.allclose(np.sort(s.minimizers[:, 0]), [-math.pi, 0.0], atol=1e-6)
    assert np.allclose(np.sort(s.maximizers[:, 0]), [-math.pi / 2, math.pi / 2], atol=1e-6)
    # alpha = 1 / sqrt(|F''|) = 1 / sqrt(2)
    assert np.allclose(s.alpha_min, 1 / math.sqrt(2), rtol=1e-4)
    assert np.allclose(s.alpha_max, 1 / math.sqrt(2), rtol=1e-4)


def test_tabulated_grid_interpolates_and_is_periodic():
    nodes = -math.pi + 2 * math.pi * np.arange(128) / 128
    p = tabulated_grid(np.cos(nodes), 2 * math.pi)
    x = np.linspace(-3, 3, 41)[:, None]
    assert np.allclose(p.value(x), np.cos(x[:, 0]), atol=1e-6)
    assert np.allclose(p.grad(x)[:, 0], -np.sin(x[:, 0]), atol=1e-5)
    assert np.allclose(p.value(x + 2 * math.pi), p.value(x), atol=1e-12)


def test_tabulated_rejects_non_finite():
    with pytest.raises(ConfigError):
        tabulated_grid([0.0, 1.0, math.nan, 0.5], 1.0)


def test_grid_file_text_and_binary(tmp_path):
    nodes = -1 + 2 * np.arange(64) / 64
    vals = np.sin(np.pi * nodes) ** 2
    txt = tmp_path / "f.csv"
    txt.write_text("1,64,2\n" + ",".join(f"{v:.17g}" for v in vals) + "\n")
    binf = tmp_path / "f.bin"
    binf.write_bytes(b"1,64,2\n" + vals.astype("<f8").tobytes())
    a, b = load_grid_file(txt), load_grid_file(binf)
    x = np.linspace(-0.9, 0.9, 7)[:, None]
    assert np.array_equal(a.value(x), b.value(x))
    assert a.domain.period == 2.0


def test_grid_file_wrong_count(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("1,64,2\n1,2,3\n")
    with pytest.raises(ConfigError) as err:
        load_grid_file(f)
    assert err.value.key == "potential.grid_file"
