import json

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from rootbarrier import measures as ms

# high-resolution quadrature of -int |y| phi(y) dy, frozen
U_N01_AT_ZERO = -0.7978845608028654


def quad_potential(pdf, x, lo, hi):
    return -quad(lambda y: abs(y - x) * pdf(y), lo, hi, limit=400)[0]


def test_point_mass_potential():
    u = ms.potential(ms.point_mass(0.0), np.array([-1.0, 0.0, 1.0]))
    assert np.allclose(u.values, [-1.0, 0.0, -1.0])


def test_two_atom_potential_at_origin():
    m = ms.atoms([-1.0, 1.0], [0.5, 0.5])
    assert ms.potential(m, np.array([0.0])).values[0] == pytest.approx(-1.0)


def test_normal_potential_matches_quadrature():
    m = ms.normal(0.0, 1.0)
    assert ms.potential(m, np.array([0.0])).values[0] == pytest.approx(U_N01_AT_ZERO, abs=1e-12)
    xs = np.linspace(-4.0, 4.0, 9)
    oracle = np.array([quad_potential(norm.pdf, x, -14, 14) for x in xs])
    assert np.max(np.abs(ms.potential(m, xs).values - oracle)) < 1e-9


def test_lognormal_potential_matches_quadrature():
    a, b2 = -0.02, 0.04
    m = ms.lognormal(a, b2)
    assert m.mean == pytest.approx(1.0)

    def pdf(y):
        return np.exp(-((np.log(y) - a) ** 2) / (2 * b2)) / (y * np.sqrt(2 * np.pi * b2))

    xs = np.linspace(0.2, 3.0, 8)
    oracle = np.array([quad_potential(pdf, x, 1e-9, 60) for x in xs])
    assert np.max(np.abs(ms.potential(m, xs).values - oracle)) < 1e-8


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_potential_shape_properties(seed):
    # concave, 1-Lipschitz, tails hug -|x - mean|
    rng = np.random.default_rng(seed)
    locs = np.sort(rng.normal(0.0, 2.0, 12))
    w = rng.random(12)
    m = ms.atoms(locs, w / w.sum())
    grid = np.linspace(locs.min() - 6, locs.max() + 6, 400)
    u = ms.potential(m, grid).values
    slopes = np.diff(u) / np.diff(grid)
    assert np.all(slopes <= 1.0 + 1e-12) and np.all(slopes >= -1.0 - 1e-12)
    assert np.max(np.diff(slopes)) <= 1e-10
    assert abs(u[0] + abs(grid[0] - m.mean)) < 1e-9
    assert abs(u[-1] + abs(grid[-1] - m.mean)) < 1e-9


def test_embeddable_dilation_passes():
    r = ms.check_embeddable(ms.point_mass(0.0), ms.atoms([-1, 1], [0.5, 0.5]))
    assert r.passed and r.max_violation <= 0.0


def test_embeddable_reverse_fails_at_origin():
    r = ms.check_embeddable(ms.atoms([-1, 1], [0.5, 0.5]), ms.point_mass(0.0))
    assert not r.passed
    assert r.max_violation == pytest.approx(1.0)
    assert r.argmax == pytest.approx(0.0)


def test_embeddable_geometric_pair():
    r = ms.check_embeddable(ms.point_mass(1.0), ms.lognormal(-0.02, 0.04))
    assert r.passed


@pytest.mark.parametrize("seed", [3, 4])
def test_convex_order_monotone_potentials(seed):
    # split every atom into a centered pair: a martingale dilation, so the
    # ordered-potential test must pass and potentials must be ordered
    rng = np.random.default_rng(seed)
    locs = np.sort(rng.normal(0.0, 1.0, 6))
    w = rng.random(6)
    w = w / w.sum()
    nu = ms.atoms(locs, w)
    spread = rng.random(6)
    mu = ms.atoms(
        np.concatenate([locs - spread, locs + spread]),
        np.concatenate([w / 2, w / 2]),
    )
    rep = ms.check_embeddable(nu, mu)
    assert rep.passed
    grid = np.linspace(-8, 8, 500)
    assert np.all(ms.potential(nu, grid).values >= ms.potential(mu, grid).values - 1e-12)


def bs_call(s0, k, vol, t):
    sd = vol * np.sqrt(t)
    d1 = (np.log(s0 / k) + 0.5 * sd * sd) / sd
    return s0 * norm.cdf(d1) - k * norm.cdf(d1 - sd)


def test_implied_measure_black_scholes_round_trip():
    ks = np.linspace(0.2, 3.2, 301)
    q = ms.CallQuotes(strikes=ks, prices=bs_call(1.0, ks, 0.2, 1.0),
                      spot=1.0, discount=1.0, maturity=1.0)
    mu = ms.implied_measure_from_calls(q)
    assert mu.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert mu.mean == pytest.approx(1.0, abs=1e-8)
    # repricing the quotes against the implied law reproduces them
    assert np.max(np.abs(ms.call_prices(mu, ks, 1.0) - q.prices)) < 1e-6
    # and the law is the lognormal one up to quote discretization
    grid = np.linspace(0.05, 4.0, 401)
    gap = np.abs(ms.potential(mu, grid).values
                 - ms.potential(ms.lognormal(-0.02, 0.04), grid).values)
    assert np.max(gap) < 1e-4


def test_implied_measure_two_point_curve():
    # piecewise-linear curve of a binary law: kinks recover the two atoms
    strikes = np.array([0.7, 1.05, 1.4])
    prices = np.array([0.3, 3.0 / 7.0 * 0.35, 0.0])
    q = ms.CallQuotes(strikes=strikes, prices=prices, spot=1.0, discount=1.0, maturity=1.0)
    mu = ms.implied_measure_from_calls(q)
    assert np.allclose(mu.locations, [0.7, 1.4])
    assert np.allclose(mu.weights, [4.0 / 7.0, 3.0 / 7.0])


def test_implied_measure_degenerate_curve():
    ks = np.round(np.arange(0.1, 2.0001, 0.05), 10)
    q = ms.CallQuotes(strikes=ks, prices=np.maximum(1.0 - ks, 0.0),
                      spot=1.0, discount=1.0, maturity=1.0)
    mu = ms.implied_measure_from_calls(q)
    big = mu.weights > 1e-12
    assert np.allclose(mu.locations[big], [1.0])
    assert mu.weights[big].sum() == pytest.approx(1.0)


def test_implied_measure_rejects_non_convex():
    ks = np.array([0.5, 1.0, 1.5])
    q = ms.CallQuotes(strikes=ks, prices=np.array([0.6, 0.5, 0.1]),
                      spot=1.0, discount=1.0, maturity=1.0)
    with pytest.raises(ms.ArbitrageError, match="convex"):
        ms.implied_measure_from_calls(q)


def test_implied_measure_rejects_increasing():
    ks = np.array([0.5, 1.0, 1.5])
    q = ms.CallQuotes(strikes=ks, prices=np.array([0.52, 0.6, 0.2]),
                      spot=1.0, discount=1.0, maturity=1.0)
    with pytest.raises(ms.ArbitrageError):
        ms.implied_measure_from_calls(q)


def test_implied_measure_rejects_atom_at_zero():
    # shallow slope at the origin leaves mass at zero: rejected, not repaired
    ks = np.array([1.0, 2.0])
    q = ms.CallQuotes(strikes=ks, prices=np.array([0.5, 0.0]),
                      spot=1.0, discount=1.0, maturity=1.0)
    with pytest.raises(ms.ArbitrageError, match="atom"):
        ms.implied_measure_from_calls(q)


def test_truncate_preserves_mass_and_mean():
    m = ms.normal(0.3, 2.0)
    t = ms.truncate(m, -6.0, 7.0)
    assert t.weights.sum() == pytest.approx(1.0, abs=1e-12)
    # atomization of the analytic family costs O(cell^2); exact for atoms
    assert t.mean == pytest.approx(m.mean, abs=1e-5)
    assert t.locations.min() >= -6.0 and t.locations.max() <= 7.0
    a = ms.atoms([-3.0, 0.0, 0.5, 4.0], [0.1, 0.4, 0.4, 0.1])
    ta = ms.truncate(a, -2.0, 2.0)
    assert ta.mean == pytest.approx(a.mean, abs=1e-12)
    assert ta.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_measure_json_round_trip(tmp_path):
    m = ms.atoms([-1.0, 0.5, 2.0], [0.25, 0.5, 0.25])
    path = tmp_path / "m.json"
    ms.save_measure(m, str(path))
    back = ms.load_measure(str(path))
    assert np.allclose(back.locations, m.locations)
    assert np.allclose(back.weights, m.weights)
    for maker in (lambda: ms.normal(0.1, 2.0), lambda: ms.lognormal(-0.1, 0.2)):
        ms.save_measure(maker(), str(path))
        assert ms.load_measure(str(path)).params == maker().params


def test_quote_csv_round_trip(tmp_path):
    csv = tmp_path / "q.csv"
    csv.write_text("strike,price\n0.8,0.25\n1.2,0.05\n")
    side = tmp_path / "q.json"
    side.write_text(json.dumps({"spot": 1.0, "discount_factor": 0.99, "maturity": 0.5}))
    q = ms.load_quotes(str(csv), str(side))
    assert np.allclose(q.strikes, [0.8, 1.2])
    assert q.discount == pytest.approx(0.99)
