import numpy as np
import pytest

from rootbarrier import barrier as br
from rootbarrier import measures as ms
from rootbarrier import obstacle as ob
from rootbarrier import optimality as opt
from rootbarrier import parabola as pb
from rootbarrier import simulate as sim


def test_payoff_specs_validate():
    for p in (opt.variance_call(0.04), opt.variance_swap(), opt.power_payoff(2.0, cap=5.0)):
        p.validate(t_max=8.0)
    assert opt.variance_call(0.04).f(np.array([0.05]))[0] == 1.0
    assert opt.power_payoff(2.0, cap=5.0).F(np.array([2.0]))[0] == pytest.approx(2.0)
    assert opt.power_payoff(2.0, cap=5.0).F(np.array([7.0]))[0] == pytest.approx(12.5 + 5.0 * 2.0)


def test_payoff_rejects_nonzero_start():
    bad = opt.custom_payoff(lambda t: np.asarray(t) + 1.0,
                            lambda t: np.ones_like(np.asarray(t)), 1.0, 0.0)
    with pytest.raises(ValueError, match="F"):
        bad.validate(1.0)


def test_payoff_rejects_decreasing_derivative():
    bad = opt.custom_payoff(lambda t: 1.0 - np.exp(-np.asarray(t, dtype=float)),
                            lambda t: np.exp(-np.asarray(t, dtype=float)),
                            1.0, np.inf)
    with pytest.raises(ValueError, match="non-decreasing"):
        bad.validate(1.0)


def test_parabola_closed_forms(parabola_hedge):
    hf, bar, payoff = parabola_hedge
    window = (hf.x >= -1.9) & (hf.x <= 2.9)
    xs = hf.x[window]
    worst = {"M": 0.0, "G": 0.0, "gap": 0.0}
    for j, tv in enumerate(hf.t):
        worst["M"] = max(worst["M"], np.max(np.abs(hf.M[j][window] - pb.M_exact(xs, tv))))
        worst["G"] = max(worst["G"], np.max(np.abs(hf.G[j][window] - pb.G_exact(xs, tv))))
        num_gap = hf.G[j][window] + hf.H[window] - hf.F_grid[j]
        worst["gap"] = max(worst["gap"], np.max(np.abs(num_gap - pb.gap_exact(xs, tv))))
    assert worst["M"] < 1e-3
    assert worst["G"] < 1e-3
    assert worst["gap"] < 1e-3
    assert np.max(np.abs(hf.Z[window] - pb.Z_exact(xs))) < 1e-3
    assert np.max(np.abs(hf.H[window] - pb.H_exact(xs))) < 1e-3


def test_parabola_point_values(parabola_hedge):
    hf, _, _ = parabola_hedge
    # arithmetic on the closed forms at alpha=2, beta=3, lam=1/2
    assert hf.M_at(np.array([0.0]), 0.0)[0] == pytest.approx(2.0, abs=2e-3)
    assert hf.Z_at(np.array([1.0]))[0] == pytest.approx(37.0 / 18.0, abs=1e-3)
    assert hf.Z_at(np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-12)
    gh = hf.G_at(np.array([0.0]), 0.0)[0] + hf.H_at(np.array([0.0]))[0]
    assert gh == pytest.approx(-3.0, abs=1e-3)


def test_flat_barrier_reference_values():
    # constant barrier at t0 = 1: M = 1 below, Z = x^2, H = x^2 - 1/2
    x = np.linspace(-6.5, 6.5, 1301)
    bar = br.from_function(lambda s: np.ones_like(s), x, horizon=2.0)
    payoff = opt.power_payoff(2.0, cap=4.0)
    hf = opt.build_hedge(ob.brownian(), bar, payoff, x, nt=800, base_point=0.0)
    assert hf.M_at(np.array([0.3]), 0.5)[0] == pytest.approx(1.0, abs=1e-10)
    assert hf.Z_at(np.array([2.0]))[0] == pytest.approx(4.0, abs=1e-9)
    assert hf.H_at(np.array([2.0]))[0] == pytest.approx(3.5, abs=1e-9)
    gh = hf.G_at(np.array([0.0]), 0.0)[0] + hf.H_at(np.array([0.0]))[0]
    assert gh == pytest.approx(-0.5, abs=1e-9)


def test_M_dominates_f_and_Z_convex(parabola_hedge):
    hf, _, payoff = parabola_hedge
    f_rows = payoff.f(hf.t)[:, None]
    assert np.min(hf.M - f_rows) >= 0.0
    d2 = np.diff(hf.Z, 2)
    assert np.min(d2) >= -1e-10


def test_M_matches_monte_carlo_probes(parabola_hedge):
    hf, bar, payoff = parabola_hedge
    rng_probes = [(-1.0, 0.5), (0.5, 1.0), (1.5, 2.0), (0.0, 0.0), (2.0, 0.25)]
    n = 20_000
    for x0, t0 in rng_probes:
        if t0 >= pb.barrier_fn(np.array([x0]))[0]:
            continue
        shifted = br.Barrier(x=bar.x, R=np.maximum(bar.R - t0, 0.0), horizon=bar.horizon)
        batch = sim.simulate_stopped(ob.brownian(), ms.point_mass(x0), shifted,
                                     n=n, dt=1e-3, seed=101)
        mc = np.mean(payoff.f(batch.stop_times + t0))
        se = np.std(payoff.f(batch.stop_times + t0)) / np.sqrt(n)
        val = hf.M_at(np.array([x0]), t0)[0]
        assert abs(val - mc) <= 3 * se + 0.05 * np.sqrt(batch.dt) + 2e-3


def test_pathwise_inequality(parabola_hedge):
    hf, _, _ = parabola_hedge
    rep = opt.verify_pathwise(hf, tol=1e-6)
    assert rep["passed"]
    assert rep["max_violation"] <= 1e-6
    assert rep["max_contact_gap"] <= 1e-6


def test_martingale_structure(parabola_hedge):
    hf, _, _ = parabola_hedge
    rep = opt.verify_martingale(hf, ob.brownian(), ms.point_mass(0.0),
                                n=20_000, seed=5, ladder=[0.5, 1.0, 2.0, 4.0], dt=2e-3)
    assert rep["martingale_ok"]
    assert rep["submartingale_ok"]


def test_degenerate_start_makes_G_constant():
    # immediate barrier: the stopped process never moves, G is frozen
    x = np.linspace(-2.0, 2.0, 201)
    bar = br.Barrier(x=x, R=np.zeros_like(x), horizon=1.0)
    payoff = opt.variance_swap()
    hf = opt.build_hedge(ob.brownian(), bar, payoff, x, nt=100, t_max=1.0)
    rep = opt.verify_martingale(hf, ob.brownian(), ms.point_mass(0.0),
                                n=2000, seed=1, ladder=[0.25, 0.5], dt=1e-3)
    assert rep["martingale_ok"]


def test_optimality_gap_normal_target():
    # deterministic-time embedding of N(0,1) versus the interval-exit one
    mu = ms.normal(0.0, 1.0)
    x = np.linspace(-6.5, 6.5, 1301)
    bar_t = br.from_function(lambda s: np.ones_like(s), x, horizon=2.0)
    payoff = opt.power_payoff(2.0, cap=4.0)
    hf = opt.build_hedge(ob.brownian(), bar_t, payoff, x, nt=800, base_point=0.0)
    bar = br.Barrier(x=np.array([-10.0, 10.0]), R=np.array([1.0, 1.0]), horizon=2.0)
    root = sim.simulate_stopped(ob.brownian(), ms.point_mass(0.0), bar,
                                n=20_000, dt=1 / 100, seed=1)
    comp = sim.hall_competitor(mu, n=20_000, dt=1e-3, seed=2)
    rep = opt.optimality_gap(hf, payoff, root, comp, mu)
    assert rep["EF_root"] == pytest.approx(0.5)
    assert rep["optimal"]
    assert rep["chain_ok"]
    assert rep["EF_competitor"] >= rep["E_GH_competitor"] - 3 * (rep["se_competitor"] + rep["se_GH"])


def test_optimality_gap_refuses_bad_competitor():
    mu = ms.normal(0.0, 1.0)
    x = np.linspace(-6.5, 6.5, 301)
    bar_t = br.from_function(lambda s: np.ones_like(s), x, horizon=2.0)
    payoff = opt.power_payoff(2.0, cap=4.0)
    hf = opt.build_hedge(ob.brownian(), bar_t, payoff, x, nt=200, base_point=0.0)
    bar = br.Barrier(x=np.array([-10.0, 10.0]), R=np.array([1.0, 1.0]), horizon=2.0)
    root = sim.simulate_stopped(ob.brownian(), ms.point_mass(0.0), bar, n=2000, dt=0.01, seed=1)
    fake = sim.PathBatch(n=2000, dt=0.01, horizon=1.0, seed=0,
                         stop_times=np.full(2000, 0.5),
                         stopped_values=np.full(2000, 0.3))
    with pytest.raises(ValueError, match="embed"):
        opt.optimality_gap(hf, payoff, root, fake, mu)


def test_compute_M_horizon_guard():
    x = np.linspace(-2.0, 2.0, 101)
    R = np.where(np.abs(x) < 1.0, np.inf, 0.0)
    bar = br.Barrier(x=x, R=R, horizon=1.0)
    unbounded = opt.custom_payoff(lambda t: np.asarray(t, dtype=float) ** 2 / 2,
                                  lambda t: np.asarray(t, dtype=float),
                                  f_bound=np.inf, cap_time=np.inf)
    with pytest.raises(ob.SolverError, match="cap|flatten"):
        opt.compute_M(ob.brownian(), bar, unbounded, x, nt=50)


def test_compute_M_open_region_with_capped_payoff():
    # spikes at the ends, open middle: fine once f flattens
    x = np.linspace(-2.0, 2.0, 201)
    R = np.where(np.abs(x) < 1.0 - 1e-9, np.inf, 0.0)
    bar = br.Barrier(x=x, R=R, horizon=1.0)
    payoff = opt.variance_call(0.3)
    m = opt.compute_M(ob.brownian(), bar, payoff, x, nt=300)
    # M(x, 0) is the probability of surviving past the strike date
    i0 = np.argmin(np.abs(m.x))
    assert 0.0 < m.values[0][i0] < 1.0
    assert np.max(m.values) <= 1.0 + 1e-9
