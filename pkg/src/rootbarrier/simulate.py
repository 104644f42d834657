"""Path simulation: stopped diffusions, price models, empirical diagnostics.

Increments are drawn from counter-based generators keyed by (seed, step),
so a batch is reproducible bit-for-bit under a fixed seed and independent
of how paths are chunked across workers.  Paths are advanced in a single
streaming pass (states are only retained on request), which keeps memory
linear in the number of paths for million-path runs.

Stopping against a barrier is a check in time, t >= R(X_t), performed at
every sample; no bridge correction is applied for crossings between
samples (the crossing is in the time axis, not a spatial level), so the
stopping time resolution is one time step.  Interval exits for the
competitor embedding, by contrast, are spatial crossings and do use a
Brownian-bridge correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import measures
from .measures import Measure, Potential
from .barrier import Barrier
from .obstacle import DiffusionSpec

__all__ = [
    "PathBatch",
    "PriceModel",
    "simulate_stopped",
    "empirical_potential",
    "simulate_price_model",
    "hall_competitor",
    "ks_statistic",
    "ks_critical_value",
]


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Independent generator for one time step of one batch."""
    return np.random.Generator(
        np.random.Philox(seed=np.random.SeedSequence(entropy=(int(seed), int(step))))
    )


@dataclass(frozen=True)
class PathBatch:
    """Stopped-path sample: stopping times, stopped values, diagnostics."""

    n: int
    dt: float
    horizon: float
    seed: int
    stop_times: np.ndarray
    stopped_values: np.ndarray
    horizon_mass: float = 0.0
    realized_variance: Optional[np.ndarray] = None
    times: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None      # (n_steps+1, n) if retained
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "n": self.n,
            "dt": self.dt,
            "seed": self.seed,
            "mean-tau": float(np.mean(self.stop_times)),
            "horizon-mass": self.horizon_mass,
            **{k: v for k, v in self.diagnostics.items()
               if isinstance(v, (int, float, str, bool))},
        }


@dataclass(frozen=True)
class PriceModel:
    """Price dynamics dS/S = r dt + sigma dW with deterministic rates.

    vol: a constant, or (breakpoints, values) for a piecewise-constant
    process in time, or the barrier time-change construction (kind
    "time-change-to-barrier") that attains the variance-option bound.
    """

    kind: str                   # "constant" | "piecewise" | "time-change-to-barrier"
    s0: float
    maturity: float
    vol: Union[float, tuple] = 0.2
    rate: Union[float, tuple] = 0.0
    barrier: Optional[Barrier] = None
    # atomic targets stop on vertical spike lines; crossing those between
    # samples is a spatial event, so a bridge correction is well posed and
    # removes the deposit-spread bias (unlike generic time-barrier checks)
    spikes: Optional[tuple] = None      # (locations, arming times)

    def vol_at(self, t: np.ndarray) -> np.ndarray:
        if isinstance(self.vol, tuple):
            bp, vals = self.vol
            idx = np.searchsorted(np.asarray(bp), t, side="right")
            return np.asarray(vals)[np.minimum(idx, len(vals) - 1)]
        return np.full_like(np.asarray(t, dtype=float), float(self.vol))

    def rate_at(self, t: np.ndarray) -> np.ndarray:
        if isinstance(self.rate, tuple):
            bp, vals = self.rate
            idx = np.searchsorted(np.asarray(bp), t, side="right")
            return np.asarray(vals)[np.minimum(idx, len(vals) - 1)]
        return np.full_like(np.asarray(t, dtype=float), float(self.rate))

    def discount(self, t: float) -> float:
        """B_t = exp(int_0^t r)."""
        if not isinstance(self.rate, tuple):
            return math.exp(float(self.rate) * t)
        bp, vals = self.rate
        grid = np.concatenate(([0.0], np.asarray(bp, dtype=float), [t]))
        grid = np.clip(grid, 0.0, t)
        acc = 0.0
        for a, b in zip(grid[:-1], grid[1:]):
            if b > a:
                acc += float(self.rate_at(np.array([a]))[0]) * (b - a)
        return math.exp(acc)


# -- stopped diffusion ---------------------------------------------------------

def simulate_stopped(
    diff: DiffusionSpec,
    nu: Measure,
    barrier: Barrier,
    n: int,
    dt: float,
    seed: int,
    horizon: Optional[float] = None,
    store_paths: bool = False,
) -> PathBatch:
    """Euler-Maruyama paths of dX = sigma(X) dW stopped at the barrier.

    Gaussian increments are exact for constant sigma; the geometric case is
    simulated exactly in log space.  Paths still running at the horizon are
    assigned the horizon as a sentinel stopping time and reported in
    horizon_mass (with a warning flag above 1%).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if horizon is None:
        horizon = barrier.horizon
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        n_steps = int(math.ceil(horizon / dt))
    times = dt * np.arange(n_steps + 1)

    x0 = np.asarray(nu.sample(n, step_rng(seed, 0)), dtype=float)
    tau = np.full(n, times[-1])
    val = x0.copy()
    # starts already inside the barrier stop at once (closed, regular set)
    alive0 = barrier.value_at(x0) > 0.0
    tau[~alive0] = 0.0

    states = None
    if store_paths:
        states = np.empty((n_steps + 1, n))
        states[0] = x0

    # hot loop works on compacted state to avoid full-size fancy indexing
    cur = x0[alive0].copy()
    ids = np.flatnonzero(alive0)
    geometric = diff.geometric
    sqdt = math.sqrt(dt)
    for k in range(1, n_steps + 1):
        if len(ids) == 0:
            if store_paths:
                states[k:] = val[None, :]
            break
        z = step_rng(seed, k).standard_normal(len(ids))
        if geometric:
            cur = cur * np.exp(sqdt * z - 0.5 * dt)
        else:
            cur = cur + diff.sigma(cur) * sqdt * z
        t_k = times[k]
        hit = t_k >= barrier.value_at(cur, exact_nodes=False)
        if hit.any():
            hit_ids = ids[hit]
            tau[hit_ids] = t_k
            val[hit_ids] = cur[hit]
            keep = ~hit
            cur = cur[keep]
            ids = ids[keep]
        if store_paths:
            snap = val.copy()
            snap[ids] = cur
            states[k] = snap

    val[ids] = cur   # horizon sentinel paths keep their current state
    horizon_mass = len(ids) / n
    diag = {"horizon-warning": bool(horizon_mass > 0.01)}
    return PathBatch(
        n=n, dt=dt, horizon=float(times[-1]), seed=seed,
        stop_times=tau, stopped_values=val,
        horizon_mass=horizon_mass,
        times=times if store_paths else None,
        states=states,
        diagnostics=diag,
    )


def empirical_potential(batch: PathBatch, grid: np.ndarray) -> Potential:
    """Potential of the empirical stopped law: -mean |X_tau - x| on a grid."""
    grid = np.asarray(grid, dtype=float)
    w = np.full(batch.n, 1.0 / batch.n)
    mad = measures._mean_abs_dev_atoms(batch.stopped_values, w, grid)
    return Potential(grid=grid, values=-mad, mean=float(np.mean(batch.stopped_values)))


# -- price models ---------------------------------------------------------------

def simulate_price_model(
    model: PriceModel,
    n: int,
    dt: float,
    seed: int,
) -> PathBatch:
    """Discounted price paths and pathwise realized variance.

    Returns the terminal discounted price X_T = B_T^{-1} S_T in
    stopped_values and the accumulated squared log returns of S in
    realized_variance.  For the barrier time-change construction the paths
    are generated in the variance clock (quadratic variation is invariant
    under the time change, and the terminal value is the stopped value).
    """
    if model.kind in ("constant", "piecewise"):
        n_steps = int(round(model.maturity / dt))
        x = np.full(n, float(model.s0))
        rv = np.zeros(n)
        sqdt = math.sqrt(dt)
        for k in range(1, n_steps + 1):
            t_prev = (k - 1) * dt
            sig = model.vol_at(np.array([t_prev]))[0]
            r = model.rate_at(np.array([t_prev]))[0]
            z = step_rng(seed, k).standard_normal(n)
            dlnx = sig * sqdt * z - 0.5 * sig * sig * dt
            x *= np.exp(dlnx)
            rv += (dlnx + r * dt) ** 2
        return PathBatch(
            n=n, dt=dt, horizon=model.maturity, seed=seed,
            stop_times=np.full(n, model.maturity),
            stopped_values=x, realized_variance=rv,
            diagnostics={"kind": model.kind},
        )
    if model.kind == "time-change-to-barrier":
        if model.barrier is None:
            raise ValueError("time-change model needs a barrier")
        batch = _simulate_time_change(model, n, dt, seed)
        return batch
    raise ValueError(f"unknown price model kind {model.kind!r}")


def spike_crossings(x_old, x_new, t_k, dt, spike_x, spike_t, u):
    """Bridge test for touching an armed vertical spike between samples.

    Works in log coordinates (the step is exponential).  The candidates
    are the spikes bracketing the start point plus the next one out;
    straddled spikes are certain crossings, same-side near misses carry
    the exp(-2 a b / dt) bridge probability.  A single uniform selects
    among candidates, whose combined probability is ~disjoint for steps
    smaller than the spike spacing.  Returns (hit mask, spike index).
    """
    n = len(x_old)
    hit = np.zeros(n, dtype=bool)
    which = np.zeros(n, dtype=int)
    l_old = np.log(x_old)
    l_new = np.log(x_new)
    l_spike = np.log(spike_x)
    j_r = np.searchsorted(spike_x, x_old, side="right")
    acc = np.zeros(n)
    for cand in (j_r - 1, j_r, j_r + 1):
        jj = np.clip(cand, 0, len(spike_x) - 1)
        valid = (cand >= 0) & (cand < len(spike_x)) & (t_k >= spike_t[jj]) & ~hit
        if not valid.any():
            continue
        lk = l_spike[jj]
        a = lk - l_old
        bb = lk - l_new
        with np.errstate(over="ignore"):
            p = np.where(a * bb <= 0.0, 1.0, np.exp(-2.0 * a * bb / dt))
        p = np.where(valid, p, 0.0)
        cross = (u >= acc) & (u < acc + p)
        acc = acc + p
        hit |= cross
        which[cross] = jj[cross]
    return hit, which


def _simulate_time_change(model: PriceModel, n: int, dt: float, seed: int) -> PathBatch:
    b = model.barrier
    s_max = b.horizon
    n_steps = int(math.ceil(s_max / dt))
    x = np.full(n, float(model.s0))
    rv = np.zeros(n)
    tau = np.full(n, n_steps * dt)
    val = x.copy()
    spikes = model.spikes
    cons = spikes is None
    r0 = b.value_at(x, conservative=cons)
    alive = r0 > 0.0
    tau[~alive] = 0.0
    idx = np.flatnonzero(alive)
    sqdt = math.sqrt(dt)
    for k in range(1, n_steps + 1):
        if len(idx) == 0:
            break
        g = step_rng(seed, k)
        z = g.standard_normal(len(idx))
        x_old = x[idx]
        x_new = x_old * np.exp(sqdt * z - 0.5 * dt)
        rv[idx] += (sqdt * z - 0.5 * dt) ** 2
        s_k = k * dt
        hit = s_k >= b.value_at(x_new, exact_nodes=False, conservative=cons)
        x[idx] = x_new
        if spikes is not None:
            u = g.random(len(idx))
            sp_hit, sp_which = spike_crossings(
                x_old, x_new, s_k, dt, spikes[0], spikes[1], u)
            # the spike is touched en route, before the endpoint region
            x[idx[sp_hit]] = spikes[0][sp_which[sp_hit]]
            hit = hit | sp_hit
        hit_idx = idx[hit]
        tau[hit_idx] = s_k
        val[hit_idx] = x[hit_idx]
        idx = idx[~hit]
    val[idx] = x[idx]
    horizon_mass = len(idx) / n
    return PathBatch(
        n=n, dt=dt, horizon=float(n_steps * dt), seed=seed,
        stop_times=tau, stopped_values=val, realized_variance=rv,
        horizon_mass=horizon_mass,
        diagnostics={"kind": model.kind, "horizon-warning": bool(horizon_mass > 0.01)},
    )


# -- competitor embedding --------------------------------------------------------

def hall_competitor(mu: Measure, n: int, dt: float, seed: int) -> PathBatch:
    """Alternative embedding of mu: exit from an independent random interval.

    For a target with mean m, draw (R, S) with R < m < S from the classical
    two-sided mixture whose exit distribution reproduces mu exactly, then
    stop Brownian motion started at m on leaving (R, S).  The embedding is
    uniformly integrable with E tau = Var(mu); it differs from the barrier
    embedding and so serves as a competitor in optimality comparisons.
    Interval crossings between samples use a Brownian-bridge correction.
    """
    m = mu.mean
    rng = step_rng(seed, 0)
    lo, hi = _hall_intervals(mu, n, rng)
    # paths with degenerate interval (atom at the mean) stop immediately
    stopped_now = (hi - lo) <= 0
    x = np.full(n, m)
    tau = np.zeros(n)
    val = np.full(n, m)
    idx = np.flatnonzero(~stopped_now)

    sqdt = math.sqrt(dt)
    k = 0
    max_steps = int(5e7 // max(n, 1)) + 200000
    while len(idx) and k < max_steps:
        k += 1
        g = step_rng(seed, k)
        z = g.standard_normal(len(idx))
        u = g.random(len(idx))
        x_new = x[idx] + sqdt * z
        up, dn = hi[idx], lo[idx]
        crossed_up = x_new >= up
        crossed_dn = x_new <= dn
        inside = ~(crossed_up | crossed_dn)
        # bridge probability of touching a level between consecutive samples
        p_up = np.zeros(len(idx))
        p_dn = np.zeros(len(idx))
        p_up[inside] = np.exp(-2.0 * (up[inside] - x[idx][inside]) * (up[inside] - x_new[inside]) / dt)
        p_dn[inside] = np.exp(-2.0 * (x[idx][inside] - dn[inside]) * (x_new[inside] - dn[inside]) / dt)
        bridge_up = inside & (u < p_up)
        bridge_dn = inside & ~bridge_up & (u < p_up + p_dn)
        hit_up = crossed_up | bridge_up
        hit_dn = crossed_dn | bridge_dn
        hit = hit_up | hit_dn
        hit_idx = idx[hit]
        val[hit_idx] = np.where(hit_up[hit], up[hit], dn[hit])
        tau[hit_idx] = (k - 0.5) * dt
        x[idx] = x_new
        idx = idx[~hit]
    if len(idx):
        val[idx] = x[idx]
        tau[idx] = k * dt
    return PathBatch(
        n=n, dt=dt, horizon=float(k * dt), seed=seed,
        stop_times=tau, stopped_values=val,
        horizon_mass=len(idx) / n,
        diagnostics={"kind": "hall-interval-exit"},
    )


def _hall_intervals(mu: Measure, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw the random exit intervals (lo, hi) around the mean of mu."""
    m = mu.mean
    if mu.kind == "normal":
        s = math.sqrt(mu.params["variance"])
        if s == 0:
            return np.full(n, m), np.full(n, m)
        # plain one-sided part: half-normal; size-biased part: Rayleigh
        pick_minus = rng.random(n) < 0.5
        plain = np.abs(s * rng.standard_normal(n))
        biased = s * np.sqrt(-2.0 * np.log(rng.random(n)))
        neg = np.where(pick_minus, plain, biased)
        pos = np.where(pick_minus, biased, plain)
        return m - neg, m + pos
    # generic route: atomize and sample the discrete mixture exactly
    if mu.kind in ("atoms", "tabulated-density"):
        locs, w = mu.locations - m, mu.weights
    else:
        lo0, hi0 = measures._measure_range(mu, mass_eps=1e-10)
        grid = np.linspace(lo0, hi0, 4001)
        cdf = mu.cdf(grid)
        w = np.diff(np.concatenate(([0.0], cdf)))
        w = np.append(w, max(0.0, 1.0 - w.sum()))
        locs = np.append(grid, grid[-1]) - m
        keep = w > 0
        locs, w = locs[keep], w[keep]
    negm = locs < 0
    posm = locs > 0
    p_minus = w[negm].sum()
    p_zero = float(w[~negm & ~posm].sum())
    m_plus = float(np.dot(w[posm], locs[posm]))
    if m_plus <= 0:
        return np.full(n, m), np.full(n, m)
    w_plain_neg = w[negm] / max(p_minus, 1e-300)
    w_plain_pos = w[posm] / max(w[posm].sum(), 1e-300)
    w_bias_neg = w[negm] * (-locs[negm])
    w_bias_neg = w_bias_neg / w_bias_neg.sum()
    w_bias_pos = w[posm] * locs[posm]
    w_bias_pos = w_bias_pos / w_bias_pos.sum()

    u = rng.random(n)
    is_zero = u < p_zero
    pick_minus = (u >= p_zero) & (u < p_zero + p_minus)
    neg_plain = locs[negm][rng.choice(len(w_plain_neg), size=n, p=w_plain_neg)]
    neg_bias = locs[negm][rng.choice(len(w_bias_neg), size=n, p=w_bias_neg)]
    pos_plain = locs[posm][rng.choice(len(w_plain_pos), size=n, p=w_plain_pos)]
    pos_bias = locs[posm][rng.choice(len(w_bias_pos), size=n, p=w_bias_pos)]
    neg = np.where(pick_minus, neg_plain, neg_bias)
    pos = np.where(pick_minus, pos_bias, pos_plain)
    neg = np.where(is_zero, 0.0, neg)
    pos = np.where(is_zero, 0.0, pos)
    return m + neg, m + pos


# -- diagnostics -----------------------------------------------------------------

def ks_statistic(samples: np.ndarray, cdf) -> float:
    """One-sample Kolmogorov-Smirnov statistic against a cdf.

    Accepts a callable cdf, a Measure, or anything with a .cdf method.
    Targets with atoms are compared through both one-sided limits at every
    distinct sample value, which keeps the statistic meaningful for laws
    that put mass on points (naive tie handling would report the largest
    atom weight as a spurious discrepancy).
    """
    s = np.sort(np.asarray(samples, dtype=float))
    nn = len(s)
    from .measures import Measure as _M
    if isinstance(cdf, _M):
        measure, target = cdf, cdf.cdf
    elif isinstance(getattr(cdf, "__self__", None), _M):
        measure, target = cdf.__self__, cdf
    else:
        measure, target = None, (cdf if callable(cdf) else cdf.cdf)
    vals, first_idx, counts = np.unique(s, return_index=True, return_counts=True)
    emp_le = (first_idx + counts) / nn
    emp_lt = first_idx / nn
    f_le = target(vals)
    if measure is not None and measure.kind in ("atoms", "tabulated-density"):
        mass = np.zeros_like(vals)
        pos = np.searchsorted(measure.locations, vals)
        inb = (pos < len(measure.locations))
        exact = inb & (measure.locations[np.minimum(pos, len(measure.locations) - 1)] == vals)
        mass[exact] = measure.weights[pos[exact]]
        f_lt = f_le - mass
    else:
        f_lt = f_le
    d = max(float(np.max(np.abs(emp_le - f_le))), float(np.max(np.abs(emp_lt - f_lt))))
    return d


def ks_critical_value(n: int, level: float = 0.01) -> float:
    """Asymptotic KS critical value; 1.63/sqrt(n) at the 1% level."""
    coef = {0.10: 1.22, 0.05: 1.36, 0.01: 1.63}.get(level)
    if coef is None:
        coef = math.sqrt(-0.5 * math.log(level / 2.0))
    return coef / math.sqrt(n)
