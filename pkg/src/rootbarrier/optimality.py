"""Hedge functions certifying that barrier stopping minimizes E F(tau).

For a convex increasing payoff F of the stopping time with bounded right
derivative f, the construction tabulates

  M(x,t)  expected f(tau) for the diffusion restarted at (x,t);
  Z(x)    convex second antiderivative of 2 M(.,0)/sigma^2;
  G(x,t)  = int_0^t M(x,s) ds - Z(x), a submartingale along the diffusion
           and a martingale up to the stopping time;
  H(x)    = int_0^{R(x)} (f - M)(x,s) ds + Z(x), a static payoff,

with the pathwise inequality G(x,t) + H(x) <= F(t) everywhere and equality
on the barrier.  Taking expectations at any competing stopping time that
embeds the same law gives E F(tau_barrier) <= E F(tau): the optimality
certificate, and in discounted-price coordinates the subhedge.

All t-integrals share one trapezoid rule, so the discrete G + H - F equals
minus the remaining integral of (M - f) and the inequality holds exactly
at the nodes once M >= f is enforced (a property the continuum M has; the
numerical M is clipped onto it).  M is tabulated up to the latest finite
barrier time or the time f becomes constant, whichever is later; beyond
that slab M = f identically and G extends analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import solve_banded

from . import simulate as sim
from .barrier import Barrier
from .measures import Measure
from .obstacle import DiffusionSpec, GridFunction, SolverError

__all__ = [
    "PayoffSpec",
    "HedgeFunctions",
    "variance_call",
    "variance_swap",
    "power_payoff",
    "custom_payoff",
    "compute_M",
    "compute_Z",
    "compute_G_H",
    "build_hedge",
    "verify_pathwise",
    "verify_martingale",
    "optimality_gap",
]


@dataclass(frozen=True)
class PayoffSpec:
    """Convex increasing payoff F of realized variance with F(0) = 0.

    f is the right derivative (bounded by f_bound and constant beyond
    cap_time); payoffs with unbounded derivative must be capped before
    entering the construction, which truncates the certificate exactly the
    way the optimality proof does.
    """

    F: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]
    kind: str
    f_bound: float
    cap_time: float
    label: str = ""

    def validate(self, t_max: float, tol: float = 1e-8) -> None:
        ts = np.linspace(0.0, max(t_max, self.cap_time if np.isfinite(self.cap_time) else t_max), 2001)
        fv = self.f(ts)
        if abs(float(self.F(np.array([0.0]))[0])) > tol:
            raise ValueError("payoff must satisfy F(0) = 0")
        if np.any(np.diff(fv) < -tol):
            raise ValueError("payoff derivative must be non-decreasing")
        if np.any(fv < -tol) or np.any(fv > self.f_bound + tol):
            raise ValueError("payoff derivative out of [0, f_bound]")
        quad = cumulative_trapezoid(fv, ts, initial=0.0)
        gap = np.max(np.abs(quad - self.F(ts)))
        scale = max(1.0, float(np.max(np.abs(self.F(ts)))))
        # derivative jumps cost half a cell under the trapezoid rule
        jump_slack = 0.5 * (ts[1] - ts[0]) * float(np.max(np.abs(np.diff(fv))) if len(fv) > 1 else 0.0)
        if gap > 1e-4 * scale + jump_slack:
            raise ValueError(f"F and f are inconsistent: integral gap {gap:.3e}")


def variance_call(strike: float) -> PayoffSpec:
    k = float(strike)
    return PayoffSpec(
        F=lambda t: np.maximum(np.asarray(t, dtype=float) - k, 0.0),
        f=lambda t: (np.asarray(t, dtype=float) >= k).astype(float),
        kind="variance-call",
        f_bound=1.0,
        cap_time=k,
        label=f"variance call K={k}",
    )


def variance_swap() -> PayoffSpec:
    return PayoffSpec(
        F=lambda t: np.asarray(t, dtype=float),
        f=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        kind="variance-swap",
        f_bound=1.0,
        cap_time=0.0,
        label="variance swap",
    )


def power_payoff(p: float, cap: float) -> PayoffSpec:
    """F(t) = t^p / p with derivative f = t^{p-1} capped at the value cap."""
    if p <= 1:
        raise ValueError("power payoff needs p > 1")
    t_cap = cap ** (1.0 / (p - 1.0))

    def f(t):
        t = np.asarray(t, dtype=float)
        return np.minimum(np.maximum(t, 0.0) ** (p - 1.0), cap)

    def F(t):
        t = np.asarray(t, dtype=float)
        below = np.minimum(t, t_cap)
        return below ** p / p + cap * np.maximum(t - t_cap, 0.0)

    return PayoffSpec(F=F, f=f, kind=f"power({p})", f_bound=float(cap),
                      cap_time=t_cap, label=f"power payoff p={p}, cap {cap}")


def custom_payoff(F, f, f_bound, cap_time=np.inf, label="custom") -> PayoffSpec:
    return PayoffSpec(F=F, f=f, kind="custom-table", f_bound=float(f_bound),
                      cap_time=float(cap_time), label=label)


# -- hedge function container -------------------------------------------------

@dataclass(frozen=True)
class HedgeFunctions:
    x: np.ndarray
    t: np.ndarray
    M: np.ndarray            # (nt, nx)
    Z: np.ndarray            # (nx,)
    G: np.ndarray            # (nt, nx)
    H: np.ndarray            # (nx,)
    delta: np.ndarray        # dG/dx, midpoint of one-sided slopes
    F_grid: np.ndarray       # shared trapezoid cumulative of f
    base_point: float
    payoff: PayoffSpec
    barrier: Barrier
    contact: np.ndarray      # bool (nt, nx)

    @property
    def T_M(self) -> float:
        return float(self.t[-1])

    def _column(self, values: np.ndarray, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.x, values)
        # linear continuation off the tabulated range
        sl_lo = (values[1] - values[0]) / (self.x[1] - self.x[0])
        sl_hi = (values[-1] - values[-2]) / (self.x[-1] - self.x[-2])
        out = np.where(x < self.x[0], values[0] + sl_lo * (x - self.x[0]), out)
        out = np.where(x > self.x[-1], values[-1] + sl_hi * (x - self.x[-1]), out)
        return out

    def _surface_at(self, surf: np.ndarray, x: np.ndarray, t: float) -> np.ndarray:
        tt = min(max(float(t), 0.0), self.T_M)
        j = np.searchsorted(self.t, tt)
        j = min(max(j, 1), len(self.t) - 1)
        t0, t1 = self.t[j - 1], self.t[j]
        w = 0.0 if t1 == t0 else (tt - t0) / (t1 - t0)
        row = (1.0 - w) * surf[j - 1] + w * surf[j]
        return self._column(row, x)

    def H_at(self, x: np.ndarray) -> np.ndarray:
        # beyond the tabulated range the barrier is immediate and H = Z,
        # whose continuation is linear (M(.,0) = f(0) there)
        return self._column(self.H, x)

    def Z_at(self, x: np.ndarray) -> np.ndarray:
        return self._column(self.Z, x)

    def G_at(self, x: np.ndarray, t: float) -> np.ndarray:
        g = self._surface_at(self.G, x, t)
        if t > self.T_M:
            # past the slab every point is absorbed: M = f, G grows by F
            g = g + self._F(t) - self._F(self.T_M)
        return g

    def M_at(self, x: np.ndarray, t: float) -> np.ndarray:
        if t > self.T_M:
            return np.full_like(np.asarray(x, dtype=float), self._F_prime(t))
        return self._surface_at(self.M, x, t)

    def delta_at(self, x: np.ndarray, t: float) -> np.ndarray:
        return self._surface_at(self.delta, x, min(t, self.T_M))

    def _F(self, t: float) -> float:
        return float(np.interp(t, self.t, self.F_grid)) if t <= self.T_M else (
            float(self.F_grid[-1]) + float(self.payoff.F(np.array([t]))[0])
            - float(self.payoff.F(np.array([self.T_M]))[0])
        )

    def _F_prime(self, t: float) -> float:
        return float(self.payoff.f(np.array([t]))[0])


# -- construction ---------------------------------------------------------------

def compute_M(
    diff: DiffusionSpec,
    barrier: Barrier,
    payoff: PayoffSpec,
    x_grid: np.ndarray,
    nt: int,
    t_max: Optional[float] = None,
) -> GridFunction:
    """Expected stopped payoff derivative by the backward heat equation.

    M solves dM/dt + (sigma^2/2) M_xx = 0 in the continuation region with
    M(x,t) = f(t) on the barrier and on the terminal slab.  The horizon
    must dominate both the last finite barrier time and the time at which
    f becomes constant; otherwise the free region touches the terminal
    slab and the tabulation cannot close (raised with guidance).

    Inside each time level the Dirichlet condition is imposed at the exact
    level crossing of the barrier (irregular stencils), which keeps the
    scheme second order in space; kinks of the barrier (support edges,
    atoms) should be grid nodes for full accuracy, which the solver grids
    arrange by construction.
    """
    x = np.asarray(x_grid, dtype=float)
    r = barrier.value_at(x)
    r_finite = r[np.isfinite(r)]
    r_max = float(np.max(r_finite)) if len(r_finite) else 0.0
    cap = payoff.cap_time
    if t_max is None:
        if not np.isfinite(cap) and np.any(np.isinf(r)):
            raise SolverError(
                "barrier never closes and f never flattens: cap the payoff "
                "derivative or supply a finite horizon t_max"
            )
        t_max = max(r_max, cap if np.isfinite(cap) else 0.0, 1e-6)
    if np.any(np.isinf(r)) and (not np.isfinite(cap) or cap > t_max + 1e-12):
        raise SolverError(
            f"free region still open at the terminal slab t={t_max:.6g}: "
            "increase the horizon or cap the payoff derivative earlier"
        )
    if t_max < r_max - 1e-12:
        raise SolverError(
            f"horizon {t_max:.6g} is below the last barrier time {r_max:.6g}: "
            "increase the horizon"
        )
    # edges inside the barrier are Dirichlet rows; edges still free (a
    # barrier positive at the truncated boundary, e.g. a flat one) fall
    # back to zero-slope rows, exact when the barrier flattens in the tails
    neumann_lo = bool(r[0] > 0)
    neumann_hi = bool(r[-1] > 0)

    t = np.linspace(0.0, float(t_max), nt + 1)
    dt = t[1] - t[0]
    f_t = payoff.f(t)
    contact = t[:, None] >= r[None, :]

    sig2 = x * x if diff.geometric else diff.sigma(x) ** 2
    a = 0.5 * sig2
    n = len(x)

    M = np.empty((nt + 1, n))
    M[-1] = f_t[-1]
    ab = np.zeros((3, n))
    for j in range(nt - 1, -1, -1):
        pinned = contact[j]
        fv = f_t[j]
        # exact boundary abscissa where R crosses the level t_j, found by
        # linear interpolation of R inside each sign-change cell; placing
        # the Dirichlet value there (irregular stencil) removes the O(h)
        # staircase bias at the barrier's spatial edges
        hm = np.empty(n)
        hp = np.empty(n)
        hm[1:] = x[1:] - x[:-1]
        hm[0] = hp[-1] = 1e300
        hp[:-1] = x[1:] - x[:-1]
        free = ~pinned
        # left neighbour pinned: boundary sits inside (x_{i-1}, x_i]
        lb = free.copy()
        lb[1:] &= pinned[:-1]
        lb[0] = False
        rb = free.copy()
        rb[:-1] &= pinned[1:]
        rb[-1] = False
        i_lb = np.flatnonzero(lb)
        i_rb = np.flatnonzero(rb)
        if len(i_lb):
            rl, ri = r[i_lb - 1], r[i_lb]
            frac = np.where(np.isfinite(ri), (t[j] - rl) / np.maximum(ri - rl, 1e-300), 0.0)
            frac = np.clip(frac, 0.0, 1.0)
            hm[i_lb] = np.maximum((1.0 - frac) * (x[i_lb] - x[i_lb - 1]), 1e-3 * (x[i_lb] - x[i_lb - 1]))
        if len(i_rb):
            rr, ri = r[i_rb + 1], r[i_rb]
            frac = np.where(np.isfinite(ri), (t[j] - rr) / np.maximum(ri - rr, 1e-300), 0.0)
            frac = np.clip(frac, 0.0, 1.0)
            hp[i_rb] = np.maximum((1.0 - frac) * (x[i_rb + 1] - x[i_rb]), 1e-3 * (x[i_rb + 1] - x[i_rb]))

        with np.errstate(over="ignore"):
            lo_c = 2.0 * a / (hm * (hm + hp))
            up_c = 2.0 * a / (hp * (hm + hp))
            di_c = 2.0 * a / (hm * hp)

        rhs = M[j + 1].copy()
        rhs[pinned] = fv
        rhs[i_lb] += dt * lo_c[i_lb] * fv   # known boundary value enters the rhs
        rhs[i_rb] += dt * up_c[i_rb] * fv

        m_diag = np.where(pinned, 1.0, 1.0 + dt * di_c)
        m_upper = np.where(pinned | rb, 0.0, -dt * up_c)
        m_lower = np.where(pinned | lb, 0.0, -dt * lo_c)
        m_upper[-1] = 0.0
        m_lower[0] = 0.0
        if neumann_lo and not pinned[0]:
            m_diag[0], m_upper[0] = 1.0, -1.0
            rhs[0] = 0.0
        if neumann_hi and not pinned[-1]:
            m_diag[-1], m_lower[-1] = 1.0, -1.0
            rhs[-1] = 0.0
        # banded layout indexes by column: ab[0, j] is row j-1's upper entry,
        # ab[2, j] is row j+1's lower entry
        ab[0, 1:] = m_upper[:-1]
        ab[1, :] = m_diag
        ab[2, :-1] = m_lower[1:]
        sol = solve_banded((1, 1), ab, rhs)
        M[j] = np.maximum(sol, fv)
    return GridFunction(x=x, t=t, values=M)


def compute_Z(
    m_at_zero: np.ndarray,
    diff: DiffusionSpec,
    x: np.ndarray,
    base_point: float = 0.0,
) -> np.ndarray:
    """Z(x) = 2 int int M(.,0)/sigma^2 with value and slope zero at the base.

    Nested trapezoid quadrature on the tabulation grid; the anchoring at
    the base point interpolates the cumulative integrals, so a base
    between nodes still gets value and slope zero there.
    """
    x = np.asarray(x, dtype=float)
    sig2 = x * x if diff.geometric else diff.sigma(x) ** 2
    integrand = 2.0 * np.asarray(m_at_zero, dtype=float) / sig2
    inner = cumulative_trapezoid(integrand, x, initial=0.0)
    inner = inner - np.interp(base_point, x, inner)
    z = cumulative_trapezoid(inner, x, initial=0.0)
    return z - np.interp(base_point, x, z)


def compute_G_H(
    m: GridFunction,
    z: np.ndarray,
    barrier: Barrier,
    payoff: PayoffSpec,
    base_point: float = 0.0,
) -> HedgeFunctions:
    """Assemble G, H, the trading delta and the shared payoff quadrature.

    The same cumulative trapezoid rule is used for G, H and F, which makes
    the discrete identity G + H - F = -int_t^{T} (M - f) exact at the
    nodes: the pathwise inequality then holds by construction wherever the
    tabulated M dominates f, and vanishes identically on the contact set.
    """
    M, x, t = m.values, m.x, m.t
    f_t = payoff.f(t)
    F_grid = cumulative_trapezoid(f_t, t, initial=0.0)
    G = cumulative_trapezoid(M, t, axis=0, initial=0.0) - z[None, :]
    tail = np.trapezoid(f_t[:, None] - M, t, axis=0)
    H = z + tail

    delta = np.empty_like(G)
    sl = np.diff(G, axis=1) / np.diff(x)[None, :]
    delta[:, 1:-1] = 0.5 * (sl[:, :-1] + sl[:, 1:])
    delta[:, 0] = sl[:, 0]
    delta[:, -1] = sl[:, -1]

    r = barrier.value_at(x)
    contact = t[:, None] >= r[None, :]
    return HedgeFunctions(
        x=x, t=t, M=M, Z=z, G=G, H=H, delta=delta, F_grid=F_grid,
        base_point=base_point, payoff=payoff, barrier=barrier, contact=contact,
    )


def build_hedge(
    diff: DiffusionSpec,
    barrier: Barrier,
    payoff: PayoffSpec,
    x_grid: np.ndarray,
    nt: int,
    base_point: float = 0.0,
    t_max: Optional[float] = None,
) -> HedgeFunctions:
    """One-call pipeline M -> Z -> (G, H) on a shared grid."""
    m = compute_M(diff, barrier, payoff, x_grid, nt, t_max=t_max)
    z = compute_Z(m.values[0], diff, m.x, base_point)
    return compute_G_H(m, z, barrier, payoff, base_point=base_point)


# -- verification ---------------------------------------------------------------

def verify_pathwise(hf: HedgeFunctions, tol: float = 1e-6) -> dict:
    """Grid check of G + H - F <= 0 and of equality on the contact set."""
    gap = hf.G + hf.H[None, :] - hf.F_grid[:, None]
    max_violation = float(np.max(gap))
    contact_gap = float(np.max(np.abs(np.where(hf.contact, gap, 0.0))))
    return {
        "max_violation": max_violation,
        "max_contact_gap": contact_gap,
        "passed": bool(max_violation <= tol and contact_gap <= tol),
        "tolerance": tol,
    }


def _ladder_snapshots(diff, nu, barrier, ladder, n, dt, seed):
    """States, stopped states and stopped clocks at the ladder times."""
    horizon = float(max(ladder))
    n_steps = int(round(horizon / dt))
    x = np.asarray(nu.sample(n, sim.step_rng(seed, 0)), dtype=float)
    tau = np.full(n, np.inf)
    val = x.copy()
    stopped0 = barrier.value_at(x) <= 0.0
    tau[stopped0] = 0.0
    snaps = {}
    targets = {int(round(tv / dt)): tv for tv in ladder}
    sqdt = math.sqrt(dt)
    for k in range(1, n_steps + 1):
        z = sim.step_rng(seed, k).standard_normal(n)
        if diff.geometric:
            x = x * np.exp(sqdt * z - 0.5 * dt)
        else:
            x = x + diff.sigma(x) * sqdt * z
        t_k = k * dt
        running = ~(tau <= t_k)
        hit = running & (t_k >= barrier.value_at(x))
        tau[hit] = t_k
        val[hit] = x[hit]
        if k in targets:
            t_now = targets[k]
            stopped_clock = np.minimum(tau, t_now)
            stopped_state = np.where(tau <= t_now, val, x)
            snaps[t_now] = (x.copy(), stopped_state, stopped_clock)
    return snaps


def verify_martingale(
    hf: HedgeFunctions,
    diff: DiffusionSpec,
    nu: Measure,
    n: int = 100_000,
    seed: int = 0,
    ladder: Optional[list] = None,
    dt: float = 1e-3,
) -> dict:
    """Monte Carlo check of the martingale / submartingale structure of G.

    Along stopped paths the mean of G(X_{t ^ tau}, t ^ tau) must be flat
    across the time ladder (within 3 standard errors); along unstopped
    paths the mean of G(X_t, t) must be non-decreasing.
    """
    if ladder is None:
        ladder = [0.5, 1.0, 2.0, 4.0]
    snaps = _ladder_snapshots(diff, nu, hf.barrier, ladder, n, dt, seed)
    stopped_means, stopped_ses, free_means, free_ses = [], [], [], []
    for tv in ladder:
        x_t, x_stop, t_stop = snaps[tv]
        # group paths by stopped clock so the surface lookup is per-time
        gs = np.empty(n)
        for uv in np.unique(np.round(t_stop, 12)):
            mask = np.abs(t_stop - uv) <= 1e-12
            gs[mask] = hf.G_at(x_stop[mask], float(uv))
        g_free = hf.G_at(x_t, tv)
        stopped_means.append(float(np.mean(gs)))
        stopped_ses.append(float(np.std(gs) / math.sqrt(n)))
        free_means.append(float(np.mean(g_free)))
        free_ses.append(float(np.std(g_free) / math.sqrt(n)))
    sm = np.asarray(stopped_means)
    se = np.asarray(stopped_ses)
    mart_ok = bool(np.all(np.abs(sm - sm[0]) <= 3.0 * (se + se[0] + 1e-15)))
    fm = np.asarray(free_means)
    fe = np.asarray(free_ses)
    sub_ok = bool(np.all(np.diff(fm) >= -3.0 * (fe[1:] + fe[:-1])))
    return {
        "ladder": list(ladder),
        "stopped_means": stopped_means,
        "stopped_ses": stopped_ses,
        "unstopped_means": free_means,
        "unstopped_ses": free_ses,
        "martingale_ok": mart_ok,
        "submartingale_ok": sub_ok,
        "passed": mart_ok and sub_ok,
    }


def optimality_gap(
    hf: HedgeFunctions,
    payoff: PayoffSpec,
    root_batch: sim.PathBatch,
    competitor_batch: sim.PathBatch,
    mu: Measure,
    ks_level: float = 0.01,
) -> dict:
    """Compare E F(tau) for the barrier time against a competitor embedding.

    The competitor batch must itself embed the target law (verified by a
    KS test at ks_level, otherwise the comparison is refused); the report
    carries both payoff means, the hedging decomposition E[G + H] of the
    competitor, and the inequality margin in combined standard errors.
    """
    ks = sim.ks_statistic(competitor_batch.stopped_values, mu.cdf)
    crit = sim.ks_critical_value(competitor_batch.n, ks_level)
    if ks > crit:
        raise ValueError(
            f"competitor batch does not embed the target law: KS {ks:.4f} > {crit:.4f}"
        )
    f_root = payoff.F(root_batch.stop_times)
    f_comp = payoff.F(competitor_batch.stop_times)
    gh = np.empty(competitor_batch.n)
    taus = competitor_batch.stop_times
    vals = competitor_batch.stopped_values
    uniq = np.unique(np.round(taus, 12))
    if len(uniq) > 4000:
        bins = np.quantile(taus, np.linspace(0, 1, 4001))
        uniq = np.unique(bins)
        ids = np.clip(np.searchsorted(uniq, taus), 0, len(uniq) - 1)
        snapped = uniq[ids]
    else:
        snapped = taus
    for uv in np.unique(snapped):
        mask = snapped == uv
        gh[mask] = hf.G_at(vals[mask], float(uv)) + hf.H_at(vals[mask])
    e_root = float(np.mean(f_root))
    se_root = float(np.std(f_root) / math.sqrt(root_batch.n))
    e_comp = float(np.mean(f_comp))
    se_comp = float(np.std(f_comp) / math.sqrt(competitor_batch.n))
    e_gh = float(np.mean(gh))
    se_gh = float(np.std(gh) / math.sqrt(competitor_batch.n))
    margin = 3.0 * (se_root + se_comp)
    return {
        "EF_root": e_root,
        "EF_competitor": e_comp,
        "E_GH_competitor": e_gh,
        "se_root": se_root,
        "se_competitor": se_comp,
        "se_GH": se_gh,
        "ks": ks,
        "ks_critical": crit,
        "optimal": bool(e_root <= e_comp + margin),
        "chain_ok": bool(e_gh <= e_comp + 3.0 * (se_gh + se_comp)
                         and e_root <= e_gh + 3.0 * (se_root + se_gh)),
    }
