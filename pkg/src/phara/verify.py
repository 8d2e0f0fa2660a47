"""Independent oracles for every closed form: grid argmax, Monte-Carlo
pricing, finite-difference deltas, and forward SDE simulation."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import StepTooCoarse
from .market import MarketParams, sample_kernel_at, sample_kernel_terminal, standard_normals
from .solver import (budget, optimal_terminal_wealth, portfolio_general,
                     wealth_total, _risk_vector)
from .utility import PharaUtility

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class VerificationReport:
    name: str
    computed: float
    oracle: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "computed": self.computed,
            "oracle": self.oracle,
            "tolerance": self.tolerance,
            "passed": bool(self.passed),
            "detail": dict(self.detail),
        }


def max_workers() -> int:
    env = os.environ.get("PHARA_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return 1


def run_reports(jobs) -> list[VerificationReport]:
    """Execute independent report factories, honouring PHARA_THREADS."""
    workers = max_workers()
    if workers <= 1:
        reports = [job() for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda j: j(), jobs))
    return sorted(reports, key=lambda r: r.name)


# ---------------------------------------------------------------------------
# Pointwise argmax
# ---------------------------------------------------------------------------


def _grid_upper_limit(utility: PharaUtility, w: float) -> float:
    """x beyond which U'(x) < w/10, so the argmax cannot sit further right."""
    last = utility.pieces[-1]
    span = max(1.0, (last.a_lo - utility.a0))
    target = w / 10.0
    if target >= last.slope_lo:
        return last.a_lo + 2.0 * span
    x = last.slope_inverse(target)
    return max(x * 1.5 if x > 0 else x + span, last.a_lo + 2.0 * span)


def argmax_oracle(utility: PharaUtility, y: float, xi_T: float,
                  n_grid: int = 10_000, refinements: int = 40) -> float:
    """Grid + golden-section maximizer of U(x) - y xi_T x over the domain.

    Works on raw (non-concave) utilities, which is the point: it certifies
    that the envelope-based closed form solves the original problem.
    """
    w = y * xi_T
    lo = utility.a0
    hi = _grid_upper_limit(utility, w)
    xs = np.linspace(lo, hi, n_grid)
    if not utility.a0_included or not np.isfinite(utility.value_at_a0):
        xs[0] = lo + (hi - lo) * 1e-12
    vals = utility.value(xs) - w * xs
    i = int(np.argmax(vals))

    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, n_grid - 1)]
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc = float(utility.value(c)) - w * c
    fd = float(utility.value(d)) - w * d
    for _ in range(refinements):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = float(utility.value(c)) - w * c
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = float(utility.value(d)) - w * d
    x_ref = 0.5 * (a + b)
    f_ref = float(utility.value(x_ref)) - w * x_ref
    return x_ref if f_ref >= vals[i] else float(xs[i])


# ---------------------------------------------------------------------------
# Monte-Carlo checks
# ---------------------------------------------------------------------------


def mc_budget_check(env: PharaUtility, market: MarketParams, y: float,
                    n_paths: int, seed: int) -> VerificationReport:
    """E[xi_T X_T*] by simulation against the closed-form budget."""
    xi_T = sample_kernel_terminal(market, 0.0, 1.0, n_paths, seed)
    v = xi_T * optimal_terminal_wealth(env, y, xi_T)
    est = float(np.mean(v))
    se = float(np.std(v, ddof=1) / math.sqrt(n_paths))
    oracle = budget(env, market, y)
    return VerificationReport(
        name="mc_budget", computed=est, oracle=oracle, tolerance=3.0 * se,
        passed=abs(est - oracle) <= 3.0 * se,
        detail={"paths": n_paths, "seed": seed, "std_error": se},
    )


def mc_martingale_check(env: PharaUtility, market: MarketParams, y: float,
                        t: float, n_paths: int, seed: int) -> VerificationReport:
    """E[xi_t X_t*] must equal the budget (deflated optimal wealth is a martingale)."""
    xi_t = sample_kernel_at(market, t, n_paths, seed)
    v = xi_t * wealth_total(env, market, y, t, xi_t)
    est = float(np.mean(v))
    se = float(np.std(v, ddof=1) / math.sqrt(n_paths))
    oracle = budget(env, market, y)
    return VerificationReport(
        name=f"mc_martingale_t={t:g}", computed=est, oracle=oracle,
        tolerance=3.0 * se, passed=abs(est - oracle) <= 3.0 * se,
        detail={"paths": n_paths, "seed": seed, "t": t, "std_error": se},
    )


# ---------------------------------------------------------------------------
# Finite-difference delta
# ---------------------------------------------------------------------------


def fd_portfolio_check(env: PharaUtility, market: MarketParams, y_star: float,
                       t: float, xi_t: float, h: float = 1e-5,
                       tol: float = 1e-6) -> VerificationReport:
    """Central difference of the wealth map in log xi against the closed form.

    The comparison scale never drops below the scheme's own roundoff floor
    (eps * wealth / step), so plateau points where the true portfolio is
    numerically zero do not produce spurious relative blowups.
    """
    x_t = wealth_total(env, market, y_star, t, xi_t)
    up = wealth_total(env, market, y_star, t, xi_t * math.exp(h))
    dn = wealth_total(env, market, y_star, t, xi_t * math.exp(-h))
    slope = (up - dn) / (2.0 * h)          # xi dX/dxi
    pi_fd = -_risk_vector(market) * slope
    pi = portfolio_general(env, market, y_star, t, xi_t)
    noise = 4.0 * np.finfo(float).eps * (1.0 + abs(x_t)) / (2.0 * h)
    scale = max(float(np.linalg.norm(pi)), noise / tol)
    err = float(np.linalg.norm(pi - pi_fd)) / scale
    return VerificationReport(
        name=f"fd_portfolio_t={t:g}_xi={xi_t:g}", computed=err, oracle=0.0,
        tolerance=tol, passed=err <= tol,
        detail={"t": t, "xi": xi_t, "step": h,
                "portfolio_norm": float(np.linalg.norm(pi)),
                "noise_floor": noise},
    )


# ---------------------------------------------------------------------------
# Forward simulation under the closed-form feedback strategy
# ---------------------------------------------------------------------------


def simulate_strategy(env: PharaUtility, market: MarketParams, x0: float,
                      n_paths: int, n_steps: int, seed: int,
                      y_star: float | None = None) -> VerificationReport:
    """Euler scheme for the wealth SDE driven by the closed-form portfolio.

    The same Brownian draws feed both the simulated wealth and the exact
    terminal target, so the reported root-mean-square gap is pure
    discretization error (strong order one half: quadrupling the step count
    should halve it).
    """
    if n_steps < 10:
        raise StepTooCoarse(f"need at least 10 steps, got {n_steps}")
    if y_star is None:
        from .solver import solve_multiplier
        y_star = solve_multiplier(env, market, x0).y_star

    m = market.m
    dt = market.T / n_steps
    sq = math.sqrt(dt)
    excess = market.mu - market.r
    kernel_drift = (market.r + 0.5 * market.theta_norm**2) * dt

    x = np.full(n_paths, x0)
    xi = np.ones(n_paths)
    for i in range(n_steps):
        t_i = i * dt
        pi = portfolio_general(env, market, y_star, t_i, xi)  # (m, P)
        dW = sq * standard_normals(seed, n_paths * m, stream=i).reshape(m, n_paths)
        diffusion = ((market.sigma.T @ pi) * dW).sum(axis=0)
        x = x + (market.r * x + excess @ pi) * dt + diffusion
        xi = xi * np.exp(-kernel_drift - market.theta @ dW)

    target = optimal_terminal_wealth(env, y_star, xi)
    gap = x - target
    rms = float(np.sqrt(np.mean(gap**2)))
    mean_abs = float(np.mean(np.abs(gap)))
    return VerificationReport(
        name=f"simulate_steps={n_steps}", computed=rms, oracle=0.0,
        tolerance=float("inf"), passed=math.isfinite(rms),
        detail={"paths": n_paths, "steps": n_steps, "seed": seed,
                "mean_abs_gap": mean_abs, "x0": x0, "y_star": y_star},
    )


def simulate_order_check(env: PharaUtility, market: MarketParams, x0: float,
                         n_paths: int, steps_coarse: int, steps_fine: int,
                         seed: int) -> VerificationReport:
    """Strong-order-1/2 scaling: quadrupling steps should halve the RMS gap."""
    if steps_fine != 4 * steps_coarse:
        raise ValueError("order check expects steps_fine = 4 * steps_coarse")
    coarse = simulate_strategy(env, market, x0, n_paths, steps_coarse, seed)
    fine = simulate_strategy(env, market, x0, n_paths, steps_fine, seed + 1)
    ratio = fine.computed / coarse.computed
    return VerificationReport(
        name="simulate_order", computed=ratio, oracle=0.5,
        tolerance=0.15, passed=0.35 <= ratio <= 0.65,
        detail={"rms_coarse": coarse.computed, "rms_fine": fine.computed,
                "paths": n_paths, "steps": (steps_coarse, steps_fine),
                "seed": seed},
    )
