"""Black-Scholes market parameters, the pricing kernel, and kernel sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import BadDimension, BadTime, DriftBelowRate, SingularVolatility

# Smallest acceptable eigenvalue ratio of sigma @ sigma.T before the market
# is declared singular (double-precision conditioning limit).
_EIG_RATIO_FLOOR = 1e-12
_THETA_RESIDUAL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MarketParams:
    """Validated constant-coefficient market.

    Attributes
    ----------
    r : riskless rate (per year)
    mu : (m,) drift vector (per year)
    sigma : (m, m) volatility matrix (per sqrt-year)
    T : horizon in years
    theta : (m,) market price of risk, the solution of sigma @ theta = mu - r
    theta_norm : Euclidean norm of theta
    """

    r: float
    mu: np.ndarray
    sigma: np.ndarray
    T: float
    theta: np.ndarray
    theta_norm: float

    @property
    def m(self) -> int:
        return self.mu.shape[0]

    def tau(self, t: float) -> float:
        """Time to horizon, rejecting t outside [0, T)."""
        if not 0.0 <= t < self.T:
            raise BadTime(f"t={t} outside [0, {self.T})")
        return self.T - t


def build_market(r: float, mu, sigma, T: float) -> MarketParams:
    """Validate raw inputs and derive the market price of risk.

    Raises
    ------
    BadDimension : shape mismatch or non-positive horizon/rate
    DriftBelowRate : some mu_i <= r
    SingularVolatility : sigma @ sigma.T numerically singular
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if mu.ndim != 1 or mu.size < 1:
        raise BadDimension(f"mu must be a vector, got shape {mu.shape}")
    m = mu.shape[0]
    if sigma.shape != (m, m):
        raise BadDimension(f"sigma must be {m}x{m}, got shape {sigma.shape}")
    if not (np.isfinite(T) and T > 0.0):
        raise BadDimension(f"horizon T must be positive, got {T}")
    if not (np.isfinite(r) and r > 0.0):
        raise BadDimension(f"riskless rate must be positive, got {r}")
    if np.any(mu <= r):
        raise DriftBelowRate(f"every drift must exceed r={r}, got mu={mu}")

    gram = sigma @ sigma.T
    eig = np.linalg.eigvalsh(gram)
    if eig[0] <= _EIG_RATIO_FLOOR * eig[-1]:
        raise SingularVolatility(
            f"smallest eigenvalue of sigma sigma^T is {eig[0]:.3e} "
            f"(largest {eig[-1]:.3e})"
        )

    excess = mu - r
    theta = np.linalg.solve(sigma, excess)
    resid = np.linalg.norm(sigma @ theta - excess)
    if resid > _THETA_RESIDUAL_TOL * max(1.0, np.linalg.norm(excess)):
        raise SingularVolatility(f"market price of risk residual {resid:.3e}")

    mu.setflags(write=False)
    sigma.setflags(write=False)
    theta.setflags(write=False)
    return MarketParams(
        r=float(r), mu=mu, sigma=sigma, T=float(T),
        theta=theta, theta_norm=float(np.linalg.norm(theta)),
    )


def kernel_value(market: MarketParams, t: float, w) -> float:
    """Pricing kernel xi_t = exp{-(r + |theta|^2/2) t - theta.w}.

    ``w`` is the Brownian vector W_t (length m, or batched with trailing
    dimension m).
    """
    if not 0.0 <= t <= market.T:
        raise BadTime(f"t={t} outside [0, {market.T}]")
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != market.m:
        raise BadDimension(f"w must have trailing dimension {market.m}")
    if t == 0.0:
        # W_0 is identically zero, so the exponent is empty
        out = np.ones(w.shape[:-1])
    else:
        drift = (market.r + 0.5 * market.theta_norm**2) * t
        out = np.exp(-drift - w @ market.theta)
    return float(out) if out.ndim == 0 else out


def standard_normals(seed: int, n: int, stream: int = 0) -> np.ndarray:
    """n standard normals from a counter-based generator.

    Philox keyed by (seed, stream); normals obtained by inverse-CDF of
    centred 53-bit uniforms so that exactly one counter tick is consumed
    per variate, making draws pure functions of (seed, stream, index).
    """
    key = np.array([seed, stream], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    # (k + 1/2) * 2^-53 lies strictly inside (0, 1)
    u = (rng.integers(0, 1 << 53, size=n, dtype=np.uint64) + 0.5) * 2.0**-53
    return ndtri(u)


def _terminal_from_normals(market: MarketParams, t: float, xi_t: float,
                           z: np.ndarray) -> np.ndarray:
    """Map standard normals to terminal kernel values given xi_t."""
    tau = market.tau(t)
    drift = (market.r + 0.5 * market.theta_norm**2) * tau
    return xi_t * np.exp(-drift - market.theta_norm * math.sqrt(tau) * z)


def sample_kernel_terminal(market: MarketParams, t: float, xi_t: float,
                           n_paths: int, seed: int,
                           stream: int = 0) -> np.ndarray:
    """Draw xi_T conditional on xi_t (lognormal); deterministic per seed."""
    if xi_t <= 0.0:
        raise BadDimension(f"xi_t must be positive, got {xi_t}")
    if n_paths < 1:
        raise BadDimension(f"n_paths must be >= 1, got {n_paths}")
    z = standard_normals(seed, n_paths, stream=stream)
    return _terminal_from_normals(market, t, xi_t, z)


def sample_kernel_at(market: MarketParams, t: float, n_paths: int, seed: int,
                     stream: int = 0) -> np.ndarray:
    """Draw xi_t from time zero (xi_0 = 1); lognormal at horizon t."""
    if not 0.0 < t <= market.T:
        raise BadTime(f"t={t} outside (0, {market.T}]")
    z = standard_normals(seed, n_paths, stream=stream)
    drift = (market.r + 0.5 * market.theta_norm**2) * t
    return np.exp(-drift - market.theta_norm * math.sqrt(t) * z)
