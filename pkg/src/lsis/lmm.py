"""Multi-factor Libor Market Model under the spot Libor measure.

Rates are indexed ``i = 0..num_rates-1``; ``L_i`` accrues over
``[T_i, T_{i+1})`` with ``T_i = i * h`` and fixes at ``T_i``. ``eta(t)`` is the
smallest index with ``T_i > t``, so ``L_0`` is fixed at time zero.

Volatilities depend on time to maturity only:
``sigma_i^j(t) = sigma0 (1 + alpha j)(1 + beta k)`` with ``k = i - eta(t) + 1``.
Because the loading factorises over factor and maturity bucket, the drift
sum collapses to a scalar cumulative sum per path, which is what the batch
evolution uses. :func:`spot_drift` keeps the plain definition.
"""

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "LmmConfig",
    "LmmState",
    "RatePath",
    "vol_vector",
    "spot_drift",
    "evolve_path",
    "simulate",
]


@dataclass(frozen=True)
class LmmConfig:
    """Model and discretisation parameters.

    ``num_periods`` is the simulated horizon in accrual periods; the problem
    dimension is ``num_periods * num_factors * euler_substeps``.
    ``num_rates`` defaults to ``num_periods + 1`` (every rate that fixes by
    the horizon); longer curves are needed for swaptions.
    """

    num_periods: int
    num_rates: int = None
    tenor: float = 0.25
    euler_substeps: int = 3
    num_factors: int = 3
    sigma0: float = 0.2
    alpha: float = 0.1
    beta: float = 0.01
    l0: float = 0.05

    def __post_init__(self):
        if self.num_rates is None:
            object.__setattr__(self, "num_rates", self.num_periods + 1)
        if self.num_periods < 0 or self.num_rates < 1:
            raise ValueError("num_periods must be non-negative and num_rates positive")
        if self.tenor <= 0 or self.euler_substeps < 1 or self.num_factors < 1:
            raise ValueError("tenor, euler_substeps and num_factors must be positive")
        if self.sigma0 < 0 or self.l0 <= 0:
            raise ValueError("sigma0 must be non-negative and l0 positive")

    @property
    def num_steps(self):
        return self.num_periods * self.euler_substeps

    @property
    def dimension(self):
        return self.num_steps * self.num_factors

    @property
    def step_size(self):
        return self.tenor / self.euler_substeps

    def with_horizon(self, num_periods, num_rates=None):
        return replace(self, num_periods=num_periods, num_rates=num_rates)

    def initial_curve(self):
        return self.l0 * (1.0 + self.beta * np.arange(self.num_rates))

    def factor_loadings(self):
        j = np.arange(1, self.num_factors + 1)
        return self.sigma0 * (1.0 + self.alpha * j)

    def maturity_scale(self, k):
        return 1.0 + self.beta * np.asarray(k, dtype=float)

    def eta(self, t):
        """Index of the first reset strictly after time ``t``."""
        q = t / self.tenor
        n = np.floor(q + 1e-12)
        return int(n) + 1

    def eta_at_step(self, step):
        return step // self.euler_substeps + 1


def vol_vector(config, i, t):
    """Volatility vector (one entry per factor) of rate ``i`` at time ``t``."""
    eta = config.eta(t)
    if i < eta:
        raise ValueError(f"rate {i} is already fixed at t={t}")
    return config.factor_loadings() * config.maturity_scale(i - eta + 1)


@dataclass
class LmmState:
    """Curve at Euler step ``step``; rates below ``eta`` are frozen at their fixings."""

    rates: np.ndarray
    step: int = 0
    fixings: dict = None

    def time(self, config):
        return self.step * config.step_size


def spot_drift(config, state, i):
    """``sum_{j=eta}^{i} sigma_i . sigma_j h L_j / (1 + h L_j)``."""
    t = state.time(config)
    eta = config.eta(t)
    if i < eta:
        raise ValueError(f"rate {i} is already fixed")
    h = config.tenor
    sig_i = vol_vector(config, i, t)
    total = 0.0
    for j in range(eta, i + 1):
        lj = state.rates[j]
        total += float(sig_i @ vol_vector(config, j, t)) * h * lj / (1.0 + h * lj)
    return total


@dataclass
class RatePath:
    """Simulated fixings and the curve at the horizon, for one path or a batch.

    ``fixings[..., i]`` is ``L_i(T_i)`` for ``i <= num_periods`` and NaN beyond.
    ``terminal`` is the curve at the horizon. ``grid`` (optional) has shape
    ``(..., num_steps + 1, num_rates)``.
    """

    fixings: np.ndarray
    terminal: np.ndarray
    tenor: float
    grid: np.ndarray = None

    @property
    def num_fixed(self):
        return int(np.sum(~np.isnan(np.atleast_2d(self.fixings)[0])))


def simulate(config, z, keep_grid=False, with_drift=True):
    """Log-Euler evolution of a batch of paths, ``z`` of shape ``(n, dimension)``.

    ``with_drift=False`` drops the spot-measure drift (diagnostics only: each
    rate is then a driftless lognormal).
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != config.dimension:
        raise ValueError(
            f"expected normals of shape (n, {config.dimension}), got {z.shape}"
        )
    n = z.shape[0]
    R = config.num_rates
    h, he, ne = config.tenor, config.step_size, config.euler_substeps
    a = config.factor_loadings()
    a2 = float(a @ a)
    shocks = z.reshape(n, config.num_steps, config.num_factors) @ a * np.sqrt(he)  # (n, steps)

    L = np.tile(config.initial_curve(), (n, 1))
    fixings = np.full((n, R), np.nan)
    fixings[:, 0] = L[:, 0]
    grid = None
    if keep_grid:
        grid = np.empty((n, config.num_steps + 1, R))
        grid[:, 0] = L
    for step in range(config.num_steps):
        eta = config.eta_at_step(step)
        if eta < R:
            live = L[:, eta:]
            b = config.maturity_scale(np.arange(1, R - eta + 1))
            f = h * live / (1.0 + h * live)
            mu = a2 * b * np.cumsum(b * f, axis=1) if with_drift else 0.0
            expo = (mu - 0.5 * a2 * b * b) * he + shocks[:, step:step + 1] * b
            L[:, eta:] = live * np.exp(expo)
        if (step + 1) % ne == 0:
            q = (step + 1) // ne
            if q < R:
                fixings[:, q] = L[:, q]
        if keep_grid:
            grid[:, step + 1] = L
    return RatePath(fixings, L, h, grid)


def evolve_path(config, z):
    """Single path with its full grid of rate vectors."""
    z = np.asarray(z, dtype=float).ravel()
    if z.size != config.dimension:
        raise ValueError(f"expected {config.dimension} normals, got {z.size}")
    p = simulate(config, z[None, :], keep_grid=True)
    return RatePath(p.fixings[0], p.terminal[0], p.tenor, p.grid[0])
