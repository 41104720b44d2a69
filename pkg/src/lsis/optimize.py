"""Least-squares optimisation of the trial density on a frozen presample.

The second moment of the importance-sampling estimator, written under the
original measure, is a mean of squares ``(W_theta(Z_i)^(1/2) G(Z_i))^2`` over
draws ``Z_i`` from N(0, I). Minimising it is a non-linear least-squares fit,
solved here by Levenberg-Marquardt with a finite-difference Jacobian. The
draws are generated once and reused for every evaluation.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .sampling import path_normals

__all__ = [
    "SECOND_MOMENT",
    "PSEUDO_VARIANCE",
    "PresimSample",
    "LsqConfig",
    "OptimizationResult",
    "presimulate",
    "residuals",
    "objective",
    "levenberg_marquardt",
    "optimize",
    "warm_start",
]

log = logging.getLogger(__name__)

SECOND_MOMENT = "second_moment"
PSEUDO_VARIANCE = "pseudo_variance"


@dataclass(frozen=True)
class PresimSample:
    """Frozen draws from the original measure with their cached payouts."""

    draws: np.ndarray
    payouts: np.ndarray

    def __post_init__(self):
        z = np.array(self.draws, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        g = np.array(self.payouts, dtype=float).ravel()
        if z.shape[0] != g.size:
            raise ValueError("draws and payouts must have the same length")
        if not np.all(np.isfinite(g)):
            raise ValueError("payouts must be finite")
        for a in (z, g):
            a.setflags(write=False)
        object.__setattr__(self, "draws", z)
        object.__setattr__(self, "payouts", g)
        # log G where defined; -inf marks zero payouts
        with np.errstate(divide="ignore"):
            lg = np.where(g > 0, np.log(np.where(g > 0, g, 1.0)), -np.inf)
        lg.setflags(write=False)
        object.__setattr__(self, "_log_payouts", lg)

    def __len__(self):
        return self.payouts.size

    @property
    def dimension(self):
        return self.draws.shape[1]


def presimulate(payoff, n, seed, first_path=0, min_nonzero=0, max_draws=None):
    """Draw ``n`` normals from the original measure and evaluate the payoff once.

    If fewer than ``min_nonzero`` draws give a non-zero payout, the sample is
    doubled (continuing the same streams) until it has enough or reaches
    ``max_draws`` (default ``64 * n``). A deep out-of-the-money payoff can
    otherwise leave the fitter with an identically zero objective.
    """
    if n < 1:
        raise ValueError("presample size must be positive")
    max_draws = 64 * n if max_draws is None else max(int(max_draws), n)
    z = path_normals(seed, np.arange(first_path, first_path + n), payoff.dimension)
    g = np.asarray(payoff(z), dtype=float)
    while np.count_nonzero(g) < min_nonzero and g.size < max_draws:
        lo = first_path + g.size
        extra = min(g.size, max_draws - g.size)
        z_new = path_normals(seed, np.arange(lo, lo + extra), payoff.dimension)
        z = np.vstack([z, z_new])
        g = np.concatenate([g, payoff(z_new)])
    if g.size > n:
        log.info("presample extended from %d to %d draws (%d non-zero payouts)",
                 n, g.size, np.count_nonzero(g))
    return PresimSample(z, g)


@dataclass
class LsqConfig:
    max_iterations: int = 50
    relative_tolerance: float = 1e-6
    initial_damping: float = 1e-3
    target_mode: str = SECOND_MOMENT
    target_value: float = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.relative_tolerance <= 0 or self.initial_damping <= 0:
            raise ValueError("relative_tolerance and initial_damping must be positive")
        if self.target_mode not in (SECOND_MOMENT, PSEUDO_VARIANCE):
            raise ValueError(f"unknown target_mode {self.target_mode!r}")

    def target(self, presim):
        if self.target_mode == SECOND_MOMENT:
            return 0.0
        if self.target_value is None:
            return float(np.mean(presim.payouts))
        return float(self.target_value)


@dataclass
class OptimizationResult:
    theta_star: np.ndarray
    objective_trace: list = field(default_factory=list)
    iterations_used: int = 0
    converged: bool = False
    density: object = None
    accepted_steps: int = 0
    message: str = ""


def residuals(theta, presim, family, target=0.0, check_sign=True):
    """Least-squares residuals on the frozen draws.

    With ``target == 0`` this is ``W^(1/2) G``, whose mean square estimates the
    second moment. With a price guess ``V_T`` it is
    ``W^(1/2) G - V_T W^(-1/2)``: its mean square estimates
    ``E_trial[(W G - V_T)^2] = variance + (V - V_T)^2``, so the minimiser is the
    variance minimiser for any ``V_T``.

    ``W^(1/2) G`` is evaluated as ``exp(log G + log W / 2)`` so large weights do
    not overflow before the product is formed.
    """
    g = presim.payouts
    if check_sign and target == 0.0 and np.any(g < 0):
        raise ValueError(
            "second-moment residuals need a non-negative payout; "
            "use the pseudo-variance target or split the payout"
        )
    lw = family.log_weight(theta, presim.draws)
    with np.errstate(over="ignore"):
        if np.all(g >= 0):
            r = np.exp(presim._log_payouts + 0.5 * lw)
        else:
            r = np.exp(0.5 * lw) * g
        if target != 0.0:
            r = r - target * np.exp(-0.5 * lw)
    return r


def objective(theta, presim, family, target=0.0):
    r = residuals(theta, presim, family, target)
    return float(np.mean(r * r))


def levenberg_marquardt(fun, x0, max_iterations=50, relative_tolerance=1e-6,
                        initial_damping=1e-3, fd_step=1e-6):
    """Minimise ``mean(fun(x)**2)``.

    Jacobian by forward differences with step ``fd_step * (1 + |x_k|)``.
    Damping is Marquardt-scaled (``lambda * diag(J^T J)``), divided by 10 after
    an accepted step and multiplied by 10 after a rejected one.

    Returns ``(x, trace, iterations, converged, accepted, message)`` where
    ``trace`` holds the objective at the start point and after each accepted
    step.
    """
    x = np.array(x0, dtype=float)
    r = np.asarray(fun(x), dtype=float)
    f = float(np.mean(r * r))
    if not np.isfinite(f):
        raise FloatingPointError("objective is not finite at the initial point")
    trace = [f]
    lam = initial_damping
    accepted = 0
    for it in range(1, max_iterations + 1):
        h = fd_step * (1.0 + np.abs(x))
        jac = np.empty((r.size, x.size))
        for k in range(x.size):
            xk = x.copy()
            xk[k] += h[k]
            jac[:, k] = (np.asarray(fun(xk), dtype=float) - r) / h[k]
        jtj = jac.T @ jac
        grad = jac.T @ r
        if not np.all(np.isfinite(jtj)) or not np.all(np.isfinite(grad)):
            return x, trace, it, False, accepted, "non-finite Jacobian"
        if np.max(np.abs(grad)) <= 1e-300 or f == 0.0:
            return x, trace, it, True, accepted, "zero gradient"
        scale = np.diag(jtj).copy()
        scale[scale <= 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(jtj + lam * np.diag(scale), -grad, rcond=None)[0]
            x_new = x + step
            r_new = np.asarray(fun(x_new), dtype=float)
            f_new = float(np.mean(r_new * r_new))
            if np.isfinite(f_new) and f_new <= f:
                break
            lam *= 10.0
            if lam > 1e16:
                return x, trace, it, False, accepted, "damping overflow"
        accepted += 1
        rel = (f - f_new) / max(f, np.finfo(float).tiny)
        x, r, f = x_new, r_new, f_new
        trace.append(f)
        lam = max(lam / 10.0, 1e-12)
        if rel < relative_tolerance:
            return x, trace, it, True, accepted, "relative objective change below tolerance"
    return x, trace, max_iterations, False, accepted, "iteration limit reached"


def optimize(presim, family, config=None, theta0=None):
    """Fit ``theta`` for the trial ``family`` on a frozen presample."""
    config = config or LsqConfig()
    theta0 = family.zeros() if theta0 is None else np.asarray(theta0, dtype=float)
    if theta0.size != family.num_params:
        raise ValueError(f"theta0 has {theta0.size} parameters, family needs {family.num_params}")
    if len(presim) < family.num_params:
        raise ValueError("presample smaller than the number of parameters")
    if presim.dimension != family.dimension:
        raise ValueError(
            f"presample dimension {presim.dimension} does not match family dimension {family.dimension}"
        )
    target = config.target(presim)
    if target == 0.0 and np.any(presim.payouts < 0):
        raise ValueError(
            "second-moment residuals need a non-negative payout; "
            "use the pseudo-variance target or split the payout"
        )

    def fun(theta):
        return residuals(theta, presim, family, target, check_sign=False)

    theta, trace, its, conv, acc, msg = levenberg_marquardt(
        fun, theta0, config.max_iterations, config.relative_tolerance, config.initial_damping
    )
    if not conv:
        log.warning("least-squares fit did not converge: %s", msg)
    return OptimizationResult(theta, trace, its, conv, family.decode(theta), acc, msg)


def warm_start(previous, family=None):
    """Reuse a previous optimum as the next starting point."""
    theta = np.array(previous.theta_star, dtype=float)
    if family is not None and theta.size != family.num_params:
        raise ValueError(
            f"cannot warm start a {family.num_params}-parameter family from {theta.size} parameters"
        )
    return theta
