"""Monte Carlo estimators and the least-squares importance sampler.

Payoffs are callables ``G(Z)`` on ``(n, d)`` arrays of normal draws with a
``dimension`` attribute. Each estimator consumes streams
``stream.stream_index + 0 .. n_paths - 1`` of ``stream.seed``, so estimators
run with the same stream see the same underlying variates.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .densities import (
    DriftFamily,
    DriftVolFamily,
    KnotDriftSpec,
    MixtureFamily,
    ShiftedGaussian,
)
from .optimize import LsqConfig, PresimSample, optimize, presimulate
from .sampling import RngStream, StratificationPlan, path_normals, stratified_normals_batch

__all__ = [
    "CRUDE",
    "LSIS",
    "LSIS_STRAT",
    "LSIS_VOL",
    "LSIS_MM",
    "GHS_IS",
    "EstimatorReport",
    "VarianceRatioReport",
    "crude_estimate",
    "is_estimate",
    "is_stratified_estimate",
    "variance_ratio",
    "mixture_initial_guess",
    "LSISampler",
]

CRUDE = "crude"
LSIS = "lsis"
LSIS_STRAT = "lsis_strat"
LSIS_VOL = "lsis_vol"
LSIS_MM = "lsis_mm"
GHS_IS = "ghs"

DEFAULT_CHUNK = 8192


@dataclass(frozen=True)
class EstimatorReport:
    value: float
    std_error: float
    variance: float
    num_paths: int
    method: str

    def agrees_with(self, other, n_sigma=3.0):
        combined = np.hypot(self.std_error, other.std_error)
        return abs(self.value - other.value) <= n_sigma * combined


@dataclass(frozen=True)
class VarianceRatioReport:
    vr: float
    vr_uncertainty: float
    repetitions: int
    infinite: bool = False


def _stream(stream):
    return stream if isinstance(stream, RngStream) else RngStream(int(stream))


def _summarise(values, method):
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2:
        raise ValueError("at least two paths are needed")
    var = float(np.var(values, ddof=1))
    return EstimatorReport(float(np.mean(values)), float(np.sqrt(var / n)), var, n, method)


def crude_estimate(payoff, n_paths, stream=0, chunk=DEFAULT_CHUNK):
    """Plain average of ``G(Z)`` over draws from N(0, I)."""
    s = _stream(stream)
    values = np.empty(n_paths)
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        z = path_normals(s.seed, np.arange(lo, hi) + s.stream_index, payoff.dimension)
        values[lo:hi] = payoff(z)
    return _summarise(values, CRUDE)


def is_values(payoff, density, n_paths, stream=0, chunk=DEFAULT_CHUNK):
    """``W(Z) G(Z)`` for ``Z`` drawn from ``density``."""
    s = _stream(stream)
    if density.dimension != payoff.dimension:
        raise ValueError("density and payoff dimensions differ")
    values = np.empty(n_paths)
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        z = density.sample(s.seed, np.arange(lo, hi) + s.stream_index)
        values[lo:hi] = np.exp(density.log_weight(z)) * payoff(z)
    return values


def is_estimate(payoff, density, n_paths, stream=0, chunk=DEFAULT_CHUNK, method=LSIS):
    """Importance-sampled estimate under ``density``."""
    return _summarise(is_values(payoff, density, n_paths, stream, chunk), method)


def is_stratified_estimate(payoff, density, n_paths, stream=0, num_strata=100, plan=None,
                           chunk=DEFAULT_CHUNK, method=LSIS_STRAT):
    """Shifted-Gaussian importance sampling with the innovation stratified along the drift.

    Draws are ``Z = mu + Y`` with ``Y`` stratified along ``mu / |mu|`` (or
    ``plan.direction``) into equal-probability strata, equal allocation per
    stratum. The estimate is the mean of stratum means; its variance is
    ``sum_k s_k^2 / n_k / M^2``. ``variance`` in the report is ``n_paths``
    times the squared standard error, the per-path variance comparable with
    unstratified estimators.
    """
    if not isinstance(density, ShiftedGaussian):
        raise TypeError("stratification is combined with shifted-Gaussian densities only")
    if payoff.dimension != density.dimension:
        raise ValueError("density and payoff dimensions differ")
    if plan is None:
        if n_paths % num_strata:
            raise ValueError(f"{n_paths} paths cannot be split evenly into {num_strata} strata")
        if not np.any(density.drift):
            raise ValueError("cannot stratify along a zero drift")
        plan = StratificationPlan.along(density.drift, num_strata, n_paths // num_strata)
    if plan.total_samples != n_paths:
        raise ValueError("plan size does not match n_paths")
    s = _stream(stream)
    M, per = plan.num_strata, plan.samples_per_stratum
    if M > 1 and per < 2:
        raise ValueError("need at least two samples per stratum to estimate the error")
    values = np.empty(n_paths)
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        z = density.transform(stratified_normals_batch(s.seed, plan, np.arange(lo, hi), s.stream_index))
        values[lo:hi] = np.exp(density.log_weight(z)) * payoff(z)
    if M == 1:
        return _summarise(values, method)
    strata = values.reshape(M, per)
    value = float(np.mean(strata.mean(axis=1)))
    se2 = float(np.sum(strata.var(axis=1, ddof=1) / per)) / M**2
    return EstimatorReport(value, float(np.sqrt(se2)), se2 * n_paths, n_paths, method)


def variance_ratio(crude, is_report, repetitions=None):
    """``(sigma_crude / sigma_is)^2`` at equal path counts.

    Pass single reports, or equal-length sequences of paired reports from
    independent repetitions; the ratio then comes from the first pair and the
    uncertainty is the standard deviation of the ratio across pairs.
    """
    crude_list = list(crude) if isinstance(crude, (list, tuple)) else [crude]
    is_list = list(is_report) if isinstance(is_report, (list, tuple)) else [is_report]
    if len(crude_list) != len(is_list):
        raise ValueError("need paired reports")
    ratios = []
    for c, i in zip(crude_list, is_list):
        if c.num_paths != i.num_paths:
            raise ValueError("variance ratios need equal path counts")
        ratios.append(np.inf if i.variance == 0 else c.variance / i.variance)
    ratios = np.array(ratios)
    if np.isinf(ratios[0]):
        return VarianceRatioReport(np.inf, np.nan, len(ratios), infinite=True)
    finite = ratios[np.isfinite(ratios)]
    unc = float(np.std(finite, ddof=1)) if finite.size > 1 else 0.0
    return VarianceRatioReport(float(ratios[0]), unc, len(ratios))


def mixture_initial_guess(draws, payouts, family):
    """Starting point for a two-mode fit from the payout-weighted presample.

    The draws are split at the weighted mean along the leading eigenvector of
    the payout-weighted covariance; each half gives one mode's mean (projected
    onto the knot family) and its share of the payout mass gives the weight.
    """
    z = np.asarray(draws, dtype=float)
    g = np.clip(np.asarray(payouts, dtype=float), 0.0, None)
    if g.sum() <= 0:
        return family.zeros()
    w = g / g.sum()
    mean = w @ z
    cov = (z - mean).T @ ((z - mean) * w[:, None])
    _, vecs = np.linalg.eigh(cov)
    axis = vecs[:, -1]
    side = (z - mean) @ axis > 0
    mass_a = w[side].sum()
    if mass_a <= 0 or mass_a >= 1:
        return family.zeros()
    mu_a = (w[side] @ z[side]) / mass_a
    mu_b = (w[~side] @ z[~side]) / (1 - mass_a)
    ta = family.modes.encode(ShiftedGaussian(mu_a))
    tb = family.modes.encode(ShiftedGaussian(mu_b))
    return np.concatenate([ta, tb, [np.log(mass_a / (1 - mass_a))]])


class LSISampler(BaseEstimator):
    """Least-squares importance sampler.

    ``fit(Z, G)`` takes presample draws ``Z`` from N(0, I) with payouts ``G``
    and minimises the estimator's second moment (or pseudo-variance) over the
    chosen trial family.

    Parameters
    ----------
    family : {"drift", "drift_vol", "mixture"}
        Shifted Gaussian, shifted and scaled Gaussian (d = 1), or a two-mode
        mixture of shifted Gaussians.
    n_knots : int
        Knot points per factor for the drift (and each mixture mode).
    num_factors : int or None
        Factors per time step; ``None`` gives one independent shift per
        coordinate.
    target : {"second_moment", "pseudo_variance"}
    target_value : float or None
        Guess of the price for the pseudo-variance; defaults to the presample mean.
    max_iter, tol, damping :
        Levenberg-Marquardt iteration cap, relative objective tolerance and
        initial damping.
    theta0 : array-like or None
        Starting parameters, e.g. from a previous fit (warm start).
    """

    def __init__(self, family="drift", n_knots=1, num_factors=None, target="second_moment",
                 target_value=None, max_iter=50, tol=1e-6, damping=1e-3, theta0=None):
        self.family = family
        self.n_knots = n_knots
        self.num_factors = num_factors
        self.target = target
        self.target_value = target_value
        self.max_iter = max_iter
        self.tol = tol
        self.damping = damping
        self.theta0 = theta0

    def _make_family(self, d):
        if self.family == "drift_vol":
            if d != 1:
                raise ValueError("the drift_vol family is one-dimensional")
            return DriftVolFamily()
        factors = d if self.num_factors is None else self.num_factors
        if d % factors:
            raise ValueError(f"dimension {d} is not a multiple of num_factors={factors}")
        knots = KnotDriftSpec(factors, self.n_knots, d // factors)
        if self.family == "drift":
            return DriftFamily(knots)
        if self.family == "mixture":
            return MixtureFamily(knots)
        raise ValueError(f"unknown family {self.family!r}")

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        self.family_ = self._make_family(X.shape[1])
        presim = PresimSample(X, y)
        theta0 = self.theta0
        if theta0 is None and self.family == "mixture":
            theta0 = mixture_initial_guess(X, y, self.family_)
        config = LsqConfig(self.max_iter, self.tol, self.damping, self.target, self.target_value)
        self.result_ = optimize(presim, self.family_, config, theta0)
        self.theta_ = self.result_.theta_star
        self.density_ = self.result_.density
        self.converged_ = self.result_.converged
        self.n_iter_ = self.result_.iterations_used
        return self

    def fit_payoff(self, payoff, n_presim=500, seed=0, first_path=0, min_nonzero=0):
        """Presimulate ``n_presim`` paths of ``payoff`` and fit on them.

        ``min_nonzero`` extends the presample while it holds fewer non-zero
        payouts than that (see :func:`lsis.optimize.presimulate`).
        """
        presim = presimulate(payoff, n_presim, seed, first_path, min_nonzero)
        self.n_presim_ = len(presim)
        self.presim_nonzero_ = int(np.count_nonzero(presim.payouts))
        return self.fit(presim.draws, presim.payouts)

    def score_samples(self, X):
        """Log likelihood ratio ``log P(Z) / P_theta(Z)`` for each row."""
        check_is_fitted(self, "density_")
        X = check_array(X)
        return self.density_.log_weight(X)

    def transform(self, X):
        """Map N(0, I) innovations to draws from the fitted trial density."""
        check_is_fitted(self, "density_")
        X = check_array(X)
        if not hasattr(self.density_, "transform"):
            raise TypeError("mixture densities have no deterministic innovation map")
        return self.density_.transform(X)

    def sample(self, n_samples, seed=0, first_path=0):
        check_is_fitted(self, "density_")
        return self.density_.sample(seed, np.arange(first_path, first_path + n_samples))

    def estimate(self, payoff, n_paths, stream=0, num_strata=None):
        """Price ``payoff`` under the fitted density, optionally stratified."""
        check_is_fitted(self, "density_")
        if num_strata:
            return is_stratified_estimate(payoff, self.density_, n_paths, stream, num_strata)
        return is_estimate(payoff, self.density_, n_paths, stream)
