"""One-step lognormal options: the d = 1 validation tier."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

__all__ = ["CALL", "PUT", "BsParams", "BsPayoff", "bs_payout", "bs_closed_form", "ghs_drift", "golden_section_max"]

CALL = "call"
PUT = "put"


@dataclass(frozen=True)
class BsParams:
    spot: float
    strike: float
    rate: float
    volatility: float
    maturity: float

    def __post_init__(self):
        for name in ("spot", "strike", "volatility", "maturity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def terminal(self, z):
        s, r, v, t = self.spot, self.rate, self.volatility, self.maturity
        return s * np.exp((r - 0.5 * v * v) * t + v * np.sqrt(t) * np.asarray(z, dtype=float))


def _check_kind(kind):
    if kind not in (CALL, PUT):
        raise ValueError(f"option kind must be 'call' or 'put', got {kind!r}")


def bs_payout(params, z, kind=CALL):
    """Discounted payout as a function of the standard normal driver ``z``."""
    _check_kind(kind)
    intrinsic = params.terminal(z) - params.strike
    if kind == PUT:
        intrinsic = -intrinsic
    return np.exp(-params.rate * params.maturity) * np.maximum(intrinsic, 0.0)


def bs_closed_form(params, kind=CALL):
    _check_kind(kind)
    s, k, r, v, t = params.spot, params.strike, params.rate, params.volatility, params.maturity
    sd = v * np.sqrt(t)
    d1 = (np.log(s / k) + (r + 0.5 * v * v) * t) / sd
    d2 = d1 - sd
    if kind == CALL:
        return float(s * norm.cdf(d1) - k * np.exp(-r * t) * norm.cdf(d2))
    return float(k * np.exp(-r * t) * norm.cdf(-d2) - s * norm.cdf(-d1))


class BsPayoff:
    """Callable payoff on ``(n, 1)`` normal draws."""

    dimension = 1

    def __init__(self, params, kind=CALL):
        _check_kind(kind)
        self.params = params
        self.kind = kind

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return bs_payout(self.params, z.reshape(z.shape[0], -1)[:, 0] if z.ndim > 1 else z, self.kind)

    def __repr__(self):
        p = self.params
        return f"BsPayoff({self.kind}, sigma={p.volatility}, K={p.strike})"


_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f, a, b, tol=1e-8):
    """Maximiser of a unimodal ``f`` on ``[a, b]``."""
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def ghs_drift(params, kind=CALL, bracket=(-10.0, 10.0), tol=1e-8, grid=2001):
    """Saddle-point drift: the mode of ``G(z) * phi(z)``, i.e. argmax of ``log G(z) - z^2/2``.

    A coarse grid locates the best point where the payout is positive, then a
    golden-section search refines inside the neighbouring grid cells.
    """
    lo, hi = bracket

    def score(z):
        g = bs_payout(params, z, kind)
        with np.errstate(divide="ignore"):
            return np.where(g > 0, np.log(np.where(g > 0, g, 1.0)), -np.inf) - 0.5 * np.square(z)

    zs = np.linspace(lo, hi, grid)
    vals = score(zs)
    if not np.any(np.isfinite(vals)):
        raise ValueError("payout vanishes on the whole search bracket")
    k = int(np.argmax(vals))
    a = zs[max(k - 1, 0)]
    b = zs[min(k + 1, grid - 1)]
    # keep the search inside the region where log G is finite
    if not np.isfinite(vals[max(k - 1, 0)]):
        a = _boundary(score, zs[k - 1], zs[k], tol)
    if not np.isfinite(vals[min(k + 1, grid - 1)]):
        b = _boundary(score, zs[k + 1], zs[k], tol)
    return float(golden_section_max(lambda z: float(score(z)), a, b, tol))


def _boundary(score, outside, inside, tol):
    # bisection for the edge of the support, returned on the finite side
    while abs(inside - outside) > tol:
        mid = 0.5 * (inside + outside)
        if np.isfinite(score(mid)):
            inside = mid
        else:
            outside = mid
    return inside
