"""Discounted interest-rate payoffs on simulated Libor paths.

All functions accept a :class:`~lsis.lmm.RatePath` for one path or a batch and
return time-zero values under the rolling money-market numeraire.
"""

from dataclasses import dataclass

import numpy as np

from .lmm import LmmConfig, simulate

__all__ = [
    "Caplet",
    "Floorlet",
    "Cap",
    "Swaption",
    "Straddle",
    "LmmPayoff",
    "discount_factor",
    "caplet_payoff",
    "floorlet_payoff",
    "cap_payoff",
    "swaption_payoff",
    "straddle_payoff",
    "bond_prices",
    "swap_rate",
]


def _fixings(path, upto):
    fx = np.asarray(path.fixings, dtype=float)
    if fx.shape[-1] <= upto or np.any(np.isnan(fx[..., : upto + 1])):
        raise ValueError(f"fixings through index {upto} are not available")
    return fx


def discount_factor(path, m, start=0):
    """``prod_{i=start}^{m} 1 / (1 + h L_i(T_i))``; 1 for an empty product."""
    if m < start:
        return np.ones(np.shape(path.fixings)[:-1]) if np.ndim(path.fixings) > 1 else 1.0
    fx = _fixings(path, m)
    return np.prod(1.0 / (1.0 + path.tenor * fx[..., start: m + 1]), axis=-1)


def caplet_payoff(path, m, strike):
    fx = _fixings(path, m)
    return discount_factor(path, m) * path.tenor * np.maximum(fx[..., m] - strike, 0.0)


def floorlet_payoff(path, m, strike):
    fx = _fixings(path, m)
    return discount_factor(path, m) * path.tenor * np.maximum(strike - fx[..., m], 0.0)


def straddle_payoff(path, m, strike):
    fx = _fixings(path, m)
    return discount_factor(path, m) * path.tenor * np.abs(fx[..., m] - strike)


def cap_payoff(path, first, last, strike):
    if first > last:
        raise ValueError("cap needs first <= last")
    return sum(caplet_payoff(path, l, strike) for l in range(first, last + 1))


def bond_prices(path, n, final):
    """``B(T_n, T_i)`` for ``i = n+1..final`` from the curve observed at ``T_n``.

    The path horizon must be ``T_n`` so that ``path.terminal`` is that curve.
    """
    curve = np.asarray(path.terminal, dtype=float)[..., n:final]
    return np.cumprod(1.0 / (1.0 + path.tenor * curve), axis=-1)


def swap_rate(path, n, final):
    b = bond_prices(path, n, final)
    annuity = path.tenor * b.sum(axis=-1)
    return (1.0 - b[..., -1]) / annuity


def swaption_payoff(path, n, final, strike, discounted=True):
    """Payer swaption expiring at ``T_n`` on a swap paying at ``T_{n+1}..T_final``.

    The value at expiry is discounted to time zero with the realised
    money-market account; ``discounted=False`` returns the value at ``T_n``.
    """
    if not 0 < n < final:
        raise ValueError("swaption needs 0 < expiry index < final payment index")
    b = bond_prices(path, n, final)
    annuity = path.tenor * b.sum(axis=-1)
    s = (1.0 - b[..., -1]) / annuity
    value_at_expiry = annuity * np.maximum(s - strike, 0.0)
    if not discounted:
        return value_at_expiry
    return discount_factor(path, n - 1) * value_at_expiry


def _index(years, tenor):
    q = years / tenor
    k = int(round(q))
    if abs(q - k) > 1e-9:
        raise ValueError(f"{years} years is not a whole number of {tenor}-year periods")
    return k


@dataclass(frozen=True)
class _SingleFixing:
    m: int
    strike: float

    @classmethod
    def from_years(cls, maturity, strike, tenor=0.25):
        return cls(_index(maturity, tenor), strike)

    @property
    def horizon(self):
        return self.m

    @property
    def num_rates(self):
        return self.m + 1


@dataclass(frozen=True)
class Caplet(_SingleFixing):
    kind = "caplet"

    def payoff(self, path):
        return caplet_payoff(path, self.m, self.strike)


@dataclass(frozen=True)
class Floorlet(_SingleFixing):
    kind = "floorlet"

    def payoff(self, path):
        return floorlet_payoff(path, self.m, self.strike)


@dataclass(frozen=True)
class Straddle(_SingleFixing):
    kind = "straddle"

    def payoff(self, path):
        return straddle_payoff(path, self.m, self.strike)

    def legs(self):
        return Caplet(self.m, self.strike), Floorlet(self.m, self.strike)


@dataclass(frozen=True)
class Cap:
    first: int
    last: int
    strike: float

    kind = "cap"

    @classmethod
    def from_years(cls, first, last, strike, tenor=0.25):
        return cls(_index(first, tenor), _index(last, tenor), strike)

    @property
    def horizon(self):
        return self.last

    @property
    def num_rates(self):
        return self.last + 1

    def payoff(self, path):
        return cap_payoff(path, self.first, self.last, self.strike)


@dataclass(frozen=True)
class Swaption:
    expiry: int
    final: int
    strike: float
    discounted: bool = True

    kind = "swaption"

    @classmethod
    def from_years(cls, expiry, final, strike, tenor=0.25, discounted=True):
        return cls(_index(expiry, tenor), _index(final, tenor), strike, discounted)

    @property
    def horizon(self):
        return self.expiry

    @property
    def num_rates(self):
        return self.final

    def payoff(self, path):
        return swaption_payoff(path, self.expiry, self.final, self.strike, self.discounted)


class LmmPayoff:
    """``G(Z)``: simulate the LMM on normal draws and evaluate an instrument.

    Batches are processed in chunks of ``chunk`` paths to bound memory.
    """

    def __init__(self, instrument, model=None, chunk=8192):
        model = model or LmmConfig(num_periods=0)
        self.instrument = instrument
        self.config = model.with_horizon(instrument.horizon, instrument.num_rates)
        self.chunk = chunk

    @property
    def dimension(self):
        return self.config.dimension

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        z = np.atleast_2d(z)
        out = np.empty(z.shape[0])
        for s in range(0, z.shape[0], self.chunk):
            out[s:s + self.chunk] = self.instrument.payoff(simulate(self.config, z[s:s + self.chunk]))
        return out[0] if single else out

    def __repr__(self):
        return f"LmmPayoff({self.instrument!r})"
