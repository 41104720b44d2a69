"""Importance-sampling trial densities and their parameterisations.

A trial density exposes ``sample`` (draws under the trial law) and
``log_weight`` (log of the likelihood ratio original/trial). A *family* maps a
flat parameter vector ``theta`` to a density and back, which is what the
least-squares optimiser works with.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .sampling import TAG_MIXTURE, path_normals, path_uniforms

__all__ = [
    "KnotDriftSpec",
    "expand_knots",
    "knot_matrix",
    "ShiftedGaussian",
    "ShiftedScaledGaussian",
    "TwoModeMixture",
    "DriftFamily",
    "DriftVolFamily",
    "MixtureFamily",
    "sample",
    "log_weight",
]


@dataclass(frozen=True)
class KnotDriftSpec:
    """Piecewise-linear drift in time, one set of knots per random factor.

    Knots sit at equally spaced Euler-step indices, the first and last knot on
    the first and last step. A single knot gives a constant shift.
    """

    num_factors: int
    knots_per_factor: int
    num_steps: int
    knot_values: np.ndarray = None

    def __post_init__(self):
        if min(self.num_factors, self.knots_per_factor, self.num_steps) < 1:
            raise ValueError("num_factors, knots_per_factor and num_steps must be positive")
        if self.knots_per_factor > self.num_steps:
            raise ValueError(
                f"{self.knots_per_factor} knots cannot be placed on {self.num_steps} steps"
            )
        shape = (self.num_factors, self.knots_per_factor)
        vals = np.zeros(shape) if self.knot_values is None else np.array(self.knot_values, dtype=float)
        if vals.shape != shape:
            vals = vals.reshape(shape)
        object.__setattr__(self, "knot_values", vals)

    @property
    def dimension(self):
        return self.num_factors * self.num_steps

    @property
    def num_params(self):
        return self.num_factors * self.knots_per_factor

    def knot_positions(self):
        if self.knots_per_factor == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.num_steps - 1, self.knots_per_factor)

    def with_values(self, values):
        return KnotDriftSpec(self.num_factors, self.knots_per_factor, self.num_steps, values)


def knot_matrix(spec):
    """Linear map ``B`` (num_steps x knots) with per-factor drift ``B @ knots``."""
    steps = np.arange(spec.num_steps, dtype=float)
    if spec.knots_per_factor == 1:
        return np.ones((spec.num_steps, 1))
    pos = spec.knot_positions()
    eye = np.eye(spec.knots_per_factor)
    return np.column_stack([np.interp(steps, pos, eye[k]) for k in range(spec.knots_per_factor)])


def expand_knots(spec):
    """Full drift vector, laid out step-major: component ``n * N + j`` is factor j at step n."""
    per_factor = spec.knot_values @ knot_matrix(spec).T  # (N, num_steps)
    return per_factor.T.reshape(-1).copy()


def _as_2d(z, d):
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z2 = z.reshape(1, -1) if single else z
    if z2.shape[1] != d:
        raise ValueError(f"sample has dimension {z2.shape[1]}, density expects {d}")
    return z2, single


@dataclass(frozen=True)
class ShiftedGaussian:
    """N(drift, I_d)."""

    drift: np.ndarray

    def __post_init__(self):
        mu = np.array(self.drift, dtype=float).ravel()
        if mu.size == 0 or not np.all(np.isfinite(mu)):
            raise ValueError("drift must be a finite non-empty vector")
        mu.setflags(write=False)
        object.__setattr__(self, "drift", mu)

    @property
    def dimension(self):
        return self.drift.size

    def transform(self, y):
        return y + self.drift

    def sample(self, seed, paths):
        return self.transform(path_normals(seed, paths, self.dimension))

    def log_weight(self, z):
        z2, single = _as_2d(z, self.dimension)
        out = -z2 @ self.drift + 0.5 * (self.drift @ self.drift)
        return out[0] if single else out


@dataclass(frozen=True)
class ShiftedScaledGaussian:
    """N(mean, scale^2) in one dimension."""

    mean: float
    scale: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.scale)) or self.scale <= 0:
            raise ValueError("scale must be positive and both parameters finite")

    dimension = 1

    def transform(self, y):
        return self.mean + self.scale * y

    def sample(self, seed, paths):
        return self.transform(path_normals(seed, paths, 1))

    def log_weight(self, z):
        z2, single = _as_2d(z, 1)
        x = z2[:, 0]
        out = np.log(self.scale) - 0.5 * x * x + 0.5 * ((x - self.mean) / self.scale) ** 2
        return out[0] if single else out


@dataclass(frozen=True)
class TwoModeMixture:
    """w_a N(drift_a, I) + (1 - w_a) N(drift_b, I)."""

    drift_a: np.ndarray
    drift_b: np.ndarray
    weight_a: float

    def __post_init__(self):
        a = np.array(self.drift_a, dtype=float).ravel()
        b = np.array(self.drift_b, dtype=float).ravel()
        if a.shape != b.shape or a.size == 0:
            raise ValueError("mixture modes must have the same non-zero dimension")
        if not 0.0 < self.weight_a < 1.0:
            raise ValueError("weight_a must lie strictly between 0 and 1")
        for v in (a, b):
            v.setflags(write=False)
        object.__setattr__(self, "drift_a", a)
        object.__setattr__(self, "drift_b", b)

    @property
    def dimension(self):
        return self.drift_a.size

    @property
    def weight_b(self):
        return 1.0 - self.weight_a

    def sample(self, seed, paths):
        y = path_normals(seed, paths, self.dimension)
        pick_a = path_uniforms(seed, paths, 1, tag=TAG_MIXTURE)[:, 0] < self.weight_a
        return y + np.where(pick_a[:, None], self.drift_a, self.drift_b)

    def log_weight(self, z):
        z2, single = _as_2d(z, self.dimension)
        la = np.log(self.weight_a) + z2 @ self.drift_a - 0.5 * (self.drift_a @ self.drift_a)
        lb = np.log(self.weight_b) + z2 @ self.drift_b - 0.5 * (self.drift_b @ self.drift_b)
        out = -np.logaddexp(la, lb)
        return out[0] if single else out


def sample(density, seed, paths):
    """Draws from ``density`` for the given global path indices (rows)."""
    return density.sample(seed, np.atleast_1d(paths))


def log_weight(density, z):
    return density.log_weight(z)


class DriftFamily:
    """Shifted Gaussians whose drift is a knot-parameterised vector.

    ``DriftFamily.constant(d)`` is the d-dimensional fully free shift.
    """

    def __init__(self, knots):
        self.knots = knots
        self._basis = knot_matrix(knots)

    @classmethod
    def constant(cls, d=1):
        return cls(KnotDriftSpec(num_factors=d, knots_per_factor=1, num_steps=1))

    @property
    def num_params(self):
        return self.knots.num_params

    @property
    def dimension(self):
        return self.knots.dimension

    def drift(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(self.knots.num_factors, -1)
        return (theta @ self._basis.T).T.reshape(-1)

    def decode(self, theta):
        return ShiftedGaussian(self.drift(theta))

    def encode(self, density):
        # least-squares projection, exact for drifts inside the family
        per_factor = density.drift.reshape(self.knots.num_steps, self.knots.num_factors).T
        coef, *_ = np.linalg.lstsq(self._basis, per_factor.T, rcond=None)
        return coef.T.reshape(-1)

    def zeros(self):
        return np.zeros(self.num_params)

    def log_weight(self, theta, z):
        mu = self.drift(theta)
        return -z @ mu + 0.5 * (mu @ mu)


class DriftVolFamily:
    """One-dimensional N(mean, scale^2), parameterised by ``(mean, log scale)``."""

    num_params = 2
    dimension = 1

    def decode(self, theta):
        return ShiftedScaledGaussian(float(theta[0]), float(np.exp(theta[1])))

    def encode(self, density):
        return np.array([density.mean, np.log(density.scale)])

    def zeros(self):
        return np.zeros(2)

    def log_weight(self, theta, z):
        return self.decode(theta).log_weight(z)


class MixtureFamily:
    """Two-mode mixtures, each mode knot-parameterised, weight through a logistic map.

    ``theta = (knots_a, knots_b, logit(w_a))``.
    """

    def __init__(self, knots):
        self.modes = DriftFamily(knots)

    @property
    def num_params(self):
        return 2 * self.modes.num_params + 1

    @property
    def dimension(self):
        return self.modes.dimension

    def _split(self, theta):
        k = self.modes.num_params
        theta = np.asarray(theta, dtype=float)
        return theta[:k], theta[k:2 * k], theta[2 * k]

    def decode(self, theta):
        a, b, w = self._split(theta)
        # keep w_a representable strictly inside (0, 1)
        w = float(np.clip(w, -30.0, 30.0))
        return TwoModeMixture(self.modes.drift(a), self.modes.drift(b), float(expit(w)))

    def encode(self, density):
        a = self.modes.encode(ShiftedGaussian(density.drift_a))
        b = self.modes.encode(ShiftedGaussian(density.drift_b))
        return np.concatenate([a, b, [logit(density.weight_a)]])

    def zeros(self):
        return np.zeros(self.num_params)

    def log_weight(self, theta, z):
        return self.decode(theta).log_weight(z)
