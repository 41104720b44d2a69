"""Reproducible normal variates and stratified sampling.

Random numbers come from a vectorised Philox4x32-10 counter-based generator.
Every variate is addressed by ``(seed, path, draw, tag)``, so a path's numbers
do not depend on how a batch is split into chunks or across workers.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "RngStream",
    "StratificationPlan",
    "inverse_normal_cdf",
    "philox4x32",
    "path_uniforms",
    "path_normals",
    "sample_standard_normal",
    "stratified_normal_1d",
    "stratified_normal_directional",
    "stratified_normals_batch",
    "TAG_NORMAL",
    "TAG_STRATUM",
    "TAG_MIXTURE",
]

# Purpose tags keep the variates of one path used for different jobs independent.
TAG_NORMAL = 0
TAG_STRATUM = 1
TAG_MIXTURE = 2

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_CHUNK = 1 << 18


def philox4x32(c0, c1, c2, c3, key):
    """Philox4x32-10 block function on arrays of 32-bit counter words.

    ``key`` is a pair of 32-bit integers. Returns four uint64 arrays holding
    the 32-bit output words. Inputs are copied, never modified.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3)))
    c0, c1, c2, c3 = (np.array(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    p0 = np.empty_like(c0)
    p1 = np.empty_like(c0)
    for rnd in range(10):
        if rnd:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        np.multiply(c0, _M0, out=p0)
        np.multiply(c2, _M1, out=p1)
        np.right_shift(p1, _S32, out=c0)
        np.bitwise_xor(c0, c1, out=c0)
        np.bitwise_xor(c0, np.uint64(k0), out=c0)
        np.bitwise_and(p1, _LO32, out=c1)
        np.right_shift(p0, _S32, out=c2)
        np.bitwise_xor(c2, c3, out=c2)
        np.bitwise_xor(c2, np.uint64(k1), out=c2)
        np.bitwise_and(p0, _LO32, out=c3)
    return c0, c1, c2, c3


def _key(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def _to_unit(hi, lo):
    # 53-bit uniform strictly inside (0, 1)
    bits = ((hi >> np.uint64(5)) << np.uint64(26)) | (lo >> np.uint64(6))
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def path_uniforms(seed, paths, n, tag=TAG_NORMAL):
    """Uniforms in (0, 1) of shape ``(len(paths), n)``.

    Row ``p`` holds draws ``0..n-1`` of stream ``paths[p]``; each Philox block
    yields two uniforms.
    """
    paths = np.asarray(paths, dtype=np.uint64).ravel()
    if paths.size and int(paths.max()) >= 2**32:
        raise ValueError("stream_index must be below 2**32")
    key = _key(seed)
    n_blocks = (n + 1) // 2
    out = np.empty((paths.size, 2 * n_blocks), dtype=np.float64)
    flat = out.reshape(-1)
    total = paths.size * n_blocks
    blocks = np.arange(n_blocks, dtype=np.uint64)
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total), dtype=np.uint64)
        row = idx // np.uint64(max(n_blocks, 1))
        c0 = blocks[(idx - row * np.uint64(n_blocks)).astype(np.intp)]
        c1 = paths[row.astype(np.intp)]
        w0, w1, w2, w3 = philox4x32(c0, c1, np.uint64(tag), np.uint64(0), key)
        seg = flat[2 * start: 2 * (start + idx.size)].reshape(-1, 2)
        seg[:, 0] = _to_unit(w0, w1)
        seg[:, 1] = _to_unit(w2, w3)
    return out[:, :n]


def path_normals(seed, paths, d, tag=TAG_NORMAL):
    """Standard normals of shape ``(len(paths), d)`` by inversion of Philox uniforms."""
    return inverse_normal_cdf(path_uniforms(seed, paths, d, tag))


@dataclass(frozen=True)
class RngStream:
    """One reproducible variate stream; one stream per Monte Carlo path."""

    seed: int
    stream_index: int = 0

    def __post_init__(self):
        _key(self.seed)
        if not 0 <= int(self.stream_index) < 2**32:
            raise ValueError("stream_index must lie in [0, 2**32)")

    def uniforms(self, n, tag=TAG_NORMAL):
        return path_uniforms(self.seed, [self.stream_index], n, tag)[0]

    def normals(self, d, tag=TAG_NORMAL):
        return path_normals(self.seed, [self.stream_index], d, tag)[0]


def inverse_normal_cdf(u):
    """Standard normal quantile function.

    Thin wrapper over :func:`scipy.special.ndtri` (Cephes rational
    approximations, about 1e-15 absolute on [1e-12, 1 - 1e-12]) that rejects
    inputs outside the open interval (0, 1) with ValueError instead of
    returning infinities.
    """
    arr = np.asarray(u, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ValueError("inverse_normal_cdf requires 0 < u < 1")
    out = ndtri(arr)
    return float(out) if out.ndim == 0 else out


def sample_standard_normal(stream, d):
    """A ``d``-vector of i.i.d. N(0, 1) draws owned by ``stream``."""
    if d < 1:
        raise ValueError("dimension must be positive")
    return stream.normals(d)


def stratified_normal_1d(stream, M):
    """``M`` normals with the i-th confined to the i-th equal-probability stratum."""
    if M < 1:
        raise ValueError("number of strata must be positive")
    u = stream.uniforms(M, tag=TAG_STRATUM)
    v = (np.arange(M) + u) / M
    return inverse_normal_cdf(v)


@dataclass(frozen=True)
class StratificationPlan:
    """Stratify the projection ``direction . Z`` into ``num_strata`` strata."""

    direction: np.ndarray
    num_strata: int = 100
    samples_per_stratum: int = 1

    def __post_init__(self):
        xi = np.array(self.direction, dtype=np.float64).ravel()
        if xi.size == 0 or not np.all(np.isfinite(xi)):
            raise ValueError("direction must be a finite non-empty vector")
        if abs(np.linalg.norm(xi) - 1.0) > 1e-12:
            raise ValueError(f"direction must have unit norm, got {np.linalg.norm(xi):.15g}")
        if self.num_strata < 1 or self.samples_per_stratum < 1:
            raise ValueError("num_strata and samples_per_stratum must be positive")
        xi.setflags(write=False)
        object.__setattr__(self, "direction", xi)

    @classmethod
    def along(cls, vector, num_strata=100, samples_per_stratum=1):
        v = np.asarray(vector, dtype=np.float64).ravel()
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ValueError("cannot stratify along a zero vector")
        return cls(v / norm, num_strata, samples_per_stratum)

    @property
    def total_samples(self):
        return self.num_strata * self.samples_per_stratum

    @property
    def dimension(self):
        return self.direction.size

    def stratum_of(self, paths):
        return np.asarray(paths) // self.samples_per_stratum

    def projector(self):
        """The orthogonal projector ``I - xi xi^T`` onto the complement of ``direction``."""
        xi = self.direction
        return np.eye(xi.size) - np.outer(xi, xi)


def stratified_normals_batch(seed, plan, paths, offset=0):
    """Rows of a stratified N(0, I_d) sample for the given batch positions.

    Position ``p`` belongs to stratum ``p // samples_per_stratum`` and draws its
    variates from stream ``offset + p``. The projection on the plan direction
    is drawn inside that stratum; the orthogonal part is an unconditioned
    normal. A single stratum returns the raw normals unchanged.
    """
    paths = np.asarray(paths, dtype=np.int64).ravel()
    if paths.size and (paths.min() < 0 or paths.max() >= plan.total_samples):
        raise ValueError("path index outside the stratified batch")
    streams = paths + int(offset)
    y = path_normals(seed, streams, plan.dimension)
    if plan.num_strata == 1:
        return y
    u = path_uniforms(seed, streams, 1, tag=TAG_STRATUM)[:, 0]
    x = inverse_normal_cdf((plan.stratum_of(paths) + u) / plan.num_strata)
    xi = plan.direction
    # xi X + (I - xi xi^T) Y
    return y + np.outer(x - y @ xi, xi)


def stratified_normal_directional(stream, plan, d):
    """A full stratified batch of ``plan.total_samples`` vectors in R^d.

    The batch owns streams ``stream.stream_index + 0 .. total - 1``.
    """
    if plan.dimension != d:
        raise ValueError(f"plan direction has dimension {plan.dimension}, expected {d}")
    return stratified_normals_batch(stream.seed, plan, np.arange(plan.total_samples), stream.stream_index)
