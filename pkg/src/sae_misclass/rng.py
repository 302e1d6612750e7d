"""Seeded random-variate primitives used by every sampler update.

All randomness flows through :class:`RngStream`, a thin owner of a numpy
``Generator`` backed by PCG64 (a 64-bit permuted congruential generator).
Streams for parallel chains or replicates are derived with :meth:`RngStream.split`,
which uses ``SeedSequence.spawn`` so children never overlap.

Category indices are 0-based throughout the package; the 1..K coding only
appears at the CSV boundary.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateWeightsError, NumericalDomainError, ParameterDomainError


class RngStream:
    """Single-owner random stream. Never share one between concurrent tasks."""

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
            self.seed = int(seed.entropy) if isinstance(seed.entropy, int) else None
        else:
            seed = int(seed)
            if seed < 0 or seed >= 2**64:
                raise ParameterDomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
            self._seq = np.random.SeedSequence(seed)
            self.seed = seed
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def split(self, n: int) -> list["RngStream"]:
        """Spawn ``n`` statistically independent child streams."""
        return [RngStream(child) for child in self._seq.spawn(n)]

    def child(self, *key: int) -> "RngStream":
        """Child stream addressed by a tuple of non-negative ints.

        Unlike :meth:`split`, the result depends only on the parent seed and
        the key, not on how many children were spawned before.
        """
        seq = np.random.SeedSequence(
            self._seq.entropy, spawn_key=tuple(self._seq.spawn_key) + tuple(int(k) for k in key)
        )
        return RngStream(seq)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, spawn_key={self._seq.spawn_key})"


def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise ParameterDomainError(f"{name} must be finite and > 0, got {value}")
    return value


def draw_normal(stream: RngStream, mean: float, sd: float) -> float:
    sd = _check_positive("sd", sd)
    return float(mean + sd * stream.generator.standard_normal())


def draw_mv_normal_from_precision(
    stream: RngStream,
    precision: np.ndarray,
    linear_term: np.ndarray,
    block: str = "mv_normal",
) -> np.ndarray:
    """Draw from N(Q^{-1} b, Q^{-1}) given precision Q and linear term b.

    ``linear_term`` may be a vector of length d, or an (n, d) matrix, in which
    case n independent draws sharing the same precision are returned.
    The precision is factored once by Cholesky; nothing is inverted.
    """
    Q = np.asarray(precision, dtype=float)
    b = np.asarray(linear_term, dtype=float)
    d = Q.shape[0]
    if Q.ndim != 2 or Q.shape[1] != d or b.shape[-1] != d:
        raise NumericalDomainError(
            f"{block}: precision {Q.shape} does not match linear term {b.shape}", block
        )
    if not np.isfinite(Q).all() or np.abs(Q - Q.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(Q).max(initial=0.0)):
        raise NumericalDomainError(f"{block}: precision matrix is not finite and symmetric", block)
    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise NumericalDomainError(f"{block}: precision matrix is not positive definite", block) from exc
    rhs = b.T if b.ndim == 2 else b
    # x = L^{-T} (L^{-1} b + eps) has mean Q^{-1} b and covariance (L L')^{-1}
    eps = stream.generator.standard_normal(rhs.shape)
    half = solve_triangular(L, rhs, lower=True, check_finite=False)
    draw = solve_triangular(L.T, half + eps, lower=False, check_finite=False)
    return draw.T if b.ndim == 2 else draw


def draw_gamma(stream: RngStream, shape: float, rate: float) -> float:
    """Gamma variate in the shape-rate parameterization (mean shape/rate)."""
    shape = _check_positive("shape", shape)
    rate = _check_positive("rate", rate)
    return float(stream.generator.gamma(shape, 1.0 / rate))


def draw_dirichlet(stream: RngStream, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0 or not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise ParameterDomainError(f"Dirichlet alpha must be a vector of finite positive reals, got {alpha}")
    draw = stream.generator.dirichlet(alpha)
    # numpy's small-alpha path can leave a residue of a few ulps
    return draw / draw.sum()


def draw_categorical(stream: RngStream, weights) -> int:
    """Draw an index in 0..K-1 with probability proportional to ``weights``."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w < 0) or not w.sum() > 0:
        raise DegenerateWeightsError(f"categorical weights must be finite, >= 0 and not all zero: {w}")
    cdf = np.cumsum(w)
    u = stream.generator.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), w.size - 1))


def draw_categorical_from_log_weights(stream: RngStream, log_weights: np.ndarray) -> np.ndarray:
    """Row-wise categorical draws from an (n, K) matrix of unnormalized log weights.

    Rows are max-shifted before exponentiation; a degenerate row raises an
    error naming its index (the unit, when rows are units).
    """
    lw = np.asarray(log_weights, dtype=float)
    shift = lw.max(axis=1, keepdims=True)
    bad = ~np.isfinite(shift[:, 0]) | np.isnan(lw).any(axis=1)
    if bad.any():
        raise DegenerateWeightsError(f"degenerate categorical weights in rows {np.flatnonzero(bad).tolist()}")
    cdf = np.cumsum(np.exp(lw - shift), axis=1)
    u = stream.generator.random(lw.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, lw.shape[1] - 1)
