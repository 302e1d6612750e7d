"""Small-area mean prediction and posterior summaries from chain output."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyChainError, ParameterDomainError, ShapeError
from .gibbs import ChainOutput, area_frequencies, area_means
from .model import Dataset


@dataclass(frozen=True)
class AreaPopulationSummary:
    """Population quantities for one area: category shares ``F`` and the
    covariate means ``T_bar`` (error-free) and ``S_bar`` (centered, noisy)."""

    F: np.ndarray
    T_bar: np.ndarray
    S_bar: np.ndarray
    N: int | None = None

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        if np.any(F < 0) or abs(F.sum() - 1.0) > 1e-10:
            raise ParameterDomainError(f"F must be non-negative and sum to 1, got {F}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "T_bar", np.atleast_1d(np.asarray(self.T_bar, dtype=float)))
        object.__setattr__(self, "S_bar", np.atleast_1d(np.asarray(self.S_bar, dtype=float)))


def observed_area_summaries(data: Dataset) -> list[AreaPopulationSummary]:
    """Sample-based stand-ins for population quantities (observed z, t and s)."""
    F = area_frequencies(data.z, data.area, data.m, data.K)
    T_bar = area_means(np.asarray(data.T), data.area, data.m)
    S_bar = area_means(np.asarray(data.S), data.area, data.m)
    return [AreaPopulationSummary(F[i], T_bar[i], S_bar[i], int(data.n_i[i])) for i in range(data.m)]


@dataclass
class AreaPrediction:
    """Per-area draws of the small-area mean.

    ``draws`` follows the mean formula literally (no random effect);
    ``draws_with_u`` adds each draw's area effect. ``source`` records where the
    area frequencies and covariate means came from: ``"population"`` (supplied),
    ``"observed"`` (sample stand-ins) or ``"latent"`` (per-draw latent x and w).
    """

    draws: np.ndarray
    draws_with_u: np.ndarray
    source: str


def predict_area_means(
    chain: ChainOutput,
    targets: list[AreaPopulationSummary] | str,
    T_bar: np.ndarray | None = None,
) -> AreaPrediction:
    """theta_i = sum_k F_ik beta_k + T_bar_i' delta + S_bar_i' gamma for every retained draw.

    ``targets`` is either a list with one summary per area, or ``"latent"``,
    in which case F and S_bar are recomputed from each draw's latent x and w
    (``T_bar`` must then be given as an (m, p) array when p > 0).
    """
    if chain.n_draws == 0:
        raise EmptyChainError("chain has no retained draws")
    m = chain.u.shape[1]
    p = chain.delta.shape[1]
    if isinstance(targets, str):
        if targets != "latent":
            raise ConfigError(f"unknown target source {targets!r}")
        if p and T_bar is None:
            raise ConfigError("latent targets need T_bar when error-free covariates are present")
        T = np.zeros((m, 0)) if T_bar is None else np.asarray(T_bar, dtype=float).reshape(m, p)
        theta = (
            np.einsum("dik,dk->di", chain.area_freq, chain.beta)
            + (T @ chain.delta.T).T
            + np.einsum("diq,dq->di", chain.area_w_mean, chain.gamma)
        )
        source = "latent"
    else:
        if len(targets) != m:
            raise ConfigError(f"expected one target per area ({m}), got {len(targets)}")
        F = np.vstack([t.F for t in targets])
        T = np.vstack([t.T_bar for t in targets]) if p else np.zeros((m, 0))
        q = chain.gamma.shape[1]
        S = np.vstack([t.S_bar for t in targets]) if q else np.zeros((m, 0))
        if F.shape[1] != chain.beta.shape[1] or T.shape[1] != p or S.shape[1] != q:
            raise ShapeError("target dimensions do not match the chain's coefficient vectors")
        theta = (F @ chain.beta.T + T @ chain.delta.T + S @ chain.gamma.T).T
        source = "population"
    theta = np.ascontiguousarray(theta.T)
    return AreaPrediction(draws=theta, draws_with_u=theta + chain.u.T, source=source)


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    sd: float
    lower: float
    upper: float
    level: float


def summarize(draws, level: float = 0.95) -> PosteriorSummary:
    """Mean, sd (ddof=1) and equal-tailed interval.

    Interval endpoints are empirical quantiles with linear interpolation
    between order statistics (numpy's default, Hyndman-Fan type 7).
    """
    a = np.asarray(draws, dtype=float).ravel()
    if a.size == 0:
        raise EmptyChainError("cannot summarize an empty set of draws")
    if not 0 < level < 1:
        raise ParameterDomainError(f"level must lie in (0, 1), got {level}")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(a, [tail, 1.0 - tail])
    sd = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return PosteriorSummary(float(a.mean()), sd, float(lo), float(hi), level)


def summarize_rows(draws: np.ndarray, level: float = 0.95) -> dict[str, np.ndarray]:
    """Vectorized :func:`summarize` over the rows of a (targets, draws) matrix."""
    a = np.asarray(draws, dtype=float)
    if a.shape[-1] == 0:
        raise EmptyChainError("cannot summarize an empty set of draws")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(a, [tail, 1.0 - tail], axis=-1)
    sd = a.std(axis=-1, ddof=1) if a.shape[-1] > 1 else np.zeros(a.shape[:-1])
    return {"mean": a.mean(axis=-1), "sd": sd, "lower": lo, "upper": hi}


@dataclass
class CategoryRecovery:
    probabilities: np.ndarray  # (N, K)
    mode: np.ndarray  # (N,), ties go to the smallest index

    def accuracy(self, truth) -> float:
        return float(np.mean(self.mode == np.asarray(truth)))


def recover_categories(chain: ChainOutput, K: int | None = None) -> CategoryRecovery:
    """Posterior category shares per unit and the modal category."""
    if chain.n_draws == 0:
        raise EmptyChainError("chain has no retained draws")
    K = chain.beta.shape[1] if K is None else K
    x = chain.x.astype(np.int64)
    N = x.shape[1]
    counts = np.zeros((N, K))
    for k in range(K):
        counts[:, k] = (x == k).sum(axis=0)
    probs = counts / chain.n_draws
    return CategoryRecovery(probabilities=probs, mode=probs.argmax(axis=1))
