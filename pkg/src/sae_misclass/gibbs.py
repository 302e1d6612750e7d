"""Full-conditional updates and the chain driver.

Each ``update_*`` function reads a :class:`ParamState` and returns a fresh
value for one block without mutating the state; :func:`sweep` applies them
in a fixed order. In NAIVE mode ``state.x`` holds ``z`` and ``state.w``
holds ``s``; in TRUE_X mode ``state.x`` holds the true categories. The
updates therefore never branch on the mode themselves.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ChainError, ConfigError, SAEError
from .model import Dataset, HyperParams, Mode, ParamState, log_complete_likelihood, ols_fit
from .rng import (
    RngStream,
    draw_categorical_from_log_weights,
    draw_dirichlet,
    draw_gamma,
    draw_mv_normal_from_precision,
)

log = logging.getLogger(__name__)

SWEEP_ORDER = ("x", "beta", "delta", "gamma", "w", "sigma2_e", "sigma2_u", "sigma2_s", "u", "P")


@dataclass(frozen=True)
class ChainConfig:
    n_iterations: int = 10_000
    burn_in: int | None = None
    thinning: int = 10
    seed: int = 0
    mode: Mode = Mode.PROPOSED
    keep_w: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.n_iterations // 2)
        if self.n_iterations < 1:
            raise ConfigError(f"n_iterations must be >= 1, got {self.n_iterations}")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ConfigError(f"burn_in must satisfy 0 <= burn_in < n_iterations, got {self.burn_in}")
        if self.thinning < 1:
            raise ConfigError(f"thinning must be >= 1, got {self.thinning}")

    @property
    def n_retained(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thinning


# -- residual helpers --------------------------------------------------------

def _partial(state: ParamState, data: Dataset, *, beta=True, delta=True, gamma=True, u=True) -> np.ndarray:
    """y minus the selected mean components."""
    r = np.array(data.y, dtype=float)
    if beta:
        r -= state.beta[state.x]
    if delta and data.p:
        r -= data.T @ state.delta
    if gamma and data.q:
        r -= state.w @ state.gamma
    if u:
        r -= state.u[data.area]
    return r


def _gaussian_regression_draw(design, resid, state, mu, s2, stream, block):
    Q = design.T @ design / state.sigma2_e + np.diag(1.0 / s2)
    b = design.T @ resid / state.sigma2_e + mu / s2
    return draw_mv_normal_from_precision(stream, Q, b, block=block)


# -- the ten full conditionals ----------------------------------------------

def update_x(state: ParamState, data: Dataset, hyper: HyperParams, stream: RngStream) -> np.ndarray:
    """Latent true categories, drawn independently per unit.

    Weight of category k for unit j: p[k, z_j] * N(y_j | beta_k + t'delta + w'gamma + u_i, s2_e).
    """
    r = _partial(state, data, beta=False)
    with np.errstate(divide="ignore"):
        log_w = np.log(state.P[:, data.z].T) - (r[:, None] - state.beta[None, :]) ** 2 / (2.0 * state.sigma2_e)
    return draw_categorical_from_log_weights(stream, log_w)


def update_beta(state: ParamState, data: Dataset, hyper: HyperParams, stream: RngStream) -> np.ndarray:
    K = data.K
    r = _partial(state, data, beta=False)
    counts = np.bincount(state.x, minlength=K).astype(float)
    sums = np.bincount(state.x, weights=r, minlength=K)
    # X'X is diagonal under the indicator coding
    Q = np.diag(counts / state.sigma2_e + 1.0 / hyper.sigma2_beta)
    b = sums / state.sigma2_e + hyper.mu_beta / hyper.sigma2_beta
    return draw_mv_normal_from_precision(stream, Q, b, block="beta")


def update_delta(state: ParamState, data: Dataset, hyper: HyperParams, stream: RngStream) -> np.ndarray:
    if data.p == 0:
        return state.delta.copy()
    r = _partial(state, data, delta=False)
    return _gaussian_regression_draw(data.T, r, state, hyper.mu_delta, hyper.sigma2_delta, stream, "delta")


def update_gamma(state: ParamState, data: Dataset, hyper: HyperParams, stream: RngStream) -> np.ndarray:
    if data.q == 0:
        return state.gamma.copy()
    r = _partial(state, data, gamma=False)
    return _gaussian_regression_draw(state.w, r, state, hyper.mu_gamma, hyper.sigma2_gamma, stream, "gamma")


def update_w(state: ParamState, data: Dataset, hyper: HyperParams, stream: RngStream) -> np.ndarray:
    """Latent continuous covariates, one q-variate Gaussian per unit.

    Product of N(y | ..+ w'gamma.., s2_e), N(s | w, s2_s I) and N(w | 0, s2_w I):
    precision gamma gamma'/s2_e + (1/s2_s + 1/s2_w) I, shared by all units;
    linear term gamma r/s2_e + s/s2_s with r the residual excluding w'gamma.
    """
    if data.q == 0:
        return state.w.copy()
    g = state.gamma
    Q = np.outer(g, g) / state.sigma2_e + np.eye(data.q) * (1.0 / state.sigma2_s + 1.0 / hyper.sigma2_w)
    r = _partial(state, data, gamma=False)
    b = r[:, None] * g[None, :] / state.sigma2_e + data.S / state.sigma2_s
    return draw_mv_normal_from_precision(stream, Q, b, block="w")


def update_sigma2_e(state: ParamState, data: Dataset, hyper: HyperParams, stream: RngStream) -> float:
    r = _partial(state, data)
    precision = draw_gamma(stream, hyper.a_e + data.N / 2.0, hyper.b_e + r @ r / 2.0)
    return 1.0 / precision


def update_sigma2_u(state: ParamState, data: Dataset, hyper: HyperParams, stream: RngStream) -> float:
    precision = draw_gamma(stream, hyper.a_u + state.u.size / 2.0, hyper.b_u + state.u @ state.u / 2.0)
    return 1.0 / precision


def update_sigma2_s(state: ParamState, data: Dataset, hyper: HyperParams, stream: RngStream) -> float:
    if data.q == 0:
        return state.sigma2_s
    d = data.S - state.w
    precision = draw_gamma(stream, hyper.a_s + data.N * data.q / 2.0, hyper.b_s + np.sum(d * d) / 2.0)
    return 1.0 / precision


def update_u(state: ParamState, data: Dataset, hyper: HyperParams, stream: RngStream) -> np.ndarray:
    r = _partial(state, data, u=False)
    sums = np.bincount(data.area, weights=r, minlength=data.m)
    prec = 1.0 / state.sigma2_u + data.n_i / state.sigma2_e
    mean = sums / state.sigma2_e / prec
    return mean + stream.generator.standard_normal(data.m) / np.sqrt(prec)


def transition_counts(x: np.ndarray, z: np.ndarray, K: int) -> np.ndarray:
    """counts[k', k] = number of units with true category k' observed as k."""
    return np.bincount(x * K + z, minlength=K * K).reshape(K, K).astype(float)


def update_P(state: ParamState, data: Dataset, hyper: HyperParams, stream: RngStream) -> np.ndarray:
    counts = transition_counts(state.x, data.z, data.K)
    post = hyper.alpha + counts
    return np.vstack([draw_dirichlet(stream, row) for row in post])


UPDATES = {
    "x": update_x,
    "beta": update_beta,
    "delta": update_delta,
    "gamma": update_gamma,
    "w": update_w,
    "sigma2_e": update_sigma2_e,
    "sigma2_u": update_sigma2_u,
    "sigma2_s": update_sigma2_s,
    "u": update_u,
    "P": update_P,
}


def active_blocks(mode: Mode, data: Dataset) -> tuple[str, ...]:
    skip = set()
    if not mode.categorical_latent:
        skip |= {"x", "P"}
    if not mode.continuous_latent or data.q == 0:
        skip |= {"w", "sigma2_s"}
    if data.p == 0:
        skip.add("delta")
    if data.q == 0:
        skip.add("gamma")
    return tuple(b for b in SWEEP_ORDER if b not in skip)


# -- initialization and driver -----------------------------------------------

def init_state(data: Dataset, hyper: HyperParams, mode: Mode, stream: RngStream | None = None) -> ParamState:
    """Deterministic starting point: x = z (or the truth), w = s, OLS coefficients.

    ``stream`` is accepted for interface symmetry with the updates; the
    starting point does not consume randomness.
    """
    mode = Mode.parse(mode)
    hyper.check_against(data)
    if mode is Mode.TRUE_X:
        if data.x_true is None:
            raise ConfigError("TRUE_X mode needs a dataset with true categories")
        x = np.array(data.x_true, dtype=np.int64)
    else:
        x = np.array(data.z, dtype=np.int64)
    w = np.array(data.S, dtype=float)
    K, p, q = data.K, data.p, data.q

    design = np.hstack([np.eye(K)[x], data.T, w])
    fit = None if np.var(data.y) == 0 else ols_fit(design, data.y)
    if fit is None:
        warnings.warn("initial least-squares fit is degenerate; starting coefficients at zero", RuntimeWarning)
        coef = np.zeros(K + p + q)
        sigma2_e = float(np.var(data.y)) if np.var(data.y) > 0 else 1.0
    else:
        coef, sigma2_e = fit
        if not sigma2_e > 0:
            sigma2_e = float(np.var(data.y)) if np.var(data.y) > 0 else 1.0
    P = hyper.alpha / hyper.alpha.sum(axis=1, keepdims=True)
    return ParamState(
        beta=coef[:K].copy(),
        delta=coef[K:K + p].copy(),
        gamma=coef[K + p:].copy(),
        sigma2_e=sigma2_e,
        sigma2_u=1.0,
        sigma2_s=1.0,
        u=np.zeros(data.m),
        P=P,
        x=x,
        w=w,
    )


def sweep(
    state: ParamState,
    data: Dataset,
    hyper: HyperParams,
    stream: RngStream,
    blocks: tuple[str, ...],
    iteration: int = 0,
) -> ParamState:
    """Apply one Gibbs cycle over ``blocks`` in place and return the state."""
    for name in blocks:
        try:
            setattr(state, name, UPDATES[name](state, data, hyper, stream))
        except (SAEError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise ChainError(iteration, name, exc) from exc
    return state


@dataclass
class ChainOutput:
    """Retained (post burn-in, thinned) draws stacked along axis 0."""

    mode: Mode
    config: ChainConfig
    beta: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    sigma2_e: np.ndarray
    sigma2_u: np.ndarray
    sigma2_s: np.ndarray
    u: np.ndarray
    P: np.ndarray
    x: np.ndarray
    w: np.ndarray | None
    area_freq: np.ndarray
    area_w_mean: np.ndarray
    loglik: np.ndarray
    area: np.ndarray = field(repr=False)

    @property
    def n_draws(self) -> int:
        return int(self.beta.shape[0])

    def state(self, d: int) -> ParamState:
        if self.w is None:
            raise ValueError("latent w was not kept for this chain")
        return ParamState(
            beta=self.beta[d].copy(), delta=self.delta[d].copy(), gamma=self.gamma[d].copy(),
            sigma2_e=float(self.sigma2_e[d]), sigma2_u=float(self.sigma2_u[d]), sigma2_s=float(self.sigma2_s[d]),
            u=self.u[d].copy(), P=self.P[d].copy(), x=self.x[d].astype(np.int64), w=self.w[d].copy(),
        )


def area_frequencies(x: np.ndarray, area: np.ndarray, m: int, K: int) -> np.ndarray:
    """(m, K) relative category frequencies within each area."""
    counts = np.bincount(area * K + x, minlength=m * K).reshape(m, K).astype(float)
    return counts / np.maximum(counts.sum(axis=1, keepdims=True), 1.0)


def area_means(v: np.ndarray, area: np.ndarray, m: int) -> np.ndarray:
    """(m, d) per-area column means of an (N, d) matrix."""
    n = np.bincount(area, minlength=m).astype(float)
    out = np.empty((m, v.shape[1]))
    for c in range(v.shape[1]):
        out[:, c] = np.bincount(area, weights=v[:, c], minlength=m)
    return out / np.maximum(n, 1.0)[:, None]


def run_chain(
    data: Dataset,
    hyper: HyperParams,
    config: ChainConfig,
    stream: RngStream | None = None,
    init: ParamState | None = None,
) -> ChainOutput:
    """Run one Gibbs chain and collect the retained draws.

    The stream defaults to ``RngStream(config.seed)``. Update failures are
    re-raised as :class:`ChainError` carrying the iteration and block.
    """
    mode = config.mode
    stream = RngStream(config.seed) if stream is None else stream
    state = init_state(data, hyper, mode, stream) if init is None else init.copy()
    blocks = active_blocks(mode, data)
    D = config.n_retained
    K, m, N = data.K, data.m, data.N
    xdtype = np.int8 if K <= 127 else np.int32
    out = {
        "beta": np.empty((D, K)), "delta": np.empty((D, data.p)), "gamma": np.empty((D, data.q)),
        "sigma2_e": np.empty(D), "sigma2_u": np.empty(D), "sigma2_s": np.empty(D),
        "u": np.empty((D, m)), "P": np.empty((D, K, K)), "x": np.empty((D, N), dtype=xdtype),
        "area_freq": np.empty((D, m, K)), "area_w_mean": np.empty((D, m, data.q)), "loglik": np.empty(D),
    }
    w_draws = np.empty((D, N, data.q)) if config.keep_w else None
    log.debug("chain start: mode=%s blocks=%s retained=%d", mode.value, blocks, D)

    d = 0
    for it in range(config.n_iterations):
        sweep(state, data, hyper, stream, blocks, iteration=it)
        done = it + 1
        if done > config.burn_in and (done - config.burn_in) % config.thinning == 0:
            for name in ("beta", "delta", "gamma", "sigma2_e", "sigma2_u", "sigma2_s", "u", "P", "x"):
                out[name][d] = getattr(state, name)
            out["area_freq"][d] = area_frequencies(state.x, data.area, m, K)
            out["area_w_mean"][d] = area_means(state.w, data.area, m)
            out["loglik"][d] = log_complete_likelihood(state, data, hyper)
            if w_draws is not None:
                w_draws[d] = state.w
            d += 1
    return ChainOutput(mode=mode, config=config, w=w_draws, area=data.area, **out)
