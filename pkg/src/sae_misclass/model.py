"""Data, parameter and prior containers plus the complete-data likelihood.

Unit records are stored flat (one row per sampled unit) with an ``area``
index column, which keeps every Gibbs update a handful of vector operations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    CategoryDomainError,
    DatasetValidationError,
    ParameterDomainError,
    ShapeError,
)

LOG_2PI = math.log(2.0 * math.pi)


class Mode(enum.Enum):
    """Which model is fitted.

    PROPOSED treats the true category and the true continuous covariates as
    latent; NAIVE plugs in the observed ``z`` and ``s``; TRUE_X uses the true
    categories (simulation only) and the observed ``s``.
    """

    PROPOSED = "proposed"
    NAIVE = "naive"
    TRUE_X = "true"

    @property
    def categorical_latent(self) -> bool:
        return self is Mode.PROPOSED

    @property
    def continuous_latent(self) -> bool:
        return self is Mode.PROPOSED

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, Mode):
            return value
        key = str(value).strip().lower()
        aliases = {"prop": "proposed", "truex": "true", "true_x": "true"}
        return cls(aliases.get(key, key))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated unit-level sample, grouped into ``m`` areas.

    ``S`` holds the noisy continuous covariates centered by ``s_offset``;
    categories in ``z`` (and ``x_true`` when known) are coded 0..K-1.
    """

    y: np.ndarray
    T: np.ndarray
    S: np.ndarray
    z: np.ndarray
    area: np.ndarray
    K: int
    s_offset: np.ndarray
    area_labels: tuple
    x_true: np.ndarray | None = None
    category_labels: tuple | None = None
    t_names: tuple = ()
    s_names: tuple = ()
    n_i: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n_i", _readonly(np.bincount(self.area, minlength=self.m)))

    @property
    def N(self) -> int:
        return int(self.y.shape[0])

    @property
    def m(self) -> int:
        return len(self.area_labels)

    @property
    def p(self) -> int:
        return int(self.T.shape[1])

    @property
    def q(self) -> int:
        return int(self.S.shape[1])

    def with_true_categories(self, x_true) -> "Dataset":
        x_true = np.asarray(x_true, dtype=np.int64)
        if x_true.shape != self.z.shape:
            raise ShapeError(f"x_true has shape {x_true.shape}, expected {self.z.shape}")
        _check_categories(x_true, self.K)
        return replace(self, x_true=_readonly(x_true))

    def with_observed_categories(self, z) -> "Dataset":
        z = np.asarray(z, dtype=np.int64)
        if z.shape != self.z.shape:
            raise ShapeError(f"z has shape {z.shape}, expected {self.z.shape}")
        _check_categories(z, self.K)
        return replace(self, z=_readonly(z))

    def uncentered_S(self) -> np.ndarray:
        return self.S + self.s_offset


def _check_categories(x: np.ndarray, K: int) -> None:
    bad = np.flatnonzero((x < 0) | (x >= K))
    if bad.size:
        raise CategoryDomainError(f"categories must lie in 0..{K - 1}; offending units {bad[:10].tolist()}")


def _as_matrix(a, n: int, name: str) -> np.ndarray:
    if a is None:
        return np.zeros((n, 0))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] != n:
        raise ShapeError(f"{name} must have {n} rows, got shape {a.shape}")
    return a


def validate_dataset(
    y,
    area,
    z,
    K: int,
    t=None,
    s=None,
    *,
    x_true=None,
    area_labels=None,
    category_labels=None,
    t_names=(),
    s_names=(),
    center: bool = True,
) -> Dataset:
    """Check raw unit records and return a centered :class:`Dataset`.

    ``area`` may hold arbitrary hashable labels; they are mapped to 0..m-1 in
    sorted order unless ``area_labels`` fixes the order (and then every label
    must own at least one unit). ``z`` must already be coded 0..K-1.

    Every problem found is collected and raised together in a
    :class:`DatasetValidationError`; each entry is ``(kind, area, unit, message)``.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ShapeError(f"y must be one-dimensional, got shape {y.shape}")
    n = y.shape[0]
    area = np.asarray(area)
    z = np.asarray(z)
    if area.shape != (n,) or z.shape != (n,):
        raise ShapeError(f"area {area.shape} and z {z.shape} must both have length {n}")
    T = _as_matrix(t, n, "t")
    S = _as_matrix(s, n, "s")
    K = int(K)

    violations: list[tuple] = []
    if n == 0:
        violations.append(("empty", None, None, "dataset has no units"))
    if K < 1:
        violations.append(("category", None, None, f"K must be >= 1, got {K}"))

    if area_labels is None:
        labels, area_idx = np.unique(area, return_inverse=True)
        labels = tuple(labels.tolist())
    else:
        labels = tuple(area_labels)
        lookup = {lab: i for i, lab in enumerate(labels)}
        area_idx = np.empty(n, dtype=np.int64)
        for j, lab in enumerate(area.tolist()):
            if lab not in lookup:
                violations.append(("area", lab, j, f"unit {j}: unknown area label {lab!r}"))
                area_idx[j] = 0
            else:
                area_idx[j] = lookup[lab]
        counts = np.bincount(area_idx, minlength=len(labels)) if n else np.zeros(len(labels), int)
        for i in np.flatnonzero(counts == 0):
            violations.append(("empty_area", labels[i], None, f"area {labels[i]!r} has no units"))
    area_idx = np.asarray(area_idx, dtype=np.int64).reshape(n)

    def where(j):
        return labels[area_idx[j]] if labels else None

    z_num = np.asarray(z, dtype=float) if n else np.zeros(0)
    for j in range(n):
        zj = z_num[j]
        if not (math.isfinite(zj) and zj == int(zj) and 0 <= zj < K):
            violations.append(
                ("category", where(j), j, f"area {where(j)!r}, unit {j}: category {z[j]!r} outside 0..{K - 1}")
            )
    for name, arr in (("y", y[:, None]), ("t", T), ("s", S)):
        rows = np.flatnonzero(~np.isfinite(arr).all(axis=1))
        for j in rows:
            violations.append(("nonfinite", where(j), int(j), f"area {where(j)!r}, unit {j}: non-finite {name}"))
    if x_true is not None:
        x_arr = np.asarray(x_true)
        if x_arr.shape != (n,) or np.any((x_arr < 0) | (x_arr >= K)):
            violations.append(("category", None, None, "x_true must have one category in 0..K-1 per unit"))

    if violations:
        raise DatasetValidationError(violations)

    offset = S.mean(axis=0) if (center and S.shape[1]) else np.zeros(S.shape[1])
    return Dataset(
        y=_readonly(y.copy()),
        T=_readonly(T.copy()),
        S=_readonly(S - offset),
        z=_readonly(z_num.astype(np.int64)),
        area=_readonly(area_idx),
        K=K,
        s_offset=_readonly(np.asarray(offset, dtype=float)),
        area_labels=labels,
        x_true=None if x_true is None else _readonly(np.asarray(x_true, dtype=np.int64)),
        category_labels=None if category_labels is None else tuple(category_labels),
        t_names=tuple(t_names),
        s_names=tuple(s_names),
    )


def dirichlet_prior_pattern(K: int, diag: float = 0.5, near: float = 0.2, far: float | None = None) -> np.ndarray:
    """K x K Dirichlet parameters: ``diag`` on the diagonal, ``near`` on the
    first off-diagonals and ``far`` (default ``near``) everywhere else."""
    far = near if far is None else far
    idx = np.arange(K)
    gap = np.abs(idx[:, None] - idx[None, :])
    return np.where(gap == 0, diag, np.where(gap == 1, near, far)).astype(float)


@dataclass(frozen=True, eq=False)
class HyperParams:
    mu_beta: np.ndarray
    sigma2_beta: np.ndarray
    mu_delta: np.ndarray
    sigma2_delta: np.ndarray
    mu_gamma: np.ndarray
    sigma2_gamma: np.ndarray
    a_u: float
    b_u: float
    a_e: float
    b_e: float
    a_s: float
    b_s: float
    alpha: np.ndarray
    sigma2_w: float

    def __post_init__(self):
        for name in ("mu_beta", "sigma2_beta", "mu_delta", "sigma2_delta", "mu_gamma", "sigma2_gamma", "alpha"):
            object.__setattr__(self, name, _readonly(np.atleast_1d(np.asarray(getattr(self, name), dtype=float))))
        if self.alpha.ndim != 2 or self.alpha.shape != (self.K, self.K):
            raise ShapeError(f"alpha must be {self.K}x{self.K}, got {self.alpha.shape}")
        for mu, s2 in (("mu_beta", "sigma2_beta"), ("mu_delta", "sigma2_delta"), ("mu_gamma", "sigma2_gamma")):
            if getattr(self, mu).shape != getattr(self, s2).shape:
                raise ShapeError(f"{mu} and {s2} lengths differ")
        positives = {
            "sigma2_beta": self.sigma2_beta,
            "sigma2_delta": self.sigma2_delta,
            "sigma2_gamma": self.sigma2_gamma,
            "alpha": self.alpha,
            "gamma shape/rate": np.array([self.a_u, self.b_u, self.a_e, self.b_e, self.a_s, self.b_s]),
            "sigma2_w": np.array([self.sigma2_w]),
        }
        for name, v in positives.items():
            if not (np.all(np.isfinite(v)) and np.all(v > 0)):
                raise ParameterDomainError(f"{name} must be finite and strictly positive")

    @property
    def K(self) -> int:
        return int(self.mu_beta.shape[0])

    @property
    def p(self) -> int:
        return int(self.mu_delta.shape[0])

    @property
    def q(self) -> int:
        return int(self.mu_gamma.shape[0])

    @classmethod
    def default(
        cls,
        K: int,
        p: int = 0,
        q: int = 0,
        *,
        sigma2_w: float = 1.0,
        prior_variance: float = 1e6,
        gamma_ab: float = 0.001,
        alpha: np.ndarray | None = None,
    ) -> "HyperParams":
        """Zero prior means, diffuse normal priors, Gamma(0.001, 0.001)
        precisions and the diagonal-heavy Dirichlet pattern."""
        return cls(
            mu_beta=np.zeros(K),
            sigma2_beta=np.full(K, prior_variance),
            mu_delta=np.zeros(p),
            sigma2_delta=np.full(p, prior_variance),
            mu_gamma=np.zeros(q),
            sigma2_gamma=np.full(q, prior_variance),
            a_u=gamma_ab, b_u=gamma_ab, a_e=gamma_ab, b_e=gamma_ab, a_s=gamma_ab, b_s=gamma_ab,
            alpha=dirichlet_prior_pattern(K) if alpha is None else alpha,
            sigma2_w=sigma2_w,
        )

    def check_against(self, data: Dataset) -> None:
        if (self.K, self.p, self.q) != (data.K, data.p, data.q):
            raise ShapeError(
                f"hyperparameters sized (K={self.K}, p={self.p}, q={self.q}) "
                f"but data has (K={data.K}, p={data.p}, q={data.q})"
            )


def check_transition_matrix(P: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ShapeError(f"transition matrix must be square, got {P.shape}")
    if np.any(P < 0) or np.any(P > 1) or not np.allclose(P.sum(axis=1), 1.0, rtol=0, atol=tol):
        raise ParameterDomainError("transition matrix rows must be probability vectors")
    return P


@dataclass
class ParamState:
    """One Gibbs state. ``x`` is 0-based; ``w`` has shape (N, q)."""

    beta: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    sigma2_e: float
    sigma2_u: float
    sigma2_s: float
    u: np.ndarray
    P: np.ndarray
    x: np.ndarray
    w: np.ndarray

    def copy(self) -> "ParamState":
        return ParamState(
            beta=self.beta.copy(), delta=self.delta.copy(), gamma=self.gamma.copy(),
            sigma2_e=self.sigma2_e, sigma2_u=self.sigma2_u, sigma2_s=self.sigma2_s,
            u=self.u.copy(), P=self.P.copy(), x=self.x.copy(), w=self.w.copy(),
        )

    def check(self, K: int | None = None) -> None:
        if not (self.sigma2_e > 0 and self.sigma2_u > 0 and self.sigma2_s > 0):
            raise ParameterDomainError("variance components must be strictly positive")
        K = self.P.shape[0] if K is None else K
        check_transition_matrix(self.P)
        _check_categories(self.x, K)


def build_design_matrix(x, K: int) -> np.ndarray:
    """N x K indicator matrix of the categories (ANOVA coding, no intercept)."""
    x = np.asarray(x, dtype=np.int64)
    _check_categories(x, K)
    X = np.zeros((x.shape[0], K))
    X[np.arange(x.shape[0]), x] = 1.0
    return X


def linear_predictor(state: ParamState, data: Dataset, j: int) -> float:
    """theta_ij for unit ``j``: beta[x] + t'delta + w'gamma + u[area]."""
    t, w = data.T[j], state.w[j]
    if t.shape != state.delta.shape or w.shape != state.gamma.shape:
        raise ShapeError(
            f"unit {j}: t {t.shape} / w {w.shape} do not match delta {state.delta.shape} / gamma {state.gamma.shape}"
        )
    return float(state.beta[state.x[j]] + t @ state.delta + w @ state.gamma + state.u[data.area[j]])


def unit_means(state: ParamState, data: Dataset) -> np.ndarray:
    """Vectorized :func:`linear_predictor` over all units."""
    return state.beta[state.x] + data.T @ state.delta + state.w @ state.gamma + state.u[data.area]


def _gauss_logpdf_sum(resid: np.ndarray, var: float) -> float:
    if not var > 0:
        raise ParameterDomainError(f"variance must be > 0, got {var}")
    return float(-0.5 * (resid.size * (LOG_2PI + math.log(var)) + np.sum(resid**2) / var))


def log_complete_likelihood(state: ParamState, data: Dataset, hyper: HyperParams) -> float:
    """Complete-data log density of (y, s, z) and the latent (x, w, u).

    Per unit: log N(y | theta, s2_e) + log N(s | w, s2_s I) + log N(w | 0, s2_w I)
    + log p[x, z] - log K; plus log N(u_i | 0, s2_u) per area.
    """
    with np.errstate(divide="ignore"):
        log_p = np.log(state.P[state.x, data.z])
    total = _gauss_logpdf_sum(data.y - unit_means(state, data), state.sigma2_e)
    if data.q:
        total += _gauss_logpdf_sum(data.S - state.w, state.sigma2_s)
        total += _gauss_logpdf_sum(state.w, hyper.sigma2_w)
    total += float(np.sum(log_p)) - data.N * math.log(data.K)
    total += _gauss_logpdf_sum(state.u, state.sigma2_u)
    return total


def ols_fit(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float] | None:
    """Least-squares coefficients and residual variance, or None if X'X is singular."""
    if X.shape[1] == 0:
        return np.zeros(0), float(np.var(y)) if y.size > 1 else 0.0
    XtX = X.T @ X
    if np.linalg.matrix_rank(XtX) < X.shape[1]:
        return None
    coef = np.linalg.solve(XtX, X.T @ y)
    resid = y - X @ coef
    dof = max(y.size - X.shape[1], 1)
    return coef, float(resid @ resid / dof)


__all__ = [
    "Mode", "Dataset", "validate_dataset", "dirichlet_prior_pattern", "HyperParams",
    "check_transition_matrix", "ParamState", "build_design_matrix", "linear_predictor",
    "unit_means", "log_complete_likelihood", "ols_fit",
]
