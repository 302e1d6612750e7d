"""Sampler-correctness checks: conjugacy oracles, the Geweke joint-distribution
test and exact enumeration of the latent-category posterior.

The reference moments here are computed from the model's closed forms with
dense inverses and explicit loops, deliberately not through the code paths
used by the updates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import gibbs
from .model import Dataset, HyperParams, Mode, ParamState, validate_dataset
from .rng import RngStream


@dataclass
class CheckResult:
    name: str
    passed: bool
    statistic: float
    threshold: float
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name}: {self.statistic:.4g} (threshold {self.threshold:g})"


# -- fixtures ------------------------------------------------------------------

def tiny_problem(K: int = 3, p: int = 2, q: int = 2) -> tuple[Dataset, HyperParams, ParamState]:
    """A fixed 6-unit, 2-area problem with every block non-trivial."""
    y = np.array([3.1, -0.4, 1.7, 2.2, 0.3, -1.5])
    area = np.array([0, 0, 0, 1, 1, 1])
    z = np.array([0, 1, 2, 0, 1, 2]) % K
    t = np.array([[1.0, 0.2], [0.5, -1.0], [-0.3, 0.7], [1.2, 0.1], [-0.8, 0.4], [0.1, -0.6]])[:, :p]
    s = np.array([[0.9, -0.2], [-0.4, 0.3], [0.2, 0.8], [-0.6, -0.5], [0.5, 0.1], [-0.6, -0.5]])[:, :q]
    data = validate_dataset(y, area, z, K, t=t, s=s)
    hyper = HyperParams(
        mu_beta=np.linspace(-0.5, 0.5, K), sigma2_beta=np.full(K, 2.0),
        mu_delta=np.full(p, 0.1), sigma2_delta=np.full(p, 1.5),
        mu_gamma=np.full(q, -0.2), sigma2_gamma=np.full(q, 0.8),
        a_u=2.0, b_u=1.5, a_e=3.0, b_e=2.0, a_s=2.5, b_s=0.7,
        alpha=np.full((K, K), 0.4) + np.eye(K) * 1.1,
        sigma2_w=0.9,
    )
    P = np.full((K, K), 0.2 / max(K - 1, 1)) + np.eye(K) * (0.8 - 0.2 / max(K - 1, 1))
    P = P / P.sum(axis=1, keepdims=True)
    state = ParamState(
        beta=np.linspace(1.5, -1.0, K), delta=np.array([0.4, -0.3])[:p], gamma=np.array([0.7, -0.5])[:q],
        sigma2_e=0.8, sigma2_u=0.6, sigma2_s=0.3, u=np.array([0.25, -0.4]), P=P,
        x=np.array([0, 1, 1, 2, 0, 2]) % K, w=data.S + np.array([0.1, -0.05])[:q],
    )
    return data, hyper, state


# -- closed-form conditional moments ---------------------------------------------

def _unit_residual(state, data, j, drop):
    r = data.y[j]
    if drop != "beta":
        r -= state.beta[state.x[j]]
    if drop != "delta":
        r -= sum(data.T[j, c] * state.delta[c] for c in range(data.p))
    if drop != "gamma":
        r -= sum(state.w[j, c] * state.gamma[c] for c in range(data.q))
    if drop != "u":
        r -= state.u[data.area[j]]
    return r


def _regression_oracle(design, resid, s2e, mu, s2):
    cov = np.linalg.inv(design.T @ design / s2e + np.diag(1.0 / s2))
    mean = cov @ (design.T @ resid / s2e + mu / s2)
    return mean, cov


def conditional_moments(block: str, state: ParamState, data: Dataset, hyper: HyperParams) -> dict:
    """Exact mean and variance (per scalar component) of one full conditional.

    Variance-component blocks are described through their precision, which
    is Gamma(shape, rate).
    """
    N, m, K = data.N, data.m, data.K
    if block == "x":
        probs = np.zeros((N, K))
        for j in range(N):
            r = _unit_residual(state, data, j, "beta")
            wts = [state.P[k, data.z[j]] * math.exp(-((r - state.beta[k]) ** 2) / (2 * state.sigma2_e)) for k in range(K)]
            probs[j] = np.array(wts) / sum(wts)
        return {"mean": probs.ravel(), "var": (probs * (1 - probs)).ravel()}
    if block in ("beta", "delta", "gamma"):
        design = {"beta": np.eye(K)[state.x], "delta": np.asarray(data.T), "gamma": state.w}[block]
        resid = np.array([_unit_residual(state, data, j, block) for j in range(N)])
        mu = getattr(hyper, f"mu_{block}")
        s2 = getattr(hyper, f"sigma2_{block}")
        mean, cov = _regression_oracle(design, resid, state.sigma2_e, mu, s2)
        return {"mean": mean, "var": np.diag(cov).copy()}
    if block == "w":
        g = state.gamma
        cov = np.linalg.inv(np.outer(g, g) / state.sigma2_e + np.eye(data.q) / state.sigma2_s + np.eye(data.q) / hyper.sigma2_w)
        means = []
        for j in range(N):
            r = _unit_residual(state, data, j, "gamma")
            means.append(cov @ (g * r / state.sigma2_e + data.S[j] / state.sigma2_s))
        return {"mean": np.concatenate(means), "var": np.tile(np.diag(cov), N)}
    if block in ("sigma2_e", "sigma2_u", "sigma2_s"):
        if block == "sigma2_e":
            shape = hyper.a_e + N / 2
            rate = hyper.b_e + sum(_unit_residual(state, data, j, None) ** 2 for j in range(N)) / 2
        elif block == "sigma2_u":
            shape = hyper.a_u + m / 2
            rate = hyper.b_u + sum(v * v for v in state.u) / 2
        else:
            shape = hyper.a_s + N * data.q / 2
            rate = hyper.b_s + float(np.sum((data.S - state.w) ** 2)) / 2
        return {"mean": np.array([shape / rate]), "var": np.array([shape / rate**2]), "precision": True}
    if block == "u":
        mean, var = np.zeros(m), np.zeros(m)
        for i in range(m):
            units = [j for j in range(N) if data.area[j] == i]
            prec = 1 / state.sigma2_u + len(units) / state.sigma2_e
            mean[i] = sum(_unit_residual(state, data, j, "u") for j in units) / state.sigma2_e / prec
            var[i] = 1 / prec
        return {"mean": mean, "var": var}
    if block == "P":
        a = hyper.alpha.copy()
        for j in range(N):
            a[state.x[j], data.z[j]] += 1
        a0 = a.sum(axis=1, keepdims=True)
        return {"mean": (a / a0).ravel(), "var": (a * (a0 - a) / (a0**2 * (a0 + 1))).ravel()}
    raise KeyError(block)


def _as_components(block: str, draws: list, K: int) -> np.ndarray:
    if block == "x":
        idx = np.asarray(draws)
        return (idx[:, :, None] == np.arange(K)).reshape(idx.shape[0], -1).astype(float)
    arr = np.asarray(draws, dtype=float)
    if block in ("sigma2_e", "sigma2_u", "sigma2_s"):
        arr = 1.0 / arr[:, None]
    return arr.reshape(arr.shape[0], -1)


def moment_z_scores(samples: np.ndarray, mean: np.ndarray, var: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """z-scores of the sample mean and sample variance against exact values."""
    n = samples.shape[0]
    m_hat = samples.mean(axis=0)
    v_hat = samples.var(axis=0)
    z_mean = (m_hat - mean) / np.sqrt(var / n)
    m4 = ((samples - m_hat) ** 4).mean(axis=0)
    se_var = np.sqrt(np.maximum(m4 - v_hat**2, 1e-300) / n)
    z_var = (v_hat - var) / se_var
    return z_mean, z_var


def conjugacy_check(block: str, n_rep: int = 100_000, seed: int = 11, z_max: float = 5.0, problem=None) -> CheckResult:
    data, hyper, state = tiny_problem() if problem is None else problem
    stream = RngStream(seed)
    update = gibbs.UPDATES[block]
    draws = [update(state, data, hyper, stream) for _ in range(n_rep)]
    samples = _as_components(block, draws, data.K)
    ref = conditional_moments(block, state, data, hyper)
    z_mean, z_var = moment_z_scores(samples, ref["mean"], ref["var"])
    if block == "x":
        # an indicator's variance p(1-p) is fixed by its mean, and its plug-in
        # standard error collapses for rare cells, so only the mean is scored
        keep = ref["var"] > 0
        z_mean, z_var = z_mean[keep], np.zeros(0)
    worst = float(max(np.abs(z_mean).max(), np.abs(z_var).max(initial=0.0)))
    return CheckResult(
        f"conjugacy[{block}]", worst < z_max, worst, z_max,
        {"z_mean": z_mean.tolist(), "z_var": z_var.tolist()},
    )


def conjugacy_suite(n_rep: int = 100_000, seed: int = 11, z_max: float = 5.0) -> list[CheckResult]:
    problem = tiny_problem()
    return [conjugacy_check(b, n_rep, seed + i, z_max, problem) for i, b in enumerate(gibbs.SWEEP_ORDER)]


# -- Geweke joint-distribution test ----------------------------------------------

def geweke_problem(p: int = 0, q: int = 0) -> tuple[Dataset, HyperParams]:
    """m = 3 areas of 2 units, K = 2, moderately informative proper priors."""
    area = np.repeat(np.arange(3), 2)
    N = area.size
    t = np.linspace(-1.0, 1.0, N)[:, None] * np.arange(1, p + 1)[None, :] if p else None
    data = validate_dataset(np.zeros(N), area, np.zeros(N, dtype=int), 2, t=t,
                            s=np.zeros((N, q)) if q else None, center=False)
    hyper = HyperParams(
        mu_beta=np.array([1.0, -1.0]), sigma2_beta=np.array([1.0, 1.0]),
        mu_delta=np.full(p, 0.5), sigma2_delta=np.full(p, 1.0),
        mu_gamma=np.full(q, 0.5), sigma2_gamma=np.full(q, 1.0),
        a_u=6.0, b_u=5.0, a_e=6.0, b_e=5.0, a_s=6.0, b_s=5.0,
        alpha=np.array([[3.0, 1.0], [1.0, 3.0]]),
        sigma2_w=1.0,
    )
    return data, hyper


def _prior_draw(data: Dataset, hyper: HyperParams, g: np.random.Generator) -> ParamState:
    K, m, N = data.K, data.m, data.N
    sigma2_u = 1.0 / g.gamma(hyper.a_u, 1.0 / hyper.b_u)
    return ParamState(
        beta=hyper.mu_beta + np.sqrt(hyper.sigma2_beta) * g.standard_normal(K),
        delta=hyper.mu_delta + np.sqrt(hyper.sigma2_delta) * g.standard_normal(data.p),
        gamma=hyper.mu_gamma + np.sqrt(hyper.sigma2_gamma) * g.standard_normal(data.q),
        sigma2_e=1.0 / g.gamma(hyper.a_e, 1.0 / hyper.b_e),
        sigma2_u=sigma2_u,
        sigma2_s=1.0 / g.gamma(hyper.a_s, 1.0 / hyper.b_s),
        u=np.sqrt(sigma2_u) * g.standard_normal(m),
        P=np.vstack([g.dirichlet(a) for a in hyper.alpha]),
        x=g.integers(0, K, N),
        w=np.sqrt(hyper.sigma2_w) * g.standard_normal((N, data.q)),
    )


def _data_draw(state: ParamState, data: Dataset, g: np.random.Generator) -> Dataset:
    N, K = data.N, data.K
    cdf = np.cumsum(state.P[state.x], axis=1)
    z = np.minimum((cdf < g.random(N)[:, None]).sum(axis=1), K - 1)
    mean = state.beta[state.x] + data.T @ state.delta + state.w @ state.gamma + state.u[data.area]
    y = mean + np.sqrt(state.sigma2_e) * g.standard_normal(N)
    S = state.w + np.sqrt(state.sigma2_s) * g.standard_normal((N, data.q))
    return replace(data, y=y, z=z, S=S)


def _test_functions(state: ParamState) -> dict[str, float]:
    base = {
        "beta1": state.beta[0], "beta2": state.beta[1], "sigma2_e": state.sigma2_e,
        "sigma2_u": state.sigma2_u, "u1": state.u[0],
    }
    if state.gamma.size:
        base["gamma1"] = state.gamma[0]
        base["sigma2_s"] = state.sigma2_s
    if state.delta.size:
        base["delta1"] = state.delta[0]
    out = {}
    for k, v in base.items():
        out[k] = float(v)
        out[k + "^2"] = float(v) ** 2
    return out


def _batch_mean_se(v: np.ndarray, n_batches: int) -> float:
    b = v[: (v.size // n_batches) * n_batches].reshape(n_batches, -1).mean(axis=1)
    return float(b.std(ddof=1) / math.sqrt(n_batches))


def geweke_test(
    n_samples: int = 10_000,
    seed: int = 7,
    z_max: float = 4.0,
    p: int = 0,
    q: int = 0,
    burn: int = 200,
    n_batches: int = 50,
) -> CheckResult:
    """Compare the prior-predictive (marginal-conditional) simulator with the
    alternating data/Gibbs (successive-conditional) simulator."""
    data, hyper = geweke_problem(p, q)
    root = RngStream(seed)
    g_mc = root.child(0).generator
    g_sc = root.child(1).generator
    sweep_stream = root.child(2)
    blocks = gibbs.active_blocks(Mode.PROPOSED, data)

    mc = [_test_functions(_prior_draw(data, hyper, g_mc)) for _ in range(n_samples)]

    state = _prior_draw(data, hyper, g_sc)
    d = _data_draw(state, data, g_sc)
    sc = []
    for it in range(burn + n_samples):
        gibbs.sweep(state, d, hyper, sweep_stream, blocks, iteration=it)
        d = _data_draw(state, d, g_sc)
        if it >= burn:
            sc.append(_test_functions(state))

    z = {}
    for name in mc[0]:
        a = np.array([r[name] for r in mc])
        b = np.array([r[name] for r in sc])
        se = math.sqrt(a.var(ddof=1) / a.size + _batch_mean_se(b, n_batches) ** 2)
        z[name] = float((a.mean() - b.mean()) / se)
    worst = max(abs(v) for v in z.values())
    suffix = f"(p={p}, q={q})" if (p or q) else ""
    return CheckResult(f"geweke{suffix}", worst < z_max, worst, z_max, {"z": z})


# -- exact enumeration ----------------------------------------------------------------

def enumeration_problem() -> tuple[Dataset, HyperParams, ParamState]:
    y = np.array([0.2, 1.1, 1.9, 0.8, 1.4, -0.3, 2.4, 1.0])
    area = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    z = np.array([0, 0, 1, 1, 0, 1, 1, 0])
    data = validate_dataset(y, area, z, 2)
    hyper = HyperParams.default(2, alpha=np.array([[2.0, 1.0], [1.0, 2.0]]))
    state = ParamState(
        beta=np.array([0.0, 2.0]), delta=np.zeros(0), gamma=np.zeros(0),
        sigma2_e=0.7, sigma2_u=1.0, sigma2_s=1.0, u=np.array([0.2, -0.1]),
        P=np.array([[0.7, 0.3], [0.3, 0.7]]), x=z.copy(), w=np.zeros((8, 0)),
    )
    return data, hyper, state


def enumerate_latent_posterior(data: Dataset, hyper: HyperParams, state: ParamState) -> np.ndarray:
    """P(x_j = k | y, z, frozen continuous parameters) with P integrated out,
    by summing over all K^N latent configurations."""
    N, K = data.N, data.K
    r = data.y - state.u[data.area]
    loglik = -((r[:, None] - state.beta[None, :]) ** 2) / (2 * state.sigma2_e)

    def log_beta_fn(a):
        return sum(math.lgamma(v) for v in a) - math.lgamma(sum(a))

    prior_norm = sum(log_beta_fn(row) for row in hyper.alpha)
    configs, logw = [], []
    for cfg in itertools.product(range(K), repeat=N):
        counts = hyper.alpha.copy()
        lw = 0.0
        for j, k in enumerate(cfg):
            counts[k, data.z[j]] += 1
            lw += loglik[j, k]
        lw += sum(log_beta_fn(row) for row in counts) - prior_norm
        configs.append(cfg)
        logw.append(lw)
    logw = np.array(logw)
    wts = np.exp(logw - logw.max())
    wts /= wts.sum()
    configs = np.array(configs)
    return np.stack([(wts[:, None] * (configs == k)).sum(axis=0) for k in range(K)], axis=1)


def latent_enumeration_check(n_sweeps: int = 200_000, seed: int = 5, tol: float = 0.01) -> CheckResult:
    """Gibbs over (x, P) with everything else frozen versus exact enumeration."""
    data, hyper, state = enumeration_problem()
    exact = enumerate_latent_posterior(data, hyper, state)
    stream = RngStream(seed)
    state = state.copy()
    tally = np.zeros((data.N, data.K))
    for it in range(n_sweeps):
        gibbs.sweep(state, data, hyper, stream, ("x", "P"), iteration=it)
        tally[np.arange(data.N), state.x] += 1
    est = tally / n_sweeps
    err = float(np.abs(est - exact).max())
    return CheckResult("latent-enumeration", err < tol, err, tol, {"exact": exact.tolist(), "gibbs": est.tolist()})


def run_all(size: str = "small") -> list[CheckResult]:
    """Everything ``validate`` runs. ``small`` shrinks repetition counts ten-fold."""
    scale = 10 if size == "small" else 1
    results = conjugacy_suite(n_rep=100_000 // scale)
    results.append(geweke_test(n_samples=10_000 // (2 if scale > 1 else 1)))
    results.append(geweke_test(n_samples=10_000 // (2 if scale > 1 else 1), p=1, q=1, seed=8))
    results.append(latent_enumeration_check(n_sweeps=200_000 // scale, tol=0.01 if scale == 1 else 0.03))
    return results
