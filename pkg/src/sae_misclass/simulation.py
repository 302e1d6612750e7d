"""Simulation study: generate populations, perturb categories, fit the three
models and score them against the truth.

One population is generated per replicate and perturbed at every level in
``p_levels``. Every (replicate, level, model) fit gets its own child stream
keyed by position, so tables do not depend on how tasks are scheduled.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, SAEError, ScenarioAbortedError, UndefinedMetricError
from .gibbs import ChainConfig, area_frequencies, run_chain
from .model import Dataset, HyperParams, Mode, validate_dataset
from .predict import predict_area_means, recover_categories, summarize_rows
from .rng import RngStream

MODEL_ORDER = (Mode.TRUE_X, Mode.PROPOSED, Mode.NAIVE)
MODEL_LABEL = {Mode.TRUE_X: "True", Mode.PROPOSED: "Prop", Mode.NAIVE: "Naive"}
MAX_FAILURE_RATE = 0.05

TRUTH_NOTE = (
    "true area means use each replicate's true sample category shares and the true beta; "
    "predictions use per-draw area shares of each model's categories (latent x, true x, observed z)"
)


@dataclass(frozen=True)
class ScenarioConfig:
    m: int = 20
    n_range: tuple[int, int] = (3, 50)
    K: int = 3
    beta: tuple[float, ...] = (50.0, 5.0, -10.0)
    sigma2_e: float = 100.0
    sigma2_u: float = 16.0
    p_levels: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8)
    replicates: int = 50
    chain: ChainConfig = field(default_factory=lambda: ChainConfig(10_000, 5_000, 10))
    seed: int = 2024
    level: float = 0.95
    hyper: HyperParams | None = None
    models: tuple[Mode, ...] = MODEL_ORDER
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "p_levels", tuple(float(p) for p in self.p_levels))
        object.__setattr__(self, "models", tuple(Mode.parse(md) for md in self.models))
        if self.K < 2:
            raise ConfigError(f"K must be >= 2, got {self.K}")
        if len(self.beta) != self.K:
            raise ConfigError(f"beta has {len(self.beta)} entries but K = {self.K}")
        if self.replicates < 1 or self.m < 1:
            raise ConfigError("replicates and m must be >= 1")
        lo, hi = self.n_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"invalid n_range {self.n_range}")
        if any(not 0 < p <= 1 for p in self.p_levels):
            raise ConfigError(f"perturbation levels must lie in (0, 1], got {self.p_levels}")
        if self.sigma2_e < 0 or self.sigma2_u < 0:
            raise ConfigError("true variance components must be non-negative")

    @classmethod
    def desk(cls, **overrides) -> "ScenarioConfig":
        """Reduced configuration for routine testing: 10 replicates, short chains."""
        base = dict(replicates=10, chain=ChainConfig(2_000, 1_000, 5))
        base.update(overrides)
        return cls(**base)

    def hyperparams(self) -> HyperParams:
        return self.hyper if self.hyper is not None else HyperParams.default(self.K)


@dataclass
class SimulatedSample:
    data: Dataset  # z equals the true categories until perturbed
    u: np.ndarray
    theta: np.ndarray


def generate_population(config: ScenarioConfig, stream: RngStream) -> SimulatedSample:
    g = stream.generator
    lo, hi = config.n_range
    n_i = g.integers(lo, hi + 1, size=config.m)
    area = np.repeat(np.arange(config.m), n_i)
    N = int(n_i.sum())
    x = g.integers(0, config.K, size=N)
    u = g.standard_normal(config.m) * np.sqrt(config.sigma2_u)
    beta = np.asarray(config.beta)
    y = beta[x] + u[area] + g.standard_normal(N) * np.sqrt(config.sigma2_e)
    data = validate_dataset(y, area, x, config.K, x_true=x, area_labels=tuple(range(config.m)))
    theta = area_frequencies(x, area, config.m, config.K) @ beta
    return SimulatedSample(data=data, u=u, theta=theta)


def perturb_categories(x, p: float, K: int, stream: RngStream) -> np.ndarray:
    """Keep each category with probability ``p``; otherwise move it uniformly
    to one of the other K-1 categories."""
    x = np.asarray(x, dtype=np.int64)
    if not 0 < p <= 1:
        raise ConfigError(f"p must lie in (0, 1], got {p}")
    if K < 2:
        if p < 1:
            raise ConfigError("K = 1 leaves no other category to move to")
        return x.copy()
    g = stream.generator
    keep = g.random(x.shape) < p
    shift = g.integers(1, K, size=x.shape)
    return np.where(keep, x, (x + shift) % K)


def perturbation_matrix(p: float, K: int) -> np.ndarray:
    P = np.full((K, K), (1.0 - p) / (K - 1))
    np.fill_diagonal(P, p)
    return P


# -- metrics -----------------------------------------------------------------

def relative_bias(estimates, truth: float) -> float:
    if truth == 0:
        raise UndefinedMetricError("relative bias is undefined for a zero truth; report the absolute bias")
    e = np.asarray(estimates, dtype=float)
    return float(np.mean(e - truth) / truth)


def relative_mse(estimates, truth: float) -> float:
    if truth == 0:
        raise UndefinedMetricError("relative MSE is undefined for a zero truth; report the absolute MSE")
    e = np.asarray(estimates, dtype=float)
    return float(np.mean((e - truth) ** 2) / truth**2)


def relative_mse_varying(estimates, truths) -> float:
    """MSE scaled by the mean squared truth, for targets that change per replicate."""
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truths, dtype=float)
    denom = np.mean(t**2)
    if denom == 0:
        raise UndefinedMetricError("all truths are zero")
    return float(np.mean((e - t) ** 2) / denom)


def interval_coverage(intervals, truth) -> float:
    """Share of closed intervals [lo, hi] containing ``truth`` (scalar or one per interval)."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if iv.shape[0] == 0:
        raise ValueError("no intervals given")
    t = np.broadcast_to(np.asarray(truth, dtype=float), (iv.shape[0],))
    return float(np.mean((iv[:, 0] <= t) & (t <= iv[:, 1])))


# -- one replicate -----------------------------------------------------------


def _param_labels(K: int) -> list[str]:
    return [f"beta{k + 1}" for k in range(K)] + ["sigma2_e", "sigma2_u"]


def fit_and_score(data: Dataset, theta_true: np.ndarray, mode: Mode, config: ScenarioConfig, stream: RngStream) -> dict:
    """Fit one model and return its per-parameter and per-area summaries."""
    chain_cfg = replace(config.chain, mode=mode, keep_w=False)
    chain = run_chain(data, config.hyperparams(), chain_cfg, stream=stream)
    params = np.column_stack([chain.beta, chain.sigma2_e, chain.sigma2_u]).T
    ps = summarize_rows(params, config.level)
    pred = predict_area_means(chain, "latent")
    ts = summarize_rows(pred.draws, config.level)
    out = {
        "param_mean": ps["mean"], "param_lo": ps["lower"], "param_hi": ps["upper"],
        "theta_mean": ts["mean"], "theta_lo": ts["lower"], "theta_hi": ts["upper"],
        "theta_true": np.asarray(theta_true, dtype=float),
        "recovery": None,
    }
    if data.x_true is not None:
        out["recovery"] = recover_categories(chain, data.K).accuracy(data.x_true)
    return out


def _run_task(args) -> tuple:
    config, r, pi = args
    root = RngStream(config.seed)
    sample = generate_population(config, root.child(r, 0))
    p = config.p_levels[pi]
    z = perturb_categories(sample.data.x_true, p, config.K, root.child(r, 1, pi))
    data = sample.data.with_observed_categories(z)
    results = {}
    try:
        for mode in config.models:
            mi = MODEL_ORDER.index(mode)
            results[mode] = fit_and_score(data, sample.theta, mode, config, root.child(r, 2, pi, mi))
    except SAEError as exc:
        return (r, pi, None, f"{type(exc).__name__}: {exc}")
    return (r, pi, results, None)


@dataclass
class ScenarioResult:
    table1: list[dict]
    table2: list[dict]
    recovery: dict[float, float]
    failures: list[dict]
    metadata: dict
    raw: dict = field(repr=False, default_factory=dict)

    def row(self, p: float, parameter: str, model: str) -> dict:
        for r in self.table1:
            if r["p"] == p and r["parameter"] == parameter and r["model"] == model:
                return r
        raise KeyError((p, parameter, model))

    def area_rmse(self, p: float, model: str) -> float:
        v = [r["RMSEx100"] for r in self.table2 if r["p"] == p and r["model"] == model]
        return float(np.mean(v))

    def area_coverage(self, p: float, model: str) -> float:
        v = [r["coverage"] for r in self.table2 if r["p"] == p and r["model"] == model]
        return float(np.mean(v))


def run_scenario(config: ScenarioConfig, progress=None) -> ScenarioResult:
    """Run every (replicate, level) task and aggregate Table-1/Table-2 style metrics."""
    tasks = [(config, r, pi) for r in range(config.replicates) for pi in range(len(config.p_levels))]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_run_task, tasks))
    else:
        outcomes = []
        for i, t in enumerate(tasks):
            outcomes.append(_run_task(t))
            if progress is not None:
                progress(i + 1, len(tasks))

    failures = [
        {"replicate": r, "p": config.p_levels[pi], "error": err} for r, pi, res, err in outcomes if res is None
    ]
    for f in failures:
        warnings.warn(f"replicate {f['replicate']} at p={f['p']} failed and is excluded: {f['error']}", RuntimeWarning)
    if len(failures) > MAX_FAILURE_RATE * len(tasks):
        raise ScenarioAbortedError(f"{len(failures)} of {len(tasks)} replicate fits failed", failures)

    K = config.K
    truth = np.concatenate([np.asarray(config.beta), [config.sigma2_e, config.sigma2_u]])
    labels = _param_labels(K)
    table1, table2, recovery, raw = [], [], {}, {}
    for pi, p in enumerate(config.p_levels):
        done = [res for r, j, res, _ in outcomes if j == pi and res is not None]
        for mode in config.models:
            fits = [res[mode] for res in done]
            est = np.array([f["param_mean"] for f in fits])
            lo = np.array([f["param_lo"] for f in fits])
            hi = np.array([f["param_hi"] for f in fits])
            label = MODEL_LABEL[mode]
            for c, name in enumerate(labels):
                table1.append({
                    "p": p, "parameter": name, "model": label,
                    "Est": float(est[:, c].mean()),
                    "RB": relative_bias(est[:, c], truth[c]),
                    "RMSE": relative_mse(est[:, c], truth[c]),
                    "Cov": interval_coverage(np.column_stack([lo[:, c], hi[:, c]]), truth[c]),
                })
            th = np.array([f["theta_mean"] for f in fits])
            th_lo = np.array([f["theta_lo"] for f in fits])
            th_hi = np.array([f["theta_hi"] for f in fits])
            th_true = np.array([f["theta_true"] for f in fits])
            for i in range(config.m):
                table2.append({
                    "area": i + 1, "p": p, "model": label,
                    "RMSEx100": 100.0 * relative_mse_varying(th[:, i], th_true[:, i]),
                    "coverage": interval_coverage(np.column_stack([th_lo[:, i], th_hi[:, i]]), th_true[:, i]),
                })
            if mode is Mode.PROPOSED:
                recovery[p] = float(np.mean([f["recovery"] for f in fits]))
            raw[(p, label)] = fits
    metadata = {
        "truth_construction": TRUTH_NOTE,
        "theta_source": "latent",
        "n_tasks": len(tasks),
        "n_failed": len(failures),
        "level": config.level,
    }
    return ScenarioResult(table1, table2, recovery, failures, metadata, raw)
