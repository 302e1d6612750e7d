"""Command-line entry point: ``sae-misclass {fit,simulate,validate}``.

Settings resolve as defaults < config file < command-line flags. A config
file is either flat ``key = value`` text or a ``manifest.json`` from an
earlier run, so any run can be repeated from its manifest.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, SAEError
from .gibbs import ChainConfig, run_chain
from .io import (
    commit_files,
    fit_files,
    load_csv,
    manifest_text,
    preflight_output_dir,
    render_csv,
    scenario_files,
)
from .model import HyperParams, Mode, dirichlet_prior_pattern
from .predict import AreaPopulationSummary, observed_area_summaries, predict_area_means
from .simulation import ScenarioConfig, run_scenario

log = logging.getLogger("sae_misclass")

OUT_ENV = "SAE_MISCLASS_OUT"


@dataclass
class RunConfig:
    command: str
    out: str = ""
    seed: int = 2024
    level: float = 0.95
    iters: int = 10_000
    burn: int | None = None
    thin: int = 10
    mode: str = "proposed"
    prior_variance: float = 1e6
    gamma_ab: float = 0.001
    alpha_diag: float = 0.5
    alpha_near: float = 0.2
    alpha_far: float | None = None
    sigma2_w: float | None = None
    # fit
    data: str | None = None
    roles: str | None = None
    targets: str | None = None
    # simulate
    p_levels: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8)
    replicates: int = 50
    areas: int = 20
    K: int = 3
    beta: tuple[float, ...] = (50.0, 5.0, -10.0)
    true_sigma2_e: float = 100.0
    true_sigma2_u: float = 16.0
    n_min: int = 3
    n_max: int = 50
    workers: int = 1
    # validate
    size: str = "small"
    sources: dict = field(default_factory=dict, repr=False, compare=False)

    def to_manifest(self) -> dict:
        d = asdict(self)
        # the output location does not affect results; keep manifests relocatable
        d.pop("sources")
        d.pop("out")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def chain_config(self) -> ChainConfig:
        return ChainConfig(self.iters, self.burn, self.thin, self.seed, Mode.parse(self.mode))

    def hyperparams(self, K: int, p: int = 0, q: int = 0, sigma2_w: float = 1.0) -> HyperParams:
        return HyperParams.default(
            K, p, q,
            sigma2_w=sigma2_w if self.sigma2_w is None else self.sigma2_w,
            prior_variance=self.prior_variance,
            gamma_ab=self.gamma_ab,
            alpha=dirichlet_prior_pattern(K, self.alpha_diag, self.alpha_near, self.alpha_far),
        )


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _opt_float(text):
    return None if text in (None, "", "none", "None") else float(text)


def _opt_int(text):
    return None if text in (None, "", "none", "None") else int(text)


CONVERTERS = {
    "out": str, "seed": int, "level": float, "iters": int, "burn": _opt_int, "thin": int,
    "mode": str, "prior_variance": float, "gamma_ab": float, "alpha_diag": float, "alpha_near": float,
    "alpha_far": _opt_float, "sigma2_w": _opt_float, "data": str, "roles": str, "targets": str,
    "p_levels": _floats, "replicates": int, "areas": int, "K": int, "beta": _floats,
    "true_sigma2_e": float, "true_sigma2_u": float, "n_min": int, "n_max": int, "workers": int, "size": str,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sae-misclass", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config-file", default=S, help="key=value file or manifest.json")
        p.add_argument("--out", default=S, help=f"output directory (default ${OUT_ENV} or ./sae_out)")
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("-v", "--verbose", action="store_true", default=False)

    def chain(p):
        p.add_argument("--iters", type=int, default=S)
        p.add_argument("--burn", type=int, default=S)
        p.add_argument("--thin", type=int, default=S)
        p.add_argument("--level", type=float, default=S)
        p.add_argument("--prior-variance", dest="prior_variance", type=float, default=S)
        p.add_argument("--gamma-ab", dest="gamma_ab", type=float, default=S)
        p.add_argument("--alpha-diag", dest="alpha_diag", type=float, default=S)
        p.add_argument("--alpha-near", dest="alpha_near", type=float, default=S)
        p.add_argument("--alpha-far", dest="alpha_far", type=float, default=S)
        p.add_argument("--sigma2-w", dest="sigma2_w", type=float, default=S)

    fit = sub.add_parser("fit", help="fit a model to a CSV file")
    common(fit)
    chain(fit)
    fit.add_argument("--data", default=S)
    fit.add_argument("--roles", default=S, help="column=role,... with roles response, area, fixed, noisy, categorical")
    fit.add_argument("--mode", choices=["proposed", "naive", "true"], default=S,
                     help="true needs a column with role true_category")
    fit.add_argument("--targets", default=S, help="CSV of area population shares and covariate means")

    sim = sub.add_parser("simulate", help="run the simulation study")
    common(sim)
    chain(sim)
    sim.add_argument("--p-levels", dest="p_levels", type=_floats, default=S)
    sim.add_argument("--replicates", type=int, default=S)
    sim.add_argument("--areas", type=int, default=S)
    sim.add_argument("--K", type=int, default=S)
    sim.add_argument("--beta", type=_floats, default=S)
    sim.add_argument("--true-sigma2-e", dest="true_sigma2_e", type=float, default=S)
    sim.add_argument("--true-sigma2-u", dest="true_sigma2_u", type=float, default=S)
    sim.add_argument("--n-min", dest="n_min", type=int, default=S)
    sim.add_argument("--n-max", dest="n_max", type=int, default=S)
    sim.add_argument("--workers", type=int, default=S)
    sim.add_argument("--desk", action="store_true", default=S, help="10 replicates, 2000 iterations, burn 1000, thin 5")

    val = sub.add_parser("validate", help="run the sampler-correctness suite")
    common(val)
    val.add_argument("--config", dest="size", choices=["small", "full"], default=S)
    return parser


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {str(path)!r}: {exc}") from exc
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed manifest {str(path)!r}: {exc}") from exc
        values = doc.get("config", doc)
        return {k: v for k, v in values.items() if k != "command" and v is not None}
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {str(path)!r}: {exc}") from exc
    return {k.replace("-", "_"): v for k, v in cp["run"].items()}


def parse_config(argv: list[str] | None = None) -> RunConfig:
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    command = ns.pop("command")
    ns.pop("verbose", None)
    cfg = RunConfig(command=command)
    sources = {}

    if command == "simulate" and ns.pop("desk", False):
        cfg.replicates, cfg.iters, cfg.burn, cfg.thin = 10, 2_000, 1_000, 5
        sources.update(dict.fromkeys(("replicates", "iters", "burn", "thin"), "desk"))

    file_values = read_config_file(ns.pop("config_file")) if "config_file" in ns else {}
    for key, raw in file_values.items():
        if key not in CONVERTERS:
            raise ConfigError(f"unknown config key {key!r}")
        if key in ns:
            log.info("flag --%s overrides config file value %r", key.replace("_", "-"), raw)
            continue
        try:
            setattr(cfg, key, CONVERTERS[key](raw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: bad value {raw!r}") from exc
        sources[key] = "file"
    for key, value in ns.items():
        setattr(cfg, key, value)
        sources[key] = "flag"
    if not cfg.out:
        cfg.out = os.environ.get(OUT_ENV, "sae_out")
    cfg.sources = sources
    _check_domain(cfg)
    return cfg


def _check_domain(cfg: RunConfig) -> None:
    problems = []
    if cfg.iters < 1:
        problems.append("iters")
    if cfg.burn is not None and not 0 <= cfg.burn < cfg.iters:
        problems.append("burn")
    if cfg.thin < 1:
        problems.append("thin")
    if not 0 < cfg.level < 1:
        problems.append("level")
    if cfg.seed < 0:
        problems.append("seed")
    for key in ("prior_variance", "gamma_ab", "alpha_diag", "alpha_near"):
        if not getattr(cfg, key) > 0:
            problems.append(key)
    if cfg.alpha_far is not None and not cfg.alpha_far > 0:
        problems.append("alpha_far")
    if cfg.sigma2_w is not None and not cfg.sigma2_w > 0:
        problems.append("sigma2_w")
    try:
        Mode.parse(cfg.mode)
    except ValueError:
        problems.append("mode")
    if cfg.command == "fit":
        if not cfg.data:
            problems.append("data")
        if not cfg.roles:
            problems.append("roles")
    if problems:
        raise ConfigError("invalid value for: " + ", ".join(problems))


def load_targets(path: str, data) -> list[AreaPopulationSummary]:
    """Area population summaries from CSV columns area, F1..FK, then the t and s column names."""
    import csv

    with open(path, newline="") as fh:
        rows = {r["area"].strip(): r for r in csv.DictReader(fh)}
    out = []
    for lab in data.area_labels:
        if str(lab) not in rows:
            raise ConfigError(f"targets file has no row for area {lab!r}")
        r = rows[str(lab)]
        try:
            F = [float(r[f"F{k + 1}"]) for k in range(data.K)]
            T = [float(r[n]) for n in data.t_names]
            S = [float(r[n]) for n in data.s_names]
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"targets row for area {lab!r}: {exc}") from exc
        out.append(AreaPopulationSummary(F, T, np.asarray(S) - data.s_offset))
    return out


def cmd_fit(cfg: RunConfig) -> int:
    out = preflight_output_dir(cfg.out)
    loaded = load_csv(cfg.data, cfg.roles)
    data = loaded.dataset
    default_w = float(np.mean(np.var(data.S, axis=0, ddof=1))) if data.q and data.N > 1 else 1.0
    hyper = cfg.hyperparams(data.K, data.p, data.q, sigma2_w=default_w if default_w > 0 else 1.0)
    chain = run_chain(data, hyper, cfg.chain_config())
    if cfg.targets:
        pred = predict_area_means(chain, load_targets(cfg.targets, data))
    else:
        pred = predict_area_means(chain, observed_area_summaries(data))
        pred.source = "observed"
    files = fit_files(data, chain, pred, cfg.level, loaded.coding)
    files["manifest.json"] = manifest_text("fit", cfg.to_manifest(), __version__)
    commit_files(out, files)
    log.info("fit: %d units, %d areas, K=%d, %d retained draws -> %s", data.N, data.m, data.K, chain.n_draws, out)
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    out = preflight_output_dir(cfg.out)
    sc = ScenarioConfig(
        m=cfg.areas, n_range=(cfg.n_min, cfg.n_max), K=cfg.K, beta=cfg.beta,
        sigma2_e=cfg.true_sigma2_e, sigma2_u=cfg.true_sigma2_u, p_levels=cfg.p_levels,
        replicates=cfg.replicates, chain=ChainConfig(cfg.iters, cfg.burn, cfg.thin),
        seed=cfg.seed, level=cfg.level, hyper=cfg.hyperparams(cfg.K), workers=cfg.workers,
    )

    def progress(done, total):
        log.info("simulate: %d/%d tasks", done, total)

    result = run_scenario(sc, progress=progress)
    files = scenario_files(result)
    files["manifest.json"] = manifest_text("simulate", cfg.to_manifest(), __version__)
    commit_files(out, files)
    for p, rate in sorted(result.recovery.items()):
        log.info("p=%.2f recovery %.3f", p, rate)
    return 0


def cmd_validate(cfg: RunConfig) -> int:
    from .validation import run_all

    explicit_out = "out" in cfg.sources or os.environ.get(OUT_ENV)
    out = preflight_output_dir(cfg.out) if explicit_out else None
    results = run_all(cfg.size)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    if out is not None:
        files = {
            "validate.csv": render_csv(
                ["check", "passed", "statistic", "threshold"],
                ((r.name, r.passed, r.statistic, r.threshold) for r in results),
            ),
            "manifest.json": manifest_text("validate", cfg.to_manifest(), __version__),
        }
        commit_files(out, files)
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(argv)
        return {"fit": cmd_fit, "simulate": cmd_simulate, "validate": cmd_validate}[cfg.command](cfg)
    except (SAEError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
