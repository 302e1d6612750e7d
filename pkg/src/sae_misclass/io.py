"""CSV ingestion and run artifacts.

Category codes are 1..K in every file (sorted distinct values of the input
column); internally they are 0..K-1. Output files are staged in memory and
written only after every file renders, then moved into place, so a failed run
leaves nothing behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetValidationError
from .gibbs import ChainOutput
from .model import Dataset, validate_dataset
from .predict import AreaPrediction, recover_categories, summarize_rows

ROLES = ("response", "area", "fixed", "noisy", "categorical", "true_category")


def parse_roles(spec: str | Mapping[str, str]) -> dict[str, str]:
    """``"y=response,area=area,s1=noisy"`` -> {column: role}."""
    if isinstance(spec, Mapping):
        items = list(spec.items())
    else:
        items = []
        for part in str(spec).split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise ConfigError(f"role entry {part!r} is not column=role")
            col, role = (s.strip() for s in part.split("=", 1))
            items.append((col, role))
    roles = {}
    for col, role in items:
        if role not in ROLES:
            raise ConfigError(f"unknown role {role!r} for column {col!r}; expected one of {ROLES}")
        roles[col] = role
    for needed in ("response", "area", "categorical"):
        if list(roles.values()).count(needed) != 1:
            raise ConfigError(f"exactly one column must have role {needed!r}")
    if list(roles.values()).count("true_category") > 1:
        raise ConfigError("at most one column may have role 'true_category'")
    return roles


def _natural_sorted(values) -> list[str]:
    vals = sorted(set(values))
    try:
        return sorted(vals, key=float)
    except ValueError:
        return vals


def _cell_float(value: str, row: int, col: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DatasetValidationError([("parse", None, row, f"row {row}, column {col!r}: cannot parse {value!r} as a number")])


@dataclass
class LoadedData:
    dataset: Dataset
    coding: list[tuple[int, str]]  # (code 1..K, original label)


def load_csv(path: str | os.PathLike, roles: str | Mapping[str, str]) -> LoadedData:
    """Read a header-row CSV and build a validated :class:`Dataset`."""
    roles = parse_roles(roles)
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"data file {str(path)!r} does not exist")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in roles if c not in header]
        if missing:
            raise ConfigError(f"columns {missing} not found in header {header}")
        rows = list(reader)

    by_role = {r: [c for c, rr in roles.items() if rr == r] for r in ROLES}
    ycol, acol, zcol = by_role["response"][0], by_role["area"][0], by_role["categorical"][0]
    xcol = by_role["true_category"][0] if by_role["true_category"] else None
    # data rows start at line 2 of the file
    y = [_cell_float(r[ycol], i + 2, ycol) for i, r in enumerate(rows)]
    t = [[_cell_float(r[c], i + 2, c) for c in by_role["fixed"]] for i, r in enumerate(rows)]
    s = [[_cell_float(r[c], i + 2, c) for c in by_role["noisy"]] for i, r in enumerate(rows)]
    z_raw = [r[zcol].strip() for r in rows]
    labels = _natural_sorted(z_raw + ([r[xcol].strip() for r in rows] if xcol else []))
    if len(labels) < 2:
        raise ConfigError(f"categorical column {zcol!r} has {len(labels)} distinct value(s); need K >= 2")
    code = {lab: k for k, lab in enumerate(labels)}
    areas_raw = [r[acol].strip() for r in rows]
    area_order = _natural_sorted(areas_raw)

    n = len(rows)
    data = validate_dataset(
        y,
        areas_raw,
        [code[v] for v in z_raw],
        len(labels),
        t=np.array(t, dtype=float).reshape(n, len(by_role["fixed"])),
        s=np.array(s, dtype=float).reshape(n, len(by_role["noisy"])),
        x_true=[code[r[xcol].strip()] for r in rows] if xcol else None,
        area_labels=tuple(area_order),
        category_labels=tuple(labels),
        t_names=tuple(by_role["fixed"]),
        s_names=tuple(by_role["noisy"]),
    )
    return LoadedData(data, [(k + 1, lab) for k, lab in enumerate(labels)])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def render_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def dataset_to_csv(data: Dataset) -> str:
    """Inverse of :func:`load_csv` with roles from :func:`dataset_roles`."""
    cat = data.category_labels or tuple(str(k + 1) for k in range(data.K))
    t_names = data.t_names or tuple(f"t{c + 1}" for c in range(data.p))
    s_names = data.s_names or tuple(f"s{c + 1}" for c in range(data.q))
    header = ["y", "area", *t_names, *s_names, "z"] + (["x_true"] if data.x_true is not None else [])
    S = data.uncentered_S()
    rows = []
    for j in range(data.N):
        row = [float(data.y[j]), data.area_labels[data.area[j]], *map(float, data.T[j]), *map(float, S[j]), cat[data.z[j]]]
        if data.x_true is not None:
            row.append(cat[data.x_true[j]])
        rows.append(row)
    return render_csv(header, rows)


def dataset_roles(data: Dataset) -> dict[str, str]:
    roles = {"y": "response", "area": "area", "z": "categorical"}
    roles.update({n: "fixed" for n in (data.t_names or [f"t{c + 1}" for c in range(data.p)])})
    roles.update({n: "noisy" for n in (data.s_names or [f"s{c + 1}" for c in range(data.q)])})
    if data.x_true is not None:
        roles["x_true"] = "true_category"
    return roles


# -- run artifacts ---------------------------------------------------------------

def preflight_output_dir(out_dir: str | os.PathLike) -> Path:
    """Create the directory if needed and prove it is writable, before any sampling."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {str(out)!r} is not writable: {exc}") from exc
    return out


def commit_files(out_dir: str | os.PathLike, files: Mapping[str, str]) -> list[Path]:
    """Write all files or none: stage as hidden temporaries, then rename."""
    out = Path(out_dir)
    staged = []
    try:
        for name, text in files.items():
            tmp = out / f".{name}.partial"
            with tmp.open("w", newline="") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
    except OSError:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)
    return [final for _, final in staged]


def manifest_text(command: str, config: Mapping, version: str) -> str:
    doc = {"program": "sae_misclass", "version": version, "command": command, "config": dict(config)}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def fit_files(
    data: Dataset,
    chain: ChainOutput,
    prediction: AreaPrediction,
    level: float,
    coding: list[tuple[int, str]] | None = None,
) -> dict[str, str]:
    """Render parameter, area-mean, P, recovery, trace and coding tables."""
    K = data.K
    names, rows = [], []
    names += [f"beta{k + 1}" for k in range(K)]
    rows.append(chain.beta.T)
    t_names = data.t_names or tuple(f"t{c + 1}" for c in range(data.p))
    s_names = data.s_names or tuple(f"s{c + 1}" for c in range(data.q))
    names += [f"delta_{n}" for n in t_names]
    rows.append(chain.delta.T)
    names += [f"gamma_{n}" for n in s_names]
    rows.append(chain.gamma.T)
    names += ["sigma2_e", "sigma2_u"]
    rows.append(np.vstack([chain.sigma2_e, chain.sigma2_u]))
    if chain.mode.continuous_latent and data.q:
        names.append("sigma2_s")
        rows.append(chain.sigma2_s[None, :])
    names += [f"u[{lab}]" for lab in data.area_labels]
    rows.append(chain.u.T)
    draws = np.vstack(rows)
    st = summarize_rows(draws, level)
    params = render_csv(
        ["parameter", "mean", "sd", "lower", "upper"],
        ((n, st["mean"][i], st["sd"][i], st["lower"][i], st["upper"][i]) for i, n in enumerate(names)),
    )

    a = summarize_rows(prediction.draws, level)
    au = summarize_rows(prediction.draws_with_u, level)
    areas = render_csv(
        ["area", "n", "mean", "sd", "lower", "upper", "mean_with_u", "sd_with_u", "lower_with_u", "upper_with_u", "source"],
        (
            (lab, int(data.n_i[i]), a["mean"][i], a["sd"][i], a["lower"][i], a["upper"][i],
             au["mean"][i], au["sd"][i], au["lower"][i], au["upper"][i], prediction.source)
            for i, lab in enumerate(data.area_labels)
        ),
    )

    P_mean, P_sd = chain.P.mean(axis=0), chain.P.std(axis=0, ddof=1) if chain.n_draws > 1 else np.zeros((K, K))
    P_csv = render_csv(
        ["true_category", "observed_category", "mean", "sd"],
        ((kp + 1, k + 1, P_mean[kp, k], P_sd[kp, k]) for kp in range(K) for k in range(K)),
    )
    trace = render_csv(["draw", "loglik"], ((d + 1, v) for d, v in enumerate(chain.loglik)))
    coding = coding or [(k + 1, lab) for k, lab in enumerate(data.category_labels or range(1, K + 1))]
    files = {
        "parameters.csv": params,
        "area_means.csv": areas,
        "P.csv": P_csv,
        "trace.csv": trace,
        "coding.csv": render_csv(["code", "label"], coding),
    }
    if chain.mode.categorical_latent:
        rec = recover_categories(chain, K)
        header = ["unit", "area", "observed", "modal"] + [f"prob{k + 1}" for k in range(K)]
        if data.x_true is not None:
            header.append("true")
        rows = []
        for j in range(data.N):
            row = [j + 1, data.area_labels[data.area[j]], int(data.z[j]) + 1, int(rec.mode[j]) + 1, *rec.probabilities[j]]
            if data.x_true is not None:
                row.append(int(data.x_true[j]) + 1)
            rows.append(row)
        files["recovery.csv"] = render_csv(header, rows)
    return files


def scenario_files(result) -> dict[str, str]:
    t1 = render_csv(
        ["p", "parameter", "model", "Est", "RB", "RMSE", "Cov"],
        ((r["p"], r["parameter"], r["model"], r["Est"], r["RB"], r["RMSE"], r["Cov"]) for r in result.table1),
    )
    t2 = render_csv(
        ["area", "p", "model", "RMSEx100", "coverage"],
        ((r["area"], r["p"], r["model"], r["RMSEx100"], r["coverage"]) for r in result.table2),
    )
    rec = render_csv(["p", "recovery"], sorted(result.recovery.items()))
    fails = render_csv(["replicate", "p", "error"], ((f["replicate"], f["p"], f["error"]) for f in result.failures))
    meta = json.dumps(result.metadata, indent=2, sort_keys=True) + "\n"
    return {"table1.csv": t1, "table2.csv": t2, "recovery.csv": rec, "failures.csv": fails, "metadata.json": meta}
