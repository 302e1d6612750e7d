import csv
import json
import logging

import numpy as np
import pytest

from sae_misclass import cli
from sae_misclass.errors import ConfigError, DatasetValidationError
from sae_misclass.io import (
    commit_files,
    dataset_roles,
    dataset_to_csv,
    load_csv,
    parse_roles,
    preflight_output_dir,
)
from sae_misclass.model import validate_dataset

QUINTILES = ["poorest", "poorer", "middle", "richer", "richest"]


def write_toy(path, n=60, seed=0, labels=("1", "2", "3")):
    g = np.random.default_rng(seed)
    K = len(labels)
    x = g.integers(0, K, n)
    area = g.integers(0, 5, n)
    area[:5] = np.arange(5)
    age = g.normal(30, 5, n)
    educ = g.normal(8, 2, n)
    y = np.linspace(10, -10, K)[x] + 0.3 * (age - 30) + g.normal(size=n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "region", "age", "educ", "wealth"])
        for j in range(n):
            w.writerow([y[j], f"r{area[j]}", age[j], educ[j], labels[x[j]]])
    return path


ROLES = "y=response,region=area,age=fixed,educ=noisy,wealth=categorical"


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestRoles:
    def test_parse(self):
        assert parse_roles("y=response, a=area ,z=categorical") == {"y": "response", "a": "area", "z": "categorical"}

    @pytest.mark.parametrize("spec", ["y=response,a=area", "y=response,a=area,z=categorical,w=bogus",
                                      "y=response,a=area,z=categorical,q", "y=response,y2=response,a=area,z=categorical"])
    def test_invalid(self, spec):
        with pytest.raises(ConfigError):
            parse_roles(spec)


class TestLoadCsv:
    def test_three_row_toy(self, tmp_path):
        p = tmp_path / "toy.csv"
        p.write_text("y,area,z\n1.0,north,a\n2.0,south,b\n3.5,north,a\n")
        loaded = load_csv(p, "y=response,area=area,z=categorical")
        d = loaded.dataset
        assert d.m == 2 and d.N == 3 and d.K == 2
        assert d.area_labels == ("north", "south")
        assert loaded.coding == [(1, "a"), (2, "b")]

    def test_bad_cell_names_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("y,area,z\n1.0,a,1\nabc,a,2\n")
        with pytest.raises(DatasetValidationError, match="row 3, column 'y'"):
            load_csv(p, "y=response,area=area,z=categorical")

    def test_missing_column(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("y,area\n1.0,a\n")
        with pytest.raises(ConfigError, match="not found"):
            load_csv(p, "y=response,area=area,z=categorical")

    def test_single_category(self, tmp_path):
        p = tmp_path / "k1.csv"
        p.write_text("y,area,z\n1.0,a,1\n2.0,b,1\n")
        with pytest.raises(ConfigError, match="K >= 2"):
            load_csv(p, "y=response,area=area,z=categorical")

    def test_five_level_coding(self, tmp_path):
        p = write_toy(tmp_path / "w.csv", labels=tuple(QUINTILES))
        loaded = load_csv(p, ROLES)
        assert loaded.dataset.K == 5
        assert [c for c, _ in loaded.coding] == [1, 2, 3, 4, 5]
        assert sorted(lab for _, lab in loaded.coding) == sorted(QUINTILES)

    def test_numeric_codes_sort_numerically(self, tmp_path):
        p = tmp_path / "n.csv"
        p.write_text("y,area,z\n1,a,10\n2,a,2\n3,b,1\n")
        assert [lab for _, lab in load_csv(p, "y=response,area=area,z=categorical").coding] == ["1", "2", "10"]

    def test_round_trip(self, tmp_path):
        g = np.random.default_rng(1)
        N = 25
        d = validate_dataset(g.normal(size=N), g.integers(0, 4, N), g.integers(0, 3, N), 3,
                             t=g.normal(size=(N, 2)), s=g.normal(3.0, 1.0, size=(N, 1)),
                             x_true=g.integers(0, 3, N))
        p = tmp_path / "rt.csv"
        p.write_text(dataset_to_csv(d))
        back = load_csv(p, dataset_roles(d)).dataset
        assert np.array_equal(back.y, d.y) and np.array_equal(back.T, d.T)
        assert np.allclose(back.S, d.S, atol=1e-12) and np.allclose(back.s_offset, d.s_offset, atol=1e-12)
        assert np.array_equal(back.z, d.z) and np.array_equal(back.x_true, d.x_true)
        assert np.array_equal(back.area, d.area) and back.m == d.m


class TestArtifacts:
    def test_preflight_rejects_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            preflight_output_dir(blocker / "sub")

    def test_commit_leaves_no_partials(self, tmp_path):
        commit_files(tmp_path, {"a.csv": "1\n", "b.csv": "2\n"})
        assert sorted(p.name for p in tmp_path.iterdir()) == ["a.csv", "b.csv"]


class TestParseConfig:
    def test_simulate_defaults(self, monkeypatch):
        monkeypatch.delenv(cli.OUT_ENV, raising=False)
        cfg = cli.parse_config(["simulate"])
        assert (cfg.iters, cfg.burn, cfg.thin, cfg.replicates, cfg.areas) == (10_000, None, 10, 50, 20)
        assert cfg.gamma_ab == 0.001 and (cfg.alpha_diag, cfg.alpha_near) == (0.5, 0.2)
        assert cfg.p_levels == (0.5, 0.6, 0.7, 0.8) and cfg.out == "sae_out"
        assert cfg.chain_config().burn_in == 5_000

    def test_thin_flag(self):
        assert cli.parse_config(["simulate", "--thin", "1"]).thin == 1

    def test_flag_beats_file(self, tmp_path, caplog):
        f = tmp_path / "run.cfg"
        f.write_text("thin = 4\nreplicates = 7  # fewer\n")
        with caplog.at_level(logging.INFO, logger="sae_misclass"):
            cfg = cli.parse_config(["simulate", "--config-file", str(f), "--thin", "2"])
        assert cfg.thin == 2 and cfg.replicates == 7
        assert cfg.sources["thin"] == "flag" and cfg.sources["replicates"] == "file"
        assert "overrides config file" in caplog.text

    def test_unknown_file_key(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("thinning = 4\n")
        with pytest.raises(ConfigError, match="thinning"):
            cli.parse_config(["simulate", "--config-file", str(f)])

    def test_bad_file_value_named(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("iters = many\n")
        with pytest.raises(ConfigError, match="iters"):
            cli.parse_config(["simulate", "--config-file", str(f)])

    def test_domain_violation(self):
        with pytest.raises(ConfigError, match="burn"):
            cli.parse_config(["simulate", "--iters", "10", "--burn", "10"])

    def test_unknown_flag(self):
        with pytest.raises(SystemExit):
            cli.parse_config(["simulate", "--bogus", "1"])

    def test_env_out(self, monkeypatch, tmp_path):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
        assert cli.parse_config(["simulate"]).out == str(tmp_path / "envout")

    def test_desk(self):
        cfg = cli.parse_config(["simulate", "--desk", "--replicates", "3"])
        assert (cfg.iters, cfg.burn, cfg.thin, cfg.replicates) == (2000, 1000, 5, 3)


FIT_ARGS = ["--iters", "60", "--burn", "20", "--thin", "4", "--seed", "5"]


class TestFitCommand:
    def test_outputs(self, tmp_path):
        data = write_toy(tmp_path / "d.csv", labels=tuple(QUINTILES))
        out = tmp_path / "out"
        rc = cli.main(["fit", "--data", str(data), "--roles", ROLES, "--out", str(out), *FIT_ARGS])
        assert rc == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["P.csv", "area_means.csv", "coding.csv", "manifest.json",
                         "parameters.csv", "recovery.csv", "trace.csv"]
        assert len(read_rows(out / "P.csv")) == 25
        areas = read_rows(out / "area_means.csv")
        assert len(areas) == 5 and {r["source"] for r in areas} == {"observed"}
        params = {r["parameter"] for r in read_rows(out / "parameters.csv")}
        assert {"beta1", "beta5", "delta_age", "gamma_educ", "sigma2_e", "sigma2_u", "sigma2_s"} <= params
        assert len(read_rows(out / "trace.csv")) == 10
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 5 and "out" not in manifest["config"]

    def test_naive_mode_has_no_recovery(self, tmp_path):
        data = write_toy(tmp_path / "d.csv")
        out = tmp_path / "out"
        assert cli.main(["fit", "--data", str(data), "--roles", ROLES, "--mode", "naive",
                         "--out", str(out), *FIT_ARGS]) == 0
        assert not (out / "recovery.csv").exists()

    def test_targets(self, tmp_path):
        data = write_toy(tmp_path / "d.csv")
        t = tmp_path / "targets.csv"
        t.write_text("area,F1,F2,F3,age,educ\n" + "".join(f"r{i},0.2,0.3,0.5,31,8\n" for i in range(5)))
        out = tmp_path / "out"
        assert cli.main(["fit", "--data", str(data), "--roles", ROLES, "--targets", str(t),
                         "--out", str(out), *FIT_ARGS]) == 0
        assert {r["source"] for r in read_rows(out / "area_means.csv")} == {"population"}

    def test_unwritable_out_fails_before_sampling(self, tmp_path, capsys):
        data = write_toy(tmp_path / "d.csv")
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        rc = cli.main(["fit", "--data", str(data), "--roles", ROLES, "--out", str(blocker / "o"), *FIT_ARGS])
        assert rc == 2 and "not writable" in capsys.readouterr().err

    def test_bad_data_leaves_no_files(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("y,region,age,educ,wealth\nx,r1,1,1,a\n")
        out = tmp_path / "out"
        assert cli.main(["fit", "--data", str(bad), "--roles", ROLES, "--out", str(out)]) == 2
        assert list(out.iterdir()) == []

    def test_rerun_from_manifest(self, tmp_path):
        data = write_toy(tmp_path / "d.csv")
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["fit", "--data", str(data), "--roles", ROLES, "--out", str(a), *FIT_ARGS]) == 0
        assert cli.main(["fit", "--config-file", str(a / "manifest.json"), "--out", str(b)]) == 0
        for f in a.iterdir():
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name


class TestSimulateCommand:
    def test_tables(self, tmp_path):
        out = tmp_path / "sim"
        rc = cli.main(["simulate", "--replicates", "1", "--areas", "3", "--n-min", "4", "--n-max", "6",
                       "--p-levels", "0.7", "--iters", "40", "--burn", "20", "--thin", "5", "--out", str(out)])
        assert rc == 0
        t1 = read_rows(out / "table1.csv")
        assert list(t1[0]) == ["p", "parameter", "model", "Est", "RB", "RMSE", "Cov"]
        assert len(t1) == 3 * 5
        t2 = read_rows(out / "table2.csv")
        assert list(t2[0]) == ["area", "p", "model", "RMSEx100", "coverage"] and len(t2) == 3 * 3
        assert "truth_construction" in json.loads((out / "metadata.json").read_text())
