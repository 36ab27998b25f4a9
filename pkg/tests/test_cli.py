import json
import subprocess
import sys

import numpy as np
import pytest

from fptd import cli
from fptd import closed_form as cf
from fptd.estimator import estimate_cdf, estimate_density
from fptd.model import JumpDiffusionModel, PointMass, model_from_dict


def write(path, obj):
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(path)


@pytest.fixture
def bm_cfg(tmp_path):
    return write(tmp_path / "bm.json", {"m": 0, "a": 0, "jumps": {"type": "point_mass", "c": 0}})


@pytest.fixture
def jump_cfg(tmp_path):
    return write(tmp_path / "jd.json", {"m": 0.2, "a": 1.5,
                                        "jumps": {"type": "double_exponential", "p": 0.4, "eta1": 3, "eta2": 2}})


def test_parse_grid_range_includes_stop():
    g = cli.parse_grid("0.1:5:0.1")
    assert g.size == 50 and g[0] == 0.1 and g[-1] == 5.0 and g[2] == 0.3


def test_parse_grid_list():
    assert list(cli.parse_grid("0.5, 1,2")) == [0.5, 1.0, 2.0]


@pytest.mark.parametrize("grid_text", ["5:0.1:0.1", "0:1:0.5", "1:2", "1:2:0", "a:b:c", "1,1", "2,1", "-1,1", "", "1:2:-1"])
def test_parse_grid_rejects(grid_text):
    with pytest.raises(cli.ConfigError):
        cli.parse_grid(grid_text)


def test_density_pure_diffusion_matches_ftilde(tmp_path, bm_cfg):
    out = tmp_path / "d.csv"
    code = cli.main(["density", "--config", bm_cfg, "--x", "1", "--t-grid", "0.1:5:0.1", "--paths", "100000",
                     "--seed", "42", "--out", str(out)])
    assert code == 0
    header, rows = cli.read_csv(out)
    assert header == ["t", "f_hat", "std_err"]
    assert np.array_equal(rows[:, 1], cf.ftilde(rows[:, 0], 1.0, 0.0))
    assert not np.any(rows[:, 2])
    side = json.loads(out.with_suffix(".json").read_text())
    assert set(side) == {"model", "x", "n_paths", "seed", "wall_time_s", "f_zero"}
    assert side["f_zero"] == 0.0 and side["n_paths"] == 100000 and side["seed"] == 42
    assert model_from_dict(side["model"]) == JumpDiffusionModel(0.0, 0.0, PointMass(0.0))


def test_density_csv_round_trip_is_exact(tmp_path, jump_cfg):
    out = tmp_path / "d.csv"
    cli.main(["density", "--config", jump_cfg, "--x", "1", "--t-grid", "0.05:2:0.05", "--paths", "3000",
              "--seed", "7", "--out", str(out)])
    est = estimate_density(model_from_dict(json.loads(open(jump_cfg).read())), 1.0, cli.parse_grid("0.05:2:0.05"),
                           3000, 7)
    _, rows = cli.read_csv(out)
    assert np.array_equal(rows[:, 0], est.t_grid)
    assert np.array_equal(rows[:, 1], est.f_hat)
    assert np.array_equal(rows[:, 2], est.std_err)


def test_cdf_round_trip_and_monotone(tmp_path, jump_cfg):
    out = tmp_path / "c.csv"
    assert cli.main(["cdf", "--config", jump_cfg, "--x", "1", "--t-grid", "0.1:4:0.1", "--paths", "5000",
                     "--seed", "3", "--out", str(out)]) == 0
    header, rows = cli.read_csv(out)
    assert header == ["t", "p_hat", "std_err"]
    assert np.all(np.diff(rows[:, 1]) >= 0)
    est = estimate_cdf(model_from_dict(json.loads(open(jump_cfg).read())), 1.0, cli.parse_grid("0.1:4:0.1"), 5000, 3)
    assert np.array_equal(rows[:, 1], est.p_hat) and np.array_equal(rows[:, 2], est.std_err)


def test_csv_to_stdout(capsys, bm_cfg):
    assert cli.main(["cdf", "--config", bm_cfg, "--x", "1", "--t-grid", "1,2", "--paths", "100"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "t,p_hat,std_err"


@pytest.mark.parametrize("cmd", ["density", "cdf"])
def test_same_bytes_across_threads(tmp_path, jump_cfg, cmd, monkeypatch):
    outs = []
    for i, threads in enumerate(["1", "2", "5"]):
        out = tmp_path / f"{cmd}{i}.csv"
        cli.main([cmd, "--config", jump_cfg, "--x", "1", "--t-grid", "0.1:3:0.1", "--paths", "70000", "--seed", "11",
                  "--threads", threads, "--out", str(out)])
        outs.append(out.read_bytes())
    monkeypatch.setenv("FPTD_THREADS", "3")
    out = tmp_path / f"{cmd}env.csv"
    cli.main([cmd, "--config", jump_cfg, "--x", "1", "--t-grid", "0.1:3:0.1", "--paths", "70000", "--seed", "11",
              "--out", str(out)])
    outs.append(out.read_bytes())
    assert all(o == outs[0] for o in outs)


def test_defect_output(capsys, tmp_path):
    cfg = write(tmp_path / "neg.json", {"m": -1, "a": 0})
    out = tmp_path / "defect.json"
    assert cli.main(["defect", "--config", cfg, "--x", "1", "--paths", "100000", "--seed", "1", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "drift_index = -1" in text
    assert "defective (m + a·E[Y] = -1 < 0)" in text
    payload = json.loads(out.read_text())
    assert abs(payload["defect_hat"] - 0.8647) <= 3 * payload["std_err"]


def test_defect_finite_verdict(capsys, tmp_path):
    cfg = write(tmp_path / "pos.json", {"m": 1, "a": 1, "jumps": {"type": "point_mass", "c": 0.5}})
    assert cli.main(["defect", "--config", cfg, "--x", "1", "--paths", "10000", "--horizon", "200"]) == 0
    assert "finite a.s. (m + a·E[Y] = 1.5 >= 0)" in capsys.readouterr().out


MALFORMED = [
    ("notjson.json", "{oops", 2),
    ("list.json", "[1, 2]", 2),
    ("missing_m.json", {"a": 1}, 2),
    ("neg_a.json", {"m": 0, "a": -1}, 2),
    ("kind.json", {"m": 0, "a": 1, "jumps": {"type": "cauchy"}}, 2),
    ("weights.json", {"m": 0, "a": 1, "jumps": {"type": "finite_mixture", "weights": [0.5, 0.6],
                                                "components": [{"type": "point_mass", "c": 1},
                                                               {"type": "point_mass", "c": 2}]}}, 2),
    ("rate.json", {"m": 0, "a": 1, "jumps": {"type": "exponential", "rate": 0}}, 2),
]


@pytest.mark.parametrize("name, content, code", MALFORMED, ids=[m[0] for m in MALFORMED])
def test_malformed_configs_exit_2(tmp_path, name, content, code, capsys):
    cfg = write(tmp_path / name, content)
    assert cli.main(["cdf", "--config", cfg, "--x", "1", "--t-grid", "1", "--paths", "10"]) == code
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exit_2(tmp_path):
    assert cli.main(["cdf", "--config", str(tmp_path / "nope.json"), "--x", "1", "--t-grid", "1"]) == 2


def test_bad_grid_exit_2(bm_cfg):
    assert cli.main(["density", "--config", bm_cfg, "--x", "1", "--t-grid", "5:0.1:0.1"]) == 2


def test_missing_option_exit_2(bm_cfg):
    assert cli.main(["density", "--config", bm_cfg, "--t-grid", "1"]) == 2


@pytest.mark.parametrize("argv", [["density", "--paths", "0"], ["bogus"], ["cdf", "--seed", "-3"], ["cdf", "--x", "abc"]])
def test_argument_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_domain_errors_exit_3(bm_cfg, tmp_path, capsys):
    assert cli.main(["density", "--config", bm_cfg, "--x", "-1", "--t-grid", "1"]) == 3
    assert cli.main(["defect", "--config", bm_cfg, "--x", "1", "--horizon", "0"]) == 3
    assert "DomainError" in capsys.readouterr().err


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


def test_validate_subset_passes():
    assert cli.main(["validate", "--only", "ftilde_bound,neg_moment_bound,series_term_bound"]) == 0


def test_validate_catches_constant_mutation(monkeypatch, capsys):
    monkeypatch.setattr(cf, "_C_EPS_SCALE", 0.5)
    assert cli.main(["validate", "--only", "ftilde_bound,neg_moment_bound"]) == 1
    captured = capsys.readouterr()
    assert "failed: ftilde_bound" in captured.err
    assert "neg_moment_bound" not in captured.err


def test_validate_seed_override_keeps_verdicts():
    assert cli.main(["selftest", "--seed", "987654321", "--only",
                     "pure_diffusion_cdf,density_cdf_consistency,kendall_identity,jump_sampler"]) == 0


def test_validate_unknown_check():
    assert cli.main(["validate", "--only", "nope"]) == 2


def test_console_entry_point(tmp_path, bm_cfg):
    res = subprocess.run([sys.executable, "-m", "fptd.cli", "cdf", "--config", bm_cfg, "--x", "1", "--t-grid", "1",
                          "--paths", "10"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("t,p_hat,std_err")
