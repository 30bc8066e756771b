import json

import pytest

from gridrel import __version__
from gridrel.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGED, EXIT_OK, apply_overrides, main

from conftest import TOY_THRESHOLD, TOY_WEIGHTS

BRIDGE = """
function mpc = bridge
mpc.baseMVA = 100;
mpc.bus = [
    1 3 10 0 0 0 1 1 0 135 1 1.05 0.95;
    2 2 10 0 0 0 1 1 0 135 1 1.05 0.95;
    3 1 30 0 0 0 1 1 0 135 1 1.05 0.95;
    4 1 50 0 0 0 1 1 0 135 1 1.05 0.95;
];
mpc.gen = [
    1 0 0 100 -100 1 100 1 100 0;
    2 0 0 100 -100 1 100 1 100 0;
];
mpc.branch = [
    1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
    2 3 0 0.1 0 0 0 0 0 0 1 -360 360;
    3 4 0 0.1 0 0 0 0 0 0 1 -360 360;
];
"""

FAST_ANR = {"assumed_pf": 0.05, "target_cov": 0.2, "population_rounding": 1,
            "burn_in": 100, "retained": 100, "grid": [{"m": 20}], "max_iterations": 4}


def write_cfg(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture
def toy_cfg(tmp_path):
    return write_cfg(tmp_path, {"toy": {"weights": list(TOY_WEIGHTS), "threshold": TOY_THRESHOLD},
                                "p": 0.125, "anr": FAST_ANR, "mcs": {"n": 500}})


def test_overrides():
    cfg = apply_overrides({"anr": {"eps1": 1}}, ["anr.eps1=0.5", "subset.p0=0.2", "name=abc"])
    assert cfg == {"anr": {"eps1": 0.5}, "subset": {"p0": 0.2}, "name": "abc"}


def test_import_case30(tmp_path, capsys):
    out = tmp_path / "net.json"
    assert main(["import", "builtin:case30", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert len(doc["branches"]) == 41
    first = out.read_text()
    assert main(["import", str(out), "--out", str(out)]) == EXIT_OK
    assert out.read_text() == first


def test_import_bad_path(tmp_path, capsys):
    assert main(["import", str(tmp_path / "missing.m"), "--out", str(tmp_path / "x.json")]) \
        == EXIT_DATA
    assert "cannot read network" in capsys.readouterr().err


def test_cascade_commands(tmp_path, capsys):
    (tmp_path / "bridge.m").write_text(BRIDGE)
    cfg = write_cfg(tmp_path, {"network": "bridge.m", "threshold": 0.5, "p": 0.2})
    assert main(["cascade", "--config", cfg, "--state", "000"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["loss_fraction"] == 0
    assert main(["cascade", "--config", cfg, "--state", "010"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["loss_fraction"] == pytest.approx(0.8)
    assert main(["cascade", "--config", cfg, "--sample", "7"]) == EXIT_OK
    first = capsys.readouterr().out
    assert main(["cascade", "--config", cfg, "--sample", "7"]) == EXIT_OK
    assert capsys.readouterr().out == first
    assert main(["cascade", "--config", cfg, "--state", "01"]) == EXIT_CONFIG


def test_oracle_prints_exact_pf(toy_cfg, capsys):
    assert main(["oracle", "--config", toy_cfg]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["pf"] == pytest.approx(0.01825, abs=5e-5)


def test_oracle_rejects_large_networks(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"network": "builtin:case30", "threshold": 0.15})
    assert main(["oracle", "--config", cfg]) == EXIT_CONFIG


def test_config_errors(tmp_path, capsys):
    assert main(["mcs", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    both = write_cfg(tmp_path, {"toy": {"weights": [1], "threshold": 1},
                                "network": "builtin:case30", "threshold": 0.1})
    assert main(["mcs", "--config", both]) == EXIT_CONFIG
    bad = write_cfg(tmp_path, {"toy": {"weights": [1, 1], "threshold": 1}, "p": [0.1]}, "b.json")
    assert main(["oracle", "--config", bad]) == EXIT_CONFIG
    unknown = write_cfg(tmp_path, {"toy": {"weights": [1], "threshold": 1},
                                   "anr": {"bogus": 1}}, "c.json")
    assert main(["anr", "--config", unknown, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["oracle", "--config", unknown, "--threads", "0"]) == EXIT_CONFIG


def test_anr_then_mcs_reports_relative_error(tmp_path, toy_cfg, capsys):
    out = str(tmp_path / "res")
    assert main(["anr", "--config", toy_cfg, "--out", out]) == EXIT_OK
    assert main(["mcs", "--config", toy_cfg, "--out", out]) == EXIT_OK
    anr = json.loads((tmp_path / "res" / "anr_result.json").read_text())
    mcs = json.loads((tmp_path / "res" / "mcs_result.json").read_text())
    assert anr["relative_error"] == pytest.approx(abs(anr["pf"] / mcs["pf"] - 1) * 100)
    assert anr["header"]["toolkit"] == f"gridrel {__version__}"
    hist = (tmp_path / "res" / "anr_history.csv").read_text().splitlines()
    assert hist[0].startswith("# gridrel") and hist[1].startswith("# config ")
    assert len(hist) == 3 + anr["iterations"]


def test_outputs_are_byte_identical_on_rerun(tmp_path, toy_cfg, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["anr", "--config", toy_cfg, "--out", str(d)]) == EXIT_OK
        assert main(["passive", "--config", toy_cfg, "--out", str(d)]) == EXIT_OK
    for name in ("anr_result.json", "anr_history.csv", "passive_result.json",
                 "passive_history.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    anr = json.loads((a / "anr_result.json").read_text())
    passive = json.loads((a / "passive_result.json").read_text())
    assert passive["calls"] == anr["calls"]


def test_subset_single_and_sweep(tmp_path, toy_cfg, capsys):
    out = str(tmp_path / "s")
    assert main(["subset", "--config", toy_cfg, "--out", out, "--set", "subset.n_l=200"]) \
        == EXIT_OK
    res = json.loads((tmp_path / "s" / "subset_result.json").read_text())
    assert res["converged"] and res["thresholds"][-1] == 0
    assert main(["subset", "--config", toy_cfg, "--out", out, "--set", "subset.sweep=true",
                 "--set", "subset.nls=[100,200]", "--set", "subset.reference_pf=0.01825"]) \
        == EXIT_OK
    rows = (tmp_path / "s" / "subset_sweep.csv").read_text().splitlines()
    assert len(rows) == 3 + 3 * 2  # two header lines, column names, 3 p0 x 2 n_l


def test_exhaustion_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"toy": {"weights": [0.01] * 6, "threshold": 5.0}, "p": 0.2,
                               "anr": {**FAST_ANR, "max_iterations": None}})
    assert main(["anr", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_NONCONVERGED
