import copy
import json
import subprocess
import sys

import numpy as np
import pytest

from fracdg.cli import EXIT_AUDIT, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_OK, dumps, main
from fracdg.config import load_config, parse_config, reference_config_path
from fracdg.errors import ConfigError
from fracdg.lattice import GridFunction

CONSTANT = {
    "problem": {
        "grid": {"lo": [-1.5], "hi": [1.5], "h": 0.00390625},
        "omega": {"type": "box", "lo": [-1.0], "hi": [1.0]},
        "u0": {"profile": "constant", "params": {"c": 1.0}, "extension": "constant(1.0)"},
        "kernel": {"variant": "standard", "s": 0.5, "p": 2.0},
        "potential": {"variant": "zero"},
        "reach": 4.0,
    },
    "seed": 7,
    "audits": [
        {"type": "dg"},
        {"type": "sup_bound", "x0": [0.0], "R": 0.25, "delta": 0.5, "params": {"k0": 0.0}},
        {"type": "hoelder", "x0": [0.0], "R_max": 0.9},
        {"type": "harnack", "x0": [0.0], "R": 0.4, "Q_max": 1.0},
        {"type": "weak_harnack", "x0": [0.0], "R": 0.05, "q": 0.5},
        {"type": "growth", "x0": [0.0], "R": 0.1, "delta_grid": [0.05, 0.125]},
        {"type": "tail", "x0": [0.0], "R": 1.0},
        {"type": "minimality", "trials": 6},
    ],
}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(tmp_path, cfg, *extra, out="run"):
    return main(["minimize", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / out), *extra])


def _files(run):
    return {p.relative_to(run).as_posix(): p.read_bytes() for p in sorted(run.rglob("*")) if p.is_file()}


def test_constant_config_all_audits(tmp_path):
    assert _run(tmp_path, CONSTANT) == EXIT_OK
    run = tmp_path / "run"
    u = GridFunction.from_csv(run / "solution.csv")
    assert np.max(np.abs(u.values - 1.0)) <= 1e-8
    names = {p.stem for p in (run / "audits").glob("*.json")}
    assert names == {"dg", "sup_bound", "hoelder", "harnack", "weak_harnack", "growth", "tail", "minimality"}
    assert json.loads((run / "audits" / "harnack.json").read_text())["implied_constant"] == 1.0
    tail = json.loads((run / "audits" / "tail.json").read_text())
    assert tail["implied_constant"] == pytest.approx(1.0, abs=1e-3)
    manifest = json.loads((run / "MANIFEST.json").read_text())
    assert manifest["seed"] == 7 and manifest["exit_code"] == 0
    assert "solution.csv" in manifest["files"]
    for name in ("config.echo.json", "solve_report.json", "trajectory.csv", "audits/dg.csv"):
        assert (run / name).is_file()
    csv_head = (run / "audits" / "dg.csv").read_text().splitlines()[0]
    assert csv_head.startswith("# ")


def test_asymmetric_custom_kernel_rejected(tmp_path):
    cfg = copy.deepcopy(CONSTANT)
    cfg["problem"]["kernel"] = {"variant": "custom", "s": 0.5, "p": 2.0, "table": [[[0.5], 1.0], [[-0.5], 2.0]],
                                "lambda": 2.0}
    assert _run(tmp_path, cfg) == EXIT_CONFIG


def test_unknown_keys_rejected(tmp_path):
    cfg = copy.deepcopy(CONSTANT)
    cfg["problem"]["colour"] = "blue"
    assert _run(tmp_path, cfg) == EXIT_CONFIG
    cfg = copy.deepcopy(CONSTANT)
    cfg["audits"][0]["bogus"] = 1
    with pytest.raises(ConfigError):
        parse_config(cfg)


def test_randomized_audit_needs_seed(tmp_path):
    cfg = copy.deepcopy(CONSTANT)
    del cfg["seed"]
    assert _run(tmp_path, cfg) == EXIT_CONFIG
    assert _run(tmp_path, cfg, "--seed", "3") == EXIT_OK


@pytest.mark.parametrize("mutate", [
    lambda c: c["problem"]["grid"].update(h=0.3),
    lambda c: c["problem"]["kernel"].update(s=1.5),
    lambda c: c["problem"].update(mode="sideways"),
    lambda c: c["audits"].append({"type": "dg"}),
    lambda c: c["problem"]["u0"].update(profile="zigzag"),
    lambda c: c["problem"]["omega"].update(hi=[1.5]),
])
def test_invalid_configs(tmp_path, mutate):
    cfg = copy.deepcopy(CONSTANT)
    mutate(cfg)
    assert _run(tmp_path, cfg) == EXIT_CONFIG


def test_missing_file_and_bad_threads(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["minimize", "--config", _write(tmp_path, CONSTANT), "--out", str(tmp_path / "r"),
                 "--threads", "0"]) == EXIT_CONFIG


def test_failing_audit_exit_code(tmp_path):
    cfg = copy.deepcopy(CONSTANT)
    cfg["problem"]["u0"] = {"profile": "sine", "params": {"base": 1.0, "amp": 0.5, "freq": 3.0}}
    cfg["audits"] = [{"type": "harnack", "x0": [0.0], "R": 0.4, "Q_max": 1.0}]
    assert _run(tmp_path, cfg) == EXIT_AUDIT


def test_nonconverged_exit_code(tmp_path):
    cfg = copy.deepcopy(CONSTANT)
    cfg["problem"]["u0"] = {"profile": "sign"}
    cfg["solver"] = {"max_sweeps": 2}
    cfg["audits"] = []
    assert _run(tmp_path, cfg) == EXIT_DIVERGENCE


def test_subcommand_filters_audits(tmp_path):
    code = main(["tail", "--config", _write(tmp_path, CONSTANT), "--out", str(tmp_path / "t")])
    assert code == EXIT_OK
    assert [p.name for p in (tmp_path / "t" / "audits").glob("*.json")] == ["tail.json"]
    assert main(["verify-iso", "--config", _write(tmp_path, CONSTANT), "--out", str(tmp_path / "i")]) == EXIT_CONFIG


def test_h_override(tmp_path):
    cfg = load_config(_write(tmp_path, CONSTANT), h_override=1 / 64)
    assert cfg.grid.h == 1 / 64 and cfg.echo()["problem"]["grid"]["h"] == 1 / 64


def test_thread_count_does_not_change_outputs(tmp_path):
    assert _run(tmp_path, CONSTANT, "--threads", "1", out="a") == EXIT_OK
    assert _run(tmp_path, CONSTANT, "--threads", "3", out="b") == EXIT_OK
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a.keys() == b.keys()
    for name in a:
        if name != "MANIFEST.json":
            assert a[name] == b[name], name
    ma, mb = json.loads(a["MANIFEST.json"]), json.loads(b["MANIFEST.json"])
    assert ma["files"] == mb["files"]


def test_reference_config_runs(tmp_path):
    out = tmp_path / "ref"
    assert main(["minimize", "--config", str(reference_config_path()), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "audits" / "dg.json").read_text())
    assert report["extra"]["infinite_ratios"] == 0
    assert 0 < report["implied_constant"] < 1.0


def test_selftest_and_negative_control(tmp_path):
    assert main(["selftest", "--draws", "20000", "--out", str(tmp_path / "s1")]) == EXIT_OK
    assert main(["selftest", "--draws", "20000", "--out", str(tmp_path / "s2")]) == EXIT_OK
    assert _files(tmp_path / "s1") == _files(tmp_path / "s2")
    assert main(["selftest", "--draws", "20000", "--flip", "shift"]) == EXIT_AUDIT


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fracdg", "selftest", "--draws", "1000", "--log-level", "WARNING"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr


def test_dumps_non_finite():
    text = dumps({"a": float("inf"), "b": float("nan"), "c": [1.0, float("-inf")]})
    assert json.loads(text) == {"a": "inf", "b": "nan", "c": [1.0, "-inf"]}


def test_iso_example_config(tmp_path):
    cfg = reference_config_path().with_name("halfplane_iso_2d.json")
    assert main(["verify-iso", "--config", str(cfg), "--out", str(tmp_path / "iso")]) == EXIT_OK
    rep = json.loads((tmp_path / "iso" / "audits" / "iso_frac.json").read_text())
    assert rep["implied_constant"] == pytest.approx(1.0440, abs=1e-4)
    assert not (tmp_path / "iso" / "solution.csv").exists()
