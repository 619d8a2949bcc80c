import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from jointsl.cli import DEFAULTS, ConfigError, main, resolve_config
from jointsl.measures import DiscreteMeasure, independence_cost
from jointsl.presets import make_pair


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def read_csv_body(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config: ")
    return json.loads(lines[0][len("# config: "):]), list(csv.reader(lines[1:]))


# config resolution

def test_resolve_precedence():
    cfg = resolve_config("couple", {"M": 10, "T": 5.0}, {"T": 7.0, "seed": 3, "out": "x"})
    assert cfg["M"] == 10 and cfg["T"] == 7.0 and cfg["seed"] == 3 and cfg["out"] == "x"
    assert cfg["dt"] == DEFAULTS["couple"]["dt"] and cfg["command"] == "couple"


def test_resolve_rejects_unknown_and_foreign_keys():
    with pytest.raises(ConfigError):
        resolve_config("localize", {"bogus": 1}, {})
    with pytest.raises(ConfigError):
        resolve_config("klcheck", {}, {"delta": 0.1})
    with pytest.raises(ConfigError):
        resolve_config("fit", {"command": "couple"}, {})


# exit codes

def test_exit_code_bad_arguments(tmp_path, capsys):
    assert main(["nonsense"]) == 2
    assert main(["localize", "--seed", "abc"]) == 2
    assert main(["localize", "--seed", "-1", "--out", str(tmp_path)]) == 2
    assert main(["localize", "--config", str(tmp_path / "missing.json")]) == 2


def test_exit_code_invalid_config(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"measure": {"preset": "no-such-preset"}})
    assert main(["localize", "--config", cfg, "--out", str(tmp_path)]) == 2
    cfg = write_json(tmp_path / "c.json", {"gaussian": {"mean": [0, 0], "cov": [[1, 0], [0, 0]]},
                                           "M": 10})
    assert main(["klcheck", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert main(["localize", "--dt", "2", "--T", "1", "--out", str(tmp_path)]) == 2
    assert main(["distance", "--out", str(tmp_path)]) == 2


def test_exit_code_numerical_failure(tmp_path):
    # identity control on a variance-2500 measure: tr(C^T Sigma C) dt = 125 exceeds the limit
    cfg = write_json(tmp_path / "c.json", {
        "mu": {"points": [[0.0, 0.0], [100.0, 0.0]]}, "nu": {"points": [[0.0, 0.0]]},
        "alpha": 0.0, "M": 4, "T": 1.0})
    assert main(["distance", "--config", cfg, "--out", str(tmp_path)]) == 3


# localize

def test_localize_runs_and_is_deterministic(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"measure": {"preset": "uniform-square", "n": 40},
                                           "M": 8, "T": 1.0})
    for d in ("a", "b"):
        assert main(["localize", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "rate_curves.csv").read_bytes()
    assert a == (tmp_path / "b" / "rate_curves.csv").read_bytes()
    echo, rows = read_csv_body(tmp_path / "a" / "rate_curves.csv")
    assert echo["M"] == 8 and echo["alphas"] == [0.0, 0.3, 0.5, 0.8, 1.0] and echo["delta"] == 0.003
    assert rows[0] == ["alpha", "t", "mean_trace", "std_err"]
    assert sorted({r[0] for r in rows[1:]}) == ["0.0", "0.3", "0.5", "0.8", "1.0"]
    summary = json.loads((tmp_path / "a" / "localize_summary.json").read_text())
    assert summary["config"] == echo and len(summary["curves"]) == 5


def test_localize_point_mass_zero_curves(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"measure": {"preset": "point-mass"}, "M": 4, "T": 0.5})
    assert main(["localize", "--config", cfg, "--out", str(tmp_path)]) == 0
    _, rows = read_csv_body(tmp_path / "rate_curves.csv")
    assert all(float(r[2]) == 0.0 and float(r[3]) == 0.0 for r in rows[1:])


def test_embedded_config_reproduces_output(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"measure": {"preset": "fig2-case2", "n": 30},
                                           "alphas": [0.5], "M": 6, "T": 1.0})
    assert main(["localize", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "a")]) == 0
    echo, _ = read_csv_body(tmp_path / "a" / "rate_curves.csv")
    again = write_json(tmp_path / "echo.json", echo)
    assert main(["localize", "--config", again, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "rate_curves.csv").read_bytes() == \
        (tmp_path / "b" / "rate_curves.csv").read_bytes()


# couple

def test_couple_table(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"pair": {"preset": "fig4-case1", "n": 12},
                                           "M": 10, "T": 5.0, "dump_couplings": True,
                                           "policies": [{"alpha": 0.5}, {"extrapolation": True}]})
    assert main(["couple", "--config", cfg, "--out", str(tmp_path)]) == 0
    echo, rows = read_csv_body(tmp_path / "couple_table.csv")
    assert rows[0] == ["coupling", "bound_w2", "ci_lo", "ci_hi", "M"]
    names = [r[0].split(" ")[0] for r in rows[1:]]
    assert names == ["optimal", "joint-eldan-0.5", "extrapolation", "independence"]
    mu, nu = make_pair("fig4-case1", 12, 0)
    assert float(rows[-1][1]) == np.sqrt(independence_cost(mu, nu))
    obj = json.loads((tmp_path / "couple_table.json").read_text())
    assert obj["config"] == echo and obj["seed"] == 0
    assert (tmp_path / "couplings_joint-eldan-0.5.csv").exists()


def test_couple_same_measure(tmp_path):
    pts = np.random.default_rng(0).standard_normal((8, 2)).tolist()
    cfg = write_json(tmp_path / "c.json", {"pair": {"mu": {"points": pts}, "nu": {"points": pts}},
                                           "M": 6, "T": 10.0, "policies": [0.0, 0.5]})
    assert main(["couple", "--config", cfg, "--out", str(tmp_path)]) == 0
    _, rows = read_csv_body(tmp_path / "couple_table.csv")
    assert float(rows[1][1]) == 0.0 and float(rows[2][1]) == 0.0 and float(rows[3][1]) == 0.0


# distance

def test_distance_identical_files_and_point_masses(tmp_path):
    m = DiscreteMeasure.from_points(np.random.default_rng(1).standard_normal((10, 2)))
    m.to_csv(tmp_path / "m.csv")
    cfg = write_json(tmp_path / "c.json", {"mu": str(tmp_path / "m.csv"),
                                           "nu": str(tmp_path / "m.csv"), "M": 8, "T": 10.0})
    assert main(["distance", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    res = json.loads((tmp_path / "a" / "distance.json").read_text())
    assert res["distance"] == 0.0 and res["seed"] == 0 and res["params"]["M"] == 8

    DiscreteMeasure.point_mass([0.0, 0.0]).to_csv(tmp_path / "x.csv")
    DiscreteMeasure.point_mass([3.0, 4.0]).to_csv(tmp_path / "y.csv")
    cfg = write_json(tmp_path / "c2.json", {"mu": str(tmp_path / "x.csv"),
                                            "nu": str(tmp_path / "y.csv"), "M": 4})
    assert main(["distance", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    res = json.loads((tmp_path / "b" / "distance.json").read_text())
    assert res["distance"] == 5.0 and res["ci95"] == [25.0, 25.0]


def test_distance_weighted(tmp_path):
    rng = np.random.default_rng(2)
    cfg = write_json(tmp_path / "c.json", {
        "mu": {"points": rng.standard_normal((6, 2)).tolist()},
        "nu": {"points": rng.standard_normal((6, 2)).tolist()},
        "weights": {"nodes": [0.5, 1.0], "masses": [0.5, 0.5]}, "M": 5, "T": 1.0})
    assert main(["distance", "--config", cfg, "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "distance.json").read_text())
    assert len(res["node_means"]) == 2
    assert res["mean_sq"] == pytest.approx(0.5 * sum(res["node_means"]), rel=1e-12)


# klcheck

def test_klcheck_outputs(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"M": 50, "dt": 0.05})
    assert main(["klcheck", "--config", cfg, "--T", "10", "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "klcheck.json").read_text())
    assert res["closed_form"] == 0.5
    assert res["tail_mass"] == 1 / 11
    assert res["rel_err"] == abs(res["estimate"] - 0.5) / 0.5
    assert res["config"]["T"] == 10.0


def test_klcheck_standard_gaussian(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"gaussian": {"mean": [0, 0], "cov": [[1, 0], [0, 1]]},
                                           "M": 20, "dt": 0.1, "T": 10.0})
    assert main(["klcheck", "--config", cfg, "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "klcheck.json").read_text())
    assert abs(res["estimate"]) <= 3 * res["std_err"] + 1e-15
    assert res["rel_err"] is None


# fit

def test_fit_outputs_and_determinism(tmp_path):
    cfg = write_json(tmp_path / "c.json", {
        "target": {"affine": {"A": [[1.0, 0.2], [0.0, 1.0], [0.3, -0.5]], "c": [0.0, 1.0, 0.0]}},
        "latent_n": 16, "degree": 1, "M": 30, "max_iter": 2, "T": 5.0})
    for d in ("a", "b"):
        assert main(["fit", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    ra = json.loads((tmp_path / "a" / "fit_report.json").read_text())
    rb = json.loads((tmp_path / "b" / "fit_report.json").read_text())
    assert ra["loss_history"] == rb["loss_history"]
    assert ra["config"]["latent_n"] == 16 and ra["seed"] == 0
    echo, rows = read_csv_body(tmp_path / "a" / "fit_loss.csv")
    assert echo == ra["config"] and rows[0] == ["iteration", "loss"]
    assert [float(r[1]) for r in rows[1:]] == ra["loss_history"]


def test_fit_random_init_and_bad_init(tmp_path):
    base = {"target": {"preset": "manifold", "n": 20}, "latent_n": 9, "degree": 1, "M": 10,
            "max_iter": 1, "T": 3.0}
    cfg = write_json(tmp_path / "c.json", dict(base, init="random"))
    assert main(["fit", "--config", cfg, "--out", str(tmp_path)]) == 0
    cfg = write_json(tmp_path / "c.json", dict(base, init="psychic"))
    assert main(["fit", "--config", cfg, "--out", str(tmp_path)]) == 2
    cfg = write_json(tmp_path / "c.json", dict(base, noise="sometimes"))
    assert main(["fit", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "jointsl", "klcheck", "--T", "5"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 2 and "T_max" in proc.stderr
