"""Command-line experiment drivers.

Every subcommand reads an optional JSON config, applies flag overrides, fills
in defaults and validates the result before any simulation runs. The resolved
config is written into every output file. Exit codes: 0 success, 2 invalid
config, 3 numerical failure.
"""
import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .engine import localization_rate_curve
from .errors import InvalidInput, NotPSD, NumericalBlowup, SLError, Unsupported
from .fit import FitConfig, LegendreBasis, fit, informed_init, random_init
from .joint import write_coupling_csv, sample_coupling
from .measures import DiscreteMeasure, GaussianMeasure, low_discrepancy
from .metrics import (WeightMeasure, gaussian_kl_to_standard, kl_via_sl, policy_label, sl_distance,
                      w2_bound_table, weighted_sl_distance)
from .presets import make_measure, make_pair
from .simulate import Alpha, Extrapolation, SimConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

DEFAULTS = {
    "localize": {
        "measure": {"preset": "uniform-square", "n": 500, "seed": 0},
        "alphas": [0.0, 0.3, 0.5, 0.8, 1.0],
        "delta": 0.003, "dt": 0.05, "T": 6.0, "M": 200, "seed": 0, "loc_tol": None,
        "workers": 1,
    },
    "couple": {
        "pair": {"preset": "fig4-case1", "n": 50, "seed": 0},
        "policies": [{"alpha": 0.0}, {"alpha": 0.5}, {"alpha": 1.0}, {"extrapolation": True}],
        "delta": 0.001, "dt": 0.05, "T": 30.0, "M": 300, "seed": 0, "loc_tol": None,
        "use": "mean", "dump_couplings": False, "workers": 1,
    },
    "distance": {
        "mu": None, "nu": None, "policy": "alpha", "alpha": 0.5,
        "delta": 0.001, "dt": 0.05, "T": 30.0, "M": 300, "seed": 0, "loc_tol": None,
        "use": "mean", "weights": None, "workers": 1,
    },
    "klcheck": {
        "gaussian": {"mean": [1.0, 0.0], "cov": [[1.0, 0.0], [0.0, 1.0]]},
        "M": 5000, "dt": 0.01, "T": 100.0, "seed": 0,
    },
    "fit": {
        "target": {"preset": "manifold", "n": 300, "seed": 0},
        "latent_n": 256, "degree": 2, "init": "informed", "init_seed": 0,
        "M": 500, "dt": 0.05, "T": 10.0, "alpha": 0.5, "delta": 0.001, "max_iter": 15,
        "damping": 0.001, "noise": "resample", "endpoint": "argmax", "seed": 0, "loc_tol": None,
        "workers": 1,
    },
}

FLAG_KEYS = ("seed", "workers", "dt", "T", "delta")


class ConfigError(Exception):
    pass


def _load_config(path):
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    return obj


def resolve_config(command, file_cfg, flags):
    """Defaults, then the config file, then command-line flags."""
    cfg = copy.deepcopy(DEFAULTS[command])
    file_cfg = dict(file_cfg)
    # configs echoed into outputs carry the command name and can be fed back in
    echoed = file_cfg.pop("command", command)
    if echoed != command:
        raise ConfigError(f"config was written by '{echoed}', not '{command}'")
    unknown = set(file_cfg) - set(cfg)
    if unknown:
        raise ConfigError(f"unknown config keys for '{command}': {sorted(unknown)}")
    cfg.update(copy.deepcopy(file_cfg))
    for key in FLAG_KEYS:
        val = flags.get(key)
        if val is None:
            continue
        if key not in cfg:
            raise ConfigError(f"--{key} does not apply to '{command}'")
        cfg[key] = val
    if "out" in flags and flags["out"] is not None:
        cfg["out"] = str(flags["out"])
    cfg.setdefault("out", ".")
    cfg["command"] = command
    return cfg


def _sim(cfg, T=None):
    try:
        return SimConfig(dt=float(cfg["dt"]), T=float(cfg["T"] if T is None else T),
                         loc_tol=cfg.get("loc_tol"), seed=int(cfg["seed"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid simulation parameters: {exc}") from None


def _measure(spec, base_dir):
    if isinstance(spec, str):
        return DiscreteMeasure.from_csv(base_dir / spec if not Path(spec).is_absolute() else spec)
    if not isinstance(spec, dict):
        raise ConfigError(f"measure spec must be a path or an object, got {spec!r}")
    if "csv" in spec:
        return DiscreteMeasure.from_csv(Path(spec["csv"]))
    if "points" in spec:
        return DiscreteMeasure.from_points(spec["points"], spec.get("weights"))
    if "preset" in spec:
        return make_measure(spec["preset"], int(spec.get("n", 500)), int(spec.get("seed", 0)))
    raise ConfigError(f"measure spec needs 'csv', 'points' or 'preset': {spec!r}")


def _policy(p, delta):
    if isinstance(p, (int, float)):
        return Alpha(float(p), delta)
    if isinstance(p, dict):
        if p.get("extrapolation"):
            return Extrapolation(float(p.get("delta", delta)))
        if "alpha" in p:
            return Alpha(float(p["alpha"]), float(p.get("delta", delta)))
    if p == "extrapolation":
        return Extrapolation(delta)
    raise ConfigError(f"cannot parse policy {p!r}")


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _echo(cfg):
    """Config as embedded in outputs; the output directory is left out so that
    identical runs produce identical files wherever they are written."""
    return {k: v for k, v in cfg.items() if k != "out"}


def _config_comment(cfg):
    return "# config: " + json.dumps(_echo(cfg), sort_keys=True)


def cmd_localize(cfg):
    mu = _measure(cfg["measure"], Path("."))
    sim = _sim(cfg)
    policies = [Alpha(float(a), float(cfg["delta"])) for a in cfg["alphas"]]
    if int(cfg["M"]) < 2:
        raise ConfigError("M must be >= 2")
    curves = localization_rate_curve(mu, policies, sim, int(cfg["M"]), workers=int(cfg["workers"]))
    out = _out_dir(cfg)
    with (out / "rate_curves.csv").open("w", newline="") as fh:
        fh.write(_config_comment(cfg) + "\n")
        w = csv.writer(fh)
        w.writerow(["alpha", "t", "mean_trace", "std_err"])
        for pol, c in zip(policies, curves):
            for t, m, s in zip(c.times, c.mean_trace, c.std_err):
                w.writerow([repr(pol.alpha), repr(float(t)), repr(float(m)), repr(float(s))])
    summary = {"config": _echo(cfg), "seed": cfg["seed"], "curves": [
        {"alpha": pol.alpha, "final_mean_trace": float(c.mean_trace[-1]),
         "initial_trace": float(c.mean_trace[0]), "M": c.M} for pol, c in zip(policies, curves)]}
    _dump_json(out / "localize_summary.json", summary)
    return summary


def _pair(cfg):
    spec = cfg["pair"]
    if not isinstance(spec, dict):
        raise ConfigError("pair must be an object")
    if "preset" in spec:
        return make_pair(spec["preset"], int(spec.get("n", 50)), int(spec.get("seed", 0)))
    if "mu" in spec and "nu" in spec:
        return _measure(spec["mu"], Path(".")), _measure(spec["nu"], Path("."))
    raise ConfigError("pair needs 'preset' or both 'mu' and 'nu'")


def cmd_couple(cfg):
    mu, nu = _pair(cfg)
    sim = _sim(cfg)
    delta = float(cfg["delta"])
    policies = [_policy(p, delta) for p in cfg["policies"]]
    table = w2_bound_table(mu, nu, policies, sim, int(cfg["M"]), use=cfg["use"],
                           workers=int(cfg["workers"]))
    out = _out_dir(cfg)
    path = out / "couple_table.csv"
    table.to_csv(path)
    text = path.read_text()
    path.write_text(_config_comment(cfg) + "\n" + text)
    table.to_json(out / "couple_table.json", extra={"config": _echo(cfg)})
    if cfg.get("dump_couplings"):
        for pol in policies:
            s = sample_coupling(mu, nu, pol, sim, int(cfg["M"]), workers=int(cfg["workers"]))
            write_coupling_csv(s, out / f"couplings_{policy_label(pol)}.csv")
    return json.loads(table.to_json(extra={"config": _echo(cfg)}))


def _weights(spec):
    if spec is None:
        return None
    if isinstance(spec, str):
        arr = np.loadtxt(spec, delimiter=",", skiprows=1, ndmin=2)
        return WeightMeasure(arr[:, 0], arr[:, 1])
    return WeightMeasure(spec["nodes"], spec["masses"])


def cmd_distance(cfg):
    if cfg["mu"] is None or cfg["nu"] is None:
        raise ConfigError("distance needs 'mu' and 'nu' measure files")
    mu = _measure(cfg["mu"], Path("."))
    nu = _measure(cfg["nu"], Path("."))
    sim = _sim(cfg)
    delta = float(cfg["delta"])
    pol = Extrapolation(delta) if cfg["policy"] == "extrapolation" else Alpha(float(cfg["alpha"]), delta)
    w = _weights(cfg["weights"])
    if w is None:
        est = sl_distance(mu, nu, getattr(pol, "alpha", 0.5), delta, sim, int(cfg["M"]),
                          policy=pol, use=cfg["use"], workers=int(cfg["workers"]))
    else:
        est = weighted_sl_distance(mu, nu, getattr(pol, "alpha", 0.5), delta, w, sim,
                                   int(cfg["M"]), policy=pol, workers=int(cfg["workers"]))
    res = est.to_dict()
    res.update({"seed": cfg["seed"], "params": _echo(cfg)})
    _dump_json(_out_dir(cfg) / "distance.json", res)
    return res


def cmd_klcheck(cfg):
    g = cfg["gaussian"]
    if isinstance(g, str):
        gauss = GaussianMeasure.from_json(Path(g).read_text(encoding="utf-8"))
    else:
        gauss = GaussianMeasure(g["mean"], g["cov"])
    est = kl_via_sl(gauss, int(cfg["M"]), float(cfg["dt"]), float(cfg["T"]), int(cfg["seed"]))
    exact = gaussian_kl_to_standard(gauss)
    rel = abs(est.estimate - exact) / exact if exact > 0 else float("nan")
    res = {"estimate": est.estimate, "std_err": est.std_err, "closed_form": exact,
           "rel_err": None if np.isnan(rel) else rel, "tail_mass": est.tail_mass,
           "config": _echo(cfg), "seed": cfg["seed"]}
    _dump_json(_out_dir(cfg) / "klcheck.json", res)
    return res


def _fit_target(spec, z):
    if isinstance(spec, dict) and "affine" in spec:
        a = np.asarray(spec["affine"]["A"], dtype=float)
        c = np.asarray(spec["affine"].get("c", np.zeros(a.shape[0])), dtype=float)
        if a.ndim != 2 or a.shape[1] != z.shape[1] or c.shape != (a.shape[0],):
            raise ConfigError("affine target needs A of shape (d, 2) and c of length d")
        return DiscreteMeasure.from_points(z @ a.T + c)
    return _measure(spec, Path("."))


def cmd_fit(cfg):
    z = low_discrepancy(int(cfg["latent_n"]), 2)
    data = _fit_target(cfg["target"], z)
    basis = LegendreBasis(2, int(cfg["degree"]))
    if cfg["init"] == "informed":
        init = informed_init(data, z, basis)
    elif cfg["init"] == "random":
        init = random_init(basis, data.dim, int(cfg["init_seed"]))
    else:
        raise ConfigError("init must be 'informed' or 'random'")
    try:
        fcfg = FitConfig(M=int(cfg["M"]), sim=_sim(cfg), alpha=float(cfg["alpha"]),
                         delta=float(cfg["delta"]), max_iter=int(cfg["max_iter"]),
                         damping=float(cfg["damping"]), noise=cfg["noise"],
                         endpoint=cfg["endpoint"], seed=int(cfg["seed"]),
                         workers=int(cfg["workers"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    rep = fit(data, init, z, fcfg)
    out = _out_dir(cfg)
    obj = rep.to_dict()
    obj["config"] = _echo(cfg)
    obj["fit_config"] = fcfg.to_dict()
    _dump_json(out / "fit_report.json", obj)
    with (out / "fit_loss.csv").open("w", newline="") as fh:
        fh.write(_config_comment(cfg) + "\n")
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(rep.loss_history):
            w.writerow([i, repr(float(v))])
    return obj


COMMANDS = {
    "localize": cmd_localize,
    "couple": cmd_couple,
    "distance": cmd_distance,
    "klcheck": cmd_klcheck,
    "fit": cmd_fit,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="jointsl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--dt", type=float, help="time step")
        p.add_argument("--T", type=float, help="time horizon (T_max for klcheck)")
        p.add_argument("--delta", type=float, help="control regularization")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    flags = vars(args)
    try:
        if flags.get("seed") is not None and flags["seed"] < 0:
            raise ConfigError("--seed must be nonnegative")
        if flags.get("workers") is not None and flags["workers"] < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = resolve_config(args.command, _load_config(args.config), flags)
        COMMANDS[args.command](cfg)
    except NumericalBlowup as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InvalidInput, NotPSD, Unsupported, SLError, KeyError, TypeError,
            ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
