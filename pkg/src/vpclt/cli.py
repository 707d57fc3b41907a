"""Command-line front end.

Every command reads one JSON config (optional), applies ``--set dot.path=value``
overrides on top of the command defaults, rejects unknown keys, runs the
pipeline and writes ``<command>_report.json`` plus CSV data files into
``--out-dir``. Exit status: 0 ok, 1 validation error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .approximation import DyadicSequence, GridFunction, PeriodicGrid, best_error_profile, vp_sum
from .criterion import (
    decay_series_check,
    equiconvergence_check,
    log_power_delta,
    series_check,
)
from .entropy import MetricSample, dudley_check, entropy_profile, example41_probe, read_metric_csv
from .mc_bands import (
    clt_empirical_test,
    param_integral_band,
    param_integral_band_table,
    quantile_U,
    tail_curve,
)
from .processes import (
    ProcessSpec,
    analytic_covariance,
    normalized_sum,
    sample,
    sequence_example_moments,
    tau_distance,
)

SEED_ENV = "VPCLT_SEED"

_PROCESS = {"kind": "wiener"}
_LAMBDA = {"min": 1e-3, "max": 1e3, "points": 61}

DEFAULTS = {
    "approx": {"function": "abs_sin", "M": 5, "grid_size": 1024, "n": 16, "p": None, "max_degree": 64},
    "simulate": {"process": _PROCESS, "grid_size": 256, "count": 1000, "n": 1},
    "criterion": {"process": _PROCESS, "grid_size": 256, "count": 2000, "n": 1, "lambda": _LAMBDA},
    "equiconv": {"process": _PROCESS, "grid_size": 256, "count": 2000, "n_list": [1, 4, 16, 64],
                 "lambda": _LAMBDA},
    "entropy": {"metric_csv": None, "process": None, "grid_size": 64, "eps_count": 40, "decades": 2.5},
    "probe41": {"delta": 0.1, "node_count": 1500, "u_max": 700.0, "eps_count": 40, "decades": 2.5},
    "band": {"integrand": "cos_x", "table_csv": None, "beta": {"law": "uniform", "low": -1.0, "high": 1.0},
             "n": 10000, "epsilon": 0.05, "replicas": 10000, "pilot": 2000, "grid_size": 64,
             "reference_factor": 100},
    "clt-test": {"process": {"kind": "random_trig", "law": "rademacher"}, "grid_size": 256,
                 "n": 2000, "replicas": 5000, "pilot": 20000, "limit_factor": 10, "threshold": 0.05},
    "decay-check": {"m": 2.0, "Delta": 0.1, "C": 1.0, "r_max": 10000, "margin": 0.02},
    "demo": {},
}

DEMO_DEFAULTS = {
    "example1": {"delta": 0.1, "count": 200, "node_count": 1500, "u_max": 700.0, "eps_count": 40,
                 "decades": 2.5},
    "example2": {"n": 10000, "epsilon": 0.05, "replicas": 10000, "pilot": 2000, "grid_size": 64},
    "example3": {"alpha": 0.5, "p0": 1.5, "n_max": 64, "count": 1_000_000},
}

# mappings whose keys are checked by ProcessSpec and check_beta instead
_OPEN_KEYS = {"process", "beta"}

FUNCTIONS = {
    "cos": lambda t, M: np.cos(M * t),
    "abs_sin": lambda t, M: np.abs(np.sin(t)),
    "exp_cos": lambda t, M: np.exp(np.cos(t)),
    "sawtooth": lambda t, M: np.where(t < np.pi, t, t - 2.0 * np.pi) / np.pi,
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(out[key], dict) and key not in _OPEN_KEYS:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            out[key] = _merge(out[key], value, where + ".")
        elif key in _OPEN_KEYS and value is not None and not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _override(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set {assignment!r}: expected dot.path=value")
    path, text = assignment.split("=", 1)
    keys = path.split(".")
    node = config
    for i, key in enumerate(keys[:-1]):
        if key not in node:
            raise ConfigError(f"{'.'.join(keys[:i + 1])}: unknown key")
        if node[key] is None and key in _OPEN_KEYS:
            node[key] = {}
        if not isinstance(node[key], dict):
            raise ConfigError(f"{'.'.join(keys[:i + 1])}: not an object")
        node = node[key]
    last = keys[-1]
    if last not in node and not (len(keys) > 1 and keys[-2] in _OPEN_KEYS):
        raise ConfigError(f"{path}: unknown key")
    node[last] = _parse_value(text)


def resolve_config(command: str, config_file: str | None, overrides, demo: str | None = None) -> dict:
    defaults = DEMO_DEFAULTS[demo] if command == "demo" else DEFAULTS[command]
    config = copy.deepcopy(defaults)
    if config_file:
        with open(config_file) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ConfigError("config: top level must be an object")
        config = _merge(config, loaded)
    for assignment in overrides or ():
        _override(config, assignment)
    return config


def _process(cfg: dict) -> ProcessSpec:
    proc = cfg.get("process")
    if not proc or not proc.get("kind"):
        raise ConfigError("process.kind: required")
    return ProcessSpec.from_dict(proc)


def _positive_int(cfg: dict, key: str) -> int:
    value = cfg[key]
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"{key}: must be a positive integer, got {value!r}")
    return value


def _lambda_grid(cfg: dict) -> np.ndarray:
    lam = cfg["lambda"]
    if not 0 < lam["min"] < lam["max"] or int(lam["points"]) < 3:
        raise ConfigError("lambda: need 0 < min < max and points >= 3")
    return np.geomspace(lam["min"], lam["max"], int(lam["points"]))


# ---------------------------------------------------------------- output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_csv(path: str, header, columns) -> None:
    data = np.column_stack([np.asarray(c, dtype=np.float64) for c in columns])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(header), comments="")


class Outputs:
    def __init__(self, out_dir: str, command: str):
        self.out_dir = out_dir
        self.command = command
        self.files: list[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        p = os.path.join(self.out_dir, name)
        self.files.append(p)
        return p

    def csv(self, name: str, header, columns) -> None:
        write_csv(self.path(name), header, columns)

    def report(self, config: dict, result: dict, run: dict) -> str:
        doc = {"command": self.command, "version": __version__, "config": config, "run": run,
               "result": result}
        p = self.path(f"{self.command.replace('-', '_')}_report.json")
        doc["files"] = list(self.files)
        with open(p, "w") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return p


# ---------------------------------------------------------------- commands


def cmd_approx(cfg, seed, threads, out):
    name = cfg["function"]
    if name not in FUNCTIONS:
        raise ConfigError(f"function: unknown {name!r}, expected one of {sorted(FUNCTIONS)}")
    grid = PeriodicGrid(_positive_int(cfg, "grid_size"))
    n = _positive_int(cfg, "n")
    f = GridFunction.from_callable(lambda t: FUNCTIONS[name](t, cfg["M"]), grid)
    approx = vp_sum(f, n, cfg["p"], verify=True)
    max_degree = min(_positive_int(cfg, "max_degree"), grid.size // 2 - 1)
    profile = best_error_profile(f, max_degree)
    error = (f - approx).sup_norm()
    half = n // 2
    out.csv("approx.csv", ["t", "f", "V"], [grid.nodes, f.values, approx.values])
    out.csv("error_profile.csv", ["degree", "best_error_ub"], [np.arange(len(profile)), profile])
    ref = float(profile[half]) if half < len(profile) else float("nan")
    return {"sup_error": error, "best_error_ub_half": ref, "ratio": error / ref if ref > 0 else None}


def cmd_simulate(cfg, seed, threads, out):
    spec = _process(cfg)
    grid = PeriodicGrid(_positive_int(cfg, "grid_size"))
    n, count = _positive_int(cfg, "n"), _positive_int(cfg, "count")
    ens = normalized_sum(spec, n, count, grid, seed, threads) if n > 1 else sample(spec, grid, count, seed, threads)
    out.csv("paths.csv", [f"{t:.17g}" for t in ens.nodes], ens.paths.T)
    sups = ens.sup_norms()
    return {"process": spec.to_dict(), "count": count, "nodes": len(ens.nodes),
            "mean_sup_norm": float(sups.mean()), "max_variance": float(ens.paths.var(axis=0).max())}


def cmd_criterion(cfg, seed, threads, out):
    spec = _process(cfg)
    grid = PeriodicGrid(_positive_int(cfg, "grid_size"))
    n, count = _positive_int(cfg, "n"), _positive_int(cfg, "count")
    ens = normalized_sum(spec, n, count, grid, seed, threads)
    report = series_check(ens, DyadicSequence.for_grid(grid), _lambda_grid(cfg))
    b = report.blocks
    out.csv("blocks.csv", ["k", "n_lo", "n_hi", "lambda_star", "U", "U_std_err", "E_sup_Zk", "ratio", "tail_sum"],
            [[x.k for x in b], [x.n_lo for x in b], [x.n_hi for x in b], [x.lambda_star for x in b],
             [x.U for x in b], [x.U_std_err for x in b], [x.E_sup_Zk for x in b], [x.ratio for x in b],
             report.tail_sums])
    return report.to_dict()


def cmd_equiconv(cfg, seed, threads, out):
    spec = _process(cfg)
    grid = PeriodicGrid(_positive_int(cfg, "grid_size"))
    n_list = [int(v) for v in cfg["n_list"]]
    if not n_list or min(n_list) < 1:
        raise ConfigError("n_list: must be a nonempty list of positive integers")
    res = equiconvergence_check(spec, None, n_list, _positive_int(cfg, "count"), grid, seed, threads,
                                _lambda_grid(cfg))
    tails = res["sup_tail_sums"]
    out.csv("sup_tails.csv", ["m", "sup_tail_sum"], [np.arange(1, len(tails) + 1), tails])
    return res


def cmd_entropy(cfg, seed, threads, out):
    if cfg["metric_csv"]:
        ms = read_metric_csv(cfg["metric_csv"])
    elif cfg["process"]:
        spec = _process(cfg)
        cov = analytic_covariance(spec, PeriodicGrid(_positive_int(cfg, "grid_size")))
        ms = MetricSample.from_matrix(tau_distance(cov).dist)
    else:
        raise ConfigError("metric_csv: one of metric_csv or process is required")
    diam = ms.diameter
    if diam <= 0:
        raise ConfigError("metric_csv: metric has zero diameter")
    eps = np.geomspace(diam, diam * 10.0 ** (-cfg["decades"]), _positive_int(cfg, "eps_count"))
    profile = entropy_profile(ms, eps)
    profile.to_csv(out.path("entropy.csv"))
    dudley = dudley_check(profile)
    return {"points": len(ms.points), "diameter": diam, "dudley": dudley.to_dict(), "verdict": dudley.trend}


def _probe(cfg, out):
    res = example41_probe(cfg["delta"], _positive_int(cfg, "node_count"), cfg["u_max"],
                          _positive_int(cfg, "eps_count"), cfg["decades"])
    res["_profile"].to_csv(out.path("entropy.csv"))
    return res


def cmd_probe41(cfg, seed, threads, out):
    return _probe(cfg, out)


def _band_output(res, out):
    out.csv("band.csv", ["t", "I_n", "lower", "upper"], np.array(list(res.rows())).T)
    c = res.tail
    out.csv("tail.csv", ["u", "gamma", "stderr"], [c.u_grid, c.gamma, c.stderr])
    return res.to_dict()


def cmd_band(cfg, seed, threads, out):
    n, replicas = _positive_int(cfg, "n"), _positive_int(cfg, "replicas")
    eps = cfg["epsilon"]
    if not 0 < eps <= 1:
        raise ConfigError(f"epsilon: must lie in (0, 1], got {eps}")
    if cfg["table_csv"]:
        raw = np.loadtxt(cfg["table_csv"], delimiter=",", ndmin=2)
        res = param_integral_band_table(raw[1:], raw[0], n, eps, replicas, seed, threads)
    else:
        res = param_integral_band(cfg["integrand"], cfg["beta"], n, eps, replicas, seed,
                                  PeriodicGrid(_positive_int(cfg, "grid_size")), _positive_int(cfg, "pilot"),
                                  reference_factor=_positive_int(cfg, "reference_factor"), threads=threads)
    return _band_output(res, out)


def cmd_clt_test(cfg, seed, threads, out):
    spec = _process(cfg)
    res = clt_empirical_test(spec, _positive_int(cfg, "n"), _positive_int(cfg, "replicas"), seed,
                             PeriodicGrid(_positive_int(cfg, "grid_size")), _positive_int(cfg, "pilot"),
                             _positive_int(cfg, "limit_factor"), cfg["threshold"], threads, keep_samples=True)
    zeta, limit = res.pop("sup_samples")
    u = np.unique(np.concatenate([[0.0], zeta, limit]))
    out.csv("sup_tails.csv", ["u", "gamma_n", "gamma_limit"],
            [u, tail_curve(zeta, u).gamma, tail_curve(limit, u).gamma])
    res["U_0.05_limit"] = quantile_U(tail_curve(limit), 0.05) if 0.05 * len(limit) >= 100 else None
    return res


def cmd_decay_check(cfg, seed, threads, out):
    if cfg["m"] <= 1:
        raise ConfigError(f"m: must exceed 1, got {cfg['m']}")
    res = decay_series_check(log_power_delta(cfg["m"], cfg["Delta"], cfg["C"]), cfg["m"],
                             _positive_int(cfg, "r_max"), cfg["margin"])
    r = np.arange(1, len(res.partial_sums) + 1)
    out.csv("partial_sums.csv", ["r", "term", "partial_sum"],
            [r, np.diff(res.partial_sums, prepend=0.0), res.partial_sums])
    return res.to_dict()


def demo_example1(cfg, seed, threads, out):
    spec = ProcessSpec("eta0", {"delta": cfg["delta"]})
    ens = sample(spec, None, _positive_int(cfg, "count"), seed, threads)
    out.csv("eta0_paths.csv", [f"{t:.17g}" for t in ens.nodes], ens.paths.T)
    res = _probe(cfg, out)
    res["sample"] = {"count": ens.count, "mean_sup_norm": float(ens.sup_norms().mean())}
    return res


def demo_example2(cfg, seed, threads, out):
    res = param_integral_band("cos_x", {"law": "uniform", "low": -1.0, "high": 1.0}, _positive_int(cfg, "n"),
                              cfg["epsilon"], _positive_int(cfg, "replicas"), seed,
                              PeriodicGrid(_positive_int(cfg, "grid_size")), _positive_int(cfg, "pilot"),
                              threads=threads)
    d = _band_output(res, out)
    d["U_eps_closed_form"] = math.sqrt(1.0 / 3.0) * 1.959963984540054
    return d


def demo_example3(cfg, seed, threads, out):
    res = sequence_example_moments(cfg["alpha"], cfg["p0"], _positive_int(cfg, "n_max"),
                                   _positive_int(cfg, "count"), seed, threads=threads)
    out.csv("second_moments.csv", ["n", "second_moment", "second_moment_exact"],
            [res["n"], res["second_moment"], res["second_moment_exact"]])
    return res


COMMANDS = {
    "approx": cmd_approx,
    "simulate": cmd_simulate,
    "criterion": cmd_criterion,
    "equiconv": cmd_equiconv,
    "entropy": cmd_entropy,
    "probe41": cmd_probe41,
    "band": cmd_band,
    "clt-test": cmd_clt_test,
    "decay-check": cmd_decay_check,
}

DEMOS = {"example1": demo_example1, "example2": demo_example2, "example3": demo_example3}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for reports and CSVs")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--set", action="append", dest="overrides", default=argparse.SUPPRESS,
                        metavar="PATH=VALUE", help="override a config entry (repeatable)")
    parser = argparse.ArgumentParser(prog="vpclt", parents=[common],
                                     description="Simulation diagnostics for the CLT in C(T).")
    parser.add_argument("--version", action="version", version=f"vpclt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    demo = sub.add_parser("demo", parents=[common])
    demo.add_argument("scenario", choices=sorted(DEMOS))
    return parser


def _error(kind: str, message: str, code: int) -> int:
    json.dump({"error": {"type": kind, "message": message, "exit_code": code}}, sys.stderr)
    sys.stderr.write("\n")
    return code


def _resolve_seed(args) -> int:
    if hasattr(args, "seed"):
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: not an integer: {env!r}") from None
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if not exc.code:
            return 0
        return _error("UsageError", "invalid command line (see usage above)", 1)
    scenario = getattr(args, "scenario", None)
    try:
        seed = _resolve_seed(args)
        threads = getattr(args, "threads", 1)
        if threads < 1:
            raise ConfigError("threads: must be at least 1")
        cfg = resolve_config(args.command, getattr(args, "config", None), getattr(args, "overrides", None), scenario)
        label = f"demo_{scenario}" if scenario else args.command
        out = Outputs(getattr(args, "out_dir", "."), label)
        fn = DEMOS[scenario] if scenario else COMMANDS[args.command]
        result = fn(cfg, seed, threads, out)
        report = out.report(cfg, result, {"seed": seed, "threads": threads})
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _error(type(exc).__name__, str(exc), 2)
    except (ValueError, KeyError, TypeError, OSError) as exc:
        return _error(type(exc).__name__, str(exc), 1)
    print(report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
