"""Command-line experiment harness.

    scgt design    --config cfg.json
    scgt simulate  --config cfg.json --set deltas=[0.3,0.38] --seeds 10
    scgt se        --config cfg.json
    scgt potential --config cfg.json
    scgt baseline  --config cfg.json

A config is a JSON object; flags override its values.  Every CSV is written
atomically next to a JSON sidecar holding the resolved config, including the
divisibility-rounded ``(n, p)`` of every sweep point.  Exit codes: 0 success,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .amp import AmpConfig, AmpDivergenceError, quantize, run_columnwise_sc_amp, run_matrix_sc_amp, run_sc_amp_qgt
from .baselines import LpInfeasibleError, cvx_estimate, lp_estimate
from .denoise import NumericalError
from .design import build_base_matrix, dump_design, sample_design, trivial_base_matrix
from .metrics import fpr_fnr, hamming_error_rate, mse, normalized_sq_correlation, pooled_correlation, row_error_rate
from .model import observe_pooled, observe_qgt, sample_pooled_signal, sample_qgt_signal
from .potential import NOISELESS_SIGMA2, find_argmin_and_stationary
from .state_evolution import (
    cov_se_predict_metrics,
    iterate_cov_se,
    iterate_scalar_se,
    reference_test_limit,
    se_predict_metrics,
)

log = logging.getLogger("scgt")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

ALGORITHMS = ("sc-amp", "iid-amp", "mat-sc-amp", "col-sc-amp", "lp", "cvx")

DEFAULTS = {
    "task": "qgt",
    "algorithm": "sc-amp",
    "design": "sc",
    "omega": 6,
    "lambda": 40,
    "alpha": 0.5,
    "p": 20000,
    "n": None,
    "deltas": [],
    "pi": 0.3,
    "sigma2": 0.0,
    "noise_scaling": "rescaled",
    "sums": "true",
    "seeds": [0],
    "max_iters": 300,
    "tol": 1e-9,
    "zetas": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    "grid_size": 500,
    "se_k_max": 10000,
    "p_cap": 2000,
    "workers": 1,
    "output": "out",
}

SIM_COLUMNS = [
    "algorithm", "task", "design", "omega", "lambda", "alpha", "p", "n", "delta_requested", "delta",
    "pi", "sigma2", "n_seeds", "correlation_mean", "correlation_std", "correlation_q_mean",
    "correlation_q_std", "mse_mean", "mse_std", "hamming_mean", "hamming_std", "iterations_mean",
    "converged_fraction", "hamming_le_4mse", "extra_tests",
]
TRADEOFF_COLUMNS = ["algorithm", "delta", "zeta", "fpr_mean", "fpr_std", "fnr_mean", "fnr_std"]
SE_COLUMNS = [
    "task", "design", "omega", "lambda", "p", "n", "delta_requested", "delta", "pi", "sigma2",
    "k_converged", "converged", "mse", "correlation", "correlation_q", "n_star_over_p",
]
SE_TRADEOFF_COLUMNS = ["delta", "zeta", "fpr", "fnr"]
POTENTIAL_COLUMNS = ["delta", "pi", "sigma2", "argmin_grid", "argmin", "largest_stationary", "n_stationary"]


class ConfigError(ValueError):
    pass


# -- config ----------------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(path: str | None, overrides: dict) -> dict:
    cfg = dict(DEFAULTS)
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        cfg.update(loaded)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(cfg) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return _validate(cfg)


def _validate(cfg: dict) -> dict:
    if cfg["task"] not in ("qgt", "pooled"):
        raise ConfigError("task must be 'qgt' or 'pooled'")
    if cfg["algorithm"] not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {', '.join(ALGORITHMS)}")
    if cfg["design"] not in ("sc", "iid"):
        raise ConfigError("design must be 'sc' or 'iid'")
    if cfg["noise_scaling"] not in ("rescaled", "raw", "paper"):
        raise ConfigError("noise_scaling must be 'rescaled', 'raw' or 'paper'")
    if cfg["sums"] not in ("true", "prior"):
        raise ConfigError("sums must be 'true' or 'prior'")
    seeds = cfg["seeds"]
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a nonempty list of integers (or a count)")
    cfg["seeds"] = seeds
    deltas = cfg["deltas"]
    if isinstance(deltas, (int, float)):
        deltas = [deltas]
    if not isinstance(deltas, list) or not all(isinstance(d, (int, float)) and d > 0 for d in deltas):
        raise ConfigError("deltas must be a list of positive numbers")
    unique = list(dict.fromkeys(float(d) for d in deltas))
    if len(unique) < len(deltas):
        warnings.warn("duplicate delta values removed", UserWarning, stacklevel=2)
    cfg["deltas"] = unique
    pi = cfg["pi"]
    if cfg["task"] == "qgt":
        if not isinstance(pi, (int, float)) or not 0 < pi < 1:
            raise ConfigError("qgt needs a scalar pi in (0, 1)")
    else:
        if not isinstance(pi, list) or abs(sum(pi) - 1.0) > 1e-12 or min(pi) < 0:
            raise ConfigError("pooled needs pi as a probability vector summing to 1")
    for key in ("omega", "lambda", "p", "max_iters", "grid_size", "workers", "se_k_max", "p_cap"):
        if not isinstance(cfg[key], int) or cfg[key] < 1:
            raise ConfigError(f"{key} must be a positive integer")
    if not 0 < cfg["alpha"] < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if cfg["sigma2"] < 0:
        raise ConfigError("sigma2 must be nonnegative")
    return cfg


def _base(cfg, design=None):
    design = design or cfg["design"]
    if design == "iid":
        return trivial_base_matrix(cfg["alpha"])
    try:
        return build_base_matrix(cfg["omega"], cfg["lambda"], cfg["alpha"])
    except ValueError as err:
        raise ConfigError(str(err)) from err


def feasible_size(delta: float, p: int, base) -> tuple[int, int]:
    """Round ``p`` to a multiple of ``C`` and ``n = round(delta p / R) R``."""
    p_ok = max(base.C, int(round(p / base.C)) * base.C)
    n = max(base.R, int(round(delta * p_ok / base.R)) * base.R)
    return n, p_ok


def _sizes(cfg, base) -> list[dict]:
    out = []
    for d in cfg["deltas"]:
        n, p = feasible_size(d, cfg["p"], base)
        if p != cfg["p"]:
            log.warning("p=%d is not a multiple of C=%d; using p=%d", cfg["p"], base.C, p)
        out.append({"delta_requested": d, "n": n, "p": p, "delta": n / p})
    return out


# -- output ------------------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k, "")) for k in columns})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return json.dumps([float(x) for x in v])
    return v


def _write_outputs(cfg, files: dict, meta: dict) -> list[Path]:
    """Write every ``name -> (columns, rows)`` CSV, then the sidecar; all atomically."""
    prefix = Path(cfg["output"])
    written = []
    payloads = {}
    for name, (columns, rows) in files.items():
        payloads[prefix.parent / f"{prefix.name}_{name}.csv"] = _csv_text(columns, rows)
    sidecar = {"config": cfg, **meta, "files": [p.name for p in payloads]}
    payloads[prefix.parent / f"{prefix.name}.json"] = json.dumps(sidecar, indent=2, default=_json_default) + "\n"
    for path, text in payloads.items():
        _atomic_write(path, text)
        written.append(path)
    return written


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _sub_seeds(seed: int) -> tuple[int, int, int]:
    state = np.random.SeedSequence(seed).generate_state(3)
    return tuple(int(s) for s in state)


def _mean_std(values):
    a = np.asarray(values, dtype=float)
    std = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return float(a.mean()), std


# -- single runs ---------------------------------------------------------------------

def _noise_args(cfg, base, n, p):
    """``(noise_var, noise_scaling)`` for ``observe_*``."""
    s2 = cfg["sigma2"]
    if cfg["noise_scaling"] == "paper":
        raw = p * s2 if base.is_trivial else p * s2 / (2 * base.C)
        return raw, "raw"
    return s2, cfg["noise_scaling"]


def _run_point(args) -> dict:
    """One (delta, seed) simulation; returns scores, never raises numerical errors silently."""
    cfg, point, seed = args
    algorithm = cfg["algorithm"]
    design_kind = cfg["design"]
    if algorithm == "iid-amp":
        design_kind = "iid"
    elif algorithm == "sc-amp":
        design_kind = "sc"
    base = _base(cfg, design_kind)
    n, p = point["n"], point["p"]
    d_seed, s_seed, e_seed = _sub_seeds(seed)
    design = sample_design(base, n, p, seed=d_seed, kind=design_kind)
    noise_var, scaling = _noise_args(cfg, base, n, p)
    amp_cfg = AmpConfig(max_iters=cfg["max_iters"], tol=cfg["tol"])
    out = {"seed": seed}
    if cfg["task"] == "qgt":
        pi = float(cfg["pi"])
        beta = sample_qgt_signal(p, pi, seed=s_seed)
        inst = observe_qgt(design, beta, noise_var, noise_scaling=scaling, seed=e_seed, sums=cfg["sums"], pi=pi)
        if algorithm in ("sc-amp", "iid-amp"):
            res = run_sc_amp_qgt(design, inst.yt, pi, inst.sigma2, config=amp_cfg)
            est, iters, conv = res.estimate, res.n_iter, res.converged
        elif algorithm == "lp":
            est, iters, conv = lp_estimate(design.X, inst.y), 1, True
        elif algorithm == "cvx":
            if inst.sigma2 <= 0:
                raise ConfigError("cvx needs sigma2 > 0")
            r = cvx_estimate(design.X.astype(float), inst.y, inst.sigma2 * design.scale ** 2, pi)
            est, iters, conv = r.estimate, r.n_iter, r.converged
        else:
            raise ConfigError(f"algorithm {algorithm} does not apply to qgt")
        q = quantize(est, "threshold_half")
        m = mse(est, beta)
        ham = hamming_error_rate(q, beta)
        out.update(correlation=normalized_sq_correlation(est, beta),
                   correlation_q=normalized_sq_correlation(q, beta) if q.any() else 0.0,
                   mse=m, hamming=ham, iterations=iters, converged=conv,
                   # the 4 * MSE bound is exact for 0.5-threshold quantization
                   hamming_le_4mse=bool(ham <= 4 * m + 1e-15))
        tradeoff = {}
        for z in cfg["zetas"]:
            tradeoff[z] = fpr_fnr((est > z).astype(float), beta)
        out["tradeoff"] = tradeoff
    else:
        pi = np.asarray(cfg["pi"], dtype=float)
        B = sample_pooled_signal(p, pi, seed=s_seed)
        inst = observe_pooled(design, B, noise_var, noise_scaling=scaling, seed=e_seed, sums=cfg["sums"], pi=pi)
        if algorithm == "mat-sc-amp":
            res = run_matrix_sc_amp(design, inst.Yt, pi, inst.noise_cov, config=amp_cfg)
            est, iters, conv = res.estimate, res.n_iter, res.converged
        elif algorithm == "col-sc-amp":
            est, results = run_columnwise_sc_amp(design, inst.Yt, pi, np.diag(inst.noise_cov), config=amp_cfg)
            iters, conv = max(r.n_iter for r in results), all(r.converged for r in results)
        else:
            raise ConfigError(f"algorithm {algorithm} does not apply to pooled data")
        q = quantize(est, "row_argmax")
        out.update(correlation=pooled_correlation(est, B), correlation_q=pooled_correlation(q, B),
                   mse=mse(est, B), hamming=row_error_rate(q, B), iterations=iters, converged=conv,
                   hamming_le_4mse=True, tradeoff={})
    return out


def _sweep(cfg) -> tuple[list, list, list]:
    algorithm = cfg["algorithm"]
    design_kind = {"sc-amp": "sc", "iid-amp": "iid"}.get(algorithm, cfg["design"])
    base = _base(cfg, design_kind)
    points = _sizes(cfg, base)
    jobs = [(cfg, pt, s) for pt in points for s in cfg["seeds"]]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    rows, trade_rows = [], []
    k = len(cfg["seeds"])
    for i, pt in enumerate(points):
        chunk = results[i * k:(i + 1) * k]
        row = {"algorithm": algorithm, "task": cfg["task"], "design": design_kind,
               "omega": base.omega, "lambda": base.lam, "alpha": cfg["alpha"],
               "p": pt["p"], "n": pt["n"], "delta_requested": pt["delta_requested"], "delta": pt["delta"],
               "pi": cfg["pi"], "sigma2": cfg["sigma2"], "n_seeds": k,
               "iterations_mean": float(np.mean([r["iterations"] for r in chunk])),
               "converged_fraction": float(np.mean([r["converged"] for r in chunk])),
               "hamming_le_4mse": all(r["hamming_le_4mse"] for r in chunk),
               "extra_tests": base.C if cfg["sums"] == "true" else 0}
        for key, col in (("correlation", "correlation"), ("correlation_q", "correlation_q"),
                         ("mse", "mse"), ("hamming", "hamming")):
            row[f"{col}_mean"], row[f"{col}_std"] = _mean_std([r[key] for r in chunk])
        rows.append(row)
        for z in cfg["zetas"] if cfg["task"] == "qgt" else []:
            fm, fs = _mean_std([r["tradeoff"][z][0] for r in chunk])
            nm, ns = _mean_std([r["tradeoff"][z][1] for r in chunk])
            trade_rows.append({"algorithm": algorithm, "delta": pt["delta"], "zeta": z,
                               "fpr_mean": fm, "fpr_std": fs, "fnr_mean": nm, "fnr_std": ns})
    return rows, trade_rows, points


# -- commands ----------------------------------------------------------------------

def cmd_design(cfg) -> list[Path]:
    base = _base(cfg)
    if cfg["n"] is not None:
        n, p = int(cfg["n"]), cfg["p"]
    elif cfg["deltas"]:
        n, p = feasible_size(cfg["deltas"][0], cfg["p"], base)
    else:
        raise ConfigError("design needs n or one delta")
    design = sample_design(base, n, p, seed=cfg["seeds"][0], kind=cfg["design"])
    target = Path(cfg["output"]).with_suffix(".csv")
    target.parent.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = dump_design(design, target)
    return [csv_path, json_path]


def cmd_simulate(cfg) -> list[Path]:
    if not cfg["deltas"]:
        raise ConfigError("deltas must not be empty")
    if cfg["algorithm"] in ("lp", "cvx"):
        raise ConfigError("use the baseline command for lp and cvx")
    rows, trade_rows, points = _sweep(cfg)
    files = {"summary": (SIM_COLUMNS, rows)}
    if trade_rows:
        files["tradeoff"] = (TRADEOFF_COLUMNS, trade_rows)
    return _write_outputs(cfg, files, {"points": points, "columns": SIM_COLUMNS})


def cmd_baseline(cfg) -> list[Path]:
    if not cfg["deltas"]:
        raise ConfigError("deltas must not be empty")
    if cfg["task"] != "qgt":
        raise ConfigError("baselines are available for qgt only")
    if cfg["algorithm"] not in ("lp", "cvx"):
        cfg = dict(cfg, algorithm="lp")
    if cfg["p"] > cfg["p_cap"]:
        warnings.warn(f"p={cfg['p']} exceeds p_cap; using p={cfg['p_cap']}", UserWarning, stacklevel=2)
        cfg = dict(cfg, p=cfg["p_cap"])
    rows, trade_rows, points = _sweep(cfg)
    files = {"summary": (SIM_COLUMNS, rows), "tradeoff": (TRADEOFF_COLUMNS, trade_rows)}
    return _write_outputs(cfg, files, {"points": points, "columns": SIM_COLUMNS})


def _se_sigma2(cfg, base, n, p):
    """Variance of the rescaled noise implied by the config."""
    s2 = cfg["sigma2"]
    scale2 = n * cfg["alpha"] * (1 - cfg["alpha"]) / base.R
    if cfg["noise_scaling"] == "rescaled":
        return s2
    raw = s2 if cfg["noise_scaling"] == "raw" else (p * s2 if base.is_trivial else p * s2 / (2 * base.C))
    return raw / scale2


def cmd_se(cfg) -> list[Path]:
    if not cfg["deltas"]:
        raise ConfigError("deltas must not be empty")
    base = _base(cfg)
    rows, trade_rows = [], []
    points = _sizes(cfg, base)
    for pt in points:
        sigma2 = _se_sigma2(cfg, base, pt["n"], pt["p"])
        row = {"task": cfg["task"], "design": cfg["design"], "omega": base.omega, "lambda": base.lam,
               "p": pt["p"], "n": pt["n"], "delta_requested": pt["delta_requested"], "delta": pt["delta"],
               "pi": cfg["pi"], "sigma2": sigma2, "n_star_over_p": reference_test_limit(cfg["pi"], pt["p"])}
        if cfg["task"] == "qgt":
            tr = iterate_scalar_se(base, pt["delta"], cfg["pi"], sigma2, k_max=cfg["se_k_max"])
            met = se_predict_metrics(tr.chi2[-1], cfg["pi"], cfg["zetas"])
            row.update(k_converged=tr.k_final, converged=tr.converged, mse=met["mse"],
                       correlation=met["correlation"], correlation_q="")
            for z in cfg["zetas"]:
                trade_rows.append({"delta": pt["delta"], "zeta": z, "fpr": met["fpr"][float(z)],
                                   "fnr": met["fnr"][float(z)]})
        else:
            L = len(cfg["pi"])
            tr = iterate_cov_se(base, pt["delta"], cfg["pi"], sigma2 * np.eye(L), k_max=cfg["se_k_max"])
            met = cov_se_predict_metrics(tr)
            row.update(k_converged=tr.k_final, converged=tr.converged, mse=met["mse"],
                       correlation=met["correlation"], correlation_q=met["correlation_quantized"])
        rows.append(row)
    files = {"se": (SE_COLUMNS, rows)}
    if trade_rows:
        files["se_tradeoff"] = (SE_TRADEOFF_COLUMNS, trade_rows)
    return _write_outputs(cfg, files, {"points": points, "columns": SE_COLUMNS})


def cmd_potential(cfg) -> list[Path]:
    if not cfg["deltas"]:
        raise ConfigError("deltas must not be empty")
    if cfg["task"] != "qgt":
        raise ConfigError("the potential function is defined for qgt only")
    sigma2 = cfg["sigma2"] if cfg["sigma2"] > 0 else NOISELESS_SIGMA2
    summary, curve_rows, curves = [], [], []
    for d in cfg["deltas"]:
        c = find_argmin_and_stationary(d, cfg["pi"], sigma2, cfg["grid_size"])
        summary.append({"delta": d, "pi": cfg["pi"], "sigma2": sigma2, "argmin_grid": c.argmin_grid,
                        "argmin": c.argmin, "largest_stationary": c.largest_stationary,
                        "n_stationary": len(c.stationary)})
        curve_rows += [{"delta": d, "b": b, "U": u} for b, u in zip(c.grid, c.values)]
        curves.append(c.meta())
    files = {"potential": (POTENTIAL_COLUMNS, summary), "curves": (["delta", "b", "U"], curve_rows)}
    return _write_outputs(cfg, files, {"curves": curves})


COMMANDS = {"design": cmd_design, "simulate": cmd_simulate, "se": cmd_se,
            "potential": cmd_potential, "baseline": cmd_baseline}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scgt", description="Spatially coupled group testing experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (value parsed as JSON when possible)")
        sp.add_argument("--output")
        sp.add_argument("--deltas", type=_parse_value)
        sp.add_argument("--seeds", type=_parse_value)
        sp.add_argument("--p", type=int)
        sp.add_argument("--pi", type=_parse_value)
        sp.add_argument("--sigma2", type=float)
        sp.add_argument("--algorithm")
        sp.add_argument("--design", dest="design_kind", choices=("sc", "iid"))
        sp.add_argument("--workers", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in ("output", "deltas", "seeds", "p", "pi", "sigma2",
                                               "algorithm", "workers")}
    overrides["design"] = args.design_kind
    try:
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = _parse_value(value)
        cfg = resolve_config(args.config, overrides)
        written = COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (AmpDivergenceError, NumericalError, FloatingPointError, LpInfeasibleError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
