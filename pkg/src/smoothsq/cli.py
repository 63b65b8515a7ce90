"""Command-line driver: ``smoothsq <command> [options]``.

Configuration is layered: built-in defaults, then a TOML file (``--config``),
then ``SMOOTHSQ_*`` environment variables, then command-line flags.  Every
run writes its artifacts plus ``manifest.json`` (resolved config, seed and
the sha256 of each artifact) into ``--out``.  No timestamps are recorded, so
identical inputs give byte-identical outputs.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 a selftest check failed.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

import click
import numpy as np
import tomli

from . import __version__
from . import approx, gaussian, hard, learner, sq
from . import lp as lpcore

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_SELFTEST = 4

ENV_PREFIX = "SMOOTHSQ_"

GLOBAL_DEFAULTS = {"seed": 0, "out": "smoothsq-out", "threads": 1, "grid": 200}

COMMAND_DEFAULTS = {
    "approx-sweep": {"sigma": 1.0, "mmax": 20, "gnuplot": False},
    "hard-check": {"k": 4, "C": 20, "S": [[0.5, 1.0]], "samples": 1_000_000, "bins": 200},
    "gap": {"k": 9, "sigma": 0.01, "C": 20, "S": [[0.5, 1.0]], "samples": 10_000_000},
    "learn": {
        "sigma": 0.5,
        "epsilon": 0.1,
        "degree": -1,
        "d": 1,
        "labels": "witness",
        "witness_degree": 8,
        "features": "direction",
        "n_train": 100_000,
        "n_test": 100_000,
        "runs": 1,
    },
    "distinguish": {
        "d": 16,
        "m": 8,
        "sigma": 0.5,
        "tau": 1e-3,
        "directions": 16,
        "battery_degree": 8,
        "max_overlap": 0.9,
    },
    "selftest": {"samples": 200_000},
}


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


class NumericalFailure(click.ClickException):
    exit_code = EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# configuration


def _coerce(name: str, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        return _intervals(name, value)
    raise ConfigError(f"{name}: unsupported value {value!r}")


def _intervals(name: str, value) -> list[list[float]]:
    """Interval lists: ``[[a, b], ...]`` or a flat ``a,b,c,d`` string/list."""
    if isinstance(value, str):
        try:
            value = [float(v) for v in value.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"{name}: cannot parse {value!r} as numbers") from None
    if isinstance(value, list) and value and all(isinstance(v, (int, float)) for v in value):
        if len(value) % 2:
            raise ConfigError(f"{name}: odd number of interval endpoints")
        value = [value[i:i + 2] for i in range(0, len(value), 2)]
    if not isinstance(value, list) or not all(isinstance(p, list) and len(p) == 2 for p in value):
        raise ConfigError(f"{name}: expected a list of [lo, hi] pairs")
    try:
        return [[float(a), float(b)] for a, b in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: interval endpoints must be numbers") from None


def _parse_env_value(raw: str):
    try:
        return tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        return raw


def _env_name(section: str | None, key: str) -> str:
    parts = [section, key] if section else [key]
    return ENV_PREFIX + "_".join(p.replace("-", "_").upper() for p in parts)


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from None


def resolve_config(command: str, file_cfg: dict, flags: dict, env=None) -> dict:
    """Merge defaults, file, environment and flags for ``command``.

    Unknown keys (at top level or inside a command table) are errors.
    Returns a flat dict of global plus command keys.
    """
    env = os.environ if env is None else env
    known_top = set(GLOBAL_DEFAULTS) | set(COMMAND_DEFAULTS)
    unknown = sorted(set(file_cfg) - known_top)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for section in COMMAND_DEFAULTS:
        table = file_cfg.get(section, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table")
        bad = sorted(set(table) - set(COMMAND_DEFAULTS[section]))
        if bad:
            raise ConfigError(f"unknown keys in [{section}]: {', '.join(bad)}")

    out = {}
    layers = [
        (None, GLOBAL_DEFAULTS, {k: v for k, v in file_cfg.items() if k in GLOBAL_DEFAULTS}),
        (command, COMMAND_DEFAULTS[command], file_cfg.get(command, {})),
    ]
    for section, defaults, from_file in layers:
        for key, default in defaults.items():
            name = f"{section}.{key}" if section else key
            value = copy.deepcopy(default)
            if key in from_file:
                value = _coerce(name, from_file[key], default)
            env_key = _env_name(section, key)
            if env_key in env:
                value = _coerce(env_key, _parse_env_value(env[env_key]), default)
            if flags.get(key) is not None:
                value = _coerce(f"--{key}", flags[key], default)
            out[key] = value
    if out["seed"] < 0 or out["seed"] >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if out["threads"] < 1:
        raise ConfigError("threads must be positive")
    return out


# ---------------------------------------------------------------------------
# artifacts


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def csv_bytes(rows: list[dict], columns) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue().encode()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode()


class Run:
    """Collects artifacts for one command and writes the manifest."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.artifacts: list[dict] = []

    def write(self, name: str, data: bytes):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_bytes(data)
        self.artifacts.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "seed": self.cfg["seed"]})

    def finish(self, extra: dict | None = None):
        manifest = {
            "command": self.command,
            "version": __version__,
            "seed": self.cfg["seed"],
            "config": self.cfg,
            "artifacts": self.artifacts,
        }
        if extra:
            manifest.update(extra)
        self.write("manifest.json", json_bytes(manifest))
        self.artifacts.pop()


# ---------------------------------------------------------------------------
# commands


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="TOML config file.")
@click.option("--seed", type=int, default=None, help="Global seed (u64).")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--threads", type=int, default=None, help="Worker threads where supported.")
@click.option("--grid", type=int, default=None, help="Gauss-Hermite grid size.")
@click.version_option(__version__, prog_name="smoothsq")
@click.pass_context
def main(ctx, config_path, seed, out, threads, grid):
    """Smoothed-halfspace SQ lower-bound experiments."""
    ctx.obj = {
        "file": load_config_file(config_path),
        "flags": {"seed": seed, "out": out, "threads": threads, "grid": grid},
    }


def _setup(ctx, command: str, **flags) -> tuple[dict, Run]:
    merged = dict(ctx.obj["flags"])
    merged.update(flags)
    cfg = resolve_config(command, ctx.obj["file"], merged)
    return cfg, Run(command, cfg)


def _numerical(fn):
    """Map numerical failures inside a command to exit code 3."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (lpcore.LpError, gaussian.QuadratureError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise NumericalFailure(f"numerical failure in {fn.__name__}: {exc}") from None

    return wrapper


@main.command("approx-sweep")
@click.option("--sigma", type=float, default=None)
@click.option("--mmax", type=int, default=None)
@click.option("--gnuplot/--no-gnuplot", default=None, help="Also write a gnuplot script stub.")
@click.pass_context
@_numerical
def approx_sweep(ctx, sigma, mmax, gnuplot):
    """Best L1 error of T_sigma sign versus degree."""
    cfg, run = _setup(ctx, "approx-sweep", sigma=sigma, mmax=mmax, gnuplot=gnuplot)
    grid = approx.approximation_grid(cfg["grid"])
    curve = approx.degree_sweep("sign", cfg["sigma"], cfg["mmax"], grid, threads=cfg["threads"], keep_results=False)
    cols = ("sigma", "m", "l1_error", "l2_error", "certificate_k", "certificate_value")
    run.write("degree_curve.csv", csv_bytes(curve.rows(), cols))
    if cfg["gnuplot"]:
        stub = (
            "set datafile separator ','\nset logscale y\nset xlabel 'm'\nset ylabel 'l1 error'\n"
            "plot 'degree_curve.csv' using 2:3 skip 1 with linespoints title 'l1', "
            "'' using 2:4 skip 1 with linespoints title 'l2 tail'\n"
        )
        run.write("degree_curve.gp", stub.encode())
    run.finish({"nonincreasing": curve.is_nonincreasing()})
    click.echo(f"wrote {len(curve.points)} rows to {run.out / 'degree_curve.csv'}")


@main.command("hard-check")
@click.option("--k", type=int, default=None)
@click.option("--C", "C", type=int, default=None)
@click.option("--S", "S", type=str, default=None, help="Target set as a,b[,c,d...] interval endpoints.")
@click.option("--samples", type=int, default=None)
@click.pass_context
@_numerical
def hard_check(ctx, k, C, S, samples):
    """Moment, density-ratio and fractional-mass checks of the hard sampler."""
    cfg, run = _setup(ctx, "hard-check", k=k, C=C, S=S, samples=samples)
    try:
        sc = hard.HardSamplerConfig(cfg["k"], cfg["C"], tuple(map(tuple, cfg["S"])), cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["samples"] < 100_000:
        raise ConfigError("hard-check needs at least 1e5 samples")
    x = hard.sample_hard(sc, None, cfg["samples"])
    moments = hard.moment_check(x, range(1, sc.k + 3))
    run.write(
        "moments.csv",
        csv_bytes(
            [{"order": r.order, "empirical": r.empirical, "target": r.target, "z_score": r.z} for r in moments],
            ("order", "empirical", "target", "z_score"),
        ),
    )
    fm = hard.fractional_mass(sc, x)
    run.write(
        "fractional_mass.csv",
        csv_bytes(
            [{"fraction": fm.fraction, "bound": fm.bound, "standard_error": fm.standard_error, "pass": fm.passes}],
            ("fraction", "bound", "standard_error", "pass"),
        ),
    )
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dr = hard.density_ratio_bound(sc, x, bins=cfg["bins"])
    run.write("density_ratio.json", json_bytes({
        "max_ratio": dr.max_ratio, "limit": dr.limit, "worst_excess_3se": dr.worst_excess(3.0),
        "excluded_bins": dr.excluded, "seed": cfg["seed"],
    }))
    matched = [r for r in moments if r.order <= sc.k]
    run.finish()
    click.echo(
        f"max |z| (orders 1..{sc.k}) = {max(abs(r.z) for r in matched):.3f}; "
        f"fraction in S = {fm.fraction:.6f} (bound {fm.bound:.6f}); max density ratio = {dr.max_ratio:.4f}"
    )


@main.command("gap")
@click.option("--k", type=int, default=None)
@click.option("--sigma", type=float, default=None)
@click.option("--C", "C", type=int, default=None)
@click.option("--samples", type=int, default=None)
@click.pass_context
@_numerical
def gap(ctx, k, sigma, C, samples):
    """Threshold-pair gap under the hard X versus the Gaussian."""
    cfg, run = _setup(ctx, "gap", k=k, sigma=sigma, C=C, samples=samples)
    try:
        rep = hard.threshold_gap_experiment(
            cfg["k"], cfg["sigma"], cfg["C"], cfg["samples"], cfg["seed"], S=tuple(map(tuple, cfg["S"]))
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    row = rep.as_dict()
    cols = ("k", "C", "sigma", "t", "t_prime", "samples", "seed", "gaussian_gap_exact", "gaussian_gap_mc",
            "gaussian_gap_se", "hard_gap", "hard_gap_se", "difference", "ratio")
    run.write("threshold_gap.csv", csv_bytes([row], cols))
    run.finish()
    click.echo(f"gaussian gap {rep.gaussian_gap_exact:.6g}, hard gap {rep.hard_gap:.6g}, ratio {rep.ratio:.3f}")


def _label_distribution(cfg: dict, grid):
    kind = cfg["labels"]
    if kind == "witness":
        res = approx.l1_best_approx(approx.smoothed("sign", cfg["sigma"]), cfg["witness_degree"], grid)
        return hard.build_labeled(res, cfg["sigma"])
    if kind == "halfspace":
        return hard.LabeledHardDistribution(hard.FunctionLabel(np.sign, (0.0,)), cfg["sigma"])
    if kind == "coins":
        return hard.LabeledHardDistribution.independent()
    raise ConfigError(f"learn.labels must be witness, halfspace or coins, not {kind!r}")


@main.command("learn")
@click.option("--sigma", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--degree", type=int, default=None, help="Learner degree (-1: default rule).")
@click.option("--d", type=int, default=None)
@click.option("--labels", type=click.Choice(["witness", "halfspace", "coins"]), default=None)
@click.option("--witness-degree", "witness_degree", type=int, default=None)
@click.option("--features", type=click.Choice(["full", "direction"]), default=None)
@click.option("--n-train", "n_train", type=int, default=None)
@click.option("--n-test", "n_test", type=int, default=None)
@click.option("--runs", type=int, default=None, help="Independent runs (seeds seed..seed+runs-1).")
@click.pass_context
@_numerical
def learn(ctx, **flags):
    """L1 polynomial regression learner versus OPT_sigma."""
    cfg, run = _setup(ctx, "learn", **flags)
    grid = approx.approximation_grid(cfg["grid"])
    base = _label_distribution(cfg, grid)
    opt = hard.opt_sigma(base, cfg["sigma"])
    rows = []
    for r in range(cfg["runs"]):
        seed = cfg["seed"] + r
        dist = sq.plant(base, cfg["d"], seed=seed)
        try:
            lc = learner.LearnerConfig(
                sigma=cfg["sigma"],
                epsilon=cfg["epsilon"],
                degree=None if cfg["degree"] < 0 else cfg["degree"],
                features=cfg["features"],
                direction=tuple(dist.v) if cfg["features"] == "direction" else None,
                n_train=cfg["n_train"],
                n_test=cfg["n_test"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        rng = hard.make_rng([seed, 1])
        train = learner.Dataset(*dist.sample(lc.n_train, rng))
        test = learner.Dataset(*dist.sample(lc.n_test, rng))
        try:
            res = learner.learn_smoothed(train, test, lc, opt, seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        rows.append(res.row)
    run.write("run_table.csv", csv_bytes(rows, learner.RUN_COLUMNS))
    run.finish()
    for row in rows:
        click.echo(f"seed {row['seed']}: test error {row['test_error']:.5f}, OPT_sigma {opt:.5f}, gap {row['gap']:+.5f}")


@main.command("distinguish")
@click.option("--d", type=int, default=None)
@click.option("--m", type=int, default=None, help="Witness degree of the planted labels.")
@click.option("--sigma", type=float, default=None)
@click.option("--tau", type=float, default=None)
@click.option("--directions", type=int, default=None)
@click.option("--battery-degree", "battery_degree", type=int, default=None)
@click.pass_context
@_numerical
def distinguish(ctx, **flags):
    """Low-degree battery and hypothesis query on planted versus null."""
    cfg, run = _setup(ctx, "distinguish", **flags)
    grid = approx.approximation_grid(cfg["grid"])
    res = approx.l1_best_approx(approx.smoothed("sign", cfg["sigma"]), cfg["m"], grid)
    base = hard.build_labeled(res, cfg["sigma"])
    planted = sq.plant(base, cfg["d"], seed=cfg["seed"])
    battery = sq.low_degree_battery(
        cfg["d"], cfg["battery_degree"], cfg["directions"], seed=[cfg["seed"], 2],
        avoid=planted.v, max_overlap=cfg["max_overlap"],
    )
    battery.append(sq.threshold_query(planted.v, 0.0, cfg["sigma"], "hypothesis"))
    rep = sq.distinguish(planted, planted.null(), battery, cfg["tau"], seed=[cfg["seed"], 3])
    run.write("distinguish.json", json_bytes(rep.as_dict()))
    run.write("queries.csv", csv_bytes(rep.rows(), ("query_id", "name", "planted", "null", "gap", "exact")))
    run.finish({"l1_error": res.l1_error})
    off = max(rep.gaps[:-1]) if len(rep.gaps) > 1 else 0.0
    click.echo(f"max battery gap {off:.3g}; hypothesis gap {rep.gaps[-1]:.5f}; l1_error {res.l1_error:.5f}")


@main.command("selftest")
@click.option("--samples", type=int, default=None)
@click.pass_context
def selftest(ctx, samples):
    """Run the invariant suite; exit 4 if any check fails."""
    from .selfcheck import run_checks

    cfg, run = _setup(ctx, "selftest", samples=samples)
    try:
        results = run_checks(cfg["seed"], cfg["samples"], cfg["grid"])
    except (lpcore.LpError, gaussian.QuadratureError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(f"numerical failure in selftest: {exc}") from None
    rows = [{"check": r.name, "value": r.value, "limit": r.limit, "passed": r.passed} for r in results]
    run.write("selftest.csv", csv_bytes(rows, ("check", "value", "limit", "passed")))
    failed = [r.name for r in results if not r.passed]
    run.finish({"passed": not failed})
    for r in results:
        click.echo(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.value:.6g} (limit {r.limit:.6g})")
    if failed:
        click.echo(f"{len(failed)} check(s) failed", err=True)
        sys.exit(EXIT_SELFTEST)


if __name__ == "__main__":  # pragma: no cover
    main()
