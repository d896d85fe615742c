"""divlab command line: experiment orchestration and result emission.

Subcommands
-----------
mi-bench      train a critic on the MI staircase, one CSV per seed
variance-lab  oracle-critic variance sweeps over a KL ladder
ssl-demo      contrastive training on synthetic clusters + linear probe
selftest      run the built-in quick checks and print a pass/fail table

Outputs are '#'-headed CSV files (full config, library version, and seed in
the header; data rows below) plus one summary JSON per invocation. CSV bodies
are deterministic byte-for-byte given the config; timestamps appear only in
headers. Exit codes: 0 success, 2 configuration error, 3 numeric abort during
a run, 4 I/O error. DIVLAB_THREADS caps the worker pool.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import datetime
import json
import os
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .distributions import StaircaseSchedule
from .numcore import AdamConfig
from .objectives import ObjectiveKind, ObjectiveSpec
from .ssl_harness import SyntheticClusterSpec, ssl_train
from .trainer import TrainConfig, TrainResult, train
from .variance_lab import variance_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

#: Header keys that are metadata, not part of the runnable config.
METADATA_KEYS = {"divlab", "schema", "timestamp", "seed"}

COMMANDS = ("mi-bench", "variance-lab", "ssl-demo", "selftest")


class ConfigError(ValueError):
    """Invalid command-line or config-file input."""


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    objective: str = "mlcpc"
    alpha: float = 1.0 / 128.0
    gamma: float = 2.0
    tau: float = 1.0
    dim: int = 20
    batch: int = 128
    seeds: tuple[int, ...] = (0,)
    levels: int = 4
    steps_per_level: int = 4000
    initial_mi: float = 2.0
    reps: int = 1000
    epochs: int = 50
    out: str | None = None

    def objective_spec(self) -> ObjectiveSpec:
        return ObjectiveSpec(
            kind=ObjectiveKind(self.objective),
            alpha=self.alpha,
            gamma=self.gamma,
            tau=self.tau,
        )

    def schedule(self) -> StaircaseSchedule:
        return StaircaseSchedule(
            initial_mi=self.initial_mi,
            steps_per_level=self.steps_per_level,
            num_levels=self.levels,
        )


def parse_alpha(text: str) -> float:
    """Accept plain reals and '1/N' fraction syntax."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        try:
            return float(num) / float(den)
        except (ValueError, ZeroDivisionError) as err:
            raise ConfigError(f"cannot parse fraction {text!r}: {err}") from None
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse alpha {text!r}") from None


def parse_seeds(text: str) -> tuple[int, ...]:
    parts = [p for chunk in text.split(",") for p in chunk.split()]
    if not parts:
        raise ConfigError("empty seeds list")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"cannot parse seeds {text!r}") from None


_FIELD_PARSERS = {
    "command": str,
    "objective": str,
    "alpha": parse_alpha,
    "gamma": float,
    "tau": float,
    "dim": int,
    "batch": int,
    "seeds": parse_seeds,
    "levels": int,
    "steps_per_level": int,
    "initial_mi": float,
    "reps": int,
    "epochs": int,
    "out": str,
}


def read_config_file(path: str | Path) -> dict:
    """Flat 'key = value' file; unknown keys rejected.

    '#'-prefixed lines are comments, except that '# key = value' lines with a
    recognized key are honored; that makes every emitted CSV header a valid
    config file, so any output is reconstructible from itself.
    """
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        is_comment = line.startswith("#")
        if is_comment:
            line = line.lstrip("#").strip()
        if "=" not in line:
            if is_comment:
                continue
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in METADATA_KEYS or (is_comment and key not in _FIELD_PARSERS):
            continue
        if key not in _FIELD_PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _FIELD_PARSERS[key](value)
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divlab",
        description="Skew divergence estimation experiments",
        epilog="exit codes: 0 ok, 2 config error, 3 numeric abort, 4 I/O error",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--objective", choices=[k.value for k in ObjectiveKind])
    common.add_argument("--alpha", type=parse_alpha, help="skew (real or 1/N)")
    common.add_argument("--gamma", type=float, help="Renyi order (rmlcpc)")
    common.add_argument("--tau", type=float, help="temperature")
    common.add_argument("--dim", type=int, help="pair dimension d")
    common.add_argument("--batch", type=int, help="batch size")
    common.add_argument("--seeds", type=parse_seeds, help="comma-separated seeds")
    common.add_argument("--levels", type=int, help="number of staircase levels")
    common.add_argument("--steps-per-level", type=int, dest="steps_per_level")
    common.add_argument("--initial-mi", type=float, dest="initial_mi")
    common.add_argument("--reps", type=int, help="variance-lab repetitions")
    common.add_argument("--epochs", type=int, help="ssl-demo training epochs")
    common.add_argument("--out", help="output directory")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def parse_config(argv: list[str]) -> ExperimentConfig:
    """CLI flags override config-file values, which override defaults."""
    ns = _build_parser().parse_args(argv)
    values: dict = {}
    if ns.config:
        try:
            values.update(read_config_file(ns.config))
        except OSError as err:
            raise ConfigError(f"cannot read config file: {err}") from None
    file_command = values.pop("command", None)
    if file_command is not None and file_command != ns.command:
        raise ConfigError(
            f"config file says command = {file_command!r} but {ns.command!r} was invoked"
        )
    for key in _FIELD_PARSERS:
        if key in ("command",):
            continue
        cli_value = getattr(ns, key, None)
        if cli_value is not None:
            values[key] = cli_value
    config = ExperimentConfig(command=ns.command, **values)
    _validate(config)
    return config


def _validate(config: ExperimentConfig) -> None:
    if not 0.0 <= config.alpha < 0.5:
        raise ConfigError(f"alpha must lie in [0, 1/2), got {config.alpha}")
    if config.objective == "rmlcpc" and (config.gamma <= 0 or config.gamma == 1.0):
        raise ConfigError("rmlcpc needs gamma > 0 and gamma != 1 (use mlcpc for 1)")
    if config.tau <= 0:
        raise ConfigError(f"tau must be positive, got {config.tau}")
    if config.command != "selftest" and not config.out:
        raise ConfigError(f"{config.command} requires --out")
    if config.batch < 2:
        raise ConfigError("batch must be >= 2")
    try:
        # Construct eagerly so objective parameter errors surface as config errors.
        config.objective_spec()
    except ValueError as err:
        raise ConfigError(str(err)) from None


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("DIVLAB_THREADS")
    if cap is not None:
        try:
            cap_n = int(cap)
        except ValueError:
            raise ConfigError(f"DIVLAB_THREADS must be an integer, got {cap!r}")
        if cap_n < 1:
            raise ConfigError("DIVLAB_THREADS must be >= 1")
        return max(1, min(cap_n, n_jobs))
    return max(1, min(os.cpu_count() or 1, n_jobs))


def _header_lines(config: ExperimentConfig, seed: int) -> list[str]:
    lines = [f"# divlab = {__version__}", "# schema = 1"]
    for f in dataclasses.fields(config):
        # Each file holds exactly one run, so its config names one seed.
        value = seed if f.name == "seeds" else getattr(config, f.name)
        if value is None:
            continue
        lines.append(f"# {f.name} = {value}")
    lines.append(f"# seed = {seed}")
    lines.append(f"# timestamp = {datetime.datetime.now().isoformat()}")
    return lines


def _write_rows(path: Path, header: list[str], columns: list[str], rows) -> None:
    with path.open("w") as fh:
        for line in header:
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
            fh.write("\n")


def _train_one(args) -> TrainResult:
    config, seed = args
    return train(
        TrainConfig(
            objective=config.objective_spec(),
            dim=config.dim,
            batch_size=config.batch,
            adam=AdamConfig(),
            schedule=config.schedule(),
            seed=seed,
        )
    )


def _pool_map(fn, jobs, max_workers):
    if max_workers == 1 or len(jobs) == 1:
        return [fn(j) for j in jobs]
    with concurrent.futures.ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, jobs))


def run_mi_bench(config: ExperimentConfig, out_dir: Path) -> int:
    results = _pool_map(
        _train_one, [(config, s) for s in config.seeds], worker_count(len(config.seeds))
    )
    summary_runs = []
    aborted = False
    for seed, result in zip(config.seeds, results):
        rows = [
            (r.step, r.level_true_mi, r.objective_value, r.mi_hat)
            for r in result.records
        ]
        _write_rows(
            out_dir / f"mi-bench_seed{seed}.csv",
            _header_lines(config, seed),
            ["step", "level_true_mi", "objective_value", "mi_hat"],
            rows,
        )
        levels = {}
        for level in range(config.levels):
            recs = result.level_records(level)
            tail = [r.mi_hat for r in recs[-500:] if np.isfinite(r.mi_hat)]
            levels[str(result.config.schedule.mi_at_level(level))] = {
                "steps": len(recs),
                "mi_hat_tail_mean": float(np.mean(tail)) if tail else None,
            }
        aborts = [
            {"step": a.step, "level_true_mi": a.level_true_mi, "reason": a.reason}
            for a in result.aborts
        ]
        aborted = aborted or bool(aborts)
        summary_runs.append({"seed": seed, "levels": levels, "aborts": aborts})
    _write_summary(config, out_dir, summary_runs)
    return EXIT_NUMERIC if aborted else EXIT_OK


def _sweep_one(args):
    config, seed = args
    kls = [config.initial_mi * 2.0**k for k in range(config.levels)]
    return variance_sweep(
        config.objective_spec(), kls, n=config.batch, reps=config.reps,
        seed=seed, dim=config.dim,
    )


def run_variance_lab(config: ExperimentConfig, out_dir: Path) -> int:
    results = _pool_map(
        _sweep_one, [(config, s) for s in config.seeds], worker_count(len(config.seeds))
    )
    summary_runs = []
    for seed, reports in zip(config.seeds, results):
        rows = [
            (
                r.true_kl,
                r.dim,
                r.n,
                r.repetitions,
                r.empirical_mean,
                r.empirical_variance,
                float("nan") if r.theorem_lower_bound is None else r.theorem_lower_bound,
            )
            for r in reports
        ]
        _write_rows(
            out_dir / f"variance-lab_seed{seed}.csv",
            _header_lines(config, seed),
            ["true_kl", "dim", "n", "reps", "mean", "variance", "theorem_lower_bound"],
            rows,
        )
        summary_runs.append(
            {
                "seed": seed,
                "cells": [
                    {
                        "true_kl": r.true_kl,
                        "mean": r.empirical_mean,
                        "variance": r.empirical_variance,
                        "theorem_lower_bound": r.theorem_lower_bound,
                    }
                    for r in reports
                ],
            }
        )
    _write_summary(config, out_dir, summary_runs)
    return EXIT_OK


def _ssl_one(args):
    config, seed = args
    spec = SyntheticClusterSpec(input_dim=config.dim)
    out = {}
    for regime, hard in (("easy", False), ("hard", True)):
        result = ssl_train(
            spec,
            config.objective_spec(),
            epochs=config.epochs,
            seed=seed,
            batch_size=config.batch,
            hard=hard,
        )
        out[regime] = (result.loss_trace, result.probe_accuracy)
    return out


def run_ssl_demo(config: ExperimentConfig, out_dir: Path) -> int:
    results = _pool_map(
        _ssl_one, [(config, s) for s in config.seeds], worker_count(len(config.seeds))
    )
    summary_runs = []
    for seed, by_regime in zip(config.seeds, results):
        rows = []
        for regime, (trace, _) in by_regime.items():
            rows.extend((regime, epoch, loss) for epoch, loss in enumerate(trace))
        _write_rows(
            out_dir / f"ssl-demo_seed{seed}.csv",
            _header_lines(config, seed),
            ["regime", "epoch", "loss"],
            rows,
        )
        summary_runs.append(
            {
                "seed": seed,
                "probe_accuracy": {reg: acc for reg, (_, acc) in by_regime.items()},
            }
        )
    _write_summary(config, out_dir, summary_runs)
    return EXIT_OK


def _write_summary(config: ExperimentConfig, out_dir: Path, runs: list) -> None:
    payload = {
        "divlab": __version__,
        "schema": 1,
        "config": dataclasses.asdict(config),
        "runs": runs,
    }
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=2) + "\n")


def run(config: ExperimentConfig) -> int:
    """Execute a parsed config; returns the process exit code."""
    if config.command == "selftest":
        return run_selftest()
    out_dir = Path(config.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if config.command == "mi-bench":
            return run_mi_bench(config, out_dir)
        if config.command == "variance-lab":
            return run_variance_lab(config, out_dir)
        if config.command == "ssl-demo":
            return run_ssl_demo(config, out_dir)
    except OSError as err:
        print(f"divlab: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    raise ConfigError(f"unknown command {config.command!r}")  # pragma: no cover


def run_selftest() -> int:
    """Quick in-process checks of the documented closed-form examples."""
    from . import selftest

    failures = 0
    for name, fn in selftest.CHECKS:
        try:
            fn()
            status = "pass"
        except Exception as err:  # noqa: BLE001 - report, don't crash the table
            status = f"FAIL ({type(err).__name__}: {err})"
            failures += 1
        print(f"{name:<46} {status}")
    print(f"\n{len(selftest.CHECKS) - failures}/{len(selftest.CHECKS)} checks passed")
    return EXIT_OK if failures == 0 else 1


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        config = parse_config(argv)
    except ConfigError as err:
        print(f"divlab: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else EXIT_CONFIG
    try:
        return run(config)
    except ConfigError as err:
        print(f"divlab: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:  # noqa: BLE001 - last-resort diagnostics for batch use
        traceback.print_exc()
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
