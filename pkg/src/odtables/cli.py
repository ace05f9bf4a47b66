"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numeric error.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from .benchmark import benchmark as run_benchmark
from .benchmark import linear_fit, write_timings
from .core import ConstraintError
from .engine import ConfigError, RunConfig, evaluate, format_report, run_gensit
from .io import FORMATS, load_constraints, write_matrix
from .sampler import FiberTooLarge, enumerate_fiber
from .synthetic import generate_sim_problem, generate_synthetic

USAGE_ERRORS = (ConfigError, ConstraintError, FileNotFoundError)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Calibrate spatial interaction models and sample constrained OD tables."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--rows", "I", type=int, required=True)
@click.option("--cols", "J", type=int, required=True)
@click.option("--total", "A", type=int, required=True, help="Table total A.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--sim", is_flag=True, help="Draw from a SIM at equilibrium and write a run config.")
@click.option("--alpha", type=float, default=0.8, show_default=True)
@click.option("--beta", type=float, default=2.0, show_default=True)
def generate(I, J, A, seed, out, sim, alpha, beta):
    """Synthetic ground truth (intensity.csv, table.csv)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if not sim:
        lam, table = generate_synthetic(I, J, A, seed)
        write_matrix(out / "intensity.csv", lam.values)
        write_matrix(out / "table.csv", table.cells)
        click.echo(f"wrote {out}/intensity.csv and {out}/table.csv")
        return
    prob = generate_sim_problem(I, J, A, alpha, beta, seed=seed)
    write_matrix(out / "intensity.csv", prob.lam)
    write_matrix(out / "table.csv", prob.table.cells)
    write_matrix(out / "cost.csv", prob.cost)
    write_matrix(out / "y.csv", prob.y[None])
    write_matrix(out / "dist_origin.csv", prob.dist_origin[None])
    config = {
        "N": 1000, "E": 1, "scheme": "joint", "seed": seed, "intensity": "total",
        "burnin": 100, "thin": 10, "output_dir": "run",
        "inputs": {"cost": "cost.csv", "y": "y.csv", "dist_origin": "dist_origin.csv",
                   "ground_truth": "table.csv"},
        "constraints": {"from_ground_truth": ["rows", "cols"]},
        "hw": {"sigma": "low", "kappa": prob.kappa},
    }
    with open(out / "config.yaml", "w") as fh:
        yaml.safe_dump(config, fh, sort_keys=False)
    click.echo(f"wrote SIM problem and config.yaml to {out}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@click.option("--workers", type=int, default=None)
@click.option("--format", "fmt", type=click.Choice(FORMATS), default=None)
@click.option("--burnin", type=int, default=None)
@click.option("--thin", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Override output_dir.")
def run(config_path, seed, workers, fmt, burnin, thin, out):
    """Calibrate and sample; writes the run directory."""
    cfg = RunConfig.load(config_path)
    overrides = {"seed": seed, "workers": workers, "format": fmt, "burnin": burnin,
                 "thin": thin, "output_dir": out}
    d = cfg.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    if out is not None:
        d["output_dir"] = str(Path(out).resolve())
    cfg = RunConfig.from_dict(d)
    res = run_gensit(cfg)
    click.echo(str(res.run_dir))
    if not res.ok:
        for e, msg in res.failures.items():
            click.echo(f"member {e} failed: {msg}", err=True)
        sys.exit(2)


@cli.command(name="evaluate")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--q", type=float, default=99, show_default=True)
@click.option("--burnin", type=int, default=0, show_default=True)
@click.option("--thin", type=int, default=1, show_default=True)
def evaluate_cmd(run_dir, truth, q, burnin, thin):
    """SRMSE, SSI and coverage of a finished run."""
    T = None
    if truth is not None:
        T = np.loadtxt(truth, delimiter=",", dtype=np.int64, ndmin=2)
    click.echo(format_report(evaluate(run_dir, T, q, burnin, thin)), nl=False)


def _parse_sizes(text: str) -> list[tuple[int, int]]:
    sizes = []
    for item in filter(None, text.split(",")):
        try:
            I, J = (int(v) for v in item.lower().split("x"))
        except ValueError:
            raise click.BadParameter(f"size {item!r} is not of the form IxJ") from None
        sizes.append((I, J))
    return sizes


@cli.command()
@click.option("--sizes", default="100x100,200x200,300x300,400x400,500x500", show_default=True)
@click.option("--iterations", "N", type=int, default=50, show_default=True)
@click.option("--fixed-fraction", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=".")
def benchmark(sizes, N, fixed_fraction, seed, out):
    """Per-iteration step times against IJ (rows + cols + fixed cells)."""
    timings = run_benchmark(_parse_sizes(sizes), N, fixed_fraction=fixed_fraction, seed=seed)
    Path(out).mkdir(parents=True, exist_ok=True)
    write_timings(Path(out) / "timings.csv", timings)
    for t in timings:
        click.echo(f"{t.I}x{t.J}  table {t.table_seconds:.3e} s  intensity {t.intensity_seconds:.3e} s")
    for which in ("table", "intensity"):
        fit = linear_fit(timings, which)
        if fit is not None:
            click.echo(f"{which}: slope {fit.slope:.3e} s/cell  R^2 {fit.r2:.4f}")


@cli.command()
@click.option("--constraints", "path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--max-size", type=int, default=100_000, show_default=True)
@click.option("--count", is_flag=True, help="Print only the number of tables.")
def enumerate(path, max_size, count):
    """List every table satisfying a margins constraints file."""
    tables = enumerate_fiber(load_constraints(path), max_size)
    if count:
        click.echo(len(tables))
        return
    for t in tables:
        click.echo(";".join(",".join(str(v) for v in row) for row in t.cells))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return 1
    except click.UsageError as exc:
        exc.show()
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except USAGE_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except (FiberTooLarge, RuntimeError, ArithmeticError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
