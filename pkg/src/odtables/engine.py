"""End-to-end runs: calibrate (alpha, beta) and sample tables for E ensemble members.

Seeding: member ``e`` of a run with master seed ``s`` uses
``SeedSequence(s, spawn_key=(e,)).spawn(3)``; the three child streams drive,
in order, the network initialisation, the Harris-Wilson noise and the table
sampler. Members therefore never share generator state and a member's output
does not depend on how many workers execute the ensemble.
"""

from __future__ import annotations

import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from .calibration import AdamState, LossConfig, Pipeline, Scheme, adam_step, nn_init
from .core import (ConstraintSet, ContingencyTable, ObservedData, random_fixed_cells,
                   validate_constraints)
from .harris_wilson import SolverConfig, draw_noise
from .intensity import HWParams, IntensityModel, compute_kappa
from .io import (FORMATS, StreamWriter, concat_files, constraints_from_dict, constraints_to_dict,
                 read_matrix, read_stream, read_vector)
from .metrics import SampleSummary, metric_report
from .sampler import TableSampler

log = logging.getLogger("odtables")

SIGMA_PRESETS = {"low": 0.014, "high": 0.141}
STREAMS = ("theta", "x", "table", "intensity")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    N: int = 1000
    E: int = 1
    scheme: str = "disjoint"
    seed: int = 0
    intensity: str = "total"  # total | singly
    hidden: int = 20
    moves_per_step: int = 1
    theta_max: Optional[float] = None
    burnin: int = 100
    thin: int = 100
    format: str = "jsonl"
    workers: int = 1
    output_dir: str = "run"
    heatmap: bool = False
    inputs: dict = field(default_factory=dict)  # cost, y, dist_origin, ground_truth paths
    constraints: dict = field(default_factory=dict)
    hw: dict = field(default_factory=dict)  # epsilon, kappa (None: derived), delta, sigma
    solver: dict = field(default_factory=dict)  # dt, tau
    loss: dict = field(default_factory=dict)  # sigma_d, sigma_T, sigma_L, use_distance_term
    adam: dict = field(default_factory=dict)  # lr, beta1, beta2, eps
    base_dir: str = "."

    def __post_init__(self):
        if self.N < 1 or self.E < 1:
            raise ConfigError("N and E must be at least 1")
        if self.burnin < 0 or self.thin < 1:
            raise ConfigError("burnin must be >= 0 and thin >= 1")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.intensity not in ("total", "singly"):
            raise ConfigError("intensity must be 'total' or 'singly'")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        try:
            Scheme(self.scheme)
        except ValueError:
            raise ConfigError(f"unknown scheme {self.scheme!r}") from None
        sigma = self.hw.get("sigma", 0.0)
        if isinstance(sigma, str):
            if sigma not in SIGMA_PRESETS:
                raise ConfigError(f"unknown sigma preset {sigma!r}")
            self.hw = {**self.hw, "sigma": SIGMA_PRESETS[sigma]}

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        d = dict(d or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d.setdefault("base_dir", str(base_dir))
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path) as fh:
                d = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self) -> dict:
        return asdict(self)

    def hw_params(self, kappa: float) -> HWParams:
        h = {"epsilon": 1.0, "delta": 0.0, "sigma": 0.0, **self.hw}
        return HWParams(epsilon=h["epsilon"], kappa=h.get("kappa") or kappa,
                        delta=h["delta"], sigma=h["sigma"])

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**{"dt": 0.001, "tau": 1, **self.solver})

    def loss_config(self) -> LossConfig:
        return LossConfig(scheme=self.scheme, **self.loss)

    def adam_state(self, size: int) -> AdamState:
        return AdamState.zeros(size, **self.adam)


@dataclass
class Problem:
    """Inputs of a run held in memory."""

    cost: np.ndarray
    y: np.ndarray
    constraints: ConstraintSet
    dist_origin: Optional[np.ndarray] = None
    ground_truth: Optional[ContingencyTable] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.cost.shape


def _resolve(cfg: RunConfig, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.base_dir) / p


def derive_constraints(spec: dict, truth: Optional[ContingencyTable], seed: int,
                       base=".") -> ConstraintSet:
    """Constraints from an explicit spec, or read off the ground truth.

    ``from_ground_truth`` lists statistics of T* to fix (total, rows, cols);
    ``fixed_fraction`` pins that fraction of T*'s cells, chosen with
    ``default_rng(fixed_seed)`` (``fixed_seed`` defaults to the run seed).
    """
    spec = dict(spec or {})
    stats = spec.pop("from_ground_truth", None)
    fraction = float(spec.pop("fixed_fraction", 0.0))
    fixed_seed = spec.pop("fixed_seed", seed)
    sym = bool(spec.get("symmetric", False))
    if stats is None and not fraction:
        return constraints_from_dict(spec, base)
    if truth is None:
        raise ConfigError("constraints derived from the ground truth need inputs.ground_truth")
    if spec.keys() - {"symmetric"}:
        raise ConfigError("explicit statistics cannot be mixed with from_ground_truth")
    stats = set(stats or ())
    if stats - {"total", "rows", "cols"}:
        raise ConfigError(f"unknown statistics {sorted(stats)}")
    cells = ()
    if fraction:
        cells = random_fixed_cells(truth, fraction, np.random.default_rng(fixed_seed))
    t = truth.cells
    return ConstraintSet(total=truth.total if "total" in stats else None,
                         row_sums=t.sum(axis=1) if "rows" in stats else None,
                         col_sums=t.sum(axis=0) if "cols" in stats else None,
                         fixed_cells=cells, symmetric=sym)


def load_problem(cfg: RunConfig) -> Problem:
    inp = cfg.inputs
    for key in ("cost", "y"):
        if not inp.get(key):
            raise ConfigError(f"inputs.{key} is required")
    try:
        cost = read_matrix(_resolve(cfg, inp["cost"]))
        y = read_vector(_resolve(cfg, inp["y"]))
        dist = read_vector(_resolve(cfg, inp["dist_origin"])) if inp.get("dist_origin") else None
        truth = None
        if inp.get("ground_truth"):
            truth = ContingencyTable(read_matrix(_resolve(cfg, inp["ground_truth"]), dtype=np.int64))
    except OSError as exc:
        raise ConfigError(f"cannot read input: {exc}") from None
    constraints = derive_constraints(cfg.constraints, truth, cfg.seed, cfg.base_dir)
    return Problem(cost, y, constraints, dist, truth)


def check_problem(cfg: RunConfig, prob: Problem) -> None:
    """Scheme, model and constraint compatibility; raises ConfigError."""
    I, J = prob.shape
    try:
        ObservedData(prob.y, prob.dist_origin).check_shape(I, J)
        validate_constraints(prob.constraints, I, J)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if prob.ground_truth is not None and prob.ground_truth.shape != (I, J):
        raise ConfigError("ground truth shape does not match the cost matrix")
    if cfg.intensity == "singly" and prob.constraints.row_sums is None:
        raise ConfigError("the singly constrained model needs row sums in the constraints")
    if cfg.intensity == "total" and _lambda_total(prob) is None:
        raise ConfigError("the totally constrained model needs a total (constraint or ground truth)")
    if cfg.loss.get("use_distance_term") and prob.dist_origin is None:
        raise ConfigError("the distance term needs inputs.dist_origin")


def _lambda_total(prob: Problem) -> Optional[float]:
    total = prob.constraints.implied_total()
    if total is None and prob.ground_truth is not None:
        total = prob.ground_truth.total
    return None if not total else float(total)


def build_model(cfg: RunConfig, prob: Problem) -> IntensityModel:
    if cfg.intensity == "singly":
        return IntensityModel("singly", prob.cost, row_totals=prob.constraints.row_sums)
    return IntensityModel("total", prob.cost, lambda_total=_lambda_total(prob))


def member_streams(seed: int, member: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence(seed, spawn_key=(member,))
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def _record_table(cfg: RunConfig, n: int) -> bool:
    return n > cfg.burnin and (n - cfg.burnin) % cfg.thin == 0


def run_member(cfg: RunConfig, prob: Problem, member: int,
               sink: Callable[[str, int, np.ndarray], None]) -> None:
    """Calibration and sampling loop for one ensemble member. ``sink(stream, iteration, values)`` persists records."""
    I, J = prob.shape
    rng_nn, rng_noise, rng_table = member_streams(cfg.seed, member)
    model = build_model(cfg, prob)
    kappa = compute_kappa(model.lambda_total, cfg.hw.get("delta", 0.0), prob.y)
    hw = cfg.hw_params(kappa)
    solver = cfg.solver_config()
    pipe = Pipeline(model, hw, solver, cfg.loss_config(),
                    ObservedData(prob.y, prob.dist_origin), theta_max=cfg.theta_max)
    joint = Scheme(cfg.scheme) is Scheme.JOINT
    W = nn_init(rng_nn, J, cfg.hidden)
    adam = cfg.adam_state(W.size)
    sampler = TableSampler(prob.constraints, (I, J), rng_table, moves_per_step=cfg.moves_per_step)
    T_prev = sampler.table.cells.copy()
    for n in range(1, cfg.N + 1):
        noise = draw_noise(rng_noise, solver.tau, J) if hw.sigma > 0 else None
        res = pipe.run(W, noise, T_prev if joint else None)
        W, adam = adam_step(W, res.grad, adam)
        T_prev = sampler.step(log_lam=res.log_lam)
        sink("theta", n, np.asarray(res.theta))
        sink("x", n, res.x)
        if _record_table(cfg, n):
            sink("table", n, T_prev)
            sink("intensity", n, res.lam)


def _member_dir(run_dir: Path, member: int) -> Path:
    return run_dir / "samples" / f"member_{member:04d}"


def _run_member_to_files(cfg: RunConfig, prob: Problem, member: int, run_dir: str) -> Optional[str]:
    """Worker entry point: returns None on success, else the error message."""
    out = _member_dir(Path(run_dir), member)
    out.mkdir(parents=True, exist_ok=True)
    writers = {s: StreamWriter(out / f"{s}.{cfg.format}", cfg.format) for s in STREAMS}
    try:
        run_member(cfg, prob, member, lambda s, n, v: writers[s].write(n, member, v))
        return None
    except Exception as exc:  # any module error aborts this member only
        return f"{type(exc).__name__}: {exc}"
    finally:
        for w in writers.values():
            w.close()


@dataclass
class RunResult:
    run_dir: Path
    failures: dict  # member -> error message

    @property
    def ok(self) -> bool:
        return not self.failures


def run_gensit(cfg: RunConfig, prob: Optional[Problem] = None) -> RunResult:
    """Run every ensemble member and merge their sample streams in member order."""
    if prob is None:
        prob = load_problem(cfg)
    check_problem(cfg, prob)
    run_dir = _resolve(cfg, cfg.output_dir)
    (run_dir / "samples").mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    resolved["constraints"] = constraints_to_dict(prob.constraints)
    resolved["constraint_tag"] = prob.constraints.tag()
    resolved["shape"] = list(prob.shape)
    with open(run_dir / "config.resolved", "w") as fh:
        yaml.safe_dump(resolved, fh, sort_keys=True)
    members = range(cfg.E)
    if cfg.workers > 1 and cfg.E > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.E)) as pool:
            errors = list(pool.map(_run_member_to_files, [cfg] * cfg.E, [prob] * cfg.E,
                                   members, [str(run_dir)] * cfg.E))
    else:
        errors = [_run_member_to_files(cfg, prob, e, str(run_dir)) for e in members]
    failures = {e: msg for e, msg in zip(members, errors) if msg is not None}
    for e, msg in failures.items():
        log.error("member %d failed: %s", e, msg)
    good = [e for e in members if e not in failures]
    for s in STREAMS:
        parts = [_member_dir(run_dir, e) / f"{s}.{cfg.format}" for e in good]
        concat_files(parts, run_dir / "samples" / f"{s}.{cfg.format}", skip_header=cfg.format == "csv")
    for e in members:
        shutil.rmtree(_member_dir(run_dir, e), ignore_errors=True)
    if failures:
        with open(run_dir / "errors.log", "w") as fh:
            for e, msg in failures.items():
                fh.write(f"member {e}: {msg}\n")
    if cfg.heatmap and good and prob.ground_truth is not None:
        mean = _pooled(run_dir / "samples" / f"table.{cfg.format}", prob.shape, 0, 1)
        if mean is not None:
            write_heatmap_svg(run_dir / "heatmap.svg", mean.mean)
    return RunResult(run_dir, failures)


def _pooled(path: Path, shape, burnin: int, thin: int) -> Optional[SampleSummary]:
    groups: dict[int, list] = {}
    for it, ens, vals in read_stream(path):
        if it > burnin:
            groups.setdefault(ens, []).append(vals.reshape(shape))
    kept = [np.asarray(g[thin - 1::thin]) for _, g in sorted(groups.items())]
    kept = [g for g in kept if len(g)]
    if not kept:
        return None
    return SampleSummary.pooled(kept)


def evaluate(run_dir, T_star=None, q: float = 99, burnin: int = 0, thin: int = 1,
             write: bool = True) -> dict:
    """Metrics in table and intensity space, pooled over the ensemble.

    ``burnin`` drops records with iteration <= burnin; ``thin`` then keeps every
    thin-th remaining record of each member. Writes metrics.csv and metrics.txt.
    """
    run_dir = Path(run_dir)
    with open(run_dir / "config.resolved") as fh:
        resolved = yaml.safe_load(fh)
    shape = tuple(resolved["shape"])
    fmt = resolved["format"]
    if T_star is None:
        gt = resolved.get("inputs", {}).get("ground_truth")
        if not gt:
            raise ConfigError("no ground truth given and none recorded in the run config")
        base = Path(resolved.get("base_dir", "."))
        T_star = read_matrix(Path(gt) if Path(gt).is_absolute() else base / gt, dtype=np.int64)
    T_star = np.asarray(getattr(T_star, "cells", T_star))
    if T_star.shape != shape:
        raise ValueError(f"ground truth shape {T_star.shape} does not match run shape {shape}")
    report: dict = {}
    for space, stream in (("table", "table"), ("intensity", "intensity")):
        summary = _pooled(run_dir / "samples" / f"{stream}.{fmt}", shape, burnin, thin)
        if summary is None:
            raise ValueError(f"{stream} stream is empty after burn-in and thinning")
        for k, v in metric_report(summary, T_star, q).items():
            report[(space, k)] = v
        report[(space, "n")] = summary.n
    if write:
        run_id = run_dir.name
        tag = resolved.get("constraint_tag", "none")
        with open(run_dir / "metrics.csv", "w") as fh:
            fh.write("run_id,constraint,space,metric,value\n")
            for (space, metric), v in report.items():
                fh.write(f"{run_id},{tag},{space},{metric},{v!r}\n")
        with open(run_dir / "metrics.txt", "w") as fh:
            fh.write(format_report(report))
    return report


def format_report(report: dict) -> str:
    return "".join(f"{space}.{metric} = {v:.6g}\n" for (space, metric), v in report.items())


def write_heatmap_svg(path, matrix, cell: int = 12) -> None:
    """Grey-scale heatmap of a matrix, darker for larger values."""
    m = np.asarray(matrix, dtype=np.float64)
    I, J = m.shape
    hi = m.max() if m.max() > 0 else 1.0
    rects = []
    for i in range(I):
        for j in range(J):
            g = int(round(255 * (1 - m[i, j] / hi)))
            rects.append(f'<rect x="{j * cell}" y="{i * cell}" width="{cell}" height="{cell}" '
                         f'fill="rgb({g},{g},{g})"/>')
    with open(path, "w") as fh:
        fh.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{J * cell}" height="{I * cell}">\n')
        fh.write("\n".join(rects))
        fh.write("\n</svg>\n")
