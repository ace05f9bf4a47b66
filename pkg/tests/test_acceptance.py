"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (see conftest.py) before asserting, so
the summary lists all ten criteria even when some fail.
"""

import time

import numpy as np
from conftest import record
from scipy import stats

from odtables.benchmark import benchmark, linear_fit
from odtables.calibration import LossConfig, NetworkWeights, Pipeline, loss_grad
from odtables.core import ConstraintSet, ObservedData
from odtables.engine import Problem, RunConfig, run_gensit
from odtables.harris_wilson import SolverConfig, hw_drift, hw_solve
from odtables.intensity import HWParams, IntensityModel, compute_kappa, log_intensity_total
from odtables.io import read_stream
from odtables.metrics import SampleSummary, coverage_probability, srmse, ssi
from odtables.sampler import (ChainState, ClosedFormSampler, MarkovBasis, TableSampler,
                              enumerate_fiber, fiber_index, fisher_normalised, gibbs_mb_step,
                              init_table)
from odtables.synthetic import generate_sim_problem

MARGINS_3x3 = ConstraintSet(row_sums=[3, 2, 2], col_sums=[3, 2, 2])


def _fiber_tv(lam, target_fn, n_steps=100_000, seed=0):
    c = MARGINS_3x3
    fiber = enumerate_fiber(c)
    idx = fiber_index(fiber)
    target = target_fn(fiber)
    state = ChainState(init_table(c), MarkovBasis(3, 3, c), np.random.default_rng(seed), c, Lam=lam)
    counts = np.zeros(len(fiber))
    for _ in range(n_steps):
        gibbs_mb_step(state)
        counts[idx[state.cells.tobytes()]] += 1
    return 0.5 * np.abs(counts / n_steps - target).sum(), len(fiber)


def test_criterion_01_fiber_uniform_under_unit_odds():
    # Unit odds make the exact conditional the central hypergeometric, whose
    # mass is proportional to 1 / prod T_ij!, so this bound is not expected
    # to hold; the criterion is kept as stated.
    t0 = time.perf_counter()
    tv, size = _fiber_tv(np.ones((3, 3)), lambda f: np.full(len(f), 1.0 / len(f)))
    elapsed = time.perf_counter() - t0
    ok = tv <= 0.02 and elapsed < 30
    record(1, ok, f"TV to uniform over {size} tables = {tv:.4f} (bound 0.02), {elapsed:.1f} s")
    assert ok


def test_unit_odds_chain_matches_central_hypergeometric():
    # companion to criterion 1: the same chain against the mass it targets
    tv, _ = _fiber_tv(np.ones((3, 3)), lambda f: fisher_normalised(f, np.ones((3, 3)), MARGINS_3x3))
    assert tv <= 0.02


def test_criterion_02_fiber_fisher_non_central():
    rng = np.random.default_rng(11)
    cost = rng.random((3, 3))
    lam = np.exp(log_intensity_total(rng.normal(0, 0.5, 3), 1.0, 2.5, cost, 7.0))
    t0 = time.perf_counter()
    tv, size = _fiber_tv(lam, lambda f: fisher_normalised(f, lam, MARGINS_3x3), seed=1)
    elapsed = time.perf_counter() - t0
    ok = tv <= 0.02
    record(2, ok, f"TV to Fisher pmf over {size} tables = {tv:.4f} (bound 0.02), {elapsed:.1f} s")
    assert ok


def test_criterion_03_closed_form():
    rng = np.random.default_rng(3)
    I = J = 10
    A = 10_000
    lam = rng.random((I, J)) + 0.05
    lam *= A / lam.sum()
    T0 = rng.multinomial(A, (lam / A).ravel()).reshape(I, J)
    cases = {
        "total": (ConstraintSet(total=A), lambda T: T.sum(axis=(1, 2)) == A,
                  lambda: A * lam / lam.sum()),
        "rows": (ConstraintSet(row_sums=T0.sum(axis=1)), lambda T: (T.sum(axis=2) == T0.sum(axis=1)).all(axis=1),
                 lambda: T0.sum(axis=1)[:, None] * lam / lam.sum(axis=1, keepdims=True)),
        "cols": (ConstraintSet(col_sums=T0.sum(axis=0)), lambda T: (T.sum(axis=1) == T0.sum(axis=0)).all(axis=1),
                 lambda: T0.sum(axis=0)[None, :] * lam / lam.sum(axis=0, keepdims=True)),
    }
    t0 = time.perf_counter()
    worst_z, exact = 0.0, True
    for name, (c, holds, mean_fn) in cases.items():
        draws = ClosedFormSampler(lam, c).draw_array(np.random.default_rng(len(name)), size=10_000)
        exact &= bool(np.all(holds(draws)))
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        worst_z = max(worst_z, float(np.max(np.abs(draws.mean(axis=0) - mean_fn()) / se)))
    elapsed = time.perf_counter() - t0
    ok = exact and worst_z < 4 and elapsed < 10
    record(3, ok, f"constraints exact: {exact}, max |z| of cell means = {worst_z:.2f}, {elapsed:.1f} s")
    assert ok


def test_criterion_04_hw_equilibrium():
    rng = np.random.default_rng(4)
    I, J = 12, 8
    model = IntensityModel("total", rng.random((I, J)) * 2, lambda_total=float(J))
    x = np.zeros(J)
    hw = HWParams(kappa=compute_kappa(model.lambda_total, 0.0, x), delta=0.0, sigma=0.0)
    fn = lambda z: model(z, 0.7, 1.5)
    cfg = SolverConfig(dt=0.05, tau=50)
    drift = np.inf
    for _ in range(10_000):
        drift = np.abs(hw_drift(x, fn(x).sum(axis=0), hw)).max()
        if drift < 1e-10:
            break
        x = hw_solve(x, hw, fn, cfg)
    residual = np.abs(fn(x).sum(axis=0) - hw.kappa * np.exp(x)).max()
    ok = drift < 1e-10 and residual < 1e-8
    record(4, ok, f"drift = {drift:.2e}, max residual = {residual:.2e} (bound 1e-8)")
    assert ok


def test_criterion_05_gradient_fidelity():
    p = generate_sim_problem(4, 5, 1000, seed=0)
    model = IntensityModel("total", p.cost, lambda_total=1000.0)
    pipe = Pipeline(model, HWParams(kappa=p.kappa, sigma=0.0), SolverConfig(dt=0.001, tau=3),
                    LossConfig(scheme="joint", use_distance_term=True), ObservedData(p.y, p.dist_origin))
    T = p.table.cells
    rng = np.random.default_rng(5)
    J, H, h = 5, 3, 1e-5
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        W = NetworkWeights.from_flat(rng.uniform(-1, 1, (J + 1) * H + (H + 1) * 2), J, H)
        g = loss_grad(pipe, W, None, T).flat()
        f = W.flat()
        num = np.empty_like(f)
        for k in range(f.size):
            e = np.zeros_like(f)
            e[k] = h
            num[k] = (pipe.loss_value(NetworkWeights.from_flat(f + e, J, H), None, T)
                      - pipe.loss_value(NetworkWeights.from_flat(f - e, J, H), None, T)) / (2 * h)
        scale = np.maximum(np.abs(g), np.abs(num))
        rel = np.divide(np.abs(g - num), scale, out=np.zeros_like(g), where=scale > 0)
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 5
    record(5, ok, f"max relative error = {worst:.2e} (bound 1e-4), {elapsed:.1f} s")
    assert ok


def test_criterion_06_linear_scaling():
    sizes = [(n, n) for n in (100, 200, 300, 400, 500)]
    t0 = time.perf_counter()
    timings = benchmark(sizes, N=200, fixed_fraction=0.5, seed=6)
    elapsed = time.perf_counter() - t0
    fit = linear_fit(timings, "table")
    by = {t.I: t.table_seconds for t in timings}
    ratio = by[400] / by[200]
    ok = fit.r2 > 0.98 and 3 <= ratio <= 5 and elapsed < 600
    record(6, ok, f"R^2 = {fit.r2:.4f}, 400^2/200^2 time ratio = {ratio:.2f}, {elapsed:.0f} s")
    assert ok


def test_criterion_07_end_to_end_reconstruction(tmp_path):
    sim = generate_sim_problem(30, 20, 100_000, alpha=0.8, beta=2.0, seed=7)
    T = sim.table
    prob = Problem(sim.cost, sim.y, ConstraintSet(row_sums=T.row_sums, col_sums=T.col_sums),
                   sim.dist_origin, T)
    cfg = RunConfig(N=20_000, E=1, scheme="joint", seed=7, intensity="total", burnin=0, thin=10,
                    hw={"sigma": "low"}, output_dir=str(tmp_path / "run"))
    t0 = time.perf_counter()
    res = run_gensit(cfg, prob)
    elapsed = time.perf_counter() - t0
    assert res.ok, res.failures
    samples = res.run_dir / "samples"
    tables = np.array([v.reshape(30, 20) for _, _, v in read_stream(samples / "table.jsonl")], float)
    *_, (_, _, lam) = read_stream(samples / "intensity.jsonl")
    baseline = srmse(SampleSummary.from_samples(
        np.random.default_rng(0).poisson(lam.reshape(30, 20), (1000, 30, 20))), T)
    pooled = srmse(SampleSummary.from_samples(tables[10:]), T)  # first 100 iterations dropped
    running = np.cumsum(tables, axis=0) / np.arange(1, len(tables) + 1)[:, None, None]
    checkpoints = np.linspace(len(tables) / 20, len(tables), 20).astype(int) - 1
    trend = [srmse(running[k], T) for k in checkpoints]
    rho = stats.spearmanr(np.arange(20), trend).statistic
    ok = pooled < baseline and rho < 0 and elapsed < 900
    record(7, ok, f"pooled SRMSE {pooled:.4f} vs Poisson baseline {baseline:.4f}, "
                  f"Spearman rho {rho:.3f}, {elapsed:.0f} s")
    assert ok


def test_criterion_08_metric_unit_values():
    rng = np.random.default_rng(8)
    T = rng.integers(1, 40, (6, 5))
    same = SampleSummary.from_samples(np.repeat(T[None], 50, axis=0))
    exact = srmse(same, T) == 0 and ssi(same, T) == 1 and coverage_probability(same, T) == 1
    cp = coverage_probability(SampleSummary.from_samples(rng.poisson(T, (10_000, 6, 5))), T, 99)
    ok = exact and cp >= 0.95
    record(8, ok, f"identical stream exact: {exact}, Poisson CP(99) = {cp:.3f}")
    assert ok


def test_criterion_09_symmetric_mode():
    rng = np.random.default_rng(9)
    margins = [6, 4, 5, 3]
    c = ConstraintSet(row_sums=margins, symmetric=True)
    sampler = TableSampler(c, (4, 4), rng)
    lam = rng.random((4, 4)) + 0.1
    lam = lam + lam.T
    bad = 0
    for _ in range(10_000):
        T = sampler.step(lam)
        if not (np.array_equal(T, T.T) and T.sum(axis=1).tolist() == margins
                and T.sum(axis=0).tolist() == margins and T.min() >= 0):
            bad += 1
    ok = bad == 0
    record(9, ok, f"{bad} of 10000 tables violated symmetry or margins")
    assert ok


def test_criterion_10_determinism(tmp_path):
    sim = generate_sim_problem(6, 5, 500, seed=10)
    prob = Problem(sim.cost, sim.y, ConstraintSet.from_table(sim.table, total=False),
                   sim.dist_origin, sim.table)
    runs = []
    for name, workers in (("a", 1), ("b", 1), ("c", 4)):
        cfg = RunConfig(N=50, E=4, scheme="joint", seed=123, hidden=5, burnin=10, thin=5,
                        workers=workers, hw={"sigma": "low"}, output_dir=str(tmp_path / name))
        runs.append(run_gensit(cfg, prob).run_dir / "samples")
    identical = all((runs[0] / f).read_bytes() == (r / f).read_bytes()
                    for r in runs[1:] for f in ("theta.jsonl", "x.jsonl", "table.jsonl", "intensity.jsonl"))
    record(10, identical, "serial, repeated and 4-worker runs byte-identical" if identical
           else "sample streams differ between runs")
    assert identical
