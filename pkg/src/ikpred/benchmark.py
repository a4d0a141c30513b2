"""Benchmark harness: RMWP / IMWP / RKP / IKP over noise and budget grids.

Protocol per cell: inject measurement noise on the ground truth, fit the
model by EM on the regular-rate training window, warm-start the belief
at the treatment boundary from the training filter, optimize the
measurement schedule for the treatment horizon, then run all four
methods on the same noisy realization and score RMS against ground
truth after the warm-up. Replications re-draw the noise and re-fit.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Optional

import numpy as np

from .model import Schedule, StateSpaceModel, WarmupConfig, regular_schedule
from .optimizer import GaConfig, genetic_search
from .predictor import run_predictor
from .simulate import Trajectory, inject_noise
from .sysid import EmConfig, fit

METHODS = ("RMWP", "IMWP", "RKP", "IKP")


@dataclass(frozen=True)
class BenchConfig:
    sigma2_grid: tuple[float, ...] = (1.0, 4.0, 25.0, 100.0)
    budget_fraction_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    horizon_T: int = 800
    train_steps: int = 600
    warmup_t0: int = 300
    replications: int = 20
    rng_seed: int = 0
    state_dim_n: int = 4
    em_max_iters: int = 40
    em_loglik_rel_tol: float = 1e-5
    ga: GaConfig = field(
        default_factory=lambda: GaConfig(population_size=60, generations=80)
    )
    workers: Optional[int] = None

    def __post_init__(self):
        if not self.sigma2_grid or not self.budget_fraction_grid:
            raise ValueError("grids must be non-empty")
        if any(s <= 0 for s in self.sigma2_grid):
            raise ValueError("sigma2 values must be positive")
        if any(not 0.0 < f <= 1.0 for f in self.budget_fraction_grid):
            raise ValueError("budget fractions must be in (0, 1]")
        if not 0 <= self.warmup_t0 < self.horizon_T:
            raise ValueError("warmup_t0 must be in [0, horizon_T)")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        object.__setattr__(self, "sigma2_grid", tuple(float(s) for s in self.sigma2_grid))
        object.__setattr__(
            self, "budget_fraction_grid", tuple(float(f) for f in self.budget_fraction_grid)
        )


@dataclass(frozen=True)
class BenchRecord:
    method: str
    sigma2: float
    budget_fraction: float
    replication: int
    rms: float


@dataclass(frozen=True)
class BenchReport:
    config: BenchConfig
    records: tuple[BenchRecord, ...]

    def mean_rms(self, method: str, sigma2: float, budget_fraction: float) -> float:
        values = [
            r.rms
            for r in self.records
            if r.method == method and r.sigma2 == sigma2 and r.budget_fraction == budget_fraction
        ]
        return float(np.mean(values))

    @property
    def mean_relative_improvement(self) -> float:
        """Mean over grid cells of (RKP - IKP) / RKP on cell-mean RMS."""
        ratios = []
        for sigma2 in self.config.sigma2_grid:
            for frac in self.config.budget_fraction_grid:
                rkp = self.mean_rms("RKP", sigma2, frac)
                ikp = self.mean_rms("IKP", sigma2, frac)
                ratios.append((rkp - ikp) / rkp)
        return float(np.mean(ratios))


def rms_error(predicted: np.ndarray, truth: np.ndarray, from_t: int) -> float:
    """sqrt(mean over t >= from_t of ||predicted[t] - truth[t]||^2)."""
    pred = np.asarray(predicted, dtype=float)
    ref = np.asarray(truth, dtype=float)
    if pred.ndim == 1:
        pred = pred[:, None]
    if ref.ndim == 1:
        ref = ref[:, None]
    if pred.shape != ref.shape:
        raise ValueError(f"length/dimension mismatch: {pred.shape} vs {ref.shape}")
    if not 0 <= from_t < pred.shape[0]:
        raise ValueError(f"from_t={from_t} leaves an empty window for length {pred.shape[0]}")
    err = pred[from_t:] - ref[from_t:]
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def run_baseline_hold(
    traj: Trajectory, schedule: Schedule, initial_guess: Optional[np.ndarray] = None
) -> np.ndarray:
    """Last-measurement-hold baseline: y-hat(t) = z(m) for the latest
    measurement time m < t (strictly, matching the predictor's one-step
    convention). Before any measurement has been seen the output is
    ``initial_guess`` (defaults to the mean of the noisy trajectory)."""
    if traj.noisy is None:
        raise ValueError("trajectory has no noisy measurements")
    if initial_guess is None:
        initial_guess = traj.noisy.mean(axis=0)
    steps = len(traj)
    out = np.empty((steps, traj.dim))
    held = np.asarray(initial_guess, dtype=float)
    measured = set(schedule.times)
    for t in range(steps):
        out[t] = held
        if t in measured:
            held = traj.noisy[t]
    return out


def _warm_started(model: StateSpaceModel, train_z: np.ndarray) -> StateSpaceModel:
    """Replace the initial belief by the one-step-ahead belief after
    filtering the whole training window."""
    L = train_z.shape[0]
    full = regular_schedule(L, L)
    belief = run_predictor(model, full, list(enumerate(train_z)))
    return model.with_initial_belief(belief.prior_mean[L], belief.prior_cov[L])


def _run_cell(args) -> list[BenchRecord]:
    config, traj, replication, sigma2, seeds = args
    T = config.horizon_T
    warmup = WarmupConfig(config.warmup_t0)
    noisy_traj = inject_noise(traj, sigma2, seeds["noise"])
    train_z = noisy_traj.noisy[: config.train_steps]
    treat_slice = slice(config.train_steps, config.train_steps + T)
    treat_truth = noisy_traj.truth[treat_slice]
    treat_noisy = noisy_traj.noisy[treat_slice]
    treat_traj = Trajectory(dt=traj.dt, truth=treat_truth, noisy=treat_noisy)
    train_mean = train_z.mean(axis=0)

    em_config = EmConfig(
        state_dim_n=config.state_dim_n,
        max_iters=config.em_max_iters,
        loglik_rel_tol=config.em_loglik_rel_tol,
        rng_seed=seeds["em"],
    )
    fitted, _ = fit(train_z, em_config)
    model = _warm_started(fitted, train_z)

    records = []
    for bi, frac in enumerate(config.budget_fraction_grid):
        N = max(1, int(round(frac * T)))
        reg = regular_schedule(T, N)
        ga_config = GaConfig(
            population_size=config.ga.population_size,
            generations=config.ga.generations,
            crossover_rate=config.ga.crossover_rate,
            mutation_rate=config.ga.mutation_rate,
            elitism_count=config.ga.elitism_count,
            rng_seed=seeds["ga"][bi],
            seed_with_regular=config.ga.seed_with_regular,
        )
        opt = genetic_search(model, T, N, warmup, ga_config)

        predictions = {
            "RMWP": run_baseline_hold(treat_traj, reg, train_mean),
            "IMWP": run_baseline_hold(treat_traj, opt.best_schedule, train_mean),
        }
        for name, schedule in (("RKP", reg), ("IKP", opt.best_schedule)):
            measurements = [(t, treat_noisy[t]) for t in schedule.times]
            belief = run_predictor(model, schedule, measurements)
            predictions[name] = belief.pred_pos[:T]

        for name in METHODS:
            rms = rms_error(predictions[name], treat_truth, config.warmup_t0 + 1)
            records.append(BenchRecord(name, sigma2, frac, replication, rms))
    return records


def run_benchmark(config: BenchConfig, traj: Trajectory) -> BenchReport:
    """Full grid x replications sweep; deterministic given config.rng_seed."""
    needed = config.train_steps + config.horizon_T
    if len(traj) < needed:
        raise ValueError(f"trajectory too short: need {needed} steps, have {len(traj)}")

    jobs = []
    for rep in range(config.replications):
        for si, sigma2 in enumerate(config.sigma2_grid):
            root = np.random.SeedSequence(config.rng_seed, spawn_key=(rep, si))
            state = root.generate_state(2 + len(config.budget_fraction_grid), np.uint32)
            seeds = {
                "noise": int(state[0]),
                "em": int(state[1]),
                "ga": [int(s) for s in state[2:]],
            }
            jobs.append((config, traj, rep, sigma2, seeds))

    workers = config.workers
    if workers is None:
        workers = min(os.cpu_count() or 1, 8)
    if workers > 1 and len(jobs) > 1:
        with get_context("fork").Pool(workers) as pool:
            results = pool.map(_run_cell, jobs)
    else:
        results = [_run_cell(job) for job in jobs]

    records = tuple(record for cell in results for record in cell)
    return BenchReport(config=config, records=records)


def write_report_csv(report: BenchReport, path) -> None:
    """Long-format export: method, sigma2, budget_fraction, replication, rms."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "sigma2", "budget_fraction", "replication", "rms"])
        for r in report.records:
            writer.writerow([r.method, repr(r.sigma2), repr(r.budget_fraction), r.replication, repr(r.rms)])


def format_report_table(report: BenchReport) -> str:
    """Aligned mean-RMS table: one block per budget fraction, one column
    per sigma^2, one row per method."""
    cfg = report.config
    out = io.StringIO()
    header = "sigma^2 [mm^2]".rjust(24) + "".join(f"{s:>10g}" for s in cfg.sigma2_grid)
    out.write(header + "\n")
    out.write("-" * len(header) + "\n")
    for frac in cfg.budget_fraction_grid:
        for i, method in enumerate(METHODS):
            label = f"N/T={frac:g}" if i == 0 else ""
            row = f"{label:>14} {method:>9}"
            for sigma2 in cfg.sigma2_grid:
                row += f"{report.mean_rms(method, sigma2, frac):>10.3f}"
            out.write(row + "\n")
        out.write("\n")
    out.write(f"mean relative improvement of IKP over RKP: "
              f"{100.0 * report.mean_relative_improvement:.1f}%\n")
    return out.getvalue()
