"""Intermittent Kalman predictor recursions.

Two layers: a covariance-only recursion (independent of measurement
values, used by the schedule optimizer) and the full state recursion fed
by actual measurements. The a-posteriori covariance uses the information
form [P^-1 + C^T R^-1 C]^-1, falling back to the algebraically
equivalent covariance form P - P C^T (C P C^T + R)^-1 C P when P is
singular or too ill-conditioned to invert (the initial covariance may
legitimately be zero).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import (
    Schedule,
    StateSpaceModel,
    WarmupConfig,
    require_valid_model,
    symmetrize,
)

# Condition-number limit above which the information-form update is
# abandoned for the covariance form.
INFO_FORM_COND_LIMIT = 1e12


class MeasurementMismatchError(ValueError):
    """Measurement list does not line up with the schedule."""


@dataclass(frozen=True)
class CovarianceTrace:
    """Prior covariance sequence P(t|t-1), t = 0..T (no means)."""

    prior_cov: np.ndarray  # (T+1, n, n)

    def __post_init__(self):
        self.prior_cov.setflags(write=False)


@dataclass(frozen=True)
class BeliefTrajectory:
    """Means, covariances and predicted positions for t = 0..T.

    prior_* hold x-hat(t|t-1) / P(t|t-1), post_* hold x-hat(t|t) / P(t|t)
    and pred_pos[t] = C x-hat(t|t-1) + d. At unmeasured steps posterior
    equals prior exactly.
    """

    prior_mean: np.ndarray  # (T+1, n)
    prior_cov: np.ndarray  # (T+1, n, n)
    post_mean: np.ndarray  # (T+1, n)
    post_cov: np.ndarray  # (T+1, n, n)
    pred_pos: np.ndarray  # (T+1, m)

    def __post_init__(self):
        for name in ("prior_mean", "prior_cov", "post_mean", "post_cov", "pred_pos"):
            getattr(self, name).setflags(write=False)

    @property
    def horizon_T(self) -> int:
        return self.prior_mean.shape[0] - 1


def time_update_cov(model: StateSpaceModel, post_cov: np.ndarray) -> np.ndarray:
    """P(t+1|t) = A P(t|t) A^T + G Q G^T, symmetrized."""
    A, G, Q = model.A, model.G, model.Q
    return symmetrize(A @ post_cov @ A.T + G @ Q @ G.T)


def measure_update_cov(model: StateSpaceModel, prior_cov: np.ndarray, measured: bool) -> np.ndarray:
    """A-posteriori covariance; identity pass-through when unmeasured."""
    if not measured:
        return prior_cov
    C, R = model.C, model.R
    P = np.asarray(prior_cov, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.linalg.cond(P)
    if np.isfinite(cond) and cond <= INFO_FORM_COND_LIMIT:
        info = np.linalg.inv(P) + C.T @ np.linalg.solve(R, C)
        return symmetrize(np.linalg.inv(info))
    # covariance form handles singular P
    PCt = P @ C.T
    S = C @ PCt + R
    return symmetrize(P - PCt @ np.linalg.solve(S, PCt.T))


def run_covariance(model: StateSpaceModel, schedule: Schedule) -> CovarianceTrace:
    """Propagate P(t|t-1) for t = 0..T; no measurement values involved."""
    require_valid_model(model)
    T = schedule.horizon_T
    mask = schedule.mask()
    prior = np.empty((T + 1, model.n, model.n))
    prior[0] = model.x0_cov
    for t in range(T):
        post = measure_update_cov(model, prior[t], bool(mask[t]))
        prior[t + 1] = time_update_cov(model, post)
    return CovarianceTrace(prior)


def objective(model: StateSpaceModel, schedule: Schedule, warmup: WarmupConfig) -> float:
    """Sum of Tr[C P(t|t-1) C^T] for t = t0+1 .. T.

    This is the cumulative one-step-ahead predicted-position error
    variance the schedule optimizer minimizes.
    """
    if warmup.t0 >= schedule.horizon_T:
        raise ValueError(f"warm-up t0={warmup.t0} must be < horizon T={schedule.horizon_T}")
    trace = run_covariance(model, schedule)
    C = model.C
    total = 0.0
    for t in range(warmup.t0 + 1, schedule.horizon_T + 1):
        total += float(np.trace(C @ trace.prior_cov[t] @ C.T))
    return total


def _check_measurements(schedule: Schedule, measurements, m: int) -> dict[int, np.ndarray]:
    by_time: dict[int, np.ndarray] = {}
    for entry in measurements:
        t, z = entry
        t = int(t)
        if t in by_time:
            raise MeasurementMismatchError(f"duplicate measurement at t={t}")
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.shape != (m,):
            raise MeasurementMismatchError(f"measurement at t={t} has shape {z.shape}, expected ({m},)")
        by_time[t] = z
    if tuple(sorted(by_time)) != schedule.times:
        raise MeasurementMismatchError(
            f"measurement times {tuple(sorted(by_time))} do not match schedule {schedule.times}"
        )
    return by_time


def run_predictor(
    model: StateSpaceModel, schedule: Schedule, measurements
) -> BeliefTrajectory:
    """Full intermittent Kalman predictor over t = 0..T.

    ``measurements`` is an iterable of (time, z-vector) pairs whose times
    must equal the schedule exactly. The mean correction uses the gain
    P(t|t) C^T R^-1 on the innovation z(t) - d - C x-hat(t|t-1).
    """
    require_valid_model(model)
    by_time = _check_measurements(schedule, measurements, model.m)
    A, b, C, d, R = model.A, model.b, model.C, model.d, model.R
    T = schedule.horizon_T
    n, m = model.n, model.m

    prior_mean = np.empty((T + 1, n))
    prior_cov = np.empty((T + 1, n, n))
    post_mean = np.empty((T + 1, n))
    post_cov = np.empty((T + 1, n, n))
    pred_pos = np.empty((T + 1, m))

    prior_mean[0] = model.x0_mean
    prior_cov[0] = model.x0_cov
    for t in range(T + 1):
        pred_pos[t] = C @ prior_mean[t] + d
        if t in by_time:
            post_cov[t] = measure_update_cov(model, prior_cov[t], True)
            gain = post_cov[t] @ C.T @ np.linalg.inv(R)
            post_mean[t] = prior_mean[t] + gain @ (by_time[t] - d - C @ prior_mean[t])
        else:
            post_cov[t] = prior_cov[t]
            post_mean[t] = prior_mean[t]
        if t < T:
            prior_mean[t + 1] = A @ post_mean[t] + b
            prior_cov[t + 1] = time_update_cov(model, post_cov[t])
    return BeliefTrajectory(prior_mean, prior_cov, post_mean, post_cov, pred_pos)


def write_belief_csv(traj: BeliefTrajectory, schedule: Schedule, model: StateSpaceModel, path) -> None:
    """Export per-step predictions.

    Columns: t, pred_pos_1..m (position predicted before the step),
    post_pos_1..m (position estimate after the step), trace_prior
    (Tr[C P(t|t-1) C^T]) and measured (0/1).
    """
    m = traj.pred_pos.shape[1]
    measured = set(schedule.times)
    C, d = model.C, model.d
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = (
            ["t"]
            + [f"pred_pos_{i + 1}" for i in range(m)]
            + [f"post_pos_{i + 1}" for i in range(m)]
            + ["trace_prior", "measured"]
        )
        writer.writerow(header)
        for t in range(traj.horizon_T + 1):
            post_pos = C @ traj.post_mean[t] + d
            trace_prior = float(np.trace(C @ traj.prior_cov[t] @ C.T))
            row = (
                [t]
                + [repr(float(x)) for x in traj.pred_pos[t]]
                + [repr(float(x)) for x in post_pos]
                + [repr(trace_prior), int(t in measured)]
            )
            writer.writerow(row)
