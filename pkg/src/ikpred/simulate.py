"""Trajectory generation and ingestion.

Covers the noise-driven mass-spring toy process (explicit Euler
discretization, kept deliberately identical to its textbook recurrence
even though that recurrence is marginally unstable), generic sampling
from a state-space model, measurement-noise injection, a deterministic
3-axis respiratory surrogate, and the trajectory CSV format shared with
the CLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import StateSpaceModel, require_valid_model


class TrajectoryParseError(ValueError):
    """Malformed trajectory CSV; message names the offending line."""


@dataclass(frozen=True)
class Trajectory:
    """Ground-truth positions, optionally with a noisy copy."""

    dt: float
    truth: np.ndarray  # (T, m)
    noisy: Optional[np.ndarray] = None  # (T, m)

    def __post_init__(self):
        truth = np.asarray(self.truth, dtype=float)
        if truth.ndim == 1:
            truth = truth[:, None]
        if truth.ndim != 2:
            raise ValueError(f"truth must be (T, m), got shape {truth.shape}")
        object.__setattr__(self, "truth", truth)
        if self.noisy is not None:
            noisy = np.asarray(self.noisy, dtype=float)
            if noisy.ndim == 1:
                noisy = noisy[:, None]
            if noisy.shape != truth.shape:
                raise ValueError(f"noisy shape {noisy.shape} != truth shape {truth.shape}")
            object.__setattr__(self, "noisy", noisy)
            self.noisy.setflags(write=False)
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        self.truth.setflags(write=False)

    def __len__(self) -> int:
        return self.truth.shape[0]

    @property
    def dim(self) -> int:
        return self.truth.shape[1]


@dataclass(frozen=True)
class MassSpringConfig:
    """Noise-driven mass-spring oscillator sampled at period delta_s.

    q_psd is the power spectral density of the random force (the
    discrete force noise has variance q_psd * delta_s); r_var is the
    elongation measurement-noise variance carried into the model.
    """

    mass_kg: float = 0.0015
    stiffness_N_per_m: float = 0.000825
    delta_s: float = 0.01
    steps_T: int = 6000
    q_psd: float = 0.05
    r_var: float = 0.05
    rng_seed: int = 0
    x0_mm: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        for name in ("mass_kg", "stiffness_N_per_m", "delta_s", "q_psd", "r_var"):
            if getattr(self, name) < 0 or (name in ("mass_kg", "stiffness_N_per_m", "delta_s") and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.steps_T < 1:
            raise ValueError(f"steps_T must be positive, got {self.steps_T}")

    @property
    def period_s(self) -> float:
        """Natural oscillation period 2*pi*sqrt(m/k)."""
        return 2.0 * math.pi * math.sqrt(self.mass_kg / self.stiffness_N_per_m)


def stiffness_for_period(mass_kg: float, period_s: float) -> float:
    """Spring constant giving the requested natural period: 4 pi^2 m / T^2."""
    return 4.0 * math.pi**2 * mass_kg / period_s**2


def mass_spring_model(config: MassSpringConfig) -> StateSpaceModel:
    """Exact discrete model of the Euler-discretized mass-spring process."""
    delta = config.delta_s
    A = np.eye(2) + delta * np.array([[0.0, 1.0], [-config.stiffness_N_per_m / config.mass_kg, 0.0]])
    return StateSpaceModel(
        A=A,
        b=np.zeros(2),
        G=np.array([[0.0], [1.0 / config.mass_kg]]),
        Q=np.array([[config.q_psd * delta]]),
        C=np.array([[1.0, 0.0]]),
        d=np.zeros(1),
        R=np.array([[config.r_var]]),
        x0_mean=np.array(config.x0_mm, dtype=float),
        x0_cov=np.zeros((2, 2)),
    )


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Factor F with F F^T = cov for PSD (possibly singular) cov."""
    eigvals, eigvecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def simulate_model(
    model: StateSpaceModel, steps_T: int, rng_seed: int, dt: float = 1.0
) -> Trajectory:
    """Sample one path of the model; truth[t] = C x(t) + d for t = 0..T-1."""
    require_valid_model(model)
    rng = np.random.default_rng(rng_seed)
    x = model.x0_mean + _psd_factor(model.x0_cov) @ rng.standard_normal(model.n)
    noise_factor = _psd_factor(model.Q)
    truth = np.empty((steps_T, model.m))
    for t in range(steps_T):
        truth[t] = model.C @ x + model.d
        x = model.A @ x + model.b + model.G @ (noise_factor @ rng.standard_normal(model.p))
    return Trajectory(dt=dt, truth=truth)


def simulate_mass_spring(config: MassSpringConfig) -> tuple[Trajectory, StateSpaceModel]:
    """Sample the mass-spring elongation and return the exact model used."""
    model = mass_spring_model(config)
    traj = simulate_model(model, config.steps_T, config.rng_seed, dt=config.delta_s)
    return traj, model


def inject_noise(traj: Trajectory, sigma2_mm2: float, rng_seed: int) -> Trajectory:
    """Return a copy with noisy = truth + N(0, sigma2 * I); truth untouched."""
    if sigma2_mm2 < 0:
        raise ValueError(f"sigma2 must be non-negative, got {sigma2_mm2}")
    rng = np.random.default_rng(rng_seed)
    noise = math.sqrt(sigma2_mm2) * rng.standard_normal(traj.truth.shape)
    return Trajectory(dt=traj.dt, truth=traj.truth, noisy=traj.truth + noise)


def respiratory_surrogate(steps_T: int, dt: float = 1.0 / 30.0) -> Trajectory:
    """Deterministic 3-axis breathing-like signal.

    Two harmonics per axis on a 0.25 Hz base with amplitudes inside a
    +/-10 mm envelope; axes are lateral, cephalocaudal, anteroposterior.
    """
    t = np.arange(steps_T) * dt
    base = 2.0 * np.pi * 0.25
    axes = [
        2.0 * np.sin(base * t + 0.4) + 0.7 * np.sin(2 * base * t + 1.1),
        8.0 * np.sin(base * t + 2.0) + 2.5 * np.sin(2 * base * t + 0.3),
        4.0 * np.sin(base * t + 5.1) + 1.2 * np.sin(2 * base * t + 2.7),
    ]
    return Trajectory(dt=dt, truth=np.stack(axes, axis=1))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Header line dt=<seconds>, then one comma-separated row per step.

    Floats are written with repr so load(write(x)) is bit-exact.
    """
    with open(path, "w") as fh:
        fh.write(f"dt={traj.dt!r}\n")
        for row in traj.truth:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_trajectory_csv(path) -> Trajectory:
    """Inverse of write_trajectory_csv; 1-3 axes supported."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise TrajectoryParseError(f"{path}: empty file")
    header = lines[0].strip()
    if not header.startswith("dt="):
        raise TrajectoryParseError(f"{path}:1: expected header 'dt=<seconds>', got {header!r}")
    try:
        dt = float(header[3:])
    except ValueError as exc:
        raise TrajectoryParseError(f"{path}:1: bad dt value {header[3:]!r}") from exc
    if dt <= 0:
        raise TrajectoryParseError(f"{path}:1: dt must be positive, got {dt}")

    rows: list[list[float]] = []
    width = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if width is None:
            width = len(parts)
            if width not in (1, 2, 3):
                raise TrajectoryParseError(f"{path}:{lineno}: expected 1-3 columns, got {width}")
        elif len(parts) != width:
            raise TrajectoryParseError(
                f"{path}:{lineno}: expected {width} columns, got {len(parts)}"
            )
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise TrajectoryParseError(f"{path}:{lineno}: non-numeric value") from exc
        if not all(math.isfinite(v) for v in values):
            raise TrajectoryParseError(f"{path}:{lineno}: non-finite value")
        rows.append(values)
    if not rows:
        raise TrajectoryParseError(f"{path}: no data rows")
    return Trajectory(dt=dt, truth=np.array(rows))
