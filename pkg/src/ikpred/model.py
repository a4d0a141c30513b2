"""Linear Gaussian state-space model and measurement-schedule types.

The model is

    x(t+1) = A x(t) + b + G w(t),    w(t) ~ N(0, Q)
    y(t)   = C x(t) + d
    z(t)   = y(t) + v(t),            v(t) ~ N(0, R),  t in the schedule

with x(0) ~ N(x0_mean, x0_cov). All types here are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

# Relative Frobenius asymmetry below this is treated as rounding noise and
# silently symmetrized; above it the matrix is left alone so validation
# can report it.
SYMMETRY_RTOL = 1e-9

# Eigenvalue floor for the PSD test, relative to the largest eigenvalue.
PSD_RTOL = 1e-9


class InvalidModelError(ValueError):
    """Raised when an operation receives a model that fails validation."""


class InvalidScheduleError(ValueError):
    """Raised for schedules violating ordering, range or budget rules."""


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """Return (M + M^T)/2."""
    return 0.5 * (mat + mat.T)


def relative_asymmetry(mat: np.ndarray) -> float:
    """Frobenius norm of the skew part relative to the matrix norm."""
    denom = np.linalg.norm(mat)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(mat - mat.T) / denom)


def is_psd(mat: np.ndarray, rtol: float = PSD_RTOL) -> bool:
    """Eigenvalue test: min eig >= -rtol * max eig (of the symmetric part)."""
    eigs = np.linalg.eigvalsh(symmetrize(mat))
    floor = -rtol * max(float(eigs[-1]), 0.0)
    return float(eigs[0]) >= floor


def is_pd(mat: np.ndarray) -> bool:
    eigs = np.linalg.eigvalsh(symmetrize(mat))
    return float(eigs[0]) > 0.0


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got ndim={arr.ndim}")
    return arr


def _as_vector(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StateSpaceModel:
    """Parameter set {A, b, G, Q, C, d, R, x0_mean, x0_cov}.

    Near-symmetric covariance inputs (relative asymmetry <= 1e-9) are
    symmetrized on construction; anything worse is kept as given so that
    ``validate_model`` can report it.
    """

    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    d: np.ndarray
    R: np.ndarray
    x0_mean: np.ndarray
    x0_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix(self.A, "A"))
        object.__setattr__(self, "b", _as_vector(self.b, "b"))
        object.__setattr__(self, "G", _as_matrix(self.G, "G"))
        object.__setattr__(self, "C", _as_matrix(self.C, "C"))
        object.__setattr__(self, "d", _as_vector(self.d, "d"))
        object.__setattr__(self, "x0_mean", _as_vector(self.x0_mean, "x0_mean"))
        for name in ("Q", "R", "x0_cov"):
            mat = _as_matrix(getattr(self, name), name)
            if mat.shape[0] == mat.shape[1] and relative_asymmetry(mat) <= SYMMETRY_RTOL:
                mat = symmetrize(mat)
            object.__setattr__(self, name, mat)
        for name in ("A", "b", "G", "Q", "C", "d", "R", "x0_mean", "x0_cov"):
            _freeze(getattr(self, name))

    @property
    def n(self) -> int:
        """State dimension."""
        return self.A.shape[0]

    @property
    def m(self) -> int:
        """Output dimension."""
        return self.C.shape[0]

    @property
    def p(self) -> int:
        """Process-noise dimension."""
        return self.G.shape[1]

    def with_initial_belief(self, mean: np.ndarray, cov: np.ndarray) -> "StateSpaceModel":
        """Copy of the model with a different initial state distribution."""
        return replace(self, x0_mean=np.array(mean), x0_cov=np.array(cov))


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple[str, ...] = ()


def validate_model(model: StateSpaceModel) -> ValidationResult:
    """Check dimensions, symmetry and (semi)definiteness; never raises.

    Violations are returned as data so callers can decide whether to
    refuse the model or report diagnostics.
    """
    v: list[str] = []
    A, b, G, Q, C, d, R = model.A, model.b, model.G, model.Q, model.C, model.d, model.R

    if A.shape[0] != A.shape[1]:
        v.append(f"A not square: shape {A.shape}")
        return ValidationResult(False, tuple(v))
    n = A.shape[0]
    if b.shape != (n,):
        v.append(f"b has shape {b.shape}, expected ({n},)")
    if G.shape[0] != n:
        v.append(f"G has {G.shape[0]} rows, expected {n}")
    p = G.shape[1]
    if Q.shape != (p, p):
        v.append(f"Q has shape {Q.shape}, expected ({p}, {p})")
    if C.shape[1] != n:
        v.append(f"C has {C.shape[1]} columns, expected {n}")
    m = C.shape[0]
    if d.shape != (m,):
        v.append(f"d has shape {d.shape}, expected ({m},)")
    if R.shape != (m, m):
        v.append(f"R has shape {R.shape}, expected ({m}, {m})")
    if model.x0_mean.shape != (n,):
        v.append(f"x0_mean has shape {model.x0_mean.shape}, expected ({n},)")
    if model.x0_cov.shape != (n, n):
        v.append(f"x0_cov has shape {model.x0_cov.shape}, expected ({n}, {n})")
    if v:
        return ValidationResult(False, tuple(v))

    for name, mat, need_pd in (("Q", Q, False), ("R", R, True), ("x0_cov", model.x0_cov, False)):
        if relative_asymmetry(mat) > SYMMETRY_RTOL:
            v.append(f"{name} not symmetric (relative asymmetry {relative_asymmetry(mat):.2e})")
        elif need_pd:
            if not is_pd(mat):
                v.append(f"{name} not positive definite")
        elif not is_psd(mat):
            v.append(f"{name} not positive semi-definite")
    return ValidationResult(not v, tuple(v))


def require_valid_model(model: StateSpaceModel) -> None:
    """Raise InvalidModelError when validate_model reports violations."""
    result = validate_model(model)
    if not result.ok:
        raise InvalidModelError("; ".join(result.violations))


@dataclass(frozen=True)
class Schedule:
    """A strictly increasing set of measurement times within [0, T-1]."""

    times: tuple[int, ...]
    horizon_T: int

    def __post_init__(self):
        times = tuple(int(t) for t in self.times)
        object.__setattr__(self, "times", times)
        T = int(self.horizon_T)
        object.__setattr__(self, "horizon_T", T)
        if T <= 0:
            raise InvalidScheduleError(f"horizon_T must be positive, got {T}")
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise InvalidScheduleError(f"times must be strictly increasing: {times}")
        if times and (times[0] < 0 or times[-1] >= T):
            raise InvalidScheduleError(f"times must lie in [0, {T - 1}]: {times}")

    @property
    def budget_N(self) -> int:
        return len(self.times)

    def mask(self) -> np.ndarray:
        """Boolean vector of length T, True at measurement times."""
        out = np.zeros(self.horizon_T, dtype=bool)
        if self.times:
            out[list(self.times)] = True
        return _freeze(out)


@dataclass(frozen=True)
class WarmupConfig:
    """Warm-up horizon: the error objective sums from t0+1 onward."""

    t0: int = 0

    def __post_init__(self):
        if int(self.t0) < 0:
            raise ValueError(f"t0 must be non-negative, got {self.t0}")
        object.__setattr__(self, "t0", int(self.t0))


def regular_schedule(horizon_T: int, budget_N: int) -> Schedule:
    """Evenly spread schedule: times[i] = floor(i*T/N), i = 0..N-1."""
    T, N = int(horizon_T), int(budget_N)
    if N < 1 or N > T:
        raise InvalidScheduleError(f"budget must satisfy 1 <= N <= T, got N={N}, T={T}")
    return Schedule(tuple(i * T // N for i in range(N)), T)


# --- JSON serialization ----------------------------------------------------

_MODEL_KEYS = ("A", "b", "G", "Q", "C", "d", "R", "x0_mean", "x0_cov")


def model_to_dict(model: StateSpaceModel) -> dict:
    return {key: getattr(model, key).tolist() for key in _MODEL_KEYS}


def model_from_dict(data: dict) -> StateSpaceModel:
    missing = [key for key in _MODEL_KEYS if key not in data]
    if missing:
        raise KeyError(f"model document missing keys: {missing}")
    return StateSpaceModel(**{key: np.asarray(data[key], dtype=float) for key in _MODEL_KEYS})


def save_model(model: StateSpaceModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> StateSpaceModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def schedule_to_dict(schedule: Schedule) -> dict:
    return {"times": list(schedule.times), "T": schedule.horizon_T}


def schedule_from_dict(data: dict) -> Schedule:
    return Schedule(tuple(data["times"]), int(data["T"]))


def save_schedule(schedule: Schedule, path) -> None:
    with open(path, "w") as fh:
        json.dump(schedule_to_dict(schedule), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_schedule(path) -> Schedule:
    with open(path) as fh:
        return schedule_from_dict(json.load(fh))
