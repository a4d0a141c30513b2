"""Maximum-likelihood identification of the state-space model by EM.

The training phase observes z(t) at every step, so the E-step is a
standard forward Kalman filter followed by a fixed-interval (RTS)
backward smoother, including the lag-one covariances the M-step needs.
The M-step solves the closed-form maximizers, with (A, b) and (C, d)
estimated jointly by augmented regression (state vector extended with a
constant 1). G is pinned to the identity with Q absorbing the noise
shaping; only G Q G^T is identifiable anyway.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import StateSpaceModel, require_valid_model, symmetrize

# When the innovation covariance gets this ill-conditioned the filter
# adds a trace-scaled jitter before inverting (reported in diagnostics).
INNOVATION_COND_LIMIT = 1e12
RIDGE = 1e-8
MONOTONE_RTOL = 1e-9


class EmDivergenceError(RuntimeError):
    """Log-likelihood decreased beyond tolerance: an implementation bug
    signal, never an expected data condition."""


@dataclass(frozen=True)
class SmoothedBelief:
    """E-step sufficient statistics.

    lag_one_cov[t] = Cov(x(t), x(t-1) | all data), valid for t >= 1
    (index 0 is zero-filled).
    """

    smooth_mean: np.ndarray  # (L, n)
    smooth_cov: np.ndarray  # (L, n, n)
    lag_one_cov: np.ndarray  # (L, n, n)
    regularization_count: int = 0


@dataclass(frozen=True)
class EmConfig:
    """EM fitting controls.

    init_mode "spectral" seeds the transition matrix with damped
    rotation blocks at the dominant periodogram frequencies of the
    data (deterministic); "plain" uses 0.95 * I. Periodic signals at
    low SNR need the spectral start to escape non-oscillatory local
    optima.
    """

    state_dim_n: int
    max_iters: int = 100
    loglik_rel_tol: float = 1e-6
    rng_seed: int = 0
    init_mode: str = "spectral"

    def __post_init__(self):
        if self.state_dim_n < 1:
            raise ValueError("state_dim_n must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.loglik_rel_tol <= 0:
            raise ValueError("loglik_rel_tol must be positive")
        if self.init_mode not in ("spectral", "plain"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")


def _as_observations(observations) -> np.ndarray:
    z = np.asarray(observations, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2:
        raise ValueError(f"observations must be (L, m), got shape {z.shape}")
    return z


def _filter_all(model: StateSpaceModel, z: np.ndarray):
    """Forward Kalman filter with a measurement at every step.

    Returns predicted/filtered moments, the exact Gaussian log-likelihood
    and the innovation-regularization count.
    """
    A, b, C, d, R = model.A, model.b, model.C, model.d, model.R
    Q_eff = model.G @ model.Q @ model.G.T
    L, m = z.shape
    n = model.n

    x_pred = np.empty((L, n))
    P_pred = np.empty((L, n, n))
    x_filt = np.empty((L, n))
    P_filt = np.empty((L, n, n))
    gain_last = np.zeros((n, m))
    loglik = 0.0
    reg_count = 0

    x_pred[0] = model.x0_mean
    P_pred[0] = model.x0_cov
    log2pi = np.log(2.0 * np.pi)
    eye_m = np.eye(m)
    for t in range(L):
        innov = (z[t] - d) - C @ x_pred[t]
        S = symmetrize(C @ P_pred[t] @ C.T + R)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond > INNOVATION_COND_LIMIT:
            S = S + (1e-10 * np.trace(S) / m) * eye_m
            reg_count += 1
        S_inv = np.linalg.inv(S)
        sign, logdet = np.linalg.slogdet(S)
        loglik += -0.5 * (m * log2pi + logdet + innov @ S_inv @ innov)
        K = P_pred[t] @ C.T @ S_inv
        x_filt[t] = x_pred[t] + K @ innov
        P_filt[t] = symmetrize(P_pred[t] - K @ C @ P_pred[t])
        if t == L - 1:
            gain_last = K
        else:
            x_pred[t + 1] = A @ x_filt[t] + b
            P_pred[t + 1] = symmetrize(A @ P_filt[t] @ A.T + Q_eff)
    return x_pred, P_pred, x_filt, P_filt, gain_last, float(loglik), reg_count


def e_step(model: StateSpaceModel, observations) -> tuple[SmoothedBelief, float]:
    """Forward filter + RTS smoother on offset-adjusted observations.

    Returns smoothed moments (including lag-one covariances) and the
    exact Gaussian log-likelihood of the data under ``model``.
    """
    require_valid_model(model)
    z = _as_observations(observations)
    if z.shape[0] < 2:
        raise ValueError("need at least 2 observations")
    if z.shape[1] != model.m:
        raise ValueError(f"observations have dimension {z.shape[1]}, model output is {model.m}")

    A = model.A
    x_pred, P_pred, x_filt, P_filt, gain_last, loglik, reg_count = _filter_all(model, z)
    L, n = x_filt.shape

    x_smooth = np.empty((L, n))
    P_smooth = np.empty((L, n, n))
    J = np.empty((L - 1, n, n))
    x_smooth[-1] = x_filt[-1]
    P_smooth[-1] = P_filt[-1]
    for t in range(L - 2, -1, -1):
        J[t] = P_filt[t] @ A.T @ np.linalg.pinv(P_pred[t + 1])
        x_smooth[t] = x_filt[t] + J[t] @ (x_smooth[t + 1] - x_pred[t + 1])
        P_smooth[t] = symmetrize(P_filt[t] + J[t] @ (P_smooth[t + 1] - P_pred[t + 1]) @ J[t].T)

    # lag-one covariances Cov(x(t), x(t-1) | data), Shumway & Stoffer form
    lag_one = np.zeros((L, n, n))
    lag_one[-1] = (np.eye(n) - gain_last @ model.C) @ A @ P_filt[-2]
    for t in range(L - 2, 0, -1):
        lag_one[t] = P_filt[t] @ J[t - 1].T + J[t] @ (lag_one[t + 1] - A @ P_filt[t]) @ J[t - 1].T

    return SmoothedBelief(x_smooth, P_smooth, lag_one, reg_count), loglik


def _floor_eigenvalues(mat: np.ndarray, floor: float) -> np.ndarray:
    """Clip eigenvalues from below; keeps degenerate-data covariance
    estimates (e.g. R on constant observations) usable downstream."""
    eigvals, eigvecs = np.linalg.eigh(symmetrize(mat))
    if eigvals[0] >= floor:
        return symmetrize(mat)
    return symmetrize((eigvecs * np.clip(eigvals, floor, None)) @ eigvecs.T)


def _noise_floor(z: np.ndarray) -> float:
    """Smallest admissible measurement-noise eigenvalue for this data.

    Fixed per data set and shared by the initial model and every M-step,
    so clipping can only ever pull R down onto the floor, never push it
    back up -- which would break EM monotonicity.
    """
    mean_square = float(np.mean(z**2))
    return 1e-12 * max(mean_square, 1e-6)


def _solve_regression(sum_cross: np.ndarray, sum_gram: np.ndarray):
    """Solve B @ sum_gram = sum_cross for B, ridging if singular.

    Returns (B, ridged_flag).
    """
    try:
        with np.errstate(all="raise"):
            cond = np.linalg.cond(sum_gram)
            if not np.isfinite(cond) or cond > 1.0 / RIDGE:
                raise np.linalg.LinAlgError("ill-conditioned")
            return np.linalg.solve(sum_gram.T, sum_cross.T).T, False
    except (np.linalg.LinAlgError, FloatingPointError):
        gram = sum_gram + RIDGE * np.trace(sum_gram) / sum_gram.shape[0] * np.eye(sum_gram.shape[0])
        return np.linalg.solve(gram.T, sum_cross.T).T, True


def m_step(stats: SmoothedBelief, observations, prev: StateSpaceModel) -> StateSpaceModel:
    """Closed-form parameter maximizers given smoothed statistics."""
    z = _as_observations(observations)
    mu = stats.smooth_mean
    L, n = mu.shape

    # second moments E[x x^T] and E[x(t) x(t-1)^T]
    phi = stats.smooth_cov + np.einsum("ti,tj->tij", mu, mu)
    psi = stats.lag_one_cov[1:] + np.einsum("ti,tj->tij", mu[1:], mu[:-1])

    # transition: regress x(t) on (x(t-1), 1)
    sum_phi_prev = phi[:-1].sum(axis=0)
    sum_mu_prev = mu[:-1].sum(axis=0)
    gram_x = np.block(
        [[sum_phi_prev, sum_mu_prev[:, None]], [sum_mu_prev[None, :], np.array([[L - 1.0]])]]
    )
    cross_x = np.concatenate([psi.sum(axis=0), mu[1:].sum(axis=0)[:, None]], axis=1)
    AB, _ = _solve_regression(cross_x, gram_x)
    A_new, b_new = AB[:, :n], AB[:, n]
    Q_new = symmetrize((phi[1:].sum(axis=0) - AB @ cross_x.T) / (L - 1.0))
    Q_new = _floor_eigenvalues(Q_new, 0.0)

    # emission: regress z(t) on (x(t), 1)
    sum_phi = phi.sum(axis=0)
    sum_mu = mu.sum(axis=0)
    gram_z = np.block([[sum_phi, sum_mu[:, None]], [sum_mu[None, :], np.array([[float(L)]])]])
    cross_z = np.concatenate([z.T @ mu, z.sum(axis=0)[:, None]], axis=1)
    CD, _ = _solve_regression(cross_z, gram_z)
    C_new, d_new = CD[:, :n], CD[:, n]
    R_new = symmetrize((z.T @ z - CD @ cross_z.T) / float(L))
    R_new = _floor_eigenvalues(R_new, _noise_floor(z))

    return StateSpaceModel(
        A=A_new,
        b=b_new,
        G=np.eye(n),
        Q=Q_new,
        C=C_new,
        d=d_new,
        R=R_new,
        x0_mean=mu[0],
        x0_cov=symmetrize(stats.smooth_cov[0]),
    )


def _dominant_frequencies(z: np.ndarray, count: int) -> np.ndarray:
    """Angular frequencies (radians/step) of the strongest periodogram
    peaks of the mean-removed data, strongest first."""
    if count == 0:
        return np.empty(0)
    centered = z - z.mean(axis=0)
    power = np.abs(np.fft.rfft(centered, axis=0)) ** 2
    power = power.sum(axis=1)
    power[0] = 0.0  # DC handled by the offset d
    order = np.argsort(power)[::-1]
    picked: list[int] = []
    for idx in order:
        if idx == 0:
            continue
        if all(abs(idx - q) > 1 for q in picked):
            picked.append(int(idx))
        if len(picked) == count:
            break
    while len(picked) < count:  # degenerate spectra: spread arbitrarily
        picked.append(len(picked) + 1)
    L = centered.shape[0]
    return 2.0 * np.pi * np.array(picked[:count], dtype=float) / L


def _spectral_initial_model(z: np.ndarray, n: int) -> StateSpaceModel:
    """Harmonic-regression start: damped rotation blocks at the dominant
    data frequencies, C from least squares of the data on the rollout of
    those rotators, R from the regression residuals and a small Q so the
    first M-step does not wash the structure out."""
    L, m = z.shape
    d0 = z.mean(axis=0)
    rho = 0.99
    omegas = _dominant_frequencies(z, n // 2)

    A = np.zeros((n, n))
    basis = np.empty((L, n))
    t = np.arange(L)
    for k, omega in enumerate(omegas):
        c, s = rho * np.cos(omega), rho * np.sin(omega)
        i = 2 * k
        A[i : i + 2, i : i + 2] = [[c, s], [-s, c]]
        damp = rho**t
        basis[:, i] = damp * np.cos(omega * t)
        basis[:, i + 1] = -damp * np.sin(omega * t)
    if n % 2 == 1:
        A[n - 1, n - 1] = 0.95
        basis[:, n - 1] = 0.95**t

    centered = z - d0
    C0 = np.linalg.lstsq(basis, centered, rcond=None)[0].T
    resid = centered - basis @ C0.T
    resid_cov = np.atleast_2d(np.cov(resid.T)) if L > 2 else np.eye(m)
    floor = max(_noise_floor(z), 1e-8 * float(np.trace(resid_cov)) / m)
    R0 = resid_cov + floor * np.eye(m)
    q0 = max(1e-2 * float(np.trace(resid_cov)) / m, floor)
    x0 = basis[0]
    return StateSpaceModel(
        A=A,
        b=np.zeros(n),
        G=np.eye(n),
        Q=q0 * np.eye(n),
        C=C0,
        d=d0,
        R=R0,
        x0_mean=x0,
        x0_cov=np.eye(n),
    )


def _initial_model(
    z: np.ndarray, n: int, rng: np.random.Generator, init_mode: str = "spectral"
) -> StateSpaceModel:
    if init_mode == "spectral":
        return _spectral_initial_model(z, n)
    L, m = z.shape
    d0 = z.mean(axis=0)
    diffs = np.diff(z, axis=0)
    diff_cov = np.atleast_2d(np.cov(diffs.T)) if L > 2 else np.eye(m)
    floor = max(_noise_floor(z), 1e-8 * float(np.trace(diff_cov)) / m)
    R0 = 0.5 * diff_cov + floor * np.eye(m)
    q_scale = max(0.5 * float(np.trace(diff_cov)) / m, floor)

    ortho = np.linalg.qr(rng.standard_normal((n, n)))[0]
    if m <= n:
        C0 = ortho[:m, :]
    else:
        C0 = rng.standard_normal((m, n)) / np.sqrt(n)
    x0 = np.linalg.pinv(C0) @ (z[0] - d0)
    return StateSpaceModel(
        A=0.95 * np.eye(n),
        b=np.zeros(n),
        G=np.eye(n),
        Q=q_scale * np.eye(n),
        C=C0,
        d=d0,
        R=R0,
        x0_mean=x0,
        x0_cov=np.eye(n),
    )


@dataclass
class FitDiagnostics:
    loglik_history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    regularization_count: int = 0
    state_dim_n: int = 0


def fit(observations, config: EmConfig) -> tuple[StateSpaceModel, FitDiagnostics]:
    """Alternate E/M steps until the log-likelihood plateaus.

    The log-likelihood history is non-decreasing up to a 1e-9 relative
    tolerance; anything worse raises EmDivergenceError.
    """
    z = _as_observations(observations)
    n = config.state_dim_n
    if z.shape[0] < 10 * n:
        raise ValueError(
            f"need at least 10*n = {10 * n} observations to fit n={n}, got {z.shape[0]}"
        )
    rng = np.random.default_rng(config.rng_seed)
    model = _initial_model(z, n, rng, config.init_mode)
    diag = FitDiagnostics(state_dim_n=n)

    prev_ll = -np.inf
    for it in range(config.max_iters):
        stats, ll = e_step(model, z)
        diag.regularization_count += stats.regularization_count
        diag.loglik_history.append(ll)
        diag.iterations = it + 1
        if np.isfinite(prev_ll):
            drop = prev_ll - ll
            band = MONOTONE_RTOL * abs(prev_ll)
            if drop > band:
                raise EmDivergenceError(
                    f"log-likelihood decreased at iteration {it}: {prev_ll!r} -> {ll!r}"
                )
            if ll - prev_ll < config.loglik_rel_tol * abs(prev_ll):
                diag.converged = True
                break
        prev_ll = ll
        model = m_step(stats, z, model)
    return model, diag


def one_step_rms(model: StateSpaceModel, observations, eval_from: int) -> float:
    """RMS of one-step-ahead output predictions on observations[eval_from:].

    Runs the regular-rate filter over the whole sequence so the evaluated
    tail is conditioned on everything before it.
    """
    z = _as_observations(observations)
    x_pred, _, _, _, _, _, _ = _filter_all(model, z)
    pred = x_pred @ model.C.T + model.d
    err = pred[eval_from:] - z[eval_from:]
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def select_state_dim(
    observations,
    candidates: Sequence[int] = (2, 3, 4, 5, 6),
    max_iters: int = 50,
    loglik_rel_tol: float = 1e-6,
    rng_seed: int = 0,
    holdout_fraction: float = 0.2,
) -> tuple[int, dict[int, float]]:
    """Pick the state dimension with the lowest held-out one-step RMS.

    Each candidate n is fitted on the leading (1 - holdout_fraction) of
    the data and scored on the rest. Candidates the data cannot support
    (too short) are skipped.
    """
    z = _as_observations(observations)
    split = int(round(z.shape[0] * (1.0 - holdout_fraction)))
    scores: dict[int, float] = {}
    for n in candidates:
        if split < 10 * n:
            continue
        model, _ = fit(
            z[:split],
            EmConfig(state_dim_n=n, max_iters=max_iters, loglik_rel_tol=loglik_rel_tol, rng_seed=rng_seed),
        )
        scores[n] = one_step_rms(model, z, split)
    if not scores:
        raise ValueError("no candidate state dimension is feasible for this data length")
    best = min(scores, key=lambda k: (scores[k], k))
    return best, scores
