"""Assimilation recursions for the steady inverse problem.

Continuous-time methods are integrated with explicit Euler on the observed
increments:

* non-stationary ARM (Kalman-Bucy): mean and covariance are both updated;
* stationary ARM (3DVAR): the covariance stays at ``C_0 = Omega/alpha``.

Because ``Omega`` is a function of ``K^T K``, both recursions decouple into
scalar recursions on the singular modes of ``K`` (the spectral path). The
dense path keeps full matrices and serves as a cross-check.

All run functions accept a single stream ``(steps, dim)`` or a stack of
streams ``(reps, steps, dim)``; in the latter case the means carry a
leading ``reps`` axis. The covariance never depends on the data.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import datagen
from .errors import NumericalError, StabilityError

NONSTATIONARY = "nonstat"
STATIONARY = "stat"
DISCRETE_KALMAN = "kalman"
DISCRETE_3DVAR = "3dvar"


@dataclass(frozen=True)
class FilterState:
    mean: np.ndarray
    covariance: np.ndarray = None
    t: float = 0.0


@dataclass(frozen=True)
class FilterRun:
    """Trajectory of a filter run.

    ``means`` has shape ``(..., len(times), dim)``. Without a stored
    trajectory only the initial and final times are kept.
    """

    method: str
    alpha: float
    p: float
    h: float
    times: np.ndarray
    means: np.ndarray
    final_covariance: np.ndarray = None
    covariances: np.ndarray = None

    @property
    def final_mean(self):
        return self.means[..., -1, :]

    @property
    def final_time(self):
        return float(self.times[-1])

    @property
    def states(self):
        if self.means.ndim != 2:
            raise ValueError("states are only defined for a single (unbatched) run")
        out = []
        for k, t in enumerate(self.times):
            cov = None
            if self.covariances is not None:
                cov = self.covariances[k]
            elif self.method == NONSTATIONARY and k == len(self.times) - 1:
                cov = self.final_covariance
            out.append(FilterState(self.means[k], cov, float(t)))
        return out


def initial_mode_covariance(wp, alpha):
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return wp.mode_omega / alpha


def max_stable_step(wp, alpha, path="spectral"):
    """Largest ``h`` with ``h * ||C_0 K^T K|| < 1``."""
    if path == "dense":
        C0 = wp.Omega / alpha
        norm = np.linalg.norm(C0 @ (wp.K.T @ wp.K), 2)
    else:
        norm = np.max(initial_mode_covariance(wp, alpha) * wp.K_spectrum.gram_eigenvalues)
    return math.inf if norm == 0 else 1.0 / norm


def check_stability(wp, alpha, h, path="spectral"):
    hmax = max_stable_step(wp, alpha, path)
    if not h < hmax:
        raise StabilityError(
            f"explicit Euler step h={h:g} is unstable for alpha={alpha:g}; need h < {hmax:.6g}",
            hmax,
        )


def _mode_data(wp, increments):
    return wp.whiten_data(increments) @ wp.K_spectrum.left_vectors


def _resolve_path(wp, path):
    if path == "auto":
        return "spectral"
    if path not in ("spectral", "dense"):
        raise ValueError(f"unknown path {path!r}")
    return path


def _mode_covariance_matrix(wp, alpha, c):
    C0 = wp.Omega / alpha
    V = wp.K_spectrum.right_vectors
    c0 = initial_mode_covariance(wp, alpha)
    out = C0 + (V * (c - c0)) @ V.T
    return 0.5 * (out + out.T)


def _run_spectral(wp, stream, alpha, update_cov, trajectory, keep_cov):
    h = stream.h
    s = wp.K_spectrum.singular_values
    s2 = s * s
    c = initial_mode_covariance(wp, alpha).copy()
    y = _mode_data(wp, stream.increments)
    m0 = wp.base.m0
    m = np.broadcast_to(wp.to_modes(m0), y.shape[:-2] + s.shape).copy()
    steps = y.shape[-2]
    hist = [m.copy()] if trajectory else None
    covs = [c.copy()] if keep_cov else None
    for k in range(steps):
        m += c * s * (y[..., k, :] - h * s * m)
        if update_cov:
            c = c - h * c * c * s2
        if trajectory:
            hist.append(m.copy())
        if keep_cov:
            covs.append(c.copy())
    if trajectory:
        modes = np.stack(hist, axis=-2)
    else:
        modes = np.stack([np.broadcast_to(wp.to_modes(m0), m.shape), m], axis=-2)
    means = wp.from_modes(modes, m0)
    cov_traj = None
    if keep_cov:
        cov_traj = np.stack([_mode_covariance_matrix(wp, alpha, ck) for ck in covs])
    return means, _mode_covariance_matrix(wp, alpha, c), cov_traj


def _run_dense(wp, stream, alpha, update_cov, trajectory, keep_cov):
    h = stream.h
    K = wp.K
    KtK = K.T @ K
    C = wp.Omega / alpha
    z = wp.whiten_data(stream.increments)
    m0 = wp.base.m0
    m = np.broadcast_to(m0, z.shape[:-2] + m0.shape).copy()
    hist = [m.copy()] if trajectory else None
    covs = [C.copy()] if keep_cov else None
    gain = C @ K.T
    for k in range(z.shape[-2]):
        m = m + (z[..., k, :] - h * m @ K.T) @ gain.T
        if update_cov:
            C = C - h * C @ KtK @ C
            C = 0.5 * (C + C.T)
            gain = C @ K.T
        if trajectory:
            hist.append(m.copy())
        if keep_cov:
            covs.append(C.copy())
    if trajectory:
        means = np.stack(hist, axis=-2)
    else:
        means = np.stack([np.broadcast_to(m0, m.shape), m], axis=-2)
    return means, C, (np.stack(covs) if keep_cov else None)


def _run(wp, stream, alpha, method, path, trajectory, keep_covariances):
    path = _resolve_path(wp, path)
    check_stability(wp, alpha, stream.h, path)
    update_cov = method == NONSTATIONARY
    runner = _run_spectral if path == "spectral" else _run_dense
    means, cov, cov_traj = runner(wp, stream, alpha, update_cov, trajectory, keep_covariances)
    steps = stream.steps
    if trajectory:
        times = stream.h * np.arange(steps + 1)
    else:
        times = np.array([0.0, stream.h * steps])
    return FilterRun(method, float(alpha), wp.p, stream.h, times, means, cov, cov_traj)


def nonstationary_run(wp, stream, alpha, path="auto", trajectory=True, keep_covariances=False):
    """Explicit Euler for the Kalman-Bucy mean/covariance pair."""
    return _run(wp, stream, alpha, NONSTATIONARY, path, trajectory, keep_covariances)


def stationary_run(wp, stream, alpha, path="auto", trajectory=True):
    """Explicit Euler for the fixed-gain (3DVAR) mean."""
    run = _run(wp, stream, alpha, STATIONARY, path, trajectory, False)
    return FilterRun(run.method, run.alpha, run.p, run.h, run.times, run.means)


def closed_form_covariance(wp, alpha, t):
    """``C(t) = (C_0^{-1} + t K^T K)^{-1}``, evaluated without inverting ``C_0``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    c0 = initial_mode_covariance(wp, alpha)
    c = c0 / (1.0 + t * c0 * wp.K_spectrum.gram_eigenvalues)
    return _mode_covariance_matrix(wp, alpha, c)


def _replace_modes(wp, vec, factor):
    """``vec`` with its singular-mode coefficients multiplied by ``factor``."""
    return wp.from_modes(wp.to_modes(vec) * factor, vec)


def expected_mean_nonstationary(wp, alpha, t):
    """``E m(t) = u - (C_0^{-1} + t K^T K)^{-1} C_0^{-1} (u - m0)``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    c0 = initial_mode_covariance(wp, alpha)
    factor = 1.0 / (1.0 + t * c0 * wp.K_spectrum.gram_eigenvalues)
    return wp.base.u_true - _replace_modes(wp, wp.initial_error, factor)


def expected_mean_stationary(wp, alpha, t):
    """``E zeta(t) = u - exp(-(t/alpha) B^T B)(u - m0)``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    factor = np.exp(-t * wp.mode_lambda / alpha)
    return wp.base.u_true - _replace_modes(wp, wp.initial_error, factor)


def exact_nonstationary_mean(wp, stream, alpha):
    """Pathwise exact ``m(T)`` given the data; only ``z(T)`` matters.

    ``m(T) = (I + T C_0 K^T K)^{-1} (m0 + C_0 K^T Sigma^{-1/2} z(T))``.
    """
    s = wp.K_spectrum.singular_values
    c0 = initial_mode_covariance(wp, alpha)
    T = stream.h * stream.steps
    yT = _mode_data(wp, datagen.final_observation(stream))
    m0 = wp.base.m0
    modes = (wp.to_modes(m0) + c0 * s * yT) / (1.0 + T * c0 * s * s)
    return wp.from_modes(modes, m0)


def stationary_exponential_reference(wp, stream, alpha):
    """Final stationary-ARM mean by the exponential integrator on each mode.

    Exact for the drift; each increment is spread uniformly over its step.
    Use on a fine stream as a reference for the Euler scheme.
    """
    h = stream.h
    s = wp.K_spectrum.singular_values
    c0 = initial_mode_covariance(wp, alpha)
    kappa = c0 * s * s
    x = kappa * h
    decay = np.exp(-x)
    with np.errstate(invalid="ignore", divide="ignore"):
        phi1 = np.where(x > 0, -np.expm1(-x) / np.where(x > 0, x, 1.0), 1.0)
    weight = c0 * s * phi1
    y = _mode_data(wp, stream.increments)
    m0 = wp.base.m0
    m = np.broadcast_to(wp.to_modes(m0), y.shape[:-2] + s.shape).copy()
    for k in range(y.shape[-2]):
        m = decay * m + weight * y[..., k, :]
    return wp.from_modes(m, m0)


def _solve(M, rhs):
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"innovation covariance is singular: {exc}") from exc


def kalman_gain(C, A, Sigma):
    """``C A^T (A C A^T + Sigma)^{-1}``."""
    S = A @ C @ A.T + Sigma
    return _solve(S.T, (C @ A.T).T).T


def discrete_kalman_step(state, y, A, Sigma):
    """One analysis step of the discrete Kalman filter for ``u_n = u_{n-1}``."""
    if state.covariance is None:
        raise ValueError("the Kalman step needs a covariance")
    C = state.covariance
    gain = kalman_gain(C, A, Sigma)
    mean = state.mean + gain @ (y - A @ state.mean)
    cov = C - gain @ A @ C
    return FilterState(mean, 0.5 * (cov + cov.T), state.t + 1)


def discrete_3dvar_step(state, y, A, Sigma, C0, gain=None):
    """One 3DVAR step with the fixed gain ``C0 A^T (A C0 A^T + Sigma)^{-1}``.

    Pass a precomputed ``gain`` to avoid re-solving at every step.
    """
    if gain is None:
        gain = kalman_gain(C0, A, Sigma)
    mean = state.mean + gain @ (y - A @ state.mean)
    return FilterState(mean, None, state.t + 1)
