"""Closed-form error theory and spectral reference estimators.

Everything here is evaluated on the singular modes of the whitened operator
``K``; ``lam`` denotes eigenvalues of ``B^T B = (K^T K)^{p+1}`` and
``omega`` those of the prior ``Omega = (K^T K)^p``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import optimize

from . import filters
from .errors import BracketError, DomainError

TIKHONOV = "tikhonov"
SHOWALTER = "showalter"
METHODS = (filters.NONSTATIONARY, filters.STATIONARY, TIKHONOV, SHOWALTER)


def tikhonov_filter(lam, eps):
    """``q(lam) = 1/(lam + eps)``."""
    return 1.0 / (np.asarray(lam, dtype=float) + eps)


def showalter_filter(lam, eps):
    """``q(lam) = (1 - exp(-lam/eps))/lam``, continuous at ``lam = 0``."""
    lam = np.asarray(lam, dtype=float)
    safe = np.where(lam > 0, lam, 1.0)
    return np.where(lam > 0, -np.expm1(-lam / eps) / safe, 1.0 / eps)


def _reference(wp, ybar, eps, m0, q):
    if not eps > 0:
        raise ValueError(f"regularization parameter must be positive, got {eps}")
    m0 = wp.base.m0 if m0 is None else np.asarray(m0, dtype=float)
    s = wp.K_spectrum.singular_values
    y = np.asarray(ybar, dtype=float) @ wp.K_spectrum.left_vectors
    m0_modes = wp.to_modes(m0)
    gain = q(wp.mode_lambda, eps) * wp.mode_omega * s
    return wp.from_modes(m0_modes + gain * (y - s * m0_modes), m0)


def tikhonov_reference(wp, ybar, eps, m0=None):
    """``m0 + (eps + B^T B)^{-1} Omega K^T (ybar - K m0)``.

    ``ybar`` is the whitened averaged datum ``Sigma^{-1/2} z(T)/T``. With
    ``eps = alpha/T`` its expectation is the non-stationary ARM mean.
    """
    return _reference(wp, ybar, eps, m0, tikhonov_filter)


def showalter_reference(wp, ybar, eps, m0=None):
    """Showalter counterpart of :func:`tikhonov_reference`.

    Expectation equals the stationary ARM mean at ``eps = alpha/T``.
    """
    return _reference(wp, ybar, eps, m0, showalter_filter)


def residual_sup_check(kind, eps, nu, grid=None):
    """Grid supremum of ``lam**nu * r_eps(lam)`` on ``(0, 1]`` and its bound.

    Tikhonov: bound ``eps**nu`` for ``0 <= nu <= 1``. Showalter: bound
    ``max(nu**nu, 1) * eps**nu`` for any ``nu >= 0``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if nu < 0:
        raise DomainError("residual exponent must be non-negative")
    if grid is None:
        grid = np.logspace(-14, 0, 10_000)
    lam = np.asarray(grid, dtype=float)
    if kind == TIKHONOV:
        if nu > 1:
            raise DomainError(f"Tikhonov has qualification 1; nu={nu} is out of range")
        residual = eps / (lam + eps)
        bound = eps**nu
    elif kind == SHOWALTER:
        residual = np.exp(-lam / eps)
        bound = max(nu**nu if nu > 0 else 1.0, 1.0) * eps**nu
    else:
        raise ValueError(f"unknown regularization {kind!r}")
    sup = float(np.max(lam**nu * residual))
    if sup > bound * (1 + 1e-12):
        raise AssertionError(f"sup {sup} exceeds bound {bound}")
    return sup, bound


def effective_dimension(eigs, eps):
    """``N(eps) = sum_j lam_j / (eps + lam_j)`` with compensated summation."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    lam = np.asarray(eigs, dtype=float)
    return math.fsum(lam / (eps + lam))


@dataclass(frozen=True)
class MseBreakdown:
    bias_sq: float
    variance: float
    method: str
    alpha: float
    t: float

    @property
    def total(self):
        return self.bias_sq + self.variance

    @property
    def rmse(self):
        return math.sqrt(self.total)


def _error_modes(wp, source):
    e = wp.initial_error if source is None else np.asarray(source, dtype=float)
    modes = wp.to_modes(e)
    # components outside the singular basis are never corrected
    rest = max(float(e @ e) - float(modes @ modes), 0.0)
    return modes, rest


def mse_exact(wp, method, alpha, t, source=None):
    """Exact bias/variance of the continuous-time estimators at time ``t``.

    ``method`` is one of ``nonstat``, ``stat``, ``tikhonov`` or
    ``showalter``; the latter two act on ``z(t)/t`` with ``eps = alpha/t``.
    """
    if not (t > 0 and alpha > 0):
        raise ValueError(f"need alpha > 0 and t > 0, got alpha={alpha}, t={t}")
    e, rest = _error_modes(wp, source)
    lam = wp.mode_lambda
    omega = wp.mode_omega
    eps = alpha / t
    if method in (filters.NONSTATIONARY, TIKHONOV):
        residual = eps / (eps + lam)
        var_terms = omega * lam / (eps + lam) ** 2 / t
    elif method == filters.STATIONARY:
        residual = np.exp(-lam / eps)
        var_terms = omega * -np.expm1(-2.0 * lam / eps) / (2.0 * alpha)
        var_terms = np.where(lam > 0, var_terms, 0.0)
    elif method == SHOWALTER:
        residual = np.exp(-lam / eps)
        q = showalter_filter(lam, eps)
        var_terms = q * q * omega * lam / t
    else:
        raise ValueError(f"unknown method {method!r}")
    bias_sq = math.fsum((residual * e) ** 2) + rest
    return MseBreakdown(bias_sq, math.fsum(var_terms), method, float(alpha), float(t))


def mse_euler(wp, method, alpha, T, h, source=None):
    """Exact bias/variance of the explicit Euler schemes after ``floor(T/h)`` steps."""
    steps = int(math.floor(T / h + 1e-9))
    filters.check_stability(wp, alpha, h)
    e, rest = _error_modes(wp, source)
    s2 = wp.K_spectrum.gram_eigenvalues
    c = filters.initial_mode_covariance(wp, alpha).copy()
    factor = np.ones_like(s2)
    var = np.zeros_like(s2)
    for _ in range(steps):
        g = 1.0 - h * c * s2
        var = g * g * var + c * c * s2 * h
        factor = g * factor
        if method == filters.NONSTATIONARY:
            c = c - h * c * c * s2
        elif method != filters.STATIONARY:
            raise ValueError(f"Euler MSE is defined for nonstat/stat only, got {method!r}")
    bias_sq = math.fsum((factor * e) ** 2) + rest
    return MseBreakdown(bias_sq, math.fsum(var), method, float(alpha), steps * h)


def trace_omega(wp):
    return float(np.trace(wp.Omega))


def nonstationary_variance_bounds(wp, alpha, t):
    """Both variance bounds for the non-stationary ARM.

    Returns ``(tr(Omega)/alpha, alpha^{-1/(p+1)} t^{-p/(p+1)} N(alpha/t))``.
    """
    p = wp.p
    eff = effective_dimension(wp.mode_lambda, alpha / t)
    return trace_omega(wp) / alpha, alpha ** (-1 / (p + 1)) * t ** (-p / (p + 1)) * eff


def stationary_variance_bound(wp, alpha):
    return 0.5 * trace_omega(wp) / alpha


def stationary_effective_bound(wp, alpha, t):
    """Effective-dimension variance bound for the stationary ARM; grows with ``t``."""
    p = wp.p
    q = p / (p + 1)
    eff = effective_dimension(wp.mode_lambda, alpha / t)
    c1 = 2 ** (-q) / (p + 1)
    r = (2 * p + 1) / (p + 1)
    c2 = p / (2 * (p + 1)) * r**r
    value = c1 * alpha ** (-1 / (p + 1)) * t ** (-q) * eff + c2 * 2**q * alpha ** (-r) * t**q * eff
    return value, c1, c2


@dataclass(frozen=True)
class BoundReport:
    bound_value: float
    regime: str
    bias_bound: float
    variance_bound: float
    constants: dict = field(default_factory=dict)


def _spectrum_range(wp):
    gram = wp.K_spectrum.gram_eigenvalues
    gram = gram[gram > 0]
    return float(gram.min()), float(gram.max())


def _nonstationary_case(wp, phi):
    p = wp.p
    if phi.kind == "holder":
        return 1 if phi.param <= p + 1 else 2
    lo, hi = _spectrum_range(wp)
    grid = np.logspace(math.log10(lo), math.log10(hi), 2000)
    ratio = phi(grid) / grid ** (p + 1)
    if np.all(np.diff(ratio) <= 1e-12 * np.abs(ratio[:-1])):
        return 1
    raise ValueError(
        "index function is admissible for neither case: phi(lam)/lam^(p+1) is not "
        "non-increasing on the spectrum and phi is not O(lam^(p+1))"
    )


def mse_bound(wp, method, phi, alpha, t, c=1.0):
    """Theoretical MSE bound for the ARM at ``(alpha, t)``.

    Non-stationary: ``phi^2((alpha/t)^{1/(p+1)}) + alpha^{-1/(p+1)} t^{-p/(p+1)} N(alpha/t)``
    when ``phi(lam)/lam^{p+1}`` is non-increasing, else ``c (alpha/t)^2 + ...``.
    Stationary: ``c^2 phi^2(...) + tr(Omega)/(2 alpha)`` with
    ``c = max(mu**mu, 1)``, ``mu = nu/(p+1)`` (Hölder ``phi`` only).
    """
    p = wp.p
    eps = alpha / t
    x = eps ** (1.0 / (p + 1))
    if method == filters.NONSTATIONARY:
        case = _nonstationary_case(wp, phi)
        bias = phi(x) ** 2 if case == 1 else c * eps**2
        trace_bound, eff_bound = nonstationary_variance_bounds(wp, alpha, t)
        var = eff_bound
        constants = {"c": c if case == 2 else 1.0, "nu0": p + 1, "trace_bound": trace_bound}
        regime = f"nonstat-case{case}"
    elif method == filters.STATIONARY:
        if phi.kind != "holder":
            raise ValueError("the stationary bound is implemented for Hölder index functions")
        mu = phi.param / (p + 1)
        c_stat = max(mu**mu, 1.0)
        bias = c_stat**2 * phi(x) ** 2
        var = stationary_variance_bound(wp, alpha)
        alt, c1, c2 = stationary_effective_bound(wp, alpha, t)
        constants = {"c": c_stat, "nu0": phi.param, "c1": c1, "c2": c2, "effective_bound": alt}
        regime = "stat"
    else:
        raise ValueError(f"bounds exist for nonstat/stat only, got {method!r}")
    return BoundReport(float(bias + var), regime, float(bias), float(var), constants)


def theta_function(wp, phi, eps):
    """``Theta(eps) = eps phi(eps) / sqrt(eps N(eps^{p+1}))``."""
    eff = effective_dimension(wp.mode_lambda, eps ** (wp.p + 1))
    return eps * phi(eps) / math.sqrt(eps * eff)


def psi_function(wp, phi, eps):
    """``Psi(eps) = eps^{(p+1)/2} phi(eps)``."""
    return eps ** ((wp.p + 1) / 2) * phi(eps)


def _solve_choice(fn, wp, phi, T, name):
    if not T > 0:
        raise ValueError("T must be positive")
    target = math.sqrt(1.0 / T)
    lo = 1e-14
    hi = float(wp.B_spectrum.singular_values[0] ** 2) ** (1.0 / (wp.p + 1))

    def g(logeps):
        value = fn(wp, phi, math.exp(logeps))
        return (math.log(value) if value > 0 else -math.inf) - math.log(target)

    glo, ghi = g(math.log(lo)), g(math.log(hi))
    if not (glo < 0 < ghi):
        raise BracketError(
            f"{name}(eps) - T^(-1/2) has no sign change on [{lo:g}, {hi:g}]: "
            f"{name}({lo:g}) = {fn(wp, phi, lo):.6g}, {name}({hi:g}) = {fn(wp, phi, hi):.6g}, "
            f"target {target:.6g}"
        )
    root = optimize.bisect(g, math.log(lo), math.log(hi), xtol=1e-15, rtol=1e-15, maxiter=400)
    eps = math.exp(root)
    resid = abs(fn(wp, phi, eps) - target) / target
    if resid > 1e-10:
        raise ArithmeticError(f"{name} inversion residual {resid:.3g} exceeds 1e-10")
    return eps, T * eps ** (wp.p + 1)


def solve_alpha_theta(wp, phi, T):
    """Solve ``Theta(eps) = T^{-1/2}``; returns ``(eps*, alpha* = T eps*^{p+1})``."""
    return _solve_choice(theta_function, wp, phi, T, "Theta")


def solve_alpha_psi(wp, phi, T):
    """Solve ``Psi(eps) = T^{-1/2}``; returns ``(eps*, alpha*)``."""
    return _solve_choice(psi_function, wp, phi, T, "Psi")


def fit_slope(points):
    """Least-squares slope of ``log y`` against ``log x``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("fit_slope needs at least three (x, y) pairs")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise DomainError("fit_slope needs finite positive values")
    return float(np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)[0])
