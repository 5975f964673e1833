"""Discretized problem instances.

Vectors live in plain Euclidean space: noise, norms and errors use the
ordinary dot product on grid values, with no quadrature weights. Constant
factors this introduces do not change convergence rates.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import linalg
from .errors import DomainError

EXAMPLES = ("rough", "intermediate", "smooth")

# Hölder smoothness nu with u - m0 in R((A^T A)^nu), up to an arbitrarily small epsilon
EXAMPLE_SMOOTHNESS = {"rough": 3 / 8, "intermediate": 7 / 8, "smooth": 11 / 8}


@dataclass(frozen=True)
class Grid:
    """Midpoints ``(i - 1/2)/n`` of ``n`` equal cells on ``[0, 1]``."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"grid needs n >= 1, got {self.n}")

    @property
    def points(self):
        return (np.arange(self.n) + 0.5) / self.n


@dataclass(frozen=True)
class ProblemInstance:
    A: np.ndarray
    Sigma: np.ndarray
    u_true: np.ndarray
    m0: np.ndarray
    grid: Grid
    label: str = ""

    def __post_init__(self):
        rows, cols = self.A.shape
        if self.Sigma.shape != (rows, rows):
            raise ValueError(f"Sigma has shape {self.Sigma.shape}, expected {(rows, rows)}")
        if self.u_true.shape != (cols,) or self.m0.shape != (cols,):
            raise ValueError("u_true and m0 must match the column count of A")

    @property
    def white_noise(self):
        return linalg.is_identity(self.Sigma)


@dataclass(frozen=True)
class IndexFunction:
    """Hölder ``lam**nu`` or logarithmic ``(-ln lam)**(-q)`` index function."""

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in ("holder", "log"):
            raise ValueError(f"unknown index function kind {self.kind!r}")
        if not self.param > 0:
            raise ValueError(f"index parameter must be positive, got {self.param}")

    @classmethod
    def holder(cls, nu):
        return cls("holder", float(nu))

    @classmethod
    def logarithmic(cls, q):
        return cls("log", float(q))

    def __call__(self, lam):
        return index_eval(self, lam)


def index_eval(fn, lam):
    """Evaluate the index function; works elementwise on arrays."""
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr <= 0):
        raise DomainError("index functions are defined for lambda > 0 only")
    if fn.kind == "holder":
        out = lam_arr**fn.param
    else:
        if np.any(lam_arr > 1):
            raise DomainError("logarithmic index function needs lambda <= 1")
        with np.errstate(divide="ignore"):
            out = np.abs(np.log(lam_arr)) ** (-fn.param)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SpectrumModel:
    """Synthetic eigenvalues of ``B^T B``: ``j**(-2 theta)`` or ``exp(-2 c j)``."""

    kind: str
    rate: float
    count: int

    def eigenvalues(self):
        j = np.arange(1, self.count + 1, dtype=float)
        if self.kind == "polynomial":
            return j ** (-2.0 * self.rate)
        if self.kind == "exponential":
            return np.exp(-2.0 * self.rate * j)
        raise ValueError(f"unknown spectrum kind {self.kind!r}")


@dataclass(frozen=True)
class WhitenedProblem:
    """Pre-whitened problem ``K = Sigma^{-1/2} A`` with prior ``Omega = (K^T K)^p``.

    ``K_spectrum`` drives the spectral fast path; ``B_spectrum`` is the SVD
    of ``B = K Omega^{1/2}``. ``scale`` is the factor that was applied to
    ``A`` to enforce ``||K|| <= 1`` (1.0 when nothing was rescaled).
    """

    K: np.ndarray
    p: float
    Omega: np.ndarray
    B_spectrum: linalg.SpectralDecomposition
    base: ProblemInstance
    K_spectrum: linalg.SpectralDecomposition
    whitener: np.ndarray
    scale: float = 1.0

    @property
    def dim(self):
        return self.K.shape[1]

    @property
    def mode_omega(self):
        """Eigenvalues of Omega on the right singular basis of K."""
        s2 = self.K_spectrum.gram_eigenvalues
        if self.p == 0:
            return np.ones_like(s2)
        return s2**self.p

    @property
    def mode_lambda(self):
        """Eigenvalues of ``B^T B = (K^T K)^{p+1}`` on the same basis."""
        return self.K_spectrum.gram_eigenvalues ** (self.p + 1.0)

    @property
    def initial_error(self):
        return self.base.u_true - self.base.m0

    def to_modes(self, x):
        """Coordinates of ``x`` (last axis) in the right singular basis of K."""
        return np.asarray(x) @ self.K_spectrum.right_vectors

    def from_modes(self, coeffs, offset):
        """Map mode coefficients back, keeping ``offset``'s null-space part."""
        V = self.K_spectrum.right_vectors
        return offset + (coeffs - self.to_modes(offset)) @ V.T

    def whiten_data(self, increments):
        """Apply ``Sigma^{-1/2}`` to observation vectors along the last axis."""
        if self.base.white_noise:
            return np.asarray(increments)
        return np.asarray(increments) @ self.whitener.T


def midpoint_operator(n):
    """Composite-midpoint discretization of ``k(x, y) = min{x(1-y), y(1-x)}``."""
    if n < 2:
        raise ValueError(f"midpoint_operator needs n >= 2, got {n}")
    x = Grid(n).points
    X, Y = x[:, None], x[None, :]
    return np.minimum(X * (1 - Y), Y * (1 - X)) / n


def _hat(x):
    return np.where(x <= 0.5, x, 1 - x)


def _hat_once(x):
    return np.where(
        x <= 0.5,
        -x * (4 * x**2 - 3) / 24,
        (x - 1) * (4 * x**2 - 8 * x + 1) / 24,
    )


def _hat_twice(x):
    return np.where(
        x <= 0.5,
        x * (16 * x**4 - 40 * x**2 + 25) / 1920,
        (-16 * x**5 + 80 * x**4 - 120 * x**3 + 40 * x**2 + 15 * x + 1) / 1920,
    )


def _hat_thrice(x):
    return np.where(
        x <= 0.5,
        (427 * x - 700 * x**3 + 336 * x**5 - 64 * x**7) / 322560,
        (-1 + 441 * x - 84 * x**2 - 420 * x**3 - 560 * x**4 + 1008 * x**5 - 448 * x**6 + 64 * x**7) / 322560,
    )


_SOLUTIONS = {
    "rough": (1.0, _hat, _hat_once),
    "intermediate": (10.0, _hat_once, _hat_twice),
    "smooth": (100.0, _hat_twice, _hat_thrice),
}


def _lookup(example_id):
    try:
        return _SOLUTIONS[example_id]
    except KeyError:
        raise ValueError(f"unknown example {example_id!r}; expected one of {EXAMPLES}") from None


def example_solution(example_id, grid):
    factor, u, _ = _lookup(example_id)
    return factor * u(grid.points)


def example_datum(example_id, grid):
    factor, _, Au = _lookup(example_id)
    return factor * Au(grid.points)


def example_problem(example_id, n, m0=None):
    """Anti-derivative problem with white noise (``Sigma = I``) and ``m0 = 0``."""
    grid = Grid(n)
    u = example_solution(example_id, grid)
    return ProblemInstance(
        A=midpoint_operator(n),
        Sigma=np.eye(n),
        u_true=u,
        m0=np.zeros(n) if m0 is None else np.asarray(m0, dtype=float),
        grid=grid,
        label=example_id,
    )


def whiten(prob, p):
    """Pre-whiten ``prob`` and attach the prior ``Omega = (K^T K)^p``.

    If ``||K|| > 1`` the forward operator is rescaled (in a new base
    instance) and the factor is stored in ``scale``.
    """
    if p < 0:
        raise ValueError(f"prior power p must be non-negative, got {p}")
    if prob.white_noise:
        whitener = np.eye(prob.A.shape[0])
        K = prob.A.copy()
    else:
        whitener = linalg.spd_root_inverse(prob.Sigma)
        K = whitener @ prob.A
    Kspec = linalg.svd(K)
    scale = 1.0
    s1 = Kspec.singular_values[0]
    if s1 > 1.0:
        scale = 1.0 / s1
        prob = ProblemInstance(prob.A * scale, prob.Sigma, prob.u_true, prob.m0, prob.grid, prob.label)
        K = K * scale
        Kspec = linalg.SpectralDecomposition(
            Kspec.singular_values * scale, Kspec.left_vectors, Kspec.right_vectors
        )
    if p == 0:
        Omega = np.eye(K.shape[1])
        B = K.copy()
    else:
        Omega = linalg.gram_function(Kspec, lambda lam: np.maximum(lam, 0.0) ** p)
        root = linalg.gram_function(Kspec, lambda lam: np.maximum(lam, 0.0) ** (p / 2))
        B = K @ root
    return WhitenedProblem(
        K=K,
        p=float(p),
        Omega=Omega,
        B_spectrum=linalg.svd(B),
        base=prob,
        K_spectrum=Kspec,
        whitener=whitener,
        scale=scale,
    )


def diagonal_problem(model, p, source, n=None, require_trace_class=True):
    """Diagonal instance whose ``B^T B`` eigenvalues follow ``model``.

    ``K^T K`` has eigenvalues ``lam**(1/(p+1))`` and the truth satisfies
    ``u - m0 = source(K^T K) v`` with ``v_j = n**-0.5`` (so ``||v|| = 1``).
    """
    if n is not None and n != model.count:
        model = SpectrumModel(model.kind, model.rate, n)
    n = model.count
    if require_trace_class and model.kind == "polynomial":
        if not 2 * model.rate * p / (p + 1) > 1:
            raise ValueError(
                f"Omega is not trace class: need 2*theta*p/(p+1) > 1, "
                f"got theta={model.rate}, p={p} -> {2 * model.rate * p / (p + 1):.4g}"
            )
    lam = model.eigenvalues()
    gram = lam ** (1.0 / (p + 1))
    s = np.sqrt(gram)
    u = np.asarray(source(gram), dtype=float) / math.sqrt(n)
    grid = Grid(n)
    prob = ProblemInstance(
        A=np.diag(s),
        Sigma=np.eye(n),
        u_true=u,
        m0=np.zeros(n),
        grid=grid,
        label=f"diagonal-{model.kind}-{model.rate:g}",
    )
    eye = np.eye(n)
    Kspec = linalg.SpectralDecomposition(s.copy(), eye, eye)
    omega = gram**p if p > 0 else np.ones(n)
    return WhitenedProblem(
        K=np.diag(s),
        p=float(p),
        Omega=np.diag(omega),
        B_spectrum=linalg.SpectralDecomposition(np.sqrt(lam), eye, eye),
        base=prob,
        K_spectrum=Kspec,
        whitener=eye,
    )
