"""Monte-Carlo experiment driver: grids, oracle alpha, RMSE tables and CSV I/O."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
import logging
import math

import numpy as np

from . import analysis, datagen, filters, problems
from .errors import StabilityError

log = logging.getLogger(__name__)

CSV_HEADER = "example,method,p,n,T,h,alpha,rmse,stderr,reps,seed"
EXAMPLES = problems.EXAMPLES + ("diagonal",)
ALPHA_SELECTIONS = ("grid_oracle_mc", "grid_oracle_exact")

# reference RMSE rates in T for plot data (delta = T^{-1/2})
REFERENCE_RATES = {
    "rough": {"optimal": -3 / 16},
    "intermediate": {"optimal": -7 / 24},
    "smooth": {"optimal": -11 / 32, "saturation": -4 / 13},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _geometric(base, lo, hi):
    return tuple(base * 2.0**j for j in range(lo, hi + 1))


PROFILES = {
    "paper": {
        "n": 512,
        "reps": 100,
        "T_grid": _geometric(100.0, 0, 9),
        "alpha_grid": _geometric(0.1, 0, 39),
    },
    # the desk alpha grid reaches below 0.1 so that the p > 0 optima stay interior
    "desk": {
        "n": 128,
        "reps": 50,
        "T_grid": _geometric(100.0, 0, 6),
        "alpha_grid": _geometric(0.1, -10, 39),
    },
}


@dataclass(frozen=True)
class HRule:
    """Time step rule: ``fixed`` step ``value`` or ``fraction`` giving ``T/value``."""

    kind: str = "fraction"
    value: float = 100.0

    def step(self, T):
        return self.value if self.kind == "fixed" else T / self.value

    def to_json(self):
        return {self.kind: self.value}


@dataclass(frozen=True)
class ExperimentConfig:
    example: str = "rough"
    methods: tuple = (filters.NONSTATIONARY, filters.STATIONARY)
    p: float = 0.0
    n: int = 512
    T_grid: tuple = PROFILES["paper"]["T_grid"]
    alpha_grid: tuple = PROFILES["paper"]["alpha_grid"]
    h_rule: HRule = field(default_factory=HRule)
    reps: int = 100
    base_seed: int = 0
    alpha_selection: str = "grid_oracle_exact"
    output_path: str = "results.csv"
    # diagonal example only: B^T B eigenvalues j^(-2 theta), source phi(lam) = lam^nu
    diagonal_theta: float = 2.0
    diagonal_nu: float = 1.0
    path: str = "spectral"
    zero_noise: bool = False
    prune_width: int = 2

    def __post_init__(self):
        validate(self)

    @classmethod
    def profile(cls, name, **overrides):
        try:
            preset = PROFILES[name]
        except KeyError:
            raise ConfigError("profile", f"unknown profile {name!r}") from None
        return cls(**{**preset, **overrides})


def validate(cfg):
    if cfg.example not in EXAMPLES:
        raise ConfigError("example", f"expected one of {EXAMPLES}, got {cfg.example!r}")
    if not cfg.methods:
        raise ConfigError("methods", "at least one method is required")
    for m in cfg.methods:
        if m not in analysis.METHODS:
            raise ConfigError("methods", f"unknown method {m!r}; expected {analysis.METHODS}")
    if cfg.p < 0:
        raise ConfigError("p", "prior power must be non-negative")
    if cfg.n < (1 if cfg.example == "diagonal" else 2):
        raise ConfigError("n", "discretization level too small (need n >= 2, or n >= 1 for 'diagonal')")
    for name in ("T_grid", "alpha_grid"):
        grid = getattr(cfg, name)
        if len(grid) == 0:
            raise ConfigError(name, "grid must be non-empty")
        if any(not (v > 0 and math.isfinite(v)) for v in grid):
            raise ConfigError(name, "grid values must be positive and finite")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError(name, "grid must be strictly increasing")
    if cfg.h_rule.kind not in ("fixed", "fraction") or not cfg.h_rule.value > 0:
        raise ConfigError("h_rule", "expected {'fixed': h} or {'fraction': k} with a positive value")
    if cfg.reps < 1:
        raise ConfigError("reps", "need at least one repetition")
    if cfg.alpha_selection not in ALPHA_SELECTIONS:
        raise ConfigError("alpha_selection", f"expected one of {ALPHA_SELECTIONS}")
    if cfg.path not in ("spectral", "dense"):
        raise ConfigError("path", "expected 'spectral' or 'dense'")
    if cfg.prune_width < 0:
        raise ConfigError("prune_width", "must be non-negative")


def _parse_h_rule(raw):
    if isinstance(raw, HRule):
        return raw
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ConfigError("h_rule", "expected a single-key object such as {'fraction': 100}")
    ((kind, value),) = raw.items()
    try:
        return HRule(kind, float(value))
    except (TypeError, ValueError):
        raise ConfigError("h_rule", f"value {value!r} is not a number") from None


_COERCE = {
    "example": str,
    "methods": lambda v: tuple(str(x) for x in v),
    "p": float,
    "n": int,
    "T_grid": lambda v: tuple(float(x) for x in v),
    "alpha_grid": lambda v: tuple(float(x) for x in v),
    "h_rule": _parse_h_rule,
    "reps": int,
    "base_seed": int,
    "alpha_selection": str,
    "output_path": str,
    "diagonal_theta": float,
    "diagonal_nu": float,
    "path": str,
    "zero_noise": bool,
    "prune_width": int,
}


def config_from_dict(data, profile="paper"):
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be an object")
    known = {f.name for f in fields(ExperimentConfig)}
    if profile not in PROFILES:
        raise ConfigError("profile", f"unknown profile {profile!r}")
    kwargs = dict(PROFILES[profile])
    for key, value in data.items():
        if key not in known:
            raise ConfigError(key, "unknown configuration key")
        if key in ("methods", "T_grid", "alpha_grid") and not isinstance(value, (list, tuple)):
            raise ConfigError(key, "expected a list")
        try:
            kwargs[key] = _COERCE[key](value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, f"cannot parse {value!r}: {exc}") from None
    return ExperimentConfig(**kwargs)


def read_config(path, profile="paper"):
    """Load a JSON config; omitted fields take the ``profile`` defaults."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path}: malformed JSON ({exc})") from None
    return config_from_dict(data, profile)


def config_to_dict(cfg):
    out = asdict(cfg)
    out["h_rule"] = cfg.h_rule.to_json()
    out["methods"] = list(cfg.methods)
    out["T_grid"] = list(cfg.T_grid)
    out["alpha_grid"] = list(cfg.alpha_grid)
    return out


@dataclass(frozen=True)
class RmseRow:
    example: str
    method: str
    p: float
    n: int
    T: float
    h: float
    alpha: float
    rmse: float
    stderr: float
    reps: int
    seed: int

    @property
    def stable(self):
        return math.isfinite(self.rmse)


@dataclass
class RmseTable:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def select(self, method=None, T=None, p=None):
        return [
            r
            for r in self.rows
            if (method is None or r.method == method) and (T is None or r.T == T) and (p is None or r.p == p)
        ]

    def best(self, method, T, p=None):
        """Row with minimal RMSE; ties go to the larger alpha."""
        rows = [r for r in self.select(method, T, p) if r.stable]
        if not rows:
            return None
        return min(rows, key=lambda r: (r.rmse, -r.alpha))

    def min_rmse_curve(self, method, p=None):
        """``[(T, min RMSE, alpha)]`` over the T values present for ``method``."""
        out = []
        for T in sorted({r.T for r in self.select(method, p=p)}):
            row = self.best(method, T, p)
            if row is not None:
                out.append((T, row.rmse, row.alpha))
        return out

    def slope(self, method, p=None):
        curve = self.min_rmse_curve(method, p)
        return analysis.fit_slope([(T, r) for T, r, _ in curve])


def build_problem(cfg):
    if cfg.example == "diagonal":
        model = problems.SpectrumModel("polynomial", cfg.diagonal_theta, cfg.n)
        source = problems.IndexFunction.holder(cfg.diagonal_nu)
        return problems.diagonal_problem(model, cfg.p, source, require_trace_class=False)
    return problems.whiten(problems.example_problem(cfg.example, cfg.n), cfg.p)


def cell_seed(base_seed, T, alpha, method, rep):
    """64-bit seed for one repetition of one (T, alpha, method) cell."""
    key = f"{int(base_seed)}|{float(T).hex()}|{float(alpha).hex()}|{method}|{int(rep)}"
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


def _is_filter(method):
    return method in (filters.NONSTATIONARY, filters.STATIONARY)


def _stable(wp, method, alpha, h, path="spectral"):
    if not _is_filter(method):
        return True
    try:
        filters.check_stability(wp, alpha, h, path)
    except StabilityError:
        return False
    return True


def final_estimates(wp, method, stream, alpha, path="spectral"):
    """Final estimate of ``method`` for each stream in a stacked stream."""
    if method == filters.NONSTATIONARY:
        return filters.nonstationary_run(wp, stream, alpha, path=path, trajectory=False).final_mean
    if method == filters.STATIONARY:
        return filters.stationary_run(wp, stream, alpha, path=path, trajectory=False).final_mean
    ybar = wp.whiten_data(datagen.averaged_datum(stream))
    eps = alpha / stream.T
    if method == analysis.TIKHONOV:
        return analysis.tikhonov_reference(wp, ybar, eps)
    if method == analysis.SHOWALTER:
        return analysis.showalter_reference(wp, ybar, eps)
    raise ValueError(f"unknown method {method!r}")


def summarize(sq_errors):
    """RMSE and its delta-method standard error from per-run squared errors."""
    sq = np.asarray(sq_errors, dtype=float)
    mse = float(np.mean(sq))
    rmse = math.sqrt(mse)
    if sq.size < 2:
        return rmse, math.nan
    se_mse = float(np.std(sq, ddof=1)) / math.sqrt(sq.size)
    return rmse, (se_mse / (2.0 * rmse) if rmse > 0 else 0.0)


def run_cell(cfg, wp, method, T, alpha):
    h = cfg.h_rule.step(T)
    common = dict(
        example=cfg.example,
        method=method,
        p=cfg.p,
        n=cfg.n,
        T=float(T),
        h=float(h),
        alpha=float(alpha),
        reps=cfg.reps,
        seed=cfg.base_seed,
    )
    if not _stable(wp, method, alpha, h, cfg.path):
        log.debug("unstable cell %s T=%g alpha=%g", method, T, alpha)
        return RmseRow(rmse=math.nan, stderr=math.nan, **common)
    prob = wp.base
    if cfg.zero_noise:
        stream = datagen.noiseless_stream(prob, T, h, reps=cfg.reps)
    else:
        seeds = [cell_seed(cfg.base_seed, T, alpha, method, r) for r in range(cfg.reps)]
        stream = datagen.simulate_streams(prob, T, h, seeds)
    est = final_estimates(wp, method, stream, alpha, cfg.path)
    sq = np.sum((est - prob.u_true) ** 2, axis=-1)
    rmse, se = summarize(sq)
    return RmseRow(rmse=rmse, stderr=se, **common)


def exact_rmse_curve(cfg, wp, T, method):
    """Analytic RMSE over the alpha grid (NaN where Euler is unstable)."""
    h = cfg.h_rule.step(T)
    out = np.full(len(cfg.alpha_grid), math.nan)
    for i, a in enumerate(cfg.alpha_grid):
        if _stable(wp, method, a, h, cfg.path):
            out[i] = analysis.mse_exact(wp, method, a, T).rmse
    return out


def _argmin_prefer_large(values):
    values = np.asarray(values, dtype=float)
    if np.all(np.isnan(values)):
        return None
    best = np.nanmin(values)
    return int(np.flatnonzero(values == best)[-1])


def oracle_alpha(cfg, T, method, table=None, wp=None):
    """Grid alpha minimizing the RMSE at ``T``; ties go to the larger alpha.

    ``grid_oracle_exact`` uses the analytic MSE; ``grid_oracle_mc`` uses the
    Monte-Carlo RMSE in ``table`` (computed on demand if not given).
    """
    wp = build_problem(cfg) if wp is None else wp
    if cfg.alpha_selection == "grid_oracle_exact":
        idx = _argmin_prefer_large(exact_rmse_curve(cfg, wp, T, method))
        if idx is None:
            raise StabilityError(f"no stable alpha on the grid at T={T}", math.nan)
        return cfg.alpha_grid[idx]
    if table is None:
        table = RmseTable([run_cell(cfg, wp, method, T, a) for a in cfg.alpha_grid])
    row = table.best(method, float(T), cfg.p)
    if row is None:
        raise StabilityError(f"no stable alpha on the grid at T={T}", math.nan)
    return row.alpha


def plan_cells(cfg, wp):
    """Ordered (method, T, alpha) cells to simulate."""
    cells = []
    for method in cfg.methods:
        for T in cfg.T_grid:
            if cfg.alpha_selection == "grid_oracle_mc":
                alphas = cfg.alpha_grid
            else:
                idx = _argmin_prefer_large(exact_rmse_curve(cfg, wp, T, method))
                if idx is None:
                    alphas = cfg.alpha_grid
                else:
                    lo = max(0, idx - cfg.prune_width)
                    alphas = cfg.alpha_grid[lo : idx + cfg.prune_width + 1]
            cells.extend((method, T, a) for a in alphas)
    return cells


def run_experiment(cfg, workers=1):
    """Run every planned cell; the table does not depend on ``workers``."""
    wp = build_problem(cfg)
    cells = plan_cells(cfg, wp)
    log.info("running %d cells (%s, p=%g, n=%d)", len(cells), cfg.example, cfg.p, cfg.n)

    def job(cell):
        return run_cell(cfg, wp, *cell)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(job, cells))
    else:
        rows = [job(c) for c in cells]
    return RmseTable(rows)


def _fmt(value):
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(table, path):
    """Write ``table`` with the fixed header; floats keep 17 significant digits."""
    names = CSV_HEADER.split(",")
    try:
        with open(path, "w", newline="") as fh:
            fh.write(CSV_HEADER + "\n")
            for row in table.rows:
                fh.write(",".join(_fmt(getattr(row, k)) for k in names) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


_ROW_TYPES = {
    "example": str,
    "method": str,
    "p": float,
    "n": int,
    "T": float,
    "h": float,
    "alpha": float,
    "rmse": float,
    "stderr": float,
    "reps": int,
    "seed": int,
}


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        names = CSV_HEADER.split(",")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(names):
                raise ValueError(f"{path}:{lineno}: expected {len(names)} fields")
            rows.append(RmseRow(**{k: _ROW_TYPES[k](v) for k, v in zip(names, parts)}))
    return RmseTable(rows)


def plot_data(table, example=None, p=None):
    """Per-method ``(T, min RMSE)`` points plus reference-rate lines.

    Reference lines are anchored at the first non-stationary point.
    Returns rows ``(series, T, value)``.
    """
    out = []
    methods = sorted({r.method for r in table.rows})
    for m in methods:
        for T, rmse, _ in table.min_rmse_curve(m, p):
            out.append((m, T, rmse))
    rates = REFERENCE_RATES.get(example, {})
    anchor_method = (
        filters.NONSTATIONARY if filters.NONSTATIONARY in methods else (methods[0] if methods else None)
    )
    curve = table.min_rmse_curve(anchor_method, p) if anchor_method else []
    if curve:
        T0, r0, _ = curve[0]
        for name, rate in rates.items():
            for T, _, _ in curve:
                out.append((f"rate:{name}", T, r0 * (T / T0) ** rate))
    return out
