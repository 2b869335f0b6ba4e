"""Multi-start fitting of Chinchilla and Farseer laws to run records.

Each start is a bounded trust-region least-squares solve on log-space
residuals ``ln(predicted) - ln(actual)`` with a Huber loss, which keeps
occasional diverged runs from dominating. Chinchilla's E, A and B are
optimized as logarithms so they stay positive; exponents are box-bounded.

Farseer starts come from two sources: a per-N decomposition of gridded data
(each N row is an offset power law in D whose three coefficients are then
regressed on N), and perturbed sign-pattern prototypes for scattered data.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import ArgumentError, FitFailure
from .planner import golden_section
from .laws import (
    CHINCHILLA,
    FARSEER,
    ChinchillaLaw,
    FarseerLaw,
    LawHandle,
    RunRecord,
    as_handle,
)

logger = logging.getLogger(__name__)

HUBER_LOG = "huber_log"
MEAN_RELATIVE_ERROR = "mean_relative_error"
OBJECTIVES = (HUBER_LOG, MEAN_RELATIVE_ERROR)

MIN_RECORDS = {CHINCHILLA: 6, FARSEER: 12}

DEFAULT_BOUNDS = {
    CHINCHILLA: {
        "e_irr": (1e-6, 10.0),
        "coef_a": (1e-3, 1e12),
        "exp_a": (0.01, 2.0),
        "coef_b": (1e-3, 1e12),
        "exp_b": (0.01, 2.0),
    },
    FARSEER: {
        "t1_s": (-20.0, 20.0),
        "t1_q": (-1.0, 1.0),
        "t1_S": (-20.0, 20.0),
        "t2_B": (-500.0, 500.0),
        "t2_b": (-1.0, 1.0),
        "t2_Q": (-100.0, 100.0),
        "ex_A": (-20.0, 20.0),
        "ex_a": (-1.0, 1.0),
        "ex_E": (-20.0, 20.0),
    },
}

# Chinchilla start box: E, A, B log-uniform; a, b uniform
CHINCHILLA_START_BOX = {
    "e_irr": (1e-3, 1.0),
    "coef_a": (1.0, 1e4),
    "exp_a": (0.05, 1.0),
    "coef_b": (1.0, 1e4),
    "exp_b": (0.05, 1.0),
}

XTOL = 1e-10
FTOL = 1e-14
GTOL = 1e-14
# smoothing scale for the L1-like relative-error objective
MRE_SMOOTHING = 1e-6


@dataclass(frozen=True)
class FitConfig:
    family: str = CHINCHILLA
    objective: str = HUBER_LOG
    huber_delta: float = 1e-3
    n_starts: int = 64
    max_iters: int = 2000
    seed: int = 0
    bounds: Optional[Mapping[str, tuple[float, float]]] = None

    def __post_init__(self):
        if self.family not in DEFAULT_BOUNDS:
            raise ArgumentError(f"unknown family {self.family!r}")
        if self.objective not in OBJECTIVES:
            raise ArgumentError(f"objective must be one of {OBJECTIVES}")
        if not self.huber_delta > 0:
            raise ArgumentError("huber_delta must be > 0")
        if self.n_starts < 1:
            raise ArgumentError("n_starts must be >= 1")
        if self.max_iters < 1:
            raise ArgumentError("max_iters must be >= 1")
        for name, (lo, hi) in self.resolved_bounds().items():
            if not lo <= hi:
                raise ArgumentError(f"bounds for {name} are not ordered: ({lo}, {hi})")

    def resolved_bounds(self) -> dict[str, tuple[float, float]]:
        out = dict(DEFAULT_BOUNDS[self.family])
        if self.bounds:
            unknown = set(self.bounds) - set(out)
            if unknown:
                raise ArgumentError(f"unknown coefficients in bounds: {sorted(unknown)}")
            out.update({k: (float(lo), float(hi)) for k, (lo, hi) in self.bounds.items()})
        return out

    def digest(self) -> str:
        blob = json.dumps(
            {
                "family": self.family,
                "objective": self.objective,
                "huber_delta": self.huber_delta,
                "n_starts": self.n_starts,
                "max_iters": self.max_iters,
                "seed": self.seed,
                "bounds": self.resolved_bounds(),
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Residual:
    predicted: float
    actual: float
    rel_error_permille: float


@dataclass(frozen=True)
class FitReport:
    law: LawHandle
    mre_permille: float
    residuals: tuple[Residual, ...]
    objective_value: float
    starts_converged: int
    best_start_index: int
    holdout_mre_permille: Optional[float] = None
    holdout_residuals: tuple[Residual, ...] = field(default_factory=tuple)


def relative_error(predicted: float, actual: float) -> float:
    """``1000 * |predicted - actual| / actual``, in permille."""
    if not actual > 0:
        raise ArgumentError(f"actual must be > 0, got {actual}")
    return 1000.0 * abs(predicted - actual) / actual


def huber(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def _residuals(law: LawHandle, records: Sequence[RunRecord]) -> tuple[Residual, ...]:
    n = np.array([r.n_params for r in records], dtype=np.float64)
    d = np.array([r.d_tokens for r in records], dtype=np.float64)
    pred = np.atleast_1d(law.loss(n, d))
    return tuple(
        Residual(float(p), r.loss, relative_error(float(p), r.loss)) for p, r in zip(pred, records)
    )


def _mre(residuals) -> float:
    return float(np.mean([r.rel_error_permille for r in residuals]))


def score(law, records: Sequence[RunRecord], huber_delta: float = 1e-3) -> FitReport:
    """Evaluate a law on records without refitting."""
    if not records:
        raise ArgumentError("score needs at least one record")
    law = as_handle(law)
    res = _residuals(law, records)
    log_r = np.log([r.predicted / r.actual for r in res])
    return FitReport(
        law=law,
        mre_permille=_mre(res),
        residuals=res,
        objective_value=float(np.sum(huber(log_r, huber_delta))),
        starts_converged=0,
        best_start_index=-1,
    )


# ---------------------------------------------------------------------------
# Parameterizations


class _ChinchillaModel:
    names = ("e_irr", "coef_a", "exp_a", "coef_b", "exp_b")
    logged = np.array([True, True, False, True, False])

    def __init__(self, bounds):
        for name, is_log in zip(self.names, self.logged):
            if is_log and bounds[name][0] <= 0:
                raise ArgumentError(f"lower bound for {name} must be > 0 (optimized in log space)")
        lo = np.array([bounds[k][0] for k in self.names], dtype=np.float64)
        hi = np.array([bounds[k][1] for k in self.names], dtype=np.float64)
        self.lower = np.where(self.logged, np.log(lo), lo)
        self.upper = np.where(self.logged, np.log(hi), hi)
        self.work_lower, self.work_upper = self.lower, self.upper

    @staticmethod
    def to_work(x):
        return np.asarray(x, dtype=np.float64)

    from_work = to_work

    def work_log_loss(self, y, ln_n, ln_d):
        return self.log_loss(y, ln_n, ln_d)

    def to_law(self, x) -> ChinchillaLaw:
        v = np.where(self.logged, np.exp(x), x)
        return ChinchillaLaw(*map(float, v))

    def from_natural(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return np.where(self.logged, np.log(v), v)

    @staticmethod
    def log_loss(x, ln_n, ln_d):
        ln_e, ln_a, a, ln_b, b = x
        terms = np.stack([np.full_like(ln_n, ln_e), ln_a - a * ln_n, ln_b - b * ln_d])
        top = terms.max(axis=0)
        w = np.exp(terms - top)
        total = w.sum(axis=0)
        w /= total
        out = top + np.log(total)
        jac = np.column_stack([w[0], w[1], -ln_n * w[1], w[2], -ln_d * w[2]])
        return out, jac

    def starts(self, rng, count, ln_n, ln_d, ln_y):
        box = CHINCHILLA_START_BOX
        lo = self.from_natural([box[k][0] for k in self.names])
        hi = self.from_natural([box[k][1] for k in self.names])
        # Latin hypercube over the start box
        u = (np.argsort(rng.random((len(self.names), count)), axis=1).T + rng.random((count, len(self.names)))) / count
        return [lo + ui * (hi - lo) for ui in u]


class _FarseerModel:
    """Farseer coefficients, optimized with each N power centered on the data.

    Every block ``c * N**p + o`` is carried as ``c' * exp(p * (ln N - m)) + o``
    with ``c' = c * exp(p * m)`` and ``m`` the mean distinct ln N. For small
    ``p`` the natural (c, p, o) are nearly collinear; the centered ones are
    close to (slope, curvature, level) and converge several times faster.
    """

    names = ("t1_s", "t1_q", "t1_S", "t2_B", "t2_b", "t2_Q", "ex_A", "ex_a", "ex_E")
    blocks = (0, 3, 6)  # index of each block's coefficient; exponent and offset follow

    def __init__(self, bounds, center: float = 0.0):
        self.lower = np.array([bounds[k][0] for k in self.names], dtype=np.float64)
        self.upper = np.array([bounds[k][1] for k in self.names], dtype=np.float64)
        self.center = float(center)
        # widest centered coefficient range compatible with the natural box
        lo, hi = self.lower.copy(), self.upper.copy()
        for i in self.blocks:
            scale = np.exp(np.array([lo[i + 1], hi[i + 1]]) * self.center)
            corners = np.outer([lo[i], hi[i]], scale)
            lo[i], hi[i] = corners.min(), corners.max()
        self.work_lower, self.work_upper = lo, hi

    def to_work(self, x):
        y = np.array(x, dtype=np.float64)
        for i in self.blocks:
            y[i] = y[i] * np.exp(y[i + 1] * self.center)
        return y

    def from_work(self, y):
        x = np.array(y, dtype=np.float64)
        for i in self.blocks:
            x[i] = x[i] * np.exp(-x[i + 1] * self.center)
        return x

    def work_log_loss(self, y, ln_n, ln_d):
        x = self.from_work(y)
        out, jac = self.log_loss(x, ln_n, ln_d)
        work_jac = jac.copy()
        for i in self.blocks:
            work_jac[:, i] = jac[:, i] * np.exp(-y[i + 1] * self.center)
            work_jac[:, i + 1] = jac[:, i + 1] - self.center * x[i] * jac[:, i]
        return out, work_jac

    def to_law(self, x) -> FarseerLaw:
        return FarseerLaw(*map(float, x))

    @staticmethod
    def log_loss(x, ln_n, ln_d):
        s, q, S, B, b, Q, A, a, E = x
        nq = np.exp(q * ln_n)
        nb = np.exp(b * ln_n)
        na = np.exp(a * ln_n)
        g1 = s * nq + S
        k = np.exp(np.minimum(A * na + E, 700.0))
        g2 = B * nb + Q - k * ln_d
        out = np.logaddexp(g1, g2)
        w1 = np.exp(g1 - out)
        w2 = np.exp(g2 - out)
        dk = -ln_d * k * w2
        jac = np.column_stack([
            w1 * nq, w1 * s * nq * ln_n, w1,
            w2 * nb, w2 * B * nb * ln_n, w2,
            dk * na, dk * A * na * ln_n, dk,
        ])
        return out, jac

    # Signs: N-term decays with N, data-term prefactor shrinks with N,
    # data exponent shrinks with N. Magnitudes are generic.
    _prototype = np.array([-0.05, 0.15, 0.0, 5.0, -0.1, 0.0, -0.05, 0.15, -1.0])
    _spread = np.array([0.05, 0.1, 0.5, 5.0, 0.1, 2.0, 0.05, 0.1, 0.5])

    def starts(self, rng, count, ln_n, ln_d, ln_y):
        anchor = _per_n_init(ln_n, ln_d, ln_y)
        proto = self._prototype.copy()
        # put the N-only term near the smallest observed loss
        proto[2] = float(np.min(ln_y)) - 0.5
        proto[5] = float(np.max(ln_y)) + 2.0
        out = []
        if anchor is not None:
            out.append(anchor)
            n_anchor = (count - 1) // 2
            scale = 0.02 * np.maximum(np.abs(anchor), 1e-3)
            out += [anchor + scale * rng.standard_normal(anchor.size) for _ in range(n_anchor)]
        while len(out) < count:
            out.append(proto + self._spread * rng.standard_normal(proto.size))
        return out[:count]


# ---------------------------------------------------------------------------
# Per-N decomposition initializer for gridded Farseer data


def _offset_power_in_d(d, y):
    """Fit y ~ u + v * d**(-k) with the linear (u, v) profiled out.

    Returns (u, v, k) or None when no positive decomposition exists.
    """
    ln_d = np.log(d)
    w = 1.0 / y

    def solve(log_k):
        k = math.exp(log_k)
        design = np.column_stack([np.ones_like(d), np.exp(-k * ln_d)]) * w[:, None]
        coef, *_ = np.linalg.lstsq(design, y * w, rcond=None)
        sse = float(np.sum((design @ coef - y * w) ** 2))
        return sse, coef, k

    grid = np.linspace(math.log(1e-3), math.log(3.0), 240)
    sses = [solve(g)[0] for g in grid]
    i = int(np.argmin(sses))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    log_k, _ = golden_section(lambda g: solve(g)[0], a, b, 1e-10)
    _, (u, v), k = solve(log_k)
    if u <= 0 or v <= 0:
        return None
    return u, v, k


def _power_plus_offset(x, y):
    """Fit y ~ alpha * x**beta + gamma; returns (alpha, beta, gamma)."""
    ln_x = np.log(x)
    x0 = float(np.mean(ln_x))

    def solve(beta):
        col = np.exp(beta * (ln_x - x0))
        design = np.column_stack([col, np.ones_like(x)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        return float(np.sum((design @ coef - y) ** 2)), coef

    grid = np.linspace(-1.0, 1.0, 401)
    grid = grid[np.abs(grid) > 1e-6]
    sses = [solve(b)[0] for b in grid]
    i = int(np.argmin(sses))
    beta, _ = golden_section(lambda b: solve(b)[0], grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)], 1e-12)
    _, (alpha_scaled, gamma) = solve(beta)
    return alpha_scaled * math.exp(-beta * x0), beta, gamma


def _per_n_init(ln_n, ln_d, ln_y):
    rows = defaultdict(list)
    for a, b, c in zip(ln_n, ln_d, ln_y):
        rows[a].append((b, c))
    usable = []
    for key in sorted(rows):
        pts = sorted(rows[key])
        if len(pts) < 4:
            continue
        d = np.exp([p[0] for p in pts])
        y = np.exp([p[1] for p in pts])
        fit = _offset_power_in_d(d, y)
        if fit is not None:
            usable.append((math.exp(key), *fit))
    if len(usable) < 3:
        return None
    n = np.array([r[0] for r in usable])
    u, v, k = (np.log([r[i] for r in usable]) for i in (1, 2, 3))
    s, q, S = _power_plus_offset(n, u)
    B, b, Q = _power_plus_offset(n, v)
    A, a, E = _power_plus_offset(n, k)
    x = np.array([s, q, S, B, b, Q, A, a, E])
    return x if np.all(np.isfinite(x)) else None


# ---------------------------------------------------------------------------
# Fitting driver


@dataclass
class _StartResult:
    index: int
    x: np.ndarray
    objective: float
    converged: bool


def _dedupe(records: Sequence[RunRecord]):
    groups = defaultdict(list)
    for r in records:
        groups[(r.n_params, r.d_tokens)].append(math.log(r.loss))
    keys = sorted(groups)
    ln_n = np.log(np.array([k[0] for k in keys], dtype=np.float64))
    ln_d = np.log(np.array([k[1] for k in keys], dtype=np.float64))
    ln_y = np.array([np.mean(groups[k]) for k in keys])
    return ln_n, ln_d, ln_y


def _check_records(records, family):
    if not records:
        raise ArgumentError("no records to fit")
    need = MIN_RECORDS[family]
    pairs = {(r.n_params, r.d_tokens) for r in records}
    defects = []
    if len(pairs) < need:
        defects.append(f"{len(pairs)} distinct (n, d) points, need >= {need} for {family}")
    if len({r.n_params for r in records}) < 2:
        defects.append("fewer than 2 distinct n values")
    if len({r.d_tokens for r in records}) < 2:
        defects.append("fewer than 2 distinct d values")
    if defects:
        raise ArgumentError("cannot fit: " + "; ".join(defects))


def _objective_value(config: FitConfig, log_r: np.ndarray) -> float:
    if config.objective == HUBER_LOG:
        return float(np.sum(huber(log_r, config.huber_delta)))
    return float(np.mean(np.abs(np.expm1(log_r))))


def _solve(log_loss, x0, lower, upper, ln_n, ln_d, ln_y, config: FitConfig):
    """Huber solve on log residuals, then the relative-error refinement if configured."""

    def log_resid(x):
        return log_loss(x, ln_n, ln_d)[0] - ln_y

    def log_jac(x):
        return log_loss(x, ln_n, ln_d)[1]

    common = dict(
        bounds=(lower, upper), method="trf", x_scale="jac",
        xtol=XTOL, ftol=FTOL, gtol=GTOL, max_nfev=config.max_iters,
    )
    res = least_squares(log_resid, x0, jac=log_jac, loss="huber", f_scale=config.huber_delta, **common)
    if config.objective == MEAN_RELATIVE_ERROR and np.all(np.isfinite(res.x)):

        def rel_resid(x):
            return np.expm1(log_resid(x))

        def rel_jac(x):
            out, jac = log_loss(x, ln_n, ln_d)
            return np.exp(out - ln_y)[:, None] * jac

        res = least_squares(rel_resid, res.x, jac=rel_jac, loss="soft_l1", f_scale=MRE_SMOOTHING, **common)
    return res.x, res.status


def _run_start(model, x0, ln_n, ln_d, ln_y, config: FitConfig, index: int) -> _StartResult:
    x0 = np.clip(np.asarray(x0, dtype=np.float64), model.lower, model.upper)
    y0 = np.clip(model.to_work(x0), model.work_lower, model.work_upper)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        try:
            y, status = _solve(model.work_log_loss, y0, model.work_lower, model.work_upper,
                               ln_n, ln_d, ln_y, config)
            x = model.from_work(y)
            if not np.all((model.lower <= x) & (x <= model.upper)):
                # the centered optimum left the natural box: finish on the box itself
                x, status = _solve(model.log_loss, np.clip(x, model.lower, model.upper),
                                   model.lower, model.upper, ln_n, ln_d, ln_y, config)
        except ValueError:
            # non-finite residuals or Jacobian somewhere along the path
            return _StartResult(index, x0, math.inf, False)
        log_r = model.log_loss(x, ln_n, ln_d)[0] - ln_y
    finite = bool(np.all(np.isfinite(log_r)))
    objective = _objective_value(config, log_r) if finite else math.inf
    return _StartResult(index, x, objective, bool(status > 0 and finite))


def _finite_positive_on(law: LawHandle, ln_n, ln_d) -> bool:
    try:
        vals = law.loss(np.exp(ln_n), np.exp(ln_d))
    except ArithmeticError:
        return False
    return bool(np.all(np.isfinite(vals)) and np.all(vals > 0))


def fit(records: Sequence[RunRecord], config: FitConfig = FitConfig(),
        holdout: Sequence[RunRecord] = ()) -> FitReport:
    """Fit ``config.family`` to ``records`` from ``config.n_starts`` starts.

    Replicate runs at the same (n, d) are merged by averaging log-loss. The
    best start by objective wins, ties going to the lower start index.
    ``holdout`` records are scored separately and never influence the fit.
    """
    records = list(records)
    _check_records(records, config.family)
    ln_n, ln_d, ln_y = _dedupe(records)
    bounds = config.resolved_bounds()
    if config.family == CHINCHILLA:
        model = _ChinchillaModel(bounds)
    else:
        model = _FarseerModel(bounds, center=float(np.mean(np.unique(ln_n))))
    rng = np.random.default_rng(config.seed)
    starts = model.starts(rng, config.n_starts, ln_n, ln_d, ln_y)

    results = [_run_start(model, x0, ln_n, ln_d, ln_y, config, i) for i, x0 in enumerate(starts)]
    # a start that ran out of iterations in a flat valley may still be the best
    # fit, so selection is over every usable start; convergence is only counted
    pool = [
        r for r in results
        if math.isfinite(r.objective) and _finite_positive_on(LawHandle.of(model.to_law(r.x)), ln_n, ln_d)
    ]
    converged = [r for r in pool if r.converged]
    if not pool:
        raise FitFailure("every start produced a non-finite or non-positive surface")
    best = min(pool, key=lambda r: (r.objective, r.index))
    logger.debug("best start %d objective %.6g (%d/%d converged)",
                 best.index, best.objective, len(converged), len(results))

    law = LawHandle.of(
        model.to_law(best.x),
        provenance=f"fit family={config.family} objective={config.objective} seed={config.seed} "
                   f"config={config.digest()} records={len(records)}",
    )
    res = _residuals(law, records)
    hold = _residuals(law, holdout) if holdout else ()
    report = FitReport(
        law=law,
        mre_permille=_mre(res),
        residuals=res,
        objective_value=best.objective,
        starts_converged=len(converged),
        best_start_index=best.index,
        holdout_mre_permille=_mre(hold) if hold else None,
        holdout_residuals=hold,
    )
    if not converged:
        raise FitFailure(f"none of {len(results)} starts converged", best=report)
    return report
