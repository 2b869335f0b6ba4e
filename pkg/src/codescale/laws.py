"""Scaling-law value objects and surface evaluation.

Two parametric families are supported:

* Chinchilla:  L(N, D) = E + A / N**a + B / D**b
* Farseer:     L(N, D) = exp(s*N**q + S) + exp(B*N**b + Q) * D**(-exp(A*N**a + E))

The Farseer family reuses the symbols A, B, a, b, E with meanings unrelated
to the Chinchilla ones, so its coefficients live under distinct field names
(``t1_*`` for the N-only term, ``t2_*`` for the data-term prefactor and
``ex_*`` for the N-dependent data exponent).

N and D are raw counts (parameters, tokens), never billions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import ArgumentError, EvaluationError

CHINCHILLA = "chinchilla"
FARSEER = "farseer"
FAMILIES = (CHINCHILLA, FARSEER)

# exp() overflows float64 just above this
_EXP_MAX = 709.0

ArrayLike = Union[float, int, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class RunRecord:
    """One observed training run."""

    n_params: int
    d_tokens: int
    loss: float
    mixture: str | None = None
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_params < 1:
            raise ArgumentError(f"n_params must be >= 1, got {self.n_params}")
        if self.d_tokens < 1:
            raise ArgumentError(f"d_tokens must be >= 1, got {self.d_tokens}")
        if not (self.loss > 0 and math.isfinite(self.loss)):
            raise ArgumentError(f"loss must be a positive finite number, got {self.loss}")
        if self.mixture is not None and not self.mixture:
            raise ArgumentError("mixture label, when present, must be non-empty")


@dataclass(frozen=True)
class ChinchillaLaw:
    e_irr: float
    coef_a: float
    exp_a: float
    coef_b: float
    exp_b: float

    family = CHINCHILLA

    def loss(self, n: ArrayLike, d: ArrayLike):
        return eval_chinchilla(self, n, d)

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass(frozen=True)
class FarseerLaw:
    t1_s: float
    t1_q: float
    t1_S: float
    t2_B: float
    t2_b: float
    t2_Q: float
    ex_A: float
    ex_a: float
    ex_E: float

    family = FARSEER

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ArgumentError(f"FarseerLaw.{f.name} must be finite")

    def loss(self, n: ArrayLike, d: ArrayLike):
        return eval_farseer(self, n, d)

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


Law = Union[ChinchillaLaw, FarseerLaw]

LAW_TYPES = {CHINCHILLA: ChinchillaLaw, FARSEER: FarseerLaw}


@dataclass(frozen=True)
class LawHandle:
    """A coefficient set tagged with its family and where it came from."""

    family: str
    params: Law
    provenance: str = ""

    def __post_init__(self):
        if self.family not in LAW_TYPES:
            raise ArgumentError(f"unknown law family {self.family!r}")
        if not isinstance(self.params, LAW_TYPES[self.family]):
            raise ArgumentError(
                f"family {self.family!r} does not match coefficient set "
                f"{type(self.params).__name__}"
            )

    @classmethod
    def of(cls, params: Law, provenance: str = "") -> "LawHandle":
        return cls(params.family, params, provenance)

    def loss(self, n: ArrayLike, d: ArrayLike):
        return self.params.loss(n, d)


def as_handle(law: Union[LawHandle, Law]) -> LawHandle:
    return law if isinstance(law, LawHandle) else LawHandle.of(law)


# Published coefficients for pure-code pretraining. They are printed rounded to
# 4-6 significant digits, so reproductions of derived numbers carry ~1e-3 error.
CODE_CHINCHILLA = ChinchillaLaw(
    e_irr=0.2193, coef_a=534.374, exp_a=0.4853, coef_b=76.0743, exp_b=0.2983
)
CODE_FARSEER = FarseerLaw(
    t1_s=-0.0047, t1_q=0.239, t1_S=-0.8188,
    t2_B=62.8936, t2_b=-0.0614, t2_Q=-14.0414,
    ex_A=-0.0209, ex_a=0.1943, ex_E=-0.1826,
)


def _counts(n, d):
    n = np.asarray(n, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(~(n >= 1)):
        raise ArgumentError("n must be >= 1")
    if np.any(~(d >= 1)):
        raise ArgumentError("d must be >= 1")
    return np.broadcast_arrays(n, d)


def _first_bad(arr, n, d) -> str:
    idx = np.flatnonzero(~np.isfinite(np.atleast_1d(arr)))[0]
    return f"n={np.atleast_1d(n)[idx]:.6g}, d={np.atleast_1d(d)[idx]:.6g}"


def _scalar_or_array(out, n_in, d_in):
    if np.ndim(n_in) == 0 and np.ndim(d_in) == 0:
        return float(out)
    return out


def eval_chinchilla(law: ChinchillaLaw, n: ArrayLike, d: ArrayLike):
    """Evaluate ``E + A/n^a + B/d^b``. Scalars in, float out; arrays broadcast."""
    nn, dd = _counts(n, d)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        term_n = law.coef_a / nn**law.exp_a
        term_d = law.coef_b / dd**law.exp_b
    for name, term in (("A/N^a", term_n), ("B/D^b", term_d)):
        if not np.all(np.isfinite(term)):
            raise EvaluationError(f"Chinchilla term {name} is not finite at {_first_bad(term, nn, dd)}")
    out = law.e_irr + term_n + term_d
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"Chinchilla loss is not finite at {_first_bad(out, nn, dd)}")
    return _scalar_or_array(out, n, d)


def farseer_log_terms(law: FarseerLaw, n, d):
    """Return the exponents (g1, g2) with L = exp(g1) + exp(g2).

    ``g2`` folds the data power into the exponent, so a tiny D exponent or a
    huge prefactor never appears as a separate product.
    """
    log_n = np.log(n)
    log_d = np.log(d)
    g1 = law.t1_s * np.exp(law.t1_q * log_n) + law.t1_S
    prefactor = law.t2_B * np.exp(law.t2_b * log_n) + law.t2_Q
    d_exp = np.exp(law.ex_A * np.exp(law.ex_a * log_n) + law.ex_E)
    # d == 1 contributes nothing even when the exponent overflows
    g2 = prefactor - np.where(log_d == 0.0, 0.0, d_exp * log_d)
    return g1, g2


def eval_farseer(law: FarseerLaw, n: ArrayLike, d: ArrayLike):
    """Evaluate the Farseer surface in log space. Raises on overflow."""
    nn, dd = _counts(n, d)
    with np.errstate(over="ignore", invalid="ignore"):
        g1, g2 = farseer_log_terms(law, nn, dd)
        for name, g in (("exp(s*N^q+S)", g1), ("exp(B*N^b+Q)*D^-k", g2)):
            bad = ~(g <= _EXP_MAX) & ~np.isneginf(g)
            if np.any(bad):
                idx = np.flatnonzero(np.atleast_1d(bad))[0]
                raise EvaluationError(
                    f"Farseer term {name} overflows at n={np.atleast_1d(nn)[idx]:.6g}, "
                    f"d={np.atleast_1d(dd)[idx]:.6g}"
                )
        out = np.exp(g1) + np.exp(g2)
    return _scalar_or_array(out, n, d)


def eval_farseer_naive(law: FarseerLaw, n: ArrayLike, d: ArrayLike):
    """Direct transcription of the formula, for cross-checking only."""
    nn, dd = _counts(n, d)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.exp(law.t1_s * nn**law.t1_q + law.t1_S) + np.exp(
            law.t2_B * nn**law.t2_b + law.t2_Q
        ) * dd ** (-np.exp(law.ex_A * nn**law.ex_a + law.ex_E))
    return _scalar_or_array(out, n, d)


# ---------------------------------------------------------------------------
# Grids and slices


@dataclass(frozen=True)
class LogGrid:
    """``count`` log-spaced points from ``lo`` to ``hi`` inclusive."""

    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if not (0 < self.lo <= self.hi):
            raise ArgumentError(f"log grid needs 0 < lo <= hi, got [{self.lo}, {self.hi}]")
        if self.count < 1:
            raise ArgumentError("log grid count must be >= 1")
        if self.count > 1 and self.lo == self.hi:
            raise ArgumentError("log grid with count > 1 needs lo < hi")

    def values(self) -> np.ndarray:
        if self.count == 1:
            return np.array([float(self.lo)])
        return np.geomspace(self.lo, self.hi, self.count)


GridSpec = Union[LogGrid, Sequence[float], np.ndarray]


def grid_values(spec: GridSpec, min_points: int = 2) -> np.ndarray:
    values = spec.values() if isinstance(spec, LogGrid) else np.asarray(spec, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ArgumentError("grid is empty")
    if values.size < min_points:
        raise ArgumentError(f"grid needs at least {min_points} points, got {values.size}")
    if np.any(values <= 0) or np.any(np.diff(values) <= 0):
        raise ArgumentError("grid points must be positive and strictly increasing")
    return values


SLICE_AXES = ("fixed_n", "fixed_d", "fixed_dn")


def eval_slice(
    law: Union[LawHandle, Law],
    axis: str,
    fixed_value: float,
    sweep: GridSpec,
    ratio: bool = False,
) -> list[tuple[float, float]]:
    """1-D restriction of a loss surface.

    * ``fixed_n``: x runs over D (or over D/N when ``ratio`` is set).
    * ``fixed_d``: x runs over N.
    * ``fixed_dn``: ``fixed_value`` is the D/N ratio, x runs over N and
      D = round(ratio * N).
    """
    law = as_handle(law)
    xs = grid_values(sweep)
    if axis == "fixed_n":
        n = np.full_like(xs, fixed_value)
        d = np.rint(xs * fixed_value) if ratio else xs
    elif axis == "fixed_d":
        n, d = xs, np.full_like(xs, fixed_value)
    elif axis == "fixed_dn":
        n, d = xs, np.rint(xs * fixed_value)
    else:
        raise ArgumentError(f"axis must be one of {SLICE_AXES}, got {axis!r}")
    losses = law.loss(n, d)
    return [(float(x), float(y)) for x, y in zip(xs, losses)]


# ---------------------------------------------------------------------------
# Asymptotic limits as N, D -> infinity

FINITE = "finite"
ZERO = "zero"
DIVERGENT = "divergent"
PATH_DEPENDENT = "path_dependent"


@dataclass(frozen=True)
class LimitResult:
    kind: str
    value: float | None
    detail: str = ""

    def __str__(self):
        if self.kind in (FINITE, ZERO):
            return f"{self.value:.6g}"
        return f"{self.kind}: {self.detail}" if self.detail else self.kind


def _power_limit(coef: float, power: float) -> float:
    """Limit of ``coef * N**power`` as N -> infinity (may be +-inf)."""
    if coef == 0:
        return 0.0
    if power < 0:
        return 0.0
    if power == 0:
        return coef
    return math.copysign(math.inf, coef)


def _result(total: float, detail: str) -> LimitResult:
    if total == 0:
        return LimitResult(ZERO, 0.0, detail)
    return LimitResult(FINITE, total, detail)


def _chinchilla_limit(law: ChinchillaLaw) -> LimitResult:
    total = law.e_irr
    parts = []
    for name, coef, exp in (("A/N^a", law.coef_a, law.exp_a), ("B/D^b", law.coef_b, law.exp_b)):
        if coef == 0 or exp > 0:
            parts.append(f"{name} -> 0")
        elif exp == 0:
            total += coef
            parts.append(f"{name} -> {coef:g}")
        else:
            return LimitResult(DIVERGENT, None, f"{name} grows without bound (exponent {exp:g} < 0)")
    return _result(total, "; ".join(parts))


def _farseer_limit(law: FarseerLaw) -> LimitResult:
    g1 = _power_limit(law.t1_s, law.t1_q) + law.t1_S
    if g1 == math.inf:
        return LimitResult(DIVERGENT, None, "exp(s*N^q+S) grows without bound")
    term1 = math.exp(g1) if g1 > -math.inf else 0.0

    pre_arg = _power_limit(law.t2_B, law.t2_b) + law.t2_Q
    k_arg = _power_limit(law.ex_A, law.ex_a) + law.ex_E
    # k_arg -> -inf: data exponent vanishes, D^0 -> 1 (N taken to infinity first)
    if pre_arg == math.inf:
        return LimitResult(
            PATH_DEPENDENT, None,
            "data-term prefactor diverges; the value depends on the joint (N, D) path",
        )
    prefactor = math.exp(pre_arg) if pre_arg > -math.inf else 0.0
    if k_arg == -math.inf:
        term2, how = prefactor, "D exponent -> 0"
    else:
        term2, how = 0.0, "D exponent stays positive"
    detail = f"term1 -> {term1:.6g}; term2 -> {term2:.6g} ({how})"
    return _result(term1 + term2, detail)


def asymptotic_limit(law: Union[LawHandle, Law]) -> LimitResult:
    """Loss limit as N, D -> infinity, by sign analysis of the coefficients.

    Never returns a finite number for a diverging or path-dependent surface.
    """
    law = as_handle(law)
    if law.family == CHINCHILLA:
        return _chinchilla_limit(law.params)
    return _farseer_limit(law.params)
