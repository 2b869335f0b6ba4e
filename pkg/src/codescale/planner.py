"""FLOP accounting and compute-optimal (N, D) allocation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ArgumentError, EvaluationError, UnsupportedLawError
from .laws import CHINCHILLA, ChinchillaLaw, Law, LawHandle, LogGrid, as_handle, grid_values
from .sweep import DEFAULT_VOCAB, embedding_params

logger = logging.getLogger(__name__)

NON_EMBEDDING = "non_embedding"
WITH_EMBEDDING = "with_embedding"

INV_PHI = (math.sqrt(5) - 1) / 2

# Default iso-FLOP search range, as D/N ratios
DEFAULT_DN_SEARCH = (1.0, 1e5)
COARSE_POINTS = 401
MIN_BRACKET_SPAN = 100.0
REL_TOL_N = 1e-6
# basin flag: loss changes by less than this over +-20% of n_opt
FLAT_BASIN_DELTA = 1e-5


@dataclass(frozen=True)
class FlopConvention:
    """``C = multiplier * N * D`` with N counted on ``param_basis``.

    For the with-embedding basis, ``embedding`` maps a non-embedding count to
    the embedding parameters to add; see :func:`family_convention`.
    """

    multiplier: float = 6.0
    param_basis: str = NON_EMBEDDING
    embedding: Optional[Callable] = None

    def __post_init__(self):
        if not self.multiplier > 0:
            raise ArgumentError("FLOP multiplier must be > 0")
        if self.param_basis not in (NON_EMBEDDING, WITH_EMBEDDING):
            raise ArgumentError(f"unknown param_basis {self.param_basis!r}")

    @property
    def name(self) -> str:
        return f"C = {self.multiplier:g} * N_{self.param_basis} * D"

    def flop_params(self, n):
        """Parameter count entering the FLOP formula for non-embedding size ``n``."""
        if self.param_basis == NON_EMBEDDING:
            return n
        if self.embedding is None:
            raise ArgumentError("with_embedding basis needs an embedding-inclusive count")
        return n + self.embedding(n)

    def tokens_for(self, n, compute: float):
        """Tokens that exhaust ``compute`` at size ``n``."""
        return compute / (self.multiplier * self.flop_params(n))


def family_convention(multiplier: float = 6.0, vocab: int = DEFAULT_VOCAB) -> FlopConvention:
    """With-embedding convention using the reference architecture family."""
    return FlopConvention(multiplier, WITH_EMBEDDING, lambda n: embedding_params(n, vocab))


def flops(n: float, d: float, conv: FlopConvention = FlopConvention(), n_with_emb: float | None = None) -> float:
    if n < 1 or d < 1:
        raise ArgumentError("n and d must be >= 1")
    if conv.param_basis == WITH_EMBEDDING:
        if n_with_emb is not None:
            return conv.multiplier * n_with_emb * d
        return conv.multiplier * conv.flop_params(n) * d
    return conv.multiplier * n * d


@dataclass(frozen=True)
class Allocation:
    compute: float
    n_opt: float
    d_opt: float
    dn_ratio: float
    predicted_loss: float
    method: str
    convention: str
    at_boundary: bool = False
    flat_basin: bool = False

    def row(self) -> dict:
        return {
            "compute": self.compute,
            "dn_ratio": self.dn_ratio,
            "n_opt": self.n_opt,
            "d_opt": self.d_opt,
            "loss": self.predicted_loss,
        }


def _flat_basin(law: LawHandle, compute: float, conv: FlopConvention, n_opt: float, loss: float) -> bool:
    ns = n_opt * np.linspace(0.8, 1.2, 9)
    losses = law.loss(ns, conv.tokens_for(ns, compute))
    return bool(np.max(np.abs(losses - loss)) < FLAT_BASIN_DELTA)


def chinchilla_optimal(law: Union[ChinchillaLaw, LawHandle], compute: float,
                       conv: FlopConvention = FlopConvention()) -> Allocation:
    """Closed-form iso-FLOP minimizer for a Chinchilla law."""
    handle = as_handle(law)
    if handle.family != CHINCHILLA:
        raise UnsupportedLawError("closed form applies to Chinchilla laws only")
    p = handle.params
    if min(p.coef_a, p.coef_b, p.exp_a, p.exp_b) <= 0:
        raise UnsupportedLawError("closed form needs positive coefficients and exponents")
    if conv.param_basis != NON_EMBEDDING:
        raise UnsupportedLawError("closed form needs the non_embedding FLOP basis")
    if not compute > 0:
        raise ArgumentError("compute must be > 0")
    total = p.exp_a + p.exp_b
    log_g = (math.log(p.exp_a * p.coef_a) - math.log(p.exp_b * p.coef_b)) / total
    n_opt = math.exp(log_g + (p.exp_b / total) * math.log(compute / conv.multiplier))
    d_opt = compute / (conv.multiplier * n_opt)
    loss = handle.loss(n_opt, d_opt)
    return Allocation(
        compute, n_opt, d_opt, d_opt / n_opt, loss, "closed_form", conv.name,
        flat_basin=_flat_basin(handle, compute, conv, n_opt, loss),
    )


def golden_section(f: Callable[[float], float], a: float, b: float, tol: float):
    """Minimize a unimodal ``f`` on [a, b] until the bracket is narrower than ``tol``.

    Returns ``(x, f(x))`` for the best point evaluated.
    """
    if a > b:
        a, b = b, a
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _interior_minima(losses: np.ndarray) -> list[int]:
    mid = losses[1:-1]
    left, right = losses[:-2], losses[2:]
    strict = (mid <= left) & (mid <= right) & ((mid < left) | (mid < right))
    return [int(i) + 1 for i in np.flatnonzero(strict)]


def numeric_optimal(law: Union[Law, LawHandle], compute: float,
                    conv: FlopConvention = FlopConvention(),
                    search: tuple[float, float] | None = None,
                    coarse_points: int = COARSE_POINTS) -> Allocation:
    """Iso-FLOP minimizer by coarse log-grid scan plus golden-section refinement.

    Works on any law. The lowest interior local minimum of the scan is
    refined; if the scan has no interior minimum the best grid point is
    returned with ``at_boundary`` set. ``search`` is the N bracket and
    defaults to D/N in [1, 1e5].
    """
    handle = as_handle(law)
    if not compute > 0:
        raise ArgumentError("compute must be > 0")
    if search is None:
        dn_lo, dn_hi = DEFAULT_DN_SEARCH
        search = (math.sqrt(compute / (conv.multiplier * dn_hi)),
                  math.sqrt(compute / (conv.multiplier * dn_lo)))
    n_lo, n_hi = search
    if not (0 < n_lo < n_hi) or n_hi / n_lo < MIN_BRACKET_SPAN:
        raise ArgumentError(f"search bracket {search} must span >= 2 orders of magnitude in n")
    if coarse_points < 200:
        raise ArgumentError("coarse scan needs >= 200 points")

    def loss_at(log_n):
        n = np.exp(log_n)
        return handle.loss(n, conv.tokens_for(n, compute))

    xs = np.linspace(math.log(n_lo), math.log(n_hi), coarse_points)
    if np.any(conv.tokens_for(np.exp(xs), compute) < 1):
        raise ArgumentError("search bracket reaches below one training token")
    try:
        losses = loss_at(xs)
    except EvaluationError as exc:
        raise EvaluationError(f"iso-FLOP scan at C={compute:.4g}: {exc}") from exc
    if not np.all(np.isfinite(losses)):
        bad = np.exp(xs[np.flatnonzero(~np.isfinite(losses))[0]])
        raise EvaluationError(f"non-finite loss on the iso-FLOP scan at n={bad:.6g}")

    minima = _interior_minima(losses)
    if minima:
        i = min(minima, key=lambda j: (losses[j], j))
        x, loss = golden_section(lambda v: float(loss_at(v)), xs[i - 1], xs[i + 1], REL_TOL_N)
        at_boundary = False
        if loss > min(losses[0], losses[-1]):
            logger.warning("C=%.4g: bracket edge is lower than the interior minimum", compute)
    else:
        i = int(np.argmin(losses))
        x, loss = xs[i], float(losses[i])
        at_boundary = True
    n_opt = math.exp(x)
    d_opt = float(conv.tokens_for(n_opt, compute))
    return Allocation(
        compute, n_opt, d_opt, d_opt / n_opt, float(loss), "numeric", conv.name,
        at_boundary=at_boundary,
        flat_basin=_flat_basin(handle, compute, conv, n_opt, loss),
    )


def optimal_allocation(law: Union[Law, LawHandle], compute: float,
                       conv: FlopConvention = FlopConvention(),
                       search: tuple[float, float] | None = None) -> Allocation:
    """Closed form where it applies, numeric search otherwise."""
    handle = as_handle(law)
    p = handle.params
    if (handle.family == CHINCHILLA and conv.param_basis == NON_EMBEDDING
            and min(p.coef_a, p.coef_b, p.exp_a, p.exp_b) > 0):
        return chinchilla_optimal(handle, compute, conv)
    return numeric_optimal(handle, compute, conv, search)


def optimal_dn_curve(law: Union[Law, LawHandle], compute_grid: Union[LogGrid, Sequence[float]],
                     conv: FlopConvention = FlopConvention()) -> list[Allocation]:
    """Compute-optimal frontier: one allocation per budget, ascending in compute."""
    budgets = grid_values(compute_grid)
    return [optimal_allocation(law, float(c), conv) for c in budgets]
