"""Compare fitted loss surfaces, e.g. one law per data mixture.

D counts in-domain (code) tokens only, so the D/N axis is comparable across
mixtures that also contain natural-language tokens.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ArgumentError, EvaluationError
from .laws import Law, LawHandle, LogGrid, as_handle, grid_values

SCAN_POINTS = 512
ROOT_REL_TOL = 1e-9
TIE = "tie"

CROSS = "cross"
TOUCH = "touch"


@dataclass(frozen=True)
class Crossing:
    dn: float
    kind: str  # CROSS for a sign change, TOUCH for a tangential contact


@dataclass(frozen=True)
class CrossoverScan:
    events: tuple[Crossing, ...]
    identical: bool

    @property
    def roots(self) -> list[float]:
        return [e.dn for e in self.events if e.kind == CROSS]

    @property
    def touches(self) -> list[float]:
        return [e.dn for e in self.events if e.kind == TOUCH]


def _difference(law_a: LawHandle, law_b: LawHandle, n: float):
    def f(log_r):
        d = np.exp(log_r) * n
        with np.errstate(over="ignore", invalid="ignore"):
            out = law_a.loss(n, d) - law_b.loss(n, d)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"non-finite surface difference at n={n:.6g}")
        return out
    return f


def _bisect(f, lo: float, hi: float, f_lo: float) -> float:
    # symmetric in the sign of f, so swapping the two laws yields the same root
    while hi - lo > ROOT_REL_TOL:
        mid = 0.5 * (lo + hi)
        f_mid = float(f(mid))
        if f_mid == 0.0:
            return math.exp(mid)
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


def scan_crossovers(law_a: Union[Law, LawHandle], law_b: Union[Law, LawHandle], n: float,
                    dn_range: tuple[float, float], tol: float,
                    points: int = SCAN_POINTS) -> CrossoverScan:
    """Locate every sign change of L_a - L_b along D/N at fixed N.

    Roots are bracketed on a ``points``-long log grid and bisected in log D/N
    to relative 1e-9. Grid-local minima of |L_a - L_b| below ``tol`` without a
    sign change are reported as touches. Surfaces that never differ by more
    than ``tol`` are reported as identical, with no events.
    """
    law_a, law_b = as_handle(law_a), as_handle(law_b)
    lo, hi = dn_range
    if not (0 < lo < hi):
        raise ArgumentError(f"dn_range must be positive and ordered, got {dn_range}")
    if not tol > 0:
        raise ArgumentError("tol must be > 0")
    if n < 1:
        raise ArgumentError("n must be >= 1")
    f = _difference(law_a, law_b, n)
    xs = np.linspace(math.log(lo), math.log(hi), points)
    fs = f(xs)
    if np.max(np.abs(fs)) <= tol:
        return CrossoverScan((), True)

    events = []
    sign = np.sign(fs)
    for i in range(points):
        if sign[i] == 0:
            # exact zero on the grid: a crossing if the neighbours disagree
            left = sign[i - 1] if i > 0 else 0
            right = sign[i + 1] if i + 1 < points else 0
            kind = CROSS if left * right < 0 else TOUCH
            events.append(Crossing(math.exp(xs[i]), kind))
        elif i + 1 < points and sign[i] * sign[i + 1] < 0:
            events.append(Crossing(_bisect(f, xs[i], xs[i + 1], fs[i]), CROSS))
    abs_f = np.abs(fs)
    for i in range(1, points - 1):
        if (sign[i] != 0 and abs_f[i] < tol and abs_f[i] <= abs_f[i - 1] and abs_f[i] <= abs_f[i + 1]
                and sign[i - 1] == sign[i] == sign[i + 1]):
            events.append(Crossing(math.exp(xs[i]), TOUCH))
    events.sort(key=lambda e: e.dn)
    return CrossoverScan(tuple(events), False)


def crossover_dn(law_a: Union[Law, LawHandle], law_b: Union[Law, LawHandle], n: float,
                 dn_range: tuple[float, float], tol: float, points: int = SCAN_POINTS) -> list[float]:
    """Ascending D/N values where the two surfaces cross at fixed ``n``."""
    return scan_crossovers(law_a, law_b, n, dn_range, tol, points).roots


@dataclass(frozen=True)
class LawSet:
    entries: tuple[tuple[str, LawHandle], ...]
    reference_label: str

    def __post_init__(self):
        labels = [label for label, _ in self.entries]
        if len(set(labels)) != len(labels):
            raise ArgumentError(f"law labels must be unique, got {labels}")
        if self.reference_label not in labels:
            raise ArgumentError(f"reference label {self.reference_label!r} not among {labels}")
        if TIE in labels:
            raise ArgumentError(f"{TIE!r} is reserved")

    @classmethod
    def build(cls, entries, reference_label: str | None = None) -> "LawSet":
        entries = tuple((label, as_handle(law)) for label, law in entries)
        if not entries:
            raise ArgumentError("a law set needs at least one entry")
        return cls(entries, reference_label or entries[0][0])

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.entries]


@dataclass(frozen=True)
class DominanceReport:
    n_values: tuple[float, ...]
    dn_values: tuple[float, ...]
    winners: tuple[tuple[str, ...], ...]  # [n index][dn index]
    crossovers: tuple[tuple[float, float, tuple[str, str]], ...]

    def rows(self) -> list[dict]:
        out = []
        for i, n in enumerate(self.n_values):
            for j, dn in enumerate(self.dn_values):
                out.append({"n": n, "dn": dn, "winner": self.winners[i][j]})
        return out


def dominance_map(law_set: LawSet, n_grid: Union[LogGrid, Sequence[float]],
                  dn_grid: Union[LogGrid, Sequence[float]], tol: float) -> DominanceReport:
    """Lowest-loss label per (N, D/N) cell plus pairwise crossovers per N row.

    A cell whose best two losses are within ``tol`` is a tie.
    """
    if not tol > 0:
        raise ArgumentError("tol must be > 0")
    ns = grid_values(n_grid, min_points=1)
    dns = grid_values(dn_grid)
    labels = law_set.labels
    winners = []
    crossovers = []
    for n in ns:
        d = dns * n
        losses = np.array([law.loss(n, d) for _, law in law_set.entries])
        if not np.all(np.isfinite(losses)):
            raise EvaluationError(f"non-finite loss in dominance row n={n:.6g}")
        row = []
        for j in range(dns.size):
            order = np.argsort(losses[:, j], kind="stable")
            if len(labels) > 1 and losses[order[1], j] - losses[order[0], j] < tol:
                row.append(TIE)
            else:
                row.append(labels[order[0]])
        winners.append(tuple(row))
        for (la, a), (lb, b) in itertools.combinations(law_set.entries, 2):
            for r in crossover_dn(a, b, float(n), (float(dns[0]), float(dns[-1])), tol):
                crossovers.append((float(n), r, (la, lb)))
    return DominanceReport(tuple(map(float, ns)), tuple(map(float, dns)), tuple(winners), tuple(crossovers))
