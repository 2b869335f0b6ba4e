"""Experiment campaign planning: (N, D) grids, architectures, GPU allocation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import ArgumentError, EmptyPlanError, InfeasibleError, RangeError
from .laws import LogGrid

# Inferred from (N_with_emb - N) / (2 * d_model) on the reference family,
# assuming untied input and output embeddings. Overridable everywhere.
DEFAULT_VOCAB = 65_430

HEAD_DIM = 64
ARCH_RANGE = (1e8, 1e10)


@dataclass(frozen=True)
class ArchConfig:
    d_model: int
    d_ff: int
    n_head: int
    n_layer: int
    n_params: int
    n_with_emb: int
    vocab: int = DEFAULT_VOCAB

    def __post_init__(self):
        for name in ("d_model", "d_ff", "n_head", "n_layer", "n_params", "n_with_emb", "vocab"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"ArchConfig.{name} must be positive")
        if self.d_model % self.n_head:
            raise ArgumentError(
                f"d_model {self.d_model} is not divisible by n_head {self.n_head}"
            )
        if self.n_with_emb <= self.n_params:
            raise ArgumentError("n_with_emb must exceed n_params")

    @classmethod
    def from_dims(cls, d_model: int, d_ff: int, n_head: int, n_layer: int, vocab: int = DEFAULT_VOCAB):
        """Build a config and fill in the parameter counts."""
        if min(d_model, d_ff, n_head, n_layer, vocab) < 1:
            raise ArgumentError("architecture dimensions must be positive")
        n, n_emb = _param_counts(d_model, d_ff, n_layer, vocab)
        return cls(d_model, d_ff, n_head, n_layer, n, n_emb, vocab)


@dataclass(frozen=True)
class FamilyRow:
    """One reference architecture, with the published N and token range."""

    model: int
    n_params: float
    d_range: tuple[float, float]
    d_model: int
    d_ff: int
    n_head: int
    n_layer: int
    n_with_emb: float


REFERENCE_FAMILY: tuple[FamilyRow, ...] = (
    FamilyRow(1, 201e6, (2e9, 128e9), 1024, 2728, 16, 16, 335e6),
    FamilyRow(2, 284e6, (2e9, 128e9), 1152, 3032, 18, 18, 435e6),
    FamilyRow(3, 398e6, (2e9, 128e9), 1280, 3472, 20, 20, 566e6),
    FamilyRow(4, 568e6, (2e9, 128e9), 1472, 3888, 23, 22, 761e6),
    FamilyRow(5, 798e6, (2e9, 91e9), 1600, 4264, 25, 26, 1.01e9),
    FamilyRow(6, 1.13e9, (2e9, 128e9), 1792, 4832, 28, 29, 1.36e9),
    FamilyRow(7, 1.61e9, (2e9, 128e9), 2048, 5448, 32, 32, 1.88e9),
    FamilyRow(8, 2.27e9, (2e9, 128e9), 2304, 6064, 36, 36, 2.58e9),
    FamilyRow(9, 3.18e9, (4e9, 128e9), 2560, 6952, 40, 40, 3.52e9),
)

# Distinct token budgets per architecture in the reference sweep.
REFERENCE_D_COUNT = 13


def _param_counts(d_model: int, d_ff: int, n_layer: int, vocab: int) -> tuple[int, int]:
    # per layer: q,k,v,o projections + SwiGLU gate/up/down; RMSNorm gains only, no biases
    blocks = n_layer * (4 * d_model * d_model + 3 * d_model * d_ff)
    norms = (2 * n_layer + 1) * d_model
    n = blocks + norms
    return n, n + 2 * vocab * d_model


def count_params(arch: ArchConfig) -> tuple[int, int]:
    """Return ``(n_params, n_with_emb)`` for a SwiGLU/RoPE/RMSNorm decoder."""
    return _param_counts(arch.d_model, arch.d_ff, arch.n_layer, arch.vocab)


def derive_arch(target_n: float, vocab: int = DEFAULT_VOCAB, rescale_layers: bool = False) -> ArchConfig:
    """Pick the reference architecture closest to ``target_n`` in log space.

    With ``rescale_layers`` the layer count is then adjusted so the
    non-embedding count lands as close to the target as whole layers allow;
    widths, the d_ff/d_model ratio and the 64-wide heads stay untouched.
    """
    lo, hi = ARCH_RANGE
    if not (lo <= target_n <= hi):
        raise RangeError(f"target_n {target_n:.4g} outside supported range [{lo:.0e}, {hi:.0e}]")
    row = min(REFERENCE_FAMILY, key=lambda r: abs(math.log(r.n_params / target_n)))
    n_layer = row.n_layer
    if rescale_layers:
        per_layer = 4 * row.d_model**2 + 3 * row.d_model * row.d_ff + 2 * row.d_model
        n_layer = max(1, round((target_n - row.d_model) / per_layer))
    return ArchConfig.from_dims(row.d_model, row.d_ff, row.d_model // HEAD_DIM, n_layer, vocab)


def embedding_params(n: Union[float, np.ndarray], vocab: int = DEFAULT_VOCAB):
    """Untied embedding parameter count implied by the family at non-embedding size ``n``.

    d_model is interpolated log-log between reference rows and extrapolated
    with the end segments, so it is continuous in ``n``.
    """
    log_n = np.log(np.asarray(n, dtype=np.float64))
    xs = np.log([r.n_params for r in REFERENCE_FAMILY])
    ys = np.log([r.d_model for r in REFERENCE_FAMILY])
    log_dm = np.interp(log_n, xs, ys)
    lo_slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
    hi_slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    log_dm = np.where(log_n < xs[0], ys[0] + lo_slope * (log_n - xs[0]), log_dm)
    log_dm = np.where(log_n > xs[-1], ys[-1] + hi_slope * (log_n - xs[-1]), log_dm)
    out = 2.0 * vocab * np.exp(log_dm)
    return float(out) if np.ndim(n) == 0 else out


# ---------------------------------------------------------------------------
# Sweep grids


@dataclass(frozen=True)
class SweepSpec:
    """Log-uniform (N, D) campaign.

    ``d_overrides`` maps an N value to its own D grid, for sweeps where the
    token range differs per architecture.
    """

    n_values: Union[Sequence[float], LogGrid]
    d_values: LogGrid
    dn_bounds: tuple[float, float] = (0.0, math.inf)
    target_total: int | None = None
    d_overrides: Mapping[float, LogGrid] = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.dn_bounds
        if not (0 <= lo < hi):
            raise ArgumentError(f"dn_bounds must satisfy 0 <= min < max, got {self.dn_bounds}")
        ns = self.n_grid()
        if ns.size == 0 or np.any(ns <= 0):
            raise ArgumentError("n_values must be non-empty and positive")

    def n_grid(self) -> np.ndarray:
        if isinstance(self.n_values, LogGrid):
            return self.n_values.values()
        return np.asarray(sorted(set(float(v) for v in self.n_values)))

    def d_grid(self, n: float) -> np.ndarray:
        return self.d_overrides.get(n, self.d_values).values()


@dataclass(frozen=True)
class SweepPlan:
    points: tuple[tuple[int, int], ...]
    unpruned: int

    @property
    def count(self) -> int:
        return len(self.points)


def reference_sweep_spec(dn_bounds: tuple[float, float] = (0.5, 1000.0)) -> SweepSpec:
    """The nine reference architectures, 13 log-spaced budgets over each one's token range."""
    overrides = {
        r.n_params: LogGrid(r.d_range[0], r.d_range[1], REFERENCE_D_COUNT) for r in REFERENCE_FAMILY
    }
    return SweepSpec(
        n_values=[r.n_params for r in REFERENCE_FAMILY],
        d_values=LogGrid(2e9, 128e9, REFERENCE_D_COUNT),
        dn_bounds=dn_bounds,
        target_total=len(REFERENCE_FAMILY) * REFERENCE_D_COUNT,
        d_overrides=overrides,
    )


def plan_sweep(spec: SweepSpec) -> SweepPlan:
    """Cartesian (N, D) grid minus points whose D/N falls outside ``dn_bounds``.

    Points are rounded to integer counts and ordered by N, then D.
    """
    lo, hi = spec.dn_bounds
    points = []
    total = 0
    for n in spec.n_grid():
        for d in spec.d_grid(n):
            total += 1
            if lo <= d / n <= hi:
                points.append((int(round(n)), int(round(d))))
    if not points:
        raise EmptyPlanError(f"dn_bounds {spec.dn_bounds} prune all {total} grid points")
    points.sort()
    return SweepPlan(tuple(points), total)


# ---------------------------------------------------------------------------
# GPU allocation


@dataclass(frozen=True)
class GpuPlan:
    gbz: int
    mbz: int
    gpus: int
    accum: int

    def __post_init__(self):
        if self.gpus * self.mbz * self.accum != self.gbz:
            raise ArgumentError(
                f"gpus*mbz*accum = {self.gpus * self.mbz * self.accum} != gbz {self.gbz}"
            )


# Largest allocation considered by default (32 nodes of 8 GPUs).
DEFAULT_MAX_GPUS = 256


def _factorizations(gbz: int, mbz_max: int, gpu_step: int, max_gpus: int):
    for mbz in range(1, min(mbz_max, gbz) + 1):
        if gbz % mbz:
            continue
        rest = gbz // mbz
        for gpus in range(gpu_step, min(rest, max_gpus) + 1, gpu_step):
            if rest % gpus == 0:
                yield GpuPlan(gbz, mbz, gpus, rest // gpus)


def plan_gpus(gbz: int, mbz_max: int, gpu_step: int = 8, max_gpus: int = DEFAULT_MAX_GPUS) -> GpuPlan:
    """Split a global batch over GPUs without ever changing it.

    Among exact factorizations ``gpus * mbz * accum == gbz`` with ``gpus`` a
    multiple of ``gpu_step`` and at most ``max_gpus``, prefer the fewest
    accumulation steps, then the largest micro batch, then the fewest GPUs.
    """
    if gbz < 1 or mbz_max < 1 or gpu_step < 1 or max_gpus < 1:
        raise ArgumentError("gbz, mbz_max, gpu_step and max_gpus must all be >= 1")
    if gpu_step > max_gpus:
        raise ArgumentError(f"gpu_step {gpu_step} exceeds max_gpus {max_gpus}")
    plans = list(_factorizations(gbz, mbz_max, gpu_step, max_gpus))
    if plans:
        return min(plans, key=lambda p: (p.accum, -p.mbz, p.gpus))
    # every multiple of gpu_step is feasible (mbz 1, gpu_step GPUs), so this terminates
    suggestions = []
    for delta in range(1, gpu_step + 1):
        for cand in (gbz - delta, gbz + delta):
            if cand >= 1 and any(True for _ in _factorizations(cand, mbz_max, gpu_step, max_gpus)):
                suggestions.append(cand)
        if suggestions:
            break
    raise InfeasibleError(
        f"gbz {gbz} has no exact split with mbz <= {mbz_max}, gpus a multiple of "
        f"{gpu_step} and <= {max_gpus}; nearest feasible gbz: {sorted(suggestions)}",
        sorted(suggestions),
    )
