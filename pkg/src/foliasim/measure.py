"""Occupation measures, supports, invariance residuals and ergodic verdicts.

Three empirical probes of whether the accessible sets are dense:

* reach: cells visited by random control paths,
* support: cells charged by the long-run occupation measure of the diffusion,
* constancy: whether time averages of test functions depend on the start.

Each produces a ``Verdict``; ``verify_equivalence`` runs all three and checks that
they do not contradict each other.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import (
    ControlSystem,
    SDESystem,
    generator_apply_batch,
    heun_states,
    n_steps_for,
    ordered_map,
    reach_sample,
)
from .histogram import OccupationHistogram
from .manifold import CellGrid, Point, require_compact
from .rng import RandomStream
from .vectorfield import DEFAULT_H, ScalarField

__all__ = [
    "DENSE_COVERAGE",
    "NOT_DENSE_COVERAGE",
    "ERROR_FLOOR",
    "MAX_DENSE_ERROR",
    "Verdict",
    "OccupationHistogram",
    "SupportEstimate",
    "InvarianceReport",
    "ErgodicReport",
    "EquivalenceReport",
    "occupation_measure",
    "support_estimate",
    "coverage_verdict",
    "check_invariance",
    "ergodic_average",
    "ergodic_averages",
    "ergodic_constancy_test",
    "jaccard",
    "support_consistency_test",
    "ConsistencyBudget",
    "verify_equivalence",
]

# coverage bands for the reach and support verdicts
DENSE_COVERAGE = 0.9
NOT_DENSE_COVERAGE = 0.5
# gap bands, in units of the pooled error, for the constancy verdict
NOT_DENSE_GAP = 5.0
DENSE_GAP = 2.0
# pooled errors below this are treated as this (exactly conserved averages)
ERROR_FLOOR = 1e-12
# a Dense verdict also needs converged averages: pooled errors above this (for
# battery functions bounded by 1) mean the time averages have not settled
MAX_DENSE_ERROR = 0.1
ROBUST_FRACTION = 0.1


class Verdict(str, enum.Enum):
    DENSE = "Dense"
    NOT_DENSE = "NotDense"
    INCONCLUSIVE = "Inconclusive"

    def __str__(self) -> str:
        return self.value


def _burn_steps(T: float, dt: float, burn_in: float | None) -> int:
    if burn_in is None:
        burn_in = 0.1 * T
    if not 0.0 <= burn_in < T:
        raise ValueError(f"burn_in must lie in [0, T), got {burn_in}")
    return int(math.floor(burn_in / dt + 1e-9))


def _post_burn_chunks(sys: SDESystem, p0: Point, T: float, dt: float, burn_in: float | None,
                      rng: RandomStream, stride: int = 1):
    """Yield recorded states after the burn-in; returns (total steps, discarded records)."""
    if p0.manifold != sys.manifold:
        raise ValueError("start point and system live on different manifolds")
    n = n_steps_for(T, dt)
    skip = _burn_steps(T, dt, burn_in) // stride
    seen = 0
    for chunk in heun_states(sys, p0.coords, n, dt, rng, stride):
        lo = min(max(skip - seen, 0), len(chunk))
        seen += len(chunk)
        if lo < len(chunk):
            yield chunk[lo:]


def occupation_measure(sys: SDESystem, p0: Point, T: float, dt: float, grid: CellGrid,
                       rng: RandomStream, burn_in: float | None = None,
                       record_stride: int = 1) -> OccupationHistogram:
    """Histogram of one long path after burn-in (default 10% of T)."""
    require_compact(sys.manifold)
    if grid.manifold != sys.manifold:
        raise ValueError("grid and system live on different manifolds")
    hist = OccupationHistogram.empty(grid)
    n = n_steps_for(T, dt)
    total_records = n // record_stride
    for chunk in _post_burn_chunks(sys, p0, T, dt, burn_in, rng, record_stride):
        hist.add_points(chunk)
    hist.burn_in_discarded = total_records - hist.total_samples
    return hist


@dataclass(frozen=True)
class SupportEstimate:
    occupied_cells: tuple[int, ...]
    coverage_fraction: float
    min_count: int
    robust_cells: tuple[int, ...]
    robust_coverage: float
    robust_threshold: float

    def to_json(self) -> dict:
        return {
            "occupied_cells": list(self.occupied_cells),
            "coverage_fraction": self.coverage_fraction,
            "min_count": self.min_count,
            "robust_cells": list(self.robust_cells),
            "robust_coverage": self.robust_coverage,
            "robust_threshold": self.robust_threshold,
        }


def support_estimate(hist: OccupationHistogram, min_count: int = 1) -> SupportEstimate:
    """Cells with at least min_count samples, plus the robust variant.

    The robust support keeps cells holding at least a tenth of the count a uniform
    distribution would put there.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    cells = hist.grid.cell_count
    occ = np.flatnonzero(hist.counts >= min_count)
    thr = max(1.0, ROBUST_FRACTION * hist.total_samples / cells)
    rob = np.flatnonzero(hist.counts >= thr)
    return SupportEstimate(
        occupied_cells=tuple(int(c) for c in occ),
        coverage_fraction=len(occ) / cells,
        min_count=min_count,
        robust_cells=tuple(int(c) for c in rob),
        robust_coverage=len(rob) / cells,
        robust_threshold=float(thr),
    )


def coverage_verdict(coverage: float) -> Verdict:
    if coverage >= DENSE_COVERAGE:
        return Verdict.DENSE
    if coverage <= NOT_DENSE_COVERAGE:
        return Verdict.NOT_DENSE
    return Verdict.INCONCLUSIVE


@dataclass(frozen=True)
class InvarianceReport:
    labels: tuple[str, ...]
    residuals: tuple[float, ...]
    quad_res: tuple[int, int]
    h: float

    @property
    def max_abs_residual(self) -> float:
        return max((abs(r) for r in self.residuals), default=0.0)

    def to_json(self) -> dict:
        return {
            "quad_res": list(self.quad_res),
            "h": self.h,
            "max_abs_residual": self.max_abs_residual,
            "residuals": {k: v for k, v in zip(self.labels, self.residuals)},
        }


def check_invariance(density, sys: SDESystem, fns: Sequence[ScalarField],
                     quad_res: tuple[int, int] = (256, 256), h: float = DEFAULT_H) -> InvarianceReport:
    """Quadrature of r_f = integral of (L f) rho over the manifold, for each f.

    density is a ScalarField, a callable on (B, N) point arrays, or an array of
    per-cell values. It is normalized to unit mass. On the torus the nodes are the
    cell midpoints of a uniform grid, which is the periodic trapezoid rule.
    """
    grid = CellGrid(sys.manifold, quad_res)
    X = grid.centers()
    if isinstance(density, ScalarField):
        rho = density.values(X)
    elif callable(density):
        rho = np.asarray(density(X), dtype=float)
    else:
        rho = np.asarray(density, dtype=float).reshape(-1)
    if rho.shape != (grid.cell_count,):
        raise ValueError(f"density must give {grid.cell_count} cell values")
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise ValueError("density must be finite and nonnegative")
    mass = rho.sum() * grid.cell_measure
    if not mass > 0:
        raise ValueError("density has zero mass")
    w = rho * (grid.cell_measure / mass)
    Lf = generator_apply_batch(sys, fns, X, h)
    res = tuple(float(np.dot(row, w)) for row in Lf)
    return InvarianceReport(tuple(f.label for f in fns), res, grid.resolution, h)


def _shifted_mean_update(acc: list, values: np.ndarray) -> None:
    # acc = [count, shift, sum of (v - shift)]; shifting by the first value makes
    # a constant observable average to itself exactly
    if len(values) == 0:
        return
    if acc[0] == 0:
        acc[1] = values[0]
    acc[0] += len(values)
    acc[2] += float(np.sum(values - acc[1]))


def ergodic_averages(sys: SDESystem, fns: Sequence[ScalarField], p0: Point, T: float, dt: float,
                     rng: RandomStream, burn_in: float | None = None) -> np.ndarray:
    """Time averages of every f along one path after burn-in."""
    require_compact(sys.manifold)
    accs = [[0, 0.0, 0.0] for _ in fns]
    for chunk in _post_burn_chunks(sys, p0, T, dt, burn_in, rng):
        for acc, f in zip(accs, fns):
            _shifted_mean_update(acc, f.values(chunk))
    if accs and accs[0][0] == 0:
        raise ValueError("no samples after burn-in; increase T or lower burn_in")
    return np.array([a[1] + a[2] / a[0] for a in accs])


def ergodic_average(sys: SDESystem, f: ScalarField, p0: Point, T: float, dt: float,
                    rng: RandomStream, burn_in: float | None = None) -> float:
    return float(ergodic_averages(sys, [f], p0, T, dt, rng, burn_in)[0])


@dataclass
class ErgodicReport:
    labels: tuple[str, ...]
    starts: tuple[tuple[float, ...], ...]
    averages: np.ndarray          # (start, function, replica)
    start_means: np.ndarray       # (start, function)
    pooled_error: np.ndarray      # (function,)
    max_gap_ratio: float
    verdict: Verdict

    def to_json(self) -> dict:
        return {
            "verdict": str(self.verdict),
            "functions": list(self.labels),
            "starts": [list(s) for s in self.starts],
            "averages": self.averages.tolist(),
            "start_means": self.start_means.tolist(),
            "pooled_error": self.pooled_error.tolist(),
            "max_gap_ratio": self.max_gap_ratio,
            "thresholds": {"not_dense": NOT_DENSE_GAP, "dense": DENSE_GAP, "error_floor": ERROR_FLOOR,
                           "max_dense_error": MAX_DENSE_ERROR},
        }


def gap_verdict(start_means: np.ndarray, pooled_error: np.ndarray) -> tuple[float, Verdict]:
    """Largest between-start gap over pooled error, and the verdict it implies."""
    gaps = start_means.max(axis=0) - start_means.min(axis=0)
    ratio = float(np.max(gaps / np.maximum(pooled_error, ERROR_FLOOR)))
    if ratio > NOT_DENSE_GAP:
        return ratio, Verdict.NOT_DENSE
    if ratio < DENSE_GAP and float(np.max(pooled_error)) <= MAX_DENSE_ERROR:
        return ratio, Verdict.DENSE
    return ratio, Verdict.INCONCLUSIVE


def ergodic_constancy_test(sys: SDESystem, fns: Sequence[ScalarField], starts: Sequence[Point],
                           replicas: int, T: float, dt: float, rng: RandomStream,
                           burn_in: float | None = None, workers: int = 1) -> ErgodicReport:
    """Compare time averages between starts against their replica scatter.

    Replica r from start s uses rng.substream(s * replicas + r). The pooled error of
    a function is the within-start standard deviation of single-path averages,
    pooled over starts: the Monte-Carlo error of one time average.
    """
    if len(starts) < 2:
        raise ValueError("need at least two starts")
    if replicas < 2:
        raise ValueError("need at least two replicas")
    if not fns:
        raise ValueError("need at least one test function")
    S = len(starts)

    def one(idx: int) -> np.ndarray:
        s, r = divmod(idx, replicas)
        return ergodic_averages(sys, fns, starts[s], T, dt, rng.substream(idx), burn_in)

    flat = ordered_map(one, S * replicas, workers)
    A = np.array(flat).reshape(S, replicas, len(fns)).transpose(0, 2, 1)
    means = A.mean(axis=2)
    pooled = np.sqrt(np.mean(A.var(axis=2, ddof=1), axis=0))
    ratio, verdict = gap_verdict(means, pooled)
    return ErgodicReport(
        labels=tuple(f.label for f in fns),
        starts=tuple(tuple(float(c) for c in p.coords) for p in starts),
        averages=A,
        start_means=means,
        pooled_error=pooled,
        max_gap_ratio=ratio,
        verdict=verdict,
    )


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


@dataclass(frozen=True)
class ConsistencyBudget:
    """Matched budgets for the reach and occupation probes.

    The defaults spend the same total time on both: 200 control paths of horizon
    100 and one diffusion path of length 2e4.
    """

    n_paths: int = 200
    horizon: float = 100.0
    seg_duration: float = 1.0
    control_dt: float = 0.01
    T: float = 2.0e4
    dt: float = 0.01
    burn_in: float = 0.0

    def to_json(self) -> dict:
        return dict(self.__dict__)


def support_consistency_test(csys: ControlSystem, dsys: SDESystem, p0: Point, grid: CellGrid,
                             budget: ConsistencyBudget, rng: RandomStream, workers: int = 1) -> float:
    """Jaccard index between reach cells (substream 0) and occupation cells (substream 1)."""
    reach = reach_sample(csys, p0, budget.n_paths, budget.horizon, budget.control_dt, grid,
                         rng.substream(0), budget.seg_duration, workers)
    occ = occupation_measure(dsys, p0, budget.T, budget.dt, grid, rng.substream(1), budget.burn_in)
    return jaccard(reach.occupied, occ.occupied)


@dataclass
class EquivalenceReport:
    scenario: str
    reach_verdict: Verdict
    support_verdict: Verdict
    constancy_verdict: Verdict
    reach_coverage: float
    support: SupportEstimate
    ergodic: ErgodicReport
    jaccard: float
    details: dict = field(default_factory=dict)
    histogram: OccupationHistogram | None = field(default=None, repr=False)

    @property
    def verdicts(self) -> tuple[Verdict, Verdict, Verdict]:
        return (self.reach_verdict, self.support_verdict, self.constancy_verdict)

    @property
    def consistent(self) -> bool:
        decided = {v for v in self.verdicts if v is not Verdict.INCONCLUSIVE}
        return len(decided) <= 1

    @property
    def any_inconclusive(self) -> bool:
        return Verdict.INCONCLUSIVE in self.verdicts

    def to_json(self) -> dict:
        sup = self.support.to_json()
        return {
            "scenario": self.scenario,
            "reach_verdict": str(self.reach_verdict),
            "support_verdict": str(self.support_verdict),
            "constancy_verdict": str(self.constancy_verdict),
            "consistent": self.consistent,
            "reach_coverage": self.reach_coverage,
            "support_coverage": sup["coverage_fraction"],
            "support_robust_coverage": sup["robust_coverage"],
            "jaccard": self.jaccard,
            "ergodic": self.ergodic.to_json(),
            **self.details,
        }


def verify_equivalence(scenario, rng: RandomStream, budgets=None, workers: int = 1,
                       progress: Callable[[str], None] | None = None) -> EquivalenceReport:
    """Run the reach, support and constancy probes of a compact scenario.

    Substreams: 0 reach, 1 occupation, 2 constancy. budgets overrides fields of the
    scenario's recommended budgets.
    """
    from .scenarios import Budgets  # local import: scenarios builds on this module

    b = scenario.budgets if budgets is None else budgets
    if not isinstance(b, Budgets):
        raise TypeError("budgets must be a scenarios.Budgets instance")
    scenario.require_runnable()
    require_compact(scenario.manifold)
    say = progress or (lambda msg: None)
    grid = CellGrid(scenario.manifold, b.grid)
    p0 = scenario.start

    say("reach")
    reach = reach_sample(scenario.control_system, p0, b.n_paths, b.horizon, b.control_dt, grid,
                         rng.substream(0), b.seg_duration, workers)
    reach_cov = reach.summary()["coverage_fraction"]

    say("occupation")
    occ = occupation_measure(scenario.sde_system, p0, b.T, b.dt, grid, rng.substream(1), b.burn_in)
    sup = support_estimate(occ)

    say("constancy")
    erg = ergodic_constancy_test(scenario.sde_system, scenario.constancy_battery,
                                 scenario.constancy_starts, b.replicas, b.T_ergodic, b.dt_ergodic,
                                 rng.substream(2), workers=workers)
    return EquivalenceReport(
        scenario=scenario.name,
        reach_verdict=coverage_verdict(reach_cov),
        support_verdict=coverage_verdict(sup.coverage_fraction),
        constancy_verdict=erg.verdict,
        reach_coverage=reach_cov,
        support=sup,
        ergodic=erg,
        jaccard=jaccard(reach.occupied, occ.occupied),
        details={"budgets": b.to_json(), "occupation": occ.summary()},
        histogram=occ,
    )
