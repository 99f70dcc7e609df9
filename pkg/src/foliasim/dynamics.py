"""Control paths, Stratonovich diffusions and their generator.

Control paths use classical RK4 on the frozen field X0 + sum u_i X_i of each
piecewise-constant control segment. Diffusions dp = X0 dt + sum X_i o dB^i use
the Heun predictor-corrector, which converges to the Stratonovich solution.
Both retract onto the manifold after every stage.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterator, Sequence, TypeVar

import numpy as np

from . import _kernels as K
from .errors import DegenerateInput, NumericalBlowup, RankCollapse
from .histogram import OccupationHistogram
from .manifold import CellGrid, ManifoldId, Point, require_compact, retract_array
from .rng import RandomStream
from .vectorfield import (
    DEFAULT_DEPTH,
    DEFAULT_H,
    DEFAULT_TOL,
    FieldFamily,
    FoliatedFrameField,
    ScalarField,
    SphereCoordProjection,
    TorusExpr,
    ZeroField,
    foliated_frame,
    pack_family,
)

CHUNK_STEPS = 1 << 16

T = TypeVar("T")


def ordered_map(fn: Callable[[int], T], n: int, workers: int = 1) -> list[T]:
    """Apply fn to 0..n-1, possibly on threads, returning results in index order."""
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def _raise_status(status: int, where: str) -> None:
    if status == K.OK:
        return
    if status == K.RANK_CHANGE:
        raise RankCollapse(f"{where}: distribution rank changed along the path")
    if status == K.BLOWUP:
        raise NumericalBlowup(f"{where}: a coordinate exceeded {K.BLOWUP_BOUND:g}")
    raise NumericalBlowup(f"{where}: state left the retraction domain")


@dataclass
class ControlSystem:
    family: FieldFamily
    control_box: np.ndarray

    def __post_init__(self):
        box = np.asarray(self.control_box, dtype=float).reshape(-1, 2)
        k = len(self.family.fields)
        if k < 1:
            raise ValueError("a control system needs at least one control field")
        if box.shape[0] == 1 and k > 1:
            box = np.repeat(box, k, axis=0)
        if box.shape[0] != k:
            raise ValueError(f"control_box has {box.shape[0]} rows for {k} controls")
        if np.any(box[:, 0] > box[:, 1]):
            raise ValueError("control_box needs lo <= hi per channel")
        self.control_box = box

    @property
    def manifold(self) -> ManifoldId:
        return self.family.manifold

    @cached_property
    def _packed(self) -> tuple[np.ndarray, np.ndarray]:
        return pack_family(self.family.members)


@dataclass
class ControlSignal:
    segments: list[tuple[float, np.ndarray]]

    def __post_init__(self):
        segs = []
        for d, v in self.segments:
            if not d > 0:
                raise ValueError("segment durations must be positive")
            segs.append((float(d), np.atleast_1d(np.asarray(v, dtype=float))))
        if not segs:
            raise ValueError("a control signal needs at least one segment")
        self.segments = segs

    @property
    def total_duration(self) -> float:
        return sum(d for d, _ in self.segments)


@dataclass
class Trajectory:
    manifold: ManifoldId
    times: np.ndarray
    points: np.ndarray
    record_stride: int = 1

    def point(self, i: int) -> Point:
        return Point(self.manifold, self.points[i])

    @property
    def final(self) -> Point:
        return self.point(-1)

    def to_json(self) -> dict:
        return {
            "manifold": self.manifold.to_json(),
            "record_stride": self.record_stride,
            "times": [float(t) for t in self.times],
            "points": self.points.tolist(),
        }


def integrate_control(sys: ControlSystem, p0: Point, u: ControlSignal, dt: float) -> Trajectory:
    if not dt > 0:
        raise ValueError("dt must be positive")
    k = len(sys.family.fields)
    box = sys.control_box
    steps = []
    for d, v in u.segments:
        if dt > d * (1 + 1e-12):
            raise ValueError(f"dt={dt} exceeds a segment of duration {d}")
        if v.shape[0] != k:
            raise ValueError(f"control segment has {v.shape[0]} values for {k} channels")
        if np.any(v < box[:, 0] - 1e-12) or np.any(v > box[:, 1] + 1e-12):
            raise ValueError(f"control values {v.tolist()} outside the control box")
        steps.append(max(1, math.ceil(d / dt - 1e-9)))
    terms, nterms = sys._packed
    lead = [1.0] if sys.family.drift is not None else []
    out = np.empty((sum(steps) + 1, p0.coords.shape[0]))
    out[0] = p0.coords
    x = p0.coords.copy()
    times = [0.0]
    row = 0
    t = 0.0
    for (d, v), n in zip(u.segments, steps):
        coeffs = np.array(lead + v.tolist())
        st = K.rk4_segment(p0.manifold.code, terms, nterms, coeffs, x, n, d / n, out, row)
        _raise_status(st, "integrate_control")
        times.extend(t + d * (np.arange(1, n + 1) / n))
        t += d
        row += n
    return Trajectory(p0.manifold, np.array(times), out, 1)


def random_signal(k: int, box, n_segments: int, seg_duration: float, rng: RandomStream) -> ControlSignal:
    """Piecewise-constant control with i.i.d. uniform values over the box per segment."""
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    if box.shape[0] == 1 and k > 1:
        box = np.repeat(box, k, axis=0)
    vals = rng.uniform(box[:, 0], box[:, 1], size=(n_segments, k))
    return ControlSignal([(seg_duration, vals[i]) for i in range(n_segments)])


def reach_sample(sys: ControlSystem, p0: Point, n_paths: int, horizon: float, dt: float, grid: CellGrid,
                 rng: RandomStream, seg_duration: float = 1.0, workers: int = 1) -> OccupationHistogram:
    """Cells visited by n_paths random-control trajectories; path j uses rng.substream(j)."""
    require_compact(sys.manifold)
    k = len(sys.family.fields)
    n_seg = max(1, math.ceil(horizon / seg_duration - 1e-9))

    def one(j: int) -> np.ndarray:
        u = random_signal(k, sys.control_box, n_seg, seg_duration, rng.substream(j))
        traj = integrate_control(sys, p0, u, dt)
        return np.bincount(grid.indices(traj.points), minlength=grid.cell_count)

    hist = OccupationHistogram.empty(grid)
    for counts in ordered_map(one, n_paths, workers):
        hist.counts += counts
        hist.total_samples += int(counts.sum())
    return hist


class SDESystem:
    """dp = X0(p) dt + sum_i X_i(p) o dB^i with X0 = family.drift and X_i = family.fields."""

    def __init__(self, family: FieldFamily):
        if len(family.fields) < 1:
            raise ValueError("an SDE system needs at least one noise field")
        self.family = family

    @property
    def manifold(self) -> ManifoldId:
        return self.family.manifold

    @property
    def noise_dim(self) -> int:
        return len(self.family.fields)

    @property
    def foliated(self) -> bool:
        fr = self.family.frame
        return fr is not None and all(
            isinstance(f, FoliatedFrameField) and f.frame is fr and f.i == i
            for i, f in enumerate(self.family.fields)
        )

    @cached_property
    def _kernel_args(self) -> tuple:
        m = self.manifold
        drift = self.family.drift
        dterms, dn = pack_family([drift if drift is not None else ZeroField(m)])
        dummy_t = np.zeros((1, 1, 6))
        dummy_n = np.zeros(1, dtype=np.int64)
        dummy_i = np.zeros(1, dtype=np.int64)
        if self.foliated:
            fr = self.family.frame
            return (m.code, dterms, dn, drift is not None, dummy_t, dummy_n, True, fr.terms, fr.nterms,
                    fr.left, fr.right, fr.level_end, m.dim, fr.h, fr.tol_rel,
                    -1 if fr.expected_rank is None else fr.expected_rank)
        zterms, zn = pack_family(self.family.fields)
        return (m.code, dterms, dn, drift is not None, zterms, zn, False, dummy_t, dummy_n,
                dummy_i, dummy_i, dummy_i, m.dim, DEFAULT_H, DEFAULT_TOL, -1)

    def __repr__(self) -> str:
        return f"SDESystem(drift={self.family.drift!r}, noise={self.family.fields!r})"


def heun_states(sys: SDESystem, x0: np.ndarray, n_steps: int, dt: float, rng: RandomStream,
                stride: int = 1, chunk: int = CHUNK_STEPS) -> Iterator[np.ndarray]:
    """Yield recorded states (every stride-th step, x0 excluded) in chunks.

    Brownian increments are drawn sequentially from rng, so the path does not
    depend on the chunk size.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if stride < 1:
        raise ValueError("record stride must be >= 1")
    args = sys._kernel_args
    x = np.array(x0, dtype=float)
    k = sys.noise_dim
    sq = math.sqrt(dt)
    done = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        dW = rng.normal(size=(m, k)) * sq
        out = np.empty((m // stride + 1, x.shape[0]))
        st, rec = K.heun_chunk(*args, x, dW, dt, stride, done, out)
        _raise_status(st, "heun")
        yield out[:rec]
        done += m


def n_steps_for(T: float, dt: float) -> int:
    return max(0, math.ceil(T / dt - 1e-9))


def sde_step_heun(sys: SDESystem, p: Point, dt: float, dW) -> Point:
    if not dt > 0:
        raise ValueError("dt must be positive")
    dW = np.asarray(dW, dtype=float).reshape(1, -1)
    if dW.shape[1] != sys.noise_dim:
        raise ValueError(f"dW needs {sys.noise_dim} components")
    x = p.coords.copy()
    out = np.empty((1, x.shape[0]))
    st, _ = K.heun_chunk(*sys._kernel_args, x, np.ascontiguousarray(dW), dt, 1, 0, out)
    _raise_status(st, "sde_step_heun")
    return Point(p.manifold, x)


def simulate_sde(sys: SDESystem, p0: Point, T: float, dt: float, rng: RandomStream,
                 record_stride: int = 1) -> Trajectory:
    """ceil(T/dt) Heun steps with dW ~ N(0, dt); records p0 and every stride-th state."""
    if T < dt:
        raise ValueError("T must be at least dt")
    n = n_steps_for(T, dt)
    chunks = [p0.coords[None]] + list(heun_states(sys, p0.coords, n, dt, rng, record_stride))
    pts = np.concatenate(chunks, axis=0)
    times = np.arange(len(pts)) * record_stride * dt
    return Trajectory(p0.manifold, times, pts, record_stride)


def _stencil(sys: SDESystem, X: np.ndarray, h: float) -> tuple[list, list]:
    """Evaluation points of the nested difference quotients.

    Returns the drift pair (R(p + h X0), R(p - h X0)) if there is a drift, and for
    each noise field the four points R(q +- h X_i(q)) at q = R(p +- h X_i(p)).
    """
    m = sys.manifold

    def R(Y):
        return retract_array(m, Y)

    drift = []
    if sys.family.drift is not None:
        a = sys.family.drift.ambient(X)
        drift = [R(X + h * a), R(X - h * a)]
    quads = []
    for f in sys.family.fields:
        v = f.ambient(X)
        pts = []
        for q in (R(X + h * v), R(X - h * v)):
            vq = f.ambient(q)
            pts += [R(q + h * vq), R(q - h * vq)]
        quads.append(pts)
    return drift, quads


def generator_apply_batch(sys: SDESystem, fns: Sequence[ScalarField], X, h: float = DEFAULT_H) -> np.ndarray:
    """(X0 f + 1/2 sum X_i^2 f) at each point for each f, by nested central differences.

    X_i f(p) = [f(R(p + h X_i(p))) - f(R(p - h X_i(p)))] / 2h, and X_i^2 f applies
    the same formula to X_i f at R(p +- h X_i(p)). Differences of f are formed from
    ``values_extended`` before any scaling by 1/h^2, so neither value rounding nor
    large partial sums reach the result. Returns shape (len(fns), B).
    """
    if not 0.0 < h <= 1e-2:
        raise ValueError(f"h must lie in (0, 1e-2], got {h}")
    X = np.ascontiguousarray(np.asarray(X, dtype=float).reshape(-1, sys.manifold.ambient_dim))
    drift, quads = _stencil(sys, X, h)
    out = np.zeros((len(fns), X.shape[0]))
    for i, f in enumerate(fns):
        val = f.values_extended
        if drift:
            out[i] += (val(drift[0]) - val(drift[1])) / (2.0 * h)
        second = 0.0
        for pp, pm, mp, mm in quads:
            second = second + ((val(pp) - val(pm)) - (val(mp) - val(mm)))
        out[i] += np.asarray(second, dtype=np.float64) / (8.0 * h * h)
    return out


def generator_apply(sys: SDESystem, f: ScalarField, p: Point, h: float = DEFAULT_H) -> float:
    if p.manifold != sys.manifold:
        raise ValueError("point and system live on different manifolds")
    return float(generator_apply_batch(sys, [f], p.coords, h)[0, 0])


def brownian_motion(m: ManifoldId) -> SDESystem:
    """Driftless system with generator (1/2) Laplace-Beltrami."""
    if m.kind == "sphere":
        return SDESystem(FieldFamily([SphereCoordProjection(m.n, i) for i in range(m.n + 1)]))
    if m.kind == "torus2":
        return SDESystem(FieldFamily([TorusExpr("1*dx"), TorusExpr("1*dy")]))
    raise DegenerateInput(f"Brownian motion is provided for the sphere and torus, not {m}")


def foliated_bm(F: FieldFamily, depth: int = DEFAULT_DEPTH, expected_rank: int | None = None,
                h: float = DEFAULT_H, tol_rel: float = DEFAULT_TOL) -> SDESystem:
    """Leafwise Brownian motion: noise fields are the projected frame of D_Lie(F)."""
    require_compact(F.manifold)
    return SDESystem(foliated_frame(F, depth, h, tol_rel, expected_rank))
