"""Compact manifolds used by the examples: flat torus chart, round spheres, and SL(2,R).

Points are stored in ambient coordinates. The torus is the unit square with
wrap-around, the sphere S^n sits in R^(n+1), and SL(2,R) is flattened row-major
into R^4 with the constraint det = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import _kernels as K
from .errors import DegenerateInput, NonCompactManifold

if TYPE_CHECKING:
    from .rng import RandomStream

CONSTRAINT_TOL = 1e-9

_KINDS = {"torus2": K.TORUS, "sphere": K.SPHERE, "sl2": K.SL2}


@dataclass(frozen=True)
class ManifoldId:
    kind: str
    n: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.kind == "sphere" and self.n < 1:
            raise ValueError("SphereN requires n >= 1")

    @property
    def code(self) -> int:
        return _KINDS[self.kind]

    @property
    def ambient_dim(self) -> int:
        return {"torus2": 2, "sphere": self.n + 1, "sl2": 4}[self.kind]

    @property
    def dim(self) -> int:
        return {"torus2": 2, "sphere": self.n, "sl2": 3}[self.kind]

    @property
    def compact(self) -> bool:
        return self.kind != "sl2"

    def to_json(self) -> dict:
        if self.kind == "sphere":
            return {"manifold": "sphere", "n": self.n}
        return {"manifold": self.kind}

    def __str__(self) -> str:
        return f"S^{self.n}" if self.kind == "sphere" else {"torus2": "T^2", "sl2": "SL(2,R)"}[self.kind]


TORUS2 = ManifoldId("torus2")
SL2 = ManifoldId("sl2")


def sphere(n: int = 2) -> ManifoldId:
    return ManifoldId("sphere", n)


def manifold_from_json(spec: dict) -> ManifoldId:
    name = spec.get("manifold")
    if name == "sphere":
        return sphere(int(spec.get("n", 2)))
    if name in ("torus2", "sl2"):
        return ManifoldId(name)
    raise ValueError(f"unknown manifold {name!r}")


def require_compact(m: ManifoldId) -> None:
    if not m.compact:
        raise NonCompactManifold(f"{m} is non-compact; only bracket checks are supported")


def constraint_residual(m: ManifoldId, x: np.ndarray) -> np.ndarray:
    """Distance of ambient point(s) from the constraint set, batched over leading axes."""
    x = np.asarray(x, dtype=float)
    if m.kind == "torus2":
        below = np.clip(-x, 0.0, None)
        above = np.clip(x - 1.0, 0.0, None) + (x == 1.0)
        return np.max(below + above, axis=-1)
    if m.kind == "sphere":
        return np.abs(np.sum(x * x, axis=-1) - 1.0)
    return np.abs(x[..., 0] * x[..., 3] - x[..., 1] * x[..., 2] - 1.0)


@dataclass(frozen=True, eq=False)
class Point:
    manifold: ManifoldId
    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float).reshape(-1)
        if c.shape[0] != self.manifold.ambient_dim:
            raise ValueError(f"{self.manifold} needs {self.manifold.ambient_dim} coordinates")
        if not np.all(np.isfinite(c)):
            raise ValueError("point coordinates must be finite")
        if constraint_residual(self.manifold, c) > CONSTRAINT_TOL:
            raise ValueError(f"{c} is not on {self.manifold}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def __repr__(self) -> str:
        return f"Point({self.manifold}, {self.coords.tolist()})"


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: Point
    coords: np.ndarray

    def __repr__(self) -> str:
        return f"TangentVector(at {self.base.coords.tolist()}: {self.coords.tolist()})"


def retract_array(m: ManifoldId, x: np.ndarray) -> np.ndarray:
    """Batched retraction of ambient vectors (shape (..., N)); raises on degenerate input."""
    x = np.array(x, dtype=float)
    flat = np.ascontiguousarray(x.reshape(-1, m.ambient_dim))
    status = np.zeros(flat.shape[0], dtype=np.int64)
    K.retract_batch(m.code, flat, status)
    if np.any(status != K.OK):
        bad = flat.shape[0] and int(np.argmax(status != K.OK))
        raise DegenerateInput(f"cannot retract onto {m}: input row {bad} violates the preconditions")
    return flat.reshape(x.shape)


def retract(m: ManifoldId, x) -> Point:
    """Map an ambient vector onto the manifold.

    Sphere: x/|x|. Torus: coordinatewise mod 1. SL(2,R): g/sqrt(det g).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != m.ambient_dim:
        raise DegenerateInput(f"{m} needs {m.ambient_dim} ambient coordinates, got {x.shape[0]}")
    return Point(m, retract_array(m, x))


def project_array(m: ManifoldId, P: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Batched orthogonal projection of ambient vectors V onto T_P M."""
    P = np.ascontiguousarray(np.broadcast_to(np.asarray(P, dtype=float), np.shape(V)).reshape(-1, m.ambient_dim))
    out = np.array(V, dtype=float)
    flat = np.ascontiguousarray(out.reshape(-1, m.ambient_dim))
    K.tangent_project_batch(m.code, P, flat)
    return flat.reshape(out.shape)


def tangent_project(m: ManifoldId, p: Point, v) -> TangentVector:
    if p.manifold != m:
        raise ValueError(f"point lives on {p.manifold}, not {m}")
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != m.ambient_dim:
        raise ValueError(f"{m} needs {m.ambient_dim} ambient coordinates")
    return TangentVector(p, project_array(m, p.coords, v))


def tangent_residual(m: ManifoldId, p: np.ndarray, v: np.ndarray) -> float:
    """Size of the normal component of v at p."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if m.kind == "torus2":
        return 0.0
    if m.kind == "sphere":
        return abs(float(p @ v))
    a, b, c, d = p
    return abs(d * v[0] - c * v[1] - b * v[2] + a * v[3])


@dataclass(frozen=True)
class CellGrid:
    """Equal-measure cells: uniform rectangles on the torus, (z, phi) bands on S^2.

    Flat cell ids are row-major over the resolution tuple: torus (ix, iy), sphere
    (iz, iphi) with z the last ambient coordinate and phi = atan2(x2, x1).
    """

    manifold: ManifoldId
    resolution: tuple[int, int]

    def __post_init__(self):
        require_compact(self.manifold)
        if self.manifold.kind == "sphere" and self.manifold.n != 2:
            raise ValueError("equal-area cell grids are implemented for S^2 only")
        res = tuple(int(r) for r in self.resolution)
        if len(res) != 2 or min(res) < 1:
            raise ValueError("resolution must be two positive integers")
        object.__setattr__(self, "resolution", res)

    @property
    def cell_count(self) -> int:
        return self.resolution[0] * self.resolution[1]

    @property
    def cell_measure(self) -> float:
        total = 1.0 if self.manifold.kind == "torus2" else 4.0 * np.pi
        return total / self.cell_count

    def indices(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.manifold.ambient_dim)
        r0, r1 = self.resolution
        if self.manifold.kind == "torus2":
            i = np.minimum(np.floor(X[:, 0] * r0), r0 - 1)
            j = np.minimum(np.floor(X[:, 1] * r1), r1 - 1)
        else:
            i = np.clip(np.floor((X[:, 2] + 1.0) * 0.5 * r0), 0, r0 - 1)
            phi = np.arctan2(X[:, 1], X[:, 0])
            j = np.clip(np.floor((phi + np.pi) / (2.0 * np.pi) * r1), 0, r1 - 1)
        return (i.astype(np.int64) * r1 + j.astype(np.int64))

    def unravel(self, cell: int) -> tuple[int, int]:
        return divmod(int(cell), self.resolution[1])

    def centers(self) -> np.ndarray:
        """Ambient coordinates of the cell centres, in flat-id order."""
        r0, r1 = self.resolution
        u = (np.arange(r0) + 0.5) / r0
        v = (np.arange(r1) + 0.5) / r1
        U, V = np.meshgrid(u, v, indexing="ij")
        if self.manifold.kind == "torus2":
            return np.stack([U.ravel(), V.ravel()], axis=1)
        z = 2.0 * U.ravel() - 1.0
        phi = 2.0 * np.pi * V.ravel() - np.pi
        s = np.sqrt(1.0 - z * z)
        return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def cell_index(grid: CellGrid, p: Point) -> int:
    if p.manifold != grid.manifold:
        raise ValueError(f"point lives on {p.manifold}, grid on {grid.manifold}")
    return int(grid.indices(p.coords)[0])


def random_points(m: ManifoldId, rng: RandomStream, size: int) -> np.ndarray:
    """Volume-uniform samples as an (size, N) array."""
    require_compact(m)
    if m.kind == "torus2":
        return rng.uniform(0.0, 1.0, size=(size, 2))
    g = rng.normal(size=(size, m.ambient_dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / norms


def random_point(m: ManifoldId, rng: RandomStream) -> Point:
    return Point(m, random_points(m, rng, 1)[0])


def random_group_point(rng: RandomStream, bound: float = 2.0) -> Point:
    """SL(2,R) element with every entry in [-bound, bound], by rejection on (a, b, c).

    d is solved from ad - bc = 1, so the determinant is exact up to rounding.
    """
    while True:
        a, b, c = rng.uniform(-bound, bound, size=3)
        if abs(a) < 1e-3:
            continue
        d = (1.0 + b * c) / a
        if abs(d) <= bound:
            return Point(SL2, np.array([a, b, c, d]))
