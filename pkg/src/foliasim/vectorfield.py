"""Vector fields, scalar test functions, Lie brackets and the projected leaf frame.

Every field is evaluated through its ambient extension (``ambient``), which is
what the finite-difference Jacobians differentiate. Closed-form fields are
stored as packed term tables (see ``_kernels``) so the compiled integrators can
evaluate them; sums and scalings of closed-form fields stay packable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import _kernels as K
from .exprparse import parse_torus_expr
from .manifold import (
    ManifoldId,
    Point,
    TangentVector,
    TORUS2,
    SL2,
    project_array,
    random_points,
    require_compact,
    sphere,
)
from .errors import RankCollapse

if TYPE_CHECKING:
    from .rng import RandomStream

DEFAULT_H = 1e-4
DEFAULT_DEPTH = 3
DEFAULT_TOL = 1e-6
_TWO_PI_EXT = np.longdouble("6.28318530717958647692528676655900577")


def _check_h(h: float) -> None:
    if not 0.0 < h <= 1e-2:
        raise ValueError(f"finite-difference step h must lie in (0, 1e-2], got {h}")


def _as_batch(X, n: int) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(X, dtype=float).reshape(-1, n))


class VectorField:
    manifold: ManifoldId

    def ambient(self, X) -> np.ndarray:
        """Ambient-extension values at a batch of points, shape (B, N)."""
        raise NotImplementedError

    def jacobian(self, X, h: float = DEFAULT_H) -> np.ndarray:
        """Central-difference Jacobian, J[b, i, m] = d field_i / d x_m."""
        X = _as_batch(X, self.manifold.ambient_dim)
        B, N = X.shape
        E = np.eye(N) * h
        fp = self.ambient((X[:, None, :] + E[None]).reshape(-1, N)).reshape(B, N, N)
        fm = self.ambient((X[:, None, :] - E[None]).reshape(-1, N)).reshape(B, N, N)
        return ((fp - fm) / (2.0 * h)).transpose(0, 2, 1)

    def eval(self, p: Point) -> TangentVector:
        if p.manifold != self.manifold:
            raise ValueError(f"point lives on {p.manifold}, field on {self.manifold}")
        v = self.ambient(p.coords)[0]
        return TangentVector(p, project_array(self.manifold, p.coords, v))

    def __mul__(self, c: float) -> VectorField:
        return Scaled(float(c), self)

    __rmul__ = __mul__

    def __neg__(self) -> VectorField:
        return Scaled(-1.0, self)

    def __add__(self, other: VectorField) -> VectorField:
        return Sum((self, other))


class TermField(VectorField):
    """A closed-form field given by a packed term table (rows of 6 floats)."""

    def __init__(self, manifold: ManifoldId, terms):
        self.manifold = manifold
        t = np.asarray(terms, dtype=float).reshape(-1, 6)
        self.terms = np.ascontiguousarray(t)

    def ambient(self, X) -> np.ndarray:
        X = _as_batch(X, self.manifold.ambient_dim)
        out = np.empty_like(X)
        K.field_eval_batch(self.manifold.code, self.terms[None], np.array([len(self.terms)]), 0, X, out)
        return out

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.manifold}, {len(self.terms)} terms)"


class ZeroField(TermField):
    def __init__(self, manifold: ManifoldId):
        super().__init__(manifold, np.zeros((0, 6)))

    def __repr__(self) -> str:
        return f"ZeroField({self.manifold})"


class TorusExpr(TermField):
    """Torus field parsed from text such as ``"1*dx + 0.5*dy"`` or ``"sin(1,0)*dy"``."""

    def __init__(self, text: str):
        self.text = text
        rows = []
        for t in parse_torus_expr(text):
            trig = {None: 0.0, "sin": 1.0, "cos": 2.0}[t.trig]
            rows.append([t.coeff, trig, t.k1, t.k2, 0.0 if t.basis == "dx" else 1.0, 0.0])
        super().__init__(TORUS2, np.array(rows).reshape(-1, 6))

    def __repr__(self) -> str:
        return f"TorusExpr({self.text!r})"


class SphereCoordProjection(TermField):
    """X_i(p) = e_i - p_i p: the tangential part of the i-th ambient axis (0-based i)."""

    def __init__(self, n: int, i: int):
        if not 0 <= i <= n:
            raise ValueError(f"axis {i} out of range for S^{n}")
        self.i = i
        super().__init__(sphere(n), [[1.0, i, 0, 0, 0, 0]])

    def __repr__(self) -> str:
        return f"SphereCoordProjection(n={self.manifold.n}, i={self.i})"


class SphereHeightGradient(SphereCoordProjection):
    """Gradient of the height x1 on S^n: V(x) = e1 - x1 x; vanishes at the poles +-e1."""

    def __init__(self, n: int = 2):
        super().__init__(n, 0)

    def __repr__(self) -> str:
        return f"SphereHeightGradient(n={self.manifold.n})"


class SL2LeftInvariant(TermField):
    """Left-invariant field X_A(g) = g A on SL(2,R), A traceless 2x2."""

    def __init__(self, A):
        A = np.asarray(A, dtype=float).reshape(2, 2)
        if abs(np.trace(A)) > 1e-12:
            raise ValueError("A must be traceless to be tangent to SL(2,R)")
        self.A = A
        rows = [[A[r, c], r, c, 0, 0, 0] for r in range(2) for c in range(2) if A[r, c] != 0.0]
        super().__init__(SL2, np.array(rows).reshape(-1, 6))

    def __repr__(self) -> str:
        return f"SL2LeftInvariant({self.A.tolist()})"


class Scaled(VectorField):
    def __init__(self, c: float, inner: VectorField):
        self.c = float(c)
        self.inner = inner
        self.manifold = inner.manifold

    def ambient(self, X) -> np.ndarray:
        return self.c * self.inner.ambient(X)

    def jacobian(self, X, h: float = DEFAULT_H) -> np.ndarray:
        return self.c * self.inner.jacobian(X, h)

    def __repr__(self) -> str:
        return f"Scaled({self.c}, {self.inner!r})"


class Sum(VectorField):
    def __init__(self, fields: Sequence[VectorField]):
        fields = tuple(fields)
        if not fields:
            raise ValueError("Sum needs at least one field; use ZeroField for the zero field")
        if len({f.manifold for f in fields}) != 1:
            raise ValueError("summands live on different manifolds")
        self.fields = fields
        self.manifold = fields[0].manifold

    def ambient(self, X) -> np.ndarray:
        return sum(f.ambient(X) for f in self.fields)

    def jacobian(self, X, h: float = DEFAULT_H) -> np.ndarray:
        return sum(f.jacobian(X, h) for f in self.fields)

    def __repr__(self) -> str:
        return f"Sum({list(self.fields)!r})"


class Bracket(VectorField):
    """[A, B] = J_B A - J_A B, evaluated by central differences (ambient, unprojected)."""

    def __init__(self, a: VectorField, b: VectorField, h: float = DEFAULT_H):
        _check_h(h)
        self.a, self.b, self.h = a, b, h
        self.manifold = a.manifold

    def ambient(self, X) -> np.ndarray:
        X = _as_batch(X, self.manifold.ambient_dim)
        va = self.a.ambient(X)
        vb = self.b.ambient(X)
        jb_a = np.einsum("bim,bm->bi", self.b.jacobian(X, self.h), va)
        ja_b = np.einsum("bim,bm->bi", self.a.jacobian(X, self.h), vb)
        return jb_a - ja_b

    def __repr__(self) -> str:
        return f"[{self.a!r}, {self.b!r}]"


def pack_terms(f: VectorField) -> np.ndarray | None:
    """Term table of a closed-form field, or None when f is not closed-form."""
    if isinstance(f, TermField):
        return f.terms
    if isinstance(f, Scaled):
        inner = pack_terms(f.inner)
        if inner is None:
            return None
        out = inner.copy()
        out[:, 0] *= f.c
        return out
    if isinstance(f, Sum):
        parts = [pack_terms(g) for g in f.fields]
        if any(p is None for p in parts):
            return None
        return np.concatenate(parts, axis=0)
    return None


def pack_family(fields: Sequence[VectorField]) -> tuple[np.ndarray, np.ndarray]:
    """Stack term tables into the (n_fields, max_terms, 6) layout the kernels use."""
    tables = []
    for f in fields:
        t = pack_terms(f)
        if t is None:
            raise TypeError(f"{f!r} has no closed form; compiled integration needs closed-form fields")
        tables.append(t)
    width = max([len(t) for t in tables] + [1])
    out = np.zeros((max(len(tables), 1), width, 6))
    counts = np.zeros(max(len(tables), 1), dtype=np.int64)
    for j, t in enumerate(tables):
        out[j, : len(t)] = t
        counts[j] = len(t)
    return out, counts


def bracket_words(k: int, depth: int) -> tuple[list[tuple[int, int]], list[int]]:
    """Breadth-first bracket words over k generators.

    Word w is (g, -1) for generator g, or (a, b) for [word a, word b]. Level 2
    holds [X_i, X_j] for i < j; level d > 2 holds [X_g, w] for every generator g
    and every level d-1 word w. Returns the words and the cumulative end index
    of each level.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    words: list[tuple[int, int]] = [(g, -1) for g in range(k)]
    ends = [k]
    prev = []
    for d in range(2, depth + 1):
        start = len(words)
        if d == 2:
            for i, j in itertools.combinations(range(k), 2):
                words.append((i, j))
        else:
            for g in range(k):
                for w in prev:
                    words.append((g, w))
        prev = list(range(start, len(words)))
        ends.append(len(words))
    return words, ends


@dataclass
class FieldFamily:
    """F = {X0, X1, ..., Xk}: optional drift plus control/noise fields on one manifold."""

    fields: list[VectorField]
    drift: VectorField | None = None
    frame: FoliatedFrame | None = field(default=None, repr=False)

    def __post_init__(self):
        self.fields = list(self.fields)
        ms = {f.manifold for f in self.members}
        if len(ms) > 1:
            raise ValueError("all fields of a family must share one manifold")
        if not ms:
            raise ValueError("a family needs at least one field")

    @property
    def members(self) -> list[VectorField]:
        return ([self.drift] if self.drift is not None else []) + self.fields

    @property
    def manifold(self) -> ManifoldId:
        return self.members[0].manifold


def lie_bracket(X: VectorField, Y: VectorField, p: Point, h: float = DEFAULT_H) -> TangentVector:
    """[X, Y](p) = J_Y X - J_X Y with central-difference Jacobians, tangent-projected."""
    _check_h(h)
    if X.manifold != Y.manifold or p.manifold != X.manifold:
        raise ValueError("fields and point must share one manifold")
    x = p.coords[None]
    v = X.jacobian(x, h)[0]
    w = Y.jacobian(x, h)[0]
    val = w @ X.ambient(x)[0] - v @ Y.ambient(x)[0]
    return TangentVector(p, project_array(p.manifold, p.coords, val))


def _word_fields(F: FieldFamily, depth: int, h: float) -> list[VectorField]:
    words, _ = bracket_words(len(F.members), depth)
    nodes: list[VectorField] = []
    for a, b in words:
        nodes.append(F.members[a] if b < 0 else Bracket(F.members[a], nodes[b], h))
    return nodes


def lie_basis_matrix(F: FieldFamily, X, depth: int = DEFAULT_DEPTH, h: float = DEFAULT_H) -> np.ndarray:
    """Tangent-projected bracket words at each point, as columns: shape (B, N, W)."""
    _check_h(h)
    m = F.manifold
    X = _as_batch(X, m.ambient_dim)
    cols = [project_array(m, X, w.ambient(X)) for w in _word_fields(F, depth, h)]
    return np.stack(cols, axis=2)


def lie_algebra_basis(F: FieldFamily, p: Point, depth: int = DEFAULT_DEPTH, h: float = DEFAULT_H) -> list[TangentVector]:
    M = lie_basis_matrix(F, p.coords, depth, h)[0]
    return [TangentVector(p, M[:, w].copy()) for w in range(M.shape[1])]


def numerical_rank(M: np.ndarray, tol_rel: float = DEFAULT_TOL) -> np.ndarray:
    """Count singular values above tol_rel * sigma_max, batched over leading axes."""
    s = np.linalg.svd(M, compute_uv=False)
    smax = s[..., :1]
    alive = smax > K.RANK_FLOOR
    return np.sum((s > tol_rel * smax) & alive, axis=-1)


def distribution_rank(F: FieldFamily, p: Point, depth: int = DEFAULT_DEPTH, tol_rel: float = DEFAULT_TOL,
                      h: float = DEFAULT_H) -> int:
    return int(numerical_rank(lie_basis_matrix(F, p.coords, depth, h), tol_rel)[0])


@dataclass
class RankReport:
    samples: int
    depth: int
    min_rank: int
    max_rank: int
    full_rank_everywhere: bool
    ranks: list[int]
    dim: int

    def to_json(self) -> dict:
        return {
            "samples": self.samples,
            "depth": self.depth,
            "dim": self.dim,
            "min_rank": self.min_rank,
            "max_rank": self.max_rank,
            "full_rank_everywhere": self.full_rank_everywhere,
            "ranks": self.ranks,
        }


def krener_rank_test(F: FieldFamily, samples: int, depth: int, rng: RandomStream,
                     tol_rel: float = DEFAULT_TOL, h: float = DEFAULT_H) -> RankReport:
    """Bracket-generated rank at volume-uniform random points."""
    m = F.manifold
    require_compact(m)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    X = random_points(m, rng, samples)
    ranks = numerical_rank(lie_basis_matrix(F, X, depth, h), tol_rel).astype(int)
    lo, hi = int(ranks.min()), int(ranks.max())
    return RankReport(samples, depth, lo, hi, lo == m.dim, ranks.tolist(), m.dim)


class FoliatedFrame:
    """Projector onto D_Lie(F) at each point, shared by the N frame fields.

    Field i of the frame is P(p) e_i, so sum_i (X_i f) X_i = P grad f and
    sum_i (X_i f)^2 = |P grad f|^2 by P^2 = P = P^T. The rank is measured at
    every evaluation point; with ``expected_rank`` set, any other rank raises
    RankCollapse.
    """

    def __init__(self, family: FieldFamily, depth: int = DEFAULT_DEPTH, h: float = DEFAULT_H,
                 tol_rel: float = DEFAULT_TOL, expected_rank: int | None = None):
        _check_h(h)
        self.family = family
        self.depth = depth
        self.h = h
        self.tol_rel = tol_rel
        self.expected_rank = expected_rank
        self.manifold = family.manifold
        words, ends = bracket_words(len(family.members), depth)
        self.left = np.array([a for a, _ in words], dtype=np.int64)
        self.right = np.array([b for _, b in words], dtype=np.int64)
        self.level_end = np.array(ends, dtype=np.int64)
        self.terms, self.nterms = pack_family(family.members)

    def projectors(self, X) -> tuple[np.ndarray, np.ndarray]:
        m = self.manifold
        X = _as_batch(X, m.ambient_dim)
        Ps = np.empty((X.shape[0], m.ambient_dim, m.ambient_dim))
        ranks = np.empty(X.shape[0], dtype=np.int64)
        K.projector_batch(m.code, self.terms, self.nterms, self.left, self.right, self.level_end,
                          m.dim, self.h, self.tol_rel, X, Ps, ranks)
        if self.expected_rank is not None and np.any(ranks != self.expected_rank):
            bad = int(np.argmax(ranks != self.expected_rank))
            raise RankCollapse(
                f"distribution rank {int(ranks[bad])} at {X[bad].tolist()}, expected {self.expected_rank}"
            )
        return Ps, ranks


class FoliatedFrameField(VectorField):
    def __init__(self, frame: FoliatedFrame, i: int):
        self.frame = frame
        self.i = i
        self.manifold = frame.manifold

    def ambient(self, X) -> np.ndarray:
        Ps, _ = self.frame.projectors(X)
        return Ps[:, :, self.i].copy()

    def __repr__(self) -> str:
        return f"FoliatedFrameField(i={self.i}, depth={self.frame.depth})"


def foliated_frame(F: FieldFamily, depth: int = DEFAULT_DEPTH, h: float = DEFAULT_H,
                   tol_rel: float = DEFAULT_TOL, expected_rank: int | None = None) -> FieldFamily:
    """N driftless fields whose span at p is D_Lie(F)(p), one per ambient axis."""
    frame = FoliatedFrame(F, depth, h, tol_rel, expected_rank)
    fields = [FoliatedFrameField(frame, i) for i in range(F.manifold.ambient_dim)]
    return FieldFamily(fields, drift=None, frame=frame)


# -- scalar test functions ---------------------------------------------------


class ScalarField:
    """Smooth test function on a manifold, evaluated through its ambient formula."""

    def values(self, X) -> np.ndarray:
        raise NotImplementedError

    def grad(self, X) -> np.ndarray:
        raise NotImplementedError

    def values_extended(self, X) -> np.ndarray:
        """Values in the widest float type available, for difference quotients.

        Second differences divide by h^2, so the last-bit rounding of float64 values
        survives into the result at the 1e-10 level. Subclasses whose evaluation
        loses digits override this; the default is plain ``values``.
        """
        return self.values(X)

    @property
    def label(self) -> str:
        raise NotImplementedError

    def __call__(self, p) -> float:
        x = p.coords if isinstance(p, Point) else np.asarray(p, dtype=float)
        return float(self.values(x[None])[0])

    def __add__(self, other: ScalarField) -> ScalarField:
        return LinearCombo(((1.0, self), (1.0, other)))

    def __sub__(self, other: ScalarField) -> ScalarField:
        return LinearCombo(((1.0, self), (-1.0, other)))

    def __rsub__(self, c: float) -> ScalarField:
        return LinearCombo(((1.0, Constant(float(c))), (-1.0, self)))

    def __mul__(self, c: float) -> ScalarField:
        return LinearCombo(((float(c), self),))

    __rmul__ = __mul__


@dataclass(frozen=True)
class TorusTrig(ScalarField):
    """trig(2 pi (k1 x + k2 y)) with trig = sin or cos."""

    k1: int
    k2: int
    phase: str = "sin"

    def __post_init__(self):
        if self.phase not in ("sin", "cos"):
            raise ValueError("phase must be 'sin' or 'cos'")

    def _arg(self, X):
        # reduce each product mod 1 before scaling by 2 pi: for |arg| up to ~40 the
        # rounding of the unreduced argument dominates nested difference quotients
        X = _as_batch(X, 2)
        a = self.k1 * X[:, 0]
        b = self.k2 * X[:, 1]
        t = (a - np.round(a)) + (b - np.round(b))
        return 2.0 * np.pi * (t - np.round(t))

    def values(self, X) -> np.ndarray:
        a = self._arg(X)
        return np.sin(a) if self.phase == "sin" else np.cos(a)

    def values_extended(self, X) -> np.ndarray:
        X = _as_batch(X, 2).astype(np.longdouble)
        t = self.k1 * X[:, 0] + self.k2 * X[:, 1]
        a = _TWO_PI_EXT * (t - np.round(t))
        return np.sin(a) if self.phase == "sin" else np.cos(a)

    def grad(self, X) -> np.ndarray:
        a = self._arg(X)
        d = np.cos(a) if self.phase == "sin" else -np.sin(a)
        return 2.0 * np.pi * d[:, None] * np.array([self.k1, self.k2], dtype=float)

    @property
    def label(self) -> str:
        return f"{self.phase}({self.k1},{self.k2})"


@dataclass(frozen=True)
class AmbientMonomial(ScalarField):
    """prod_i x_i^powers[i]; powers has one entry per ambient coordinate."""

    powers: tuple[int, ...]

    def values(self, X) -> np.ndarray:
        X = _as_batch(X, len(self.powers))
        return np.prod(X ** np.array(self.powers), axis=1)

    def grad(self, X) -> np.ndarray:
        X = _as_batch(X, len(self.powers))
        pw = np.array(self.powers)
        g = np.zeros_like(X)
        for i, k in enumerate(pw):
            if k == 0:
                continue
            q = pw.copy()
            q[i] -= 1
            g[:, i] = k * np.prod(X ** q, axis=1)
        return g

    @property
    def label(self) -> str:
        parts = [f"x{i + 1}" + (f"^{k}" if k > 1 else "") for i, k in enumerate(self.powers) if k]
        return "*".join(parts) or "1"


@dataclass(frozen=True)
class Constant(ScalarField):
    c: float

    def values(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        n = X.shape[0] if X.ndim == 2 else 1
        return np.full(n, self.c)

    def grad(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.zeros((X.shape[0] if X.ndim == 2 else 1, X.shape[-1]))

    @property
    def label(self) -> str:
        return f"{self.c:g}"


@dataclass(frozen=True)
class LinearCombo(ScalarField):
    parts: tuple[tuple[float, ScalarField], ...]

    def values(self, X) -> np.ndarray:
        return sum(c * f.values(X) for c, f in self.parts)

    def values_extended(self, X) -> np.ndarray:
        return sum(c * f.values_extended(X) for c, f in self.parts)

    def grad(self, X) -> np.ndarray:
        return sum(c * f.grad(X) for c, f in self.parts)

    @property
    def label(self) -> str:
        out = ""
        for c, f in self.parts:
            sign = "-" if c < 0 else "+"
            mag = abs(c)
            body = f.label if mag == 1.0 else f"{mag:g}*{f.label}"
            out += (f" {sign} " if out else ("-" if c < 0 else "")) + body
        return out


def torus_battery(kmax: int = 3) -> list[TorusTrig]:
    """sin and cos modes with |k1|, |k2| <= kmax, one representative per +-k pair."""
    out = []
    for k1 in range(0, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            if k1 == 0 and k2 <= 0:
                continue
            out.append(TorusTrig(k1, k2, "sin"))
            out.append(TorusTrig(k1, k2, "cos"))
    return out


def sphere_battery(n: int = 2) -> list[ScalarField]:
    """x_i, x_i x_j (i < j) and 1 - x1^2 on S^n."""
    N = n + 1
    fns: list[ScalarField] = []
    for i in range(N):
        p = [0] * N
        p[i] = 1
        fns.append(AmbientMonomial(tuple(p)))
    for i, j in itertools.combinations(range(N), 2):
        p = [0] * N
        p[i] += 1
        p[j] += 1
        fns.append(AmbientMonomial(tuple(p)))
    sq = [0] * N
    sq[0] = 2
    fns.append(1.0 - AmbientMonomial(tuple(sq)))
    return fns
