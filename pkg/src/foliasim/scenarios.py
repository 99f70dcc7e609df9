"""Ready-to-run example systems with recommended budgets and expected verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields as dc_fields
from fractions import Fraction
from typing import Any, Callable

import numpy as np

from .dynamics import ControlSystem, SDESystem, brownian_motion, foliated_bm
from .errors import BadParams, NonCompactManifold, UnknownScenario
from .manifold import SL2, TORUS2, ManifoldId, Point, random_group_point, sphere
from .rng import RandomStream
from .vectorfield import (
    DEFAULT_H,
    AmbientMonomial,
    FieldFamily,
    ScalarField,
    SL2LeftInvariant,
    SphereCoordProjection,
    SphereHeightGradient,
    TorusExpr,
    TorusTrig,
    VectorField,
    lie_bracket,
)

__all__ = [
    "Budgets",
    "Scenario",
    "SCENARIO_NAMES",
    "build_scenario",
    "list_scenarios",
    "rational_slope",
    "bracket_relation_errors",
]

RATIONAL_TOL = 1e-12
MAX_DENOMINATOR = 1000


@dataclass(frozen=True)
class Budgets:
    """Simulation budgets. burn_in None means 10% of T."""

    grid: tuple[int, int] = (32, 32)
    T: float = 5.0e4
    dt: float = 0.01
    burn_in: float | None = None
    n_paths: int = 200
    horizon: float = 100.0
    seg_duration: float = 1.0
    control_dt: float = 0.01
    replicas: int = 8
    T_ergodic: float = 2.0e4
    dt_ergodic: float = 0.05

    def __post_init__(self):
        g = tuple(int(r) for r in self.grid)
        object.__setattr__(self, "grid", g)
        if len(g) != 2 or min(g) < 1:
            raise BadParams("grid must be two positive integers")
        for name in ("T", "dt", "horizon", "seg_duration", "control_dt", "T_ergodic", "dt_ergodic"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise BadParams(f"budget {name} must be positive, got {v}")
        if self.n_paths < 1:
            raise BadParams("n_paths must be >= 1")
        if self.replicas < 2:
            raise BadParams("replicas must be >= 2")
        if self.burn_in is not None and not 0.0 <= self.burn_in < self.T:
            raise BadParams("burn_in must lie in [0, T)")

    def replace(self, **changes) -> Budgets:
        d = {f.name: getattr(self, f.name) for f in dc_fields(self)}
        unknown = set(changes) - set(d)
        if unknown:
            raise BadParams(f"unknown budget fields: {sorted(unknown)}")
        d.update({k: v for k, v in changes.items() if v is not None or k == "burn_in"})
        return Budgets(**d)

    def to_json(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dc_fields(self)}
        d["grid"] = list(self.grid)
        return d


@dataclass
class Scenario:
    name: str
    params: dict
    manifold: ManifoldId
    family: FieldFamily
    control_box: np.ndarray
    start: Point
    budgets: Budgets
    description: str
    sde_factory: Callable[[], SDESystem] | None = None
    expected: dict | None = None
    expected_rank: int | None = None
    depth: int = 2
    density: ScalarField | None = None
    harmonic_witness: ScalarField | None = None
    markers: tuple[Point, ...] = ()
    constancy_battery: tuple[ScalarField, ...] = ()
    constancy_starts: tuple[Point, ...] = ()
    bracket_only: bool = False
    # [fields[i], fields[j]] = sum c * fields[k], as (i, j, ((c, k), ...))
    relations: tuple = ()
    _sde: SDESystem | None = field(default=None, repr=False)

    @property
    def control_system(self) -> ControlSystem:
        return ControlSystem(self.family, self.control_box)

    @property
    def sde_system(self) -> SDESystem:
        self.require_runnable()
        if self._sde is None:
            self._sde = self.sde_factory()
        return self._sde

    def require_runnable(self) -> None:
        if self.bracket_only or not self.manifold.compact:
            raise NonCompactManifold(
                f"scenario {self.name} is bracket-check-only; simulations need a compact manifold"
            )

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "params": dict(self.params),
            "manifold": self.manifold.to_json(),
            "fields": [repr(f) for f in self.family.fields],
            "drift": None if self.family.drift is None else repr(self.family.drift),
            "start": self.start.coords.tolist(),
            "budgets": self.budgets.to_json(),
            "expected": self.expected,
            "expected_rank": self.expected_rank,
            "depth": self.depth,
            "density": None if self.density is None else self.density.label,
            "harmonic_witness": None if self.harmonic_witness is None else self.harmonic_witness.label,
            "markers": [p.coords.tolist() for p in self.markers],
            "bracket_only": self.bracket_only,
            "description": self.description,
        }


def _verdicts(v: str) -> dict:
    return {"reach": v, "support": v, "constancy": v}


def rational_slope(a: float) -> tuple[int, int] | None:
    """(m, n) with a = m/n, n >= 1 and n <= 1000, or None when a is not such a fraction."""
    fr = Fraction(a).limit_denominator(MAX_DENOMINATOR)
    if abs(float(fr) - a) <= RATIONAL_TOL:
        return fr.numerator, fr.denominator
    return None


def _take(params: dict, schema: dict, name: str) -> dict:
    unknown = set(params) - set(schema)
    if unknown:
        raise BadParams(f"{name}: unknown parameters {sorted(unknown)}; accepted: {sorted(schema)}")
    out = {}
    for key, spec in schema.items():
        v = params.get(key, spec["default"])
        if v is None:
            if spec.get("required"):
                raise BadParams(f"{name}: parameter {key} is required")
            out[key] = None
            continue
        kind = spec["type"]
        try:
            if kind == "float":
                if isinstance(v, bool):
                    raise TypeError
                v = float(v)
                if not math.isfinite(v):
                    raise ValueError
            elif kind == "int":
                if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                    raise TypeError
                v = int(v)
            elif kind == "bool":
                if not isinstance(v, bool):
                    raise TypeError
        except (TypeError, ValueError):
            raise BadParams(f"{name}: parameter {key} must be a finite {kind}, got {v!r}") from None
        out[key] = v
    return out


def _torus_line(p: dict) -> Scenario:
    a = p["a"]
    detected = rational_slope(a)
    m, n = p["m"], p["n"]
    if (m is None) != (n is None):
        raise BadParams("torus_line: give both m and n or neither")
    if m is not None:
        if n < 1:
            raise BadParams("torus_line: n must be >= 1")
        if abs(m / n - a) > RATIONAL_TOL:
            raise BadParams(f"torus_line: m/n = {m}/{n} does not equal a = {a!r}")
        g = math.gcd(m, n)
        m, n = m // g, n // g
        detected = (m, n)
    if p["rational"] is not None and p["rational"] != (detected is not None):
        raise BadParams(
            f"torus_line: rational={p['rational']} contradicts a = {a!r}"
            f" ({'rational' if detected else 'not a fraction with denominator <= 1000'})"
        )
    X = TorusExpr(f"1*dx {'-' if a < 0 else '+'} {abs(a)!r}*dy")
    fam = FieldFamily([X])
    params = {"a": a, "rational": detected is not None}
    if detected is not None:
        m, n = detected
        params.update(m=m, n=n)
        # f = sin(2 pi (m x - n y)) is conserved along the leaves; 0 at the origin, 1 at the second start
        f = TorusTrig(m, -n, "sin")
        second = Point(TORUS2, [(1.0 / (4 * m)) % 1.0, 0.0]) if m != 0 else Point(TORUS2, [0.0, 1.0 - 1.0 / (4 * n)])
        density = 0.5 - TorusTrig(2 * m, -2 * n, "cos") * 0.5
        expected = _verdicts("NotDense")
        desc = f"torus line field d/dx + a d/dy, rational a = {m}/{n}: closed leaves, invariant density sin^2(2 pi ({m}x - {n}y))"
    else:
        f = TorusTrig(1, -2, "sin")
        second = Point(TORUS2, [0.25, 0.0])
        density = None
        expected = _verdicts("Dense")
        desc = "torus line field d/dx + a d/dy, irrational a: dense leaves"
    return Scenario(
        name="torus_line",
        params=params,
        manifold=TORUS2,
        family=fam,
        control_box=np.array([[-1.0, 1.0]]),
        start=Point(TORUS2, [0.1, 0.0]),
        budgets=Budgets(),
        description=desc,
        sde_factory=lambda: SDESystem(fam),
        expected=expected,
        expected_rank=1,
        depth=2,
        density=density,
        constancy_battery=(f,),
        constancy_starts=(Point(TORUS2, [0.0, 0.0]), second),
    )


def _torus_pair(p: dict) -> Scenario:
    fam = FieldFamily([TorusExpr("1*dx"), TorusExpr("1*dy")])
    return Scenario(
        name="torus_pair",
        params={},
        manifold=TORUS2,
        family=fam,
        control_box=np.array([[-1.0, 1.0]]),
        start=Point(TORUS2, [0.1, 0.0]),
        budgets=Budgets(T=1.0e4, T_ergodic=2.0e3, dt_ergodic=0.05),
        description="coordinate frame {d/dx, d/dy} on the torus driving flat Brownian motion",
        sde_factory=lambda: brownian_motion(TORUS2),
        expected=_verdicts("Dense"),
        expected_rank=2,
        depth=1,
        constancy_battery=(TorusTrig(1, 0, "sin"), TorusTrig(0, 1, "sin"), TorusTrig(1, -2, "sin")),
        constancy_starts=(Point(TORUS2, [0.0, 0.0]), Point(TORUS2, [0.25, 0.5])),
    )


def _torus_bracket(p: dict) -> Scenario:
    fam = FieldFamily([TorusExpr("1*dx"), TorusExpr("sin(1,0)*dy")])
    return Scenario(
        name="torus_bracket",
        params={},
        manifold=TORUS2,
        family=fam,
        control_box=np.array([[-1.0, 1.0]]),
        start=Point(TORUS2, [0.1, 0.0]),
        budgets=Budgets(T=1.0e4, T_ergodic=2.0e3, dt_ergodic=0.02),
        description="{d/dx, sin(2 pi x) d/dy}: rank 2 only through the bracket; leafwise Brownian motion of D_Lie(F)",
        sde_factory=lambda: foliated_bm(fam, depth=2, expected_rank=2),
        expected=_verdicts("Dense"),
        expected_rank=2,
        depth=2,
        constancy_battery=(TorusTrig(1, 0, "sin"), TorusTrig(0, 1, "sin"), TorusTrig(1, -2, "sin")),
        constancy_starts=(Point(TORUS2, [0.0, 0.0]), Point(TORUS2, [0.25, 0.5])),
    )


def _sphere_height(p: dict) -> Scenario:
    n = p["n"]
    if n < 2:
        raise BadParams("sphere_height: n must be >= 2")
    m = sphere(n)
    fam = FieldFamily([SphereHeightGradient(n)])

    def axis(i: int, s: float = 1.0) -> Point:
        x = np.zeros(n + 1)
        x[i] = s
        return Point(m, x)

    sq = [0] * (n + 1)
    sq[0] = 2
    x1 = [0] * (n + 1)
    x1[0] = 1
    tilt = np.zeros(n + 1)
    tilt[:2] = (0.8, 0.6)
    return Scenario(
        name="sphere_height",
        params={"n": n},
        manifold=m,
        family=fam,
        control_box=np.array([[-1.0, 1.0]]),
        start=axis(1),
        budgets=Budgets(grid=(16, 32), T=1.0e4, dt=1e-3, T_ergodic=1.0e3, dt_ergodic=1e-2),
        description="gradient of the height x1 on S^n as the single noise field; S is the two poles, where 1 - x1^2 is harmonic",
        sde_factory=lambda: SDESystem(fam),
        expected=None,
        expected_rank=None,
        depth=2,
        harmonic_witness=1.0 - AmbientMonomial(tuple(sq)),
        markers=(axis(0, 1.0), axis(0, -1.0)),
        constancy_battery=(AmbientMonomial(tuple(x1)),),
        constancy_starts=(Point(m, tilt), Point(m, tilt * np.r_[-1.0, np.ones(n)])),
    )


def _sphere_bm(p: dict) -> Scenario:
    m = sphere(2)
    fam = FieldFamily([SphereCoordProjection(2, i) for i in range(3)])
    return Scenario(
        name="sphere_bm",
        params={},
        manifold=m,
        family=fam,
        control_box=np.array([[-1.0, 1.0]]),
        start=Point(m, [1.0, 0.0, 0.0]),
        budgets=Budgets(grid=(16, 32), T=2.0e3, dt=0.01, T_ergodic=5.0e2, dt_ergodic=0.01),
        description="projected coordinate fields e_i - x_i x on S^2: Brownian motion of the round sphere",
        sde_factory=lambda: brownian_motion(m),
        expected=_verdicts("Dense"),
        expected_rank=2,
        depth=1,
        constancy_battery=(AmbientMonomial((1, 0, 0)), AmbientMonomial((0, 0, 1))),
        constancy_starts=(Point(m, [1.0, 0.0, 0.0]), Point(m, [-1.0, 0.0, 0.0])),
    )


def _sl2_frame(p: dict) -> Scenario:
    X = SL2LeftInvariant([[0.0, 1.0], [0.0, 0.0]])
    H = SL2LeftInvariant([[-0.5, 0.0], [0.0, 0.5]])
    Y = SL2LeftInvariant([[0.0, 0.0], [0.5, 0.0]])
    fam = FieldFamily([X, H, Y])
    return Scenario(
        name="sl2_frame",
        params={},
        manifold=SL2,
        family=fam,
        control_box=np.array([[-1.0, 1.0]]),
        start=Point(SL2, [1.0, 0.0, 0.0, 1.0]),
        budgets=Budgets(),
        description="left-invariant X=e, H=-h/2, Y=f/2 on SL(2,R) with [X,H]=X, [X,Y]=-H, [H,Y]=Y; bracket-only, no simulations",
        expected=None,
        expected_rank=3,
        depth=1,
        bracket_only=True,
        relations=((0, 1, ((1.0, 0),)), (0, 2, ((-1.0, 1),)), (1, 2, ((1.0, 2),))),
    )


_S: dict[str, dict[str, Any]] = {
    "torus_line": {
        "build": _torus_line,
        "params": {
            "a": {"type": "float", "default": 0.5, "required": True, "description": "slope of d/dx + a d/dy"},
            "rational": {"type": "bool", "default": None, "description": "optional check that a is a fraction"},
            "m": {"type": "int", "default": None, "description": "optional numerator, a = m/n"},
            "n": {"type": "int", "default": None, "description": "optional denominator, a = m/n"},
        },
    },
    "torus_pair": {"build": _torus_pair, "params": {}},
    "torus_bracket": {"build": _torus_bracket, "params": {}},
    "sphere_height": {
        "build": _sphere_height,
        "params": {"n": {"type": "int", "default": 2, "description": "sphere dimension (grids need n = 2)"}},
    },
    "sphere_bm": {"build": _sphere_bm, "params": {}},
    "sl2_frame": {"build": _sl2_frame, "params": {}},
}

SCENARIO_NAMES = tuple(_S)


def build_scenario(name: str, params: dict | None = None) -> Scenario:
    if name not in _S:
        raise UnknownScenario(f"unknown scenario {name!r}; choose from {', '.join(SCENARIO_NAMES)}")
    entry = _S[name]
    return entry["build"](_take(dict(params or {}), entry["params"], name))


def list_scenarios() -> list[dict]:
    out = []
    for name, entry in _S.items():
        sc = entry["build"](_take({}, entry["params"], name))
        out.append({
            "name": name,
            "params": {k: {kk: vv for kk, vv in v.items()} for k, v in entry["params"].items()},
            "defaults": {k: v["default"] for k, v in entry["params"].items()},
            "manifold": str(sc.manifold),
            "bracket_only": sc.bracket_only,
            "expected": sc.expected,
            "description": sc.description,
        })
    return out


def bracket_relation_errors(sc: Scenario, samples: int, rng: RandomStream,
                            h: float = DEFAULT_H) -> dict:
    """Max coordinate error of each declared bracket relation over sampled points."""
    if not sc.relations:
        raise BadParams(f"scenario {sc.name} declares no bracket relations")
    if samples < 1:
        raise BadParams("samples must be >= 1")
    fs: list[VectorField] = sc.family.fields
    if sc.manifold == SL2:
        pts = [random_group_point(rng) for _ in range(samples)]
    else:
        from .manifold import random_point
        pts = [random_point(sc.manifold, rng) for _ in range(samples)]
    worst = {}
    for i, j, combo in sc.relations:
        err = 0.0
        for p in pts:
            got = lie_bracket(fs[i], fs[j], p, h).coords
            want = sum(c * fs[k].eval(p).coords for c, k in combo)
            err = max(err, float(np.max(np.abs(got - want))))
        worst[f"[{i},{j}]"] = err
    return {"samples": samples, "h": h, "max_error": max(worst.values()), "relations": worst}
