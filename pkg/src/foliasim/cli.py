"""Command-line front end.

    foliasim <command> --scenario NAME [scenario params] --seed N [budgets] [outputs]

Reports go to stdout (or --out) as JSON; diagnostics go to stderr, errors as a
single JSON line {"error": CODE, "message": ...}. Exit codes: 0 success, 1 bad
config or input, 2 numerical failure, 3 an Inconclusive verdict under --strict.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, fields as dc_fields
from typing import Any, Sequence

import numpy as np

from .dynamics import generator_apply_batch, reach_sample, simulate_sde
from .errors import ConfigError, FoliasimError
from .histogram import OccupationHistogram
from .manifold import CellGrid, constraint_residual, random_group_point
from .measure import (
    Verdict,
    check_invariance,
    coverage_verdict,
    ergodic_constancy_test,
    occupation_measure,
    support_estimate,
    verify_equivalence,
)
from .rng import RandomStream
from .scenarios import SCENARIO_NAMES, Budgets, Scenario, bracket_relation_errors, build_scenario, list_scenarios
from .vectorfield import (
    DEFAULT_H,
    DEFAULT_TOL,
    Constant,
    krener_rank_test,
    lie_basis_matrix,
    numerical_rank,
    sphere_battery,
    torus_battery,
)

COMMANDS = ("rank", "reach", "sde", "occupation", "invariance", "harmonic", "verify", "list-scenarios")
BUDGET_KEYS = tuple(f.name for f in dc_fields(Budgets))
SCENARIO_PARAM_KEYS = ("a", "m", "n", "rational")


@dataclass
class RunConfig:
    command: str
    scenario: str | None = None
    params: dict = field(default_factory=dict)
    seed: int | None = None
    budgets: dict = field(default_factory=dict)
    depth: int | None = None
    samples: int = 100
    h: float = DEFAULT_H
    tol: float = DEFAULT_TOL
    record_stride: int = 1
    kmax: int = 3
    quad_res: tuple[int, int] | None = None
    out: str | None = None
    hist: str | None = None
    heatmap: str | None = None
    strict: bool = False
    workers: int = 1
    quiet: bool = False

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command == "list-scenarios":
            return
        if self.scenario is None:
            raise ConfigError("--scenario is required")
        if self.scenario not in SCENARIO_NAMES:
            from .errors import UnknownScenario
            raise UnknownScenario(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIO_NAMES)}")
        if self.seed is None:
            raise ConfigError("--seed is required; runs are never seeded from the clock")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        unknown = set(self.budgets) - set(BUDGET_KEYS)
        if unknown:
            raise ConfigError(f"unknown budget fields {sorted(unknown)}")
        for k, v in self.budgets.items():
            if k == "grid":
                if len(v) != 2 or min(v) < 1:
                    raise ConfigError("grid must be two positive integers")
            elif k == "burn_in":
                if v is not None and not (math.isfinite(v) and v >= 0):
                    raise ConfigError("burn_in must be nonnegative")
            elif not (math.isfinite(v) and v > 0):
                raise ConfigError(f"budget {k} must be positive, got {v}")
        for k in ("samples", "record_stride", "kmax", "workers"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        if self.depth is not None and self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if not 0 < self.h <= 1e-2:
            raise ConfigError("h must lie in (0, 1e-2]")
        if not 0 < self.tol < 1:
            raise ConfigError("tol must lie in (0, 1)")
        if self.quad_res is not None and (len(self.quad_res) != 2 or min(self.quad_res) < 1):
            raise ConfigError("quad_res must be two positive integers")

    def to_json(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dc_fields(self)}
        d["params"] = dict(self.params)
        d["budgets"] = {k: (list(v) if k == "grid" else v) for k, v in self.budgets.items()}
        d["quad_res"] = None if self.quad_res is None else list(self.quad_res)
        return d

    @classmethod
    def from_json(cls, d: dict) -> RunConfig:
        if not isinstance(d, dict):
            raise ConfigError("a config must be a JSON object")
        names = {f.name for f in dc_fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        if "command" not in d:
            raise ConfigError("config needs a command")
        d = dict(d)
        try:
            if "budgets" in d:
                b = dict(d["budgets"])
                if "grid" in b:
                    b["grid"] = tuple(int(r) for r in b["grid"])
                for k, v in b.items():
                    if k not in ("grid", "burn_in") or (k == "burn_in" and v is not None):
                        b[k] = int(v) if k in ("n_paths", "replicas") else float(v)
                d["budgets"] = b
            if d.get("quad_res") is not None:
                d["quad_res"] = tuple(int(r) for r in d["quad_res"])
            if d.get("seed") is not None:
                if isinstance(d["seed"], bool) or not isinstance(d["seed"], int):
                    raise ConfigError("seed must be an integer")
            return cls(**d)
        except (TypeError, ValueError) as e:
            if isinstance(e, FoliasimError):
                raise
            raise ConfigError(f"malformed config: {e}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise ConfigError(message)


def _grid_arg(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _bool_arg(text: str) -> bool:
    t = text.lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError("expected true or false")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="foliasim", description="Density of accessible sets via diffusions: reach, occupation and ergodic probes.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON RunConfig; explicit flags override its fields")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    p.add_argument("--scenario")
    p.add_argument("--seed", type=int)
    sp = p.add_argument_group("scenario parameters")
    sp.add_argument("--a", type=float, help="torus_line slope")
    sp.add_argument("--m", type=int, help="torus_line numerator")
    sp.add_argument("--n", type=int, help="torus_line denominator, or sphere_height dimension")
    sp.add_argument("--rational", type=_bool_arg, help="torus_line rationality check (true/false)")
    bp = p.add_argument_group("budgets")
    bp.add_argument("--T", type=float)
    bp.add_argument("--dt", type=float)
    bp.add_argument("--burn-in", dest="burn_in", type=float)
    bp.add_argument("--n-paths", dest="n_paths", type=int)
    bp.add_argument("--horizon", type=float)
    bp.add_argument("--seg-duration", dest="seg_duration", type=float)
    bp.add_argument("--control-dt", dest="control_dt", type=float)
    bp.add_argument("--replicas", type=int)
    bp.add_argument("--T-ergodic", dest="T_ergodic", type=float)
    bp.add_argument("--dt-ergodic", dest="dt_ergodic", type=float)
    bp.add_argument("--grid", nargs=2, type=_grid_arg, metavar=("R0", "R1"))
    op = p.add_argument_group("options")
    op.add_argument("--depth", type=int, help="bracket depth (default: the scenario's)")
    op.add_argument("--samples", type=int, help="rank: number of sample points (default 100)")
    op.add_argument("--h", type=float, help="finite-difference step (default 1e-4)")
    op.add_argument("--tol", type=float, help="relative rank tolerance (default 1e-6)")
    op.add_argument("--record-stride", dest="record_stride", type=int)
    op.add_argument("--kmax", type=int, help="invariance: torus battery |k| bound (default 3)")
    op.add_argument("--quad-res", dest="quad_res", nargs=2, type=_grid_arg, metavar=("R0", "R1"))
    op.add_argument("--workers", type=int, help="threads for path-parallel estimators")
    out = p.add_argument_group("outputs")
    out.add_argument("--out", help="write the JSON report here instead of stdout")
    out.add_argument("--hist", help="histogram CSV path (reach, occupation, verify)")
    out.add_argument("--heatmap", help="histogram PGM path (reach, occupation, verify)")
    out.add_argument("--strict", action="store_true", default=None, help="exit 3 on any Inconclusive verdict")
    out.add_argument("--quiet", action="store_true", default=None, help="no progress lines on stderr")
    return p


def config_from_args(argv: Sequence[str]) -> tuple[RunConfig, bool]:
    ns = build_parser().parse_args(list(argv))
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                base = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {ns.config}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {ns.config} is not valid JSON: {e}") from None
        cfg = RunConfig.from_json(base)
        if cfg.command != ns.command:
            raise ConfigError(f"config is for command {cfg.command!r}, not {ns.command!r}")
    else:
        cfg = RunConfig(command=ns.command)
    if ns.scenario is not None:
        if ns.scenario != cfg.scenario:
            cfg.params = {}
        cfg.scenario = ns.scenario
    for k in SCENARIO_PARAM_KEYS:
        v = getattr(ns, k)
        if v is not None:
            cfg.params[k] = v
    if ns.seed is not None:
        cfg.seed = ns.seed
    for k in BUDGET_KEYS:
        v = getattr(ns, k)
        if v is not None:
            cfg.budgets[k] = tuple(v) if k == "grid" else v
    for k in ("depth", "samples", "h", "tol", "record_stride", "kmax", "workers", "out", "hist",
              "heatmap", "strict", "quiet"):
        v = getattr(ns, k)
        if v is not None:
            setattr(cfg, k, v)
    if ns.quad_res is not None:
        cfg.quad_res = tuple(ns.quad_res)
    cfg.validate()
    return cfg, ns.dump_config


# -- commands -----------------------------------------------------------------


def _budgets(sc: Scenario, cfg: RunConfig) -> Budgets:
    try:
        return sc.budgets.replace(**cfg.budgets)
    except FoliasimError as e:
        raise ConfigError(str(e)) from None


def _header(cfg: RunConfig, sc: Scenario | None) -> dict:
    h: dict[str, Any] = {"command": cfg.command}
    if sc is not None:
        h.update(scenario=sc.name, params=sc.params, manifold=sc.manifold.to_json(), seed=cfg.seed)
    return h


def _say(cfg: RunConfig, msg: str) -> None:
    if not cfg.quiet:
        print(f"[{cfg.command}] {msg}", file=sys.stderr, flush=True)


def _export(cfg: RunConfig, hist: OccupationHistogram | None) -> None:
    if hist is None:
        if cfg.hist or cfg.heatmap:
            raise ConfigError(f"command {cfg.command} produces no histogram")
        return
    if cfg.hist:
        with open(cfg.hist, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(hist.to_csv())
    if cfg.heatmap:
        with open(cfg.heatmap, "wb") as fh:
            fh.write(hist.to_pgm())


def cmd_list(cfg: RunConfig):
    return {"command": cfg.command, "scenarios": list_scenarios()}, None, []


def cmd_rank(cfg: RunConfig, sc: Scenario):
    rng = RandomStream(cfg.seed)
    depth = cfg.depth or sc.depth
    rep = _header(cfg, sc)
    if sc.manifold.compact:
        rr = krener_rank_test(sc.family, cfg.samples, depth, rng, cfg.tol, cfg.h).to_json()
    else:
        # no uniform law on a noncompact group: sample elements with bounded entries
        X = np.array([random_group_point(rng).coords for _ in range(cfg.samples)])
        ranks = numerical_rank(lie_basis_matrix(sc.family, X, depth, cfg.h), cfg.tol).astype(int)
        lo, hi = int(ranks.min()), int(ranks.max())
        d = sc.manifold.dim
        rr = {"samples": cfg.samples, "depth": depth, "dim": d, "min_rank": lo, "max_rank": hi,
              "full_rank_everywhere": lo == d, "ranks": ranks.tolist(), "sampling": "group entries in [-2, 2]"}
    rep["rank"] = rr
    rep["expected_rank"] = sc.expected_rank
    if sc.expected_rank is not None:
        rep["matches_expected"] = rr["min_rank"] == rr["max_rank"] == sc.expected_rank
    if sc.relations:
        rep["bracket_relations"] = bracket_relation_errors(sc, cfg.samples, rng.substream(1), cfg.h)
    return rep, None, []


def cmd_reach(cfg: RunConfig, sc: Scenario):
    sc.require_runnable()
    b = _budgets(sc, cfg)
    grid = CellGrid(sc.manifold, b.grid)
    _say(cfg, f"{b.n_paths} control paths, horizon {b.horizon:g}")
    hist = reach_sample(sc.control_system, sc.start, b.n_paths, b.horizon, b.control_dt, grid,
                        RandomStream(cfg.seed), b.seg_duration, cfg.workers)
    s = hist.summary()
    v = coverage_verdict(s["coverage_fraction"])
    rep = _header(cfg, sc)
    rep.update(budgets=b.to_json(), start=sc.start.coords.tolist(), histogram=s, verdict=str(v))
    return rep, hist, [v]


def cmd_sde(cfg: RunConfig, sc: Scenario):
    sys_ = sc.sde_system
    b = _budgets(sc, cfg)
    _say(cfg, f"T={b.T:g} dt={b.dt:g}")
    tr = simulate_sde(sys_, sc.start, b.T, b.dt, RandomStream(cfg.seed), cfg.record_stride)
    rep = _header(cfg, sc)
    rep.update(
        T=b.T, dt=b.dt,
        max_constraint_residual=float(np.max(constraint_residual(sc.manifold, tr.points))),
        final=tr.points[-1].tolist(),
        trajectory=tr.to_json(),
    )
    return rep, None, []


def cmd_occupation(cfg: RunConfig, sc: Scenario):
    sys_ = sc.sde_system
    b = _budgets(sc, cfg)
    grid = CellGrid(sc.manifold, b.grid)
    _say(cfg, f"one path, T={b.T:g} dt={b.dt:g}")
    hist = occupation_measure(sys_, sc.start, b.T, b.dt, grid, RandomStream(cfg.seed), b.burn_in,
                              cfg.record_stride)
    sup = support_estimate(hist)
    v = coverage_verdict(sup.coverage_fraction)
    rep = _header(cfg, sc)
    rep.update(budgets=b.to_json(), start=sc.start.coords.tolist(), histogram=hist.summary(),
               support=sup.to_json(), verdict=str(v))
    if sc.markers:
        # mass near the markers of S: caps where |<x, marker>| > 0.9
        w = hist.weights
        cen = grid.centers()
        rep["marker_mass"] = {
            str(p.coords.tolist()): float(w[cen @ p.coords > 0.9].sum()) for p in sc.markers
        }
    return rep, hist, [v]


def cmd_invariance(cfg: RunConfig, sc: Scenario):
    sys_ = sc.sde_system
    if sc.manifold.kind == "torus2":
        fns = torus_battery(cfg.kmax)
        qr = cfg.quad_res or (256, 256)
    else:
        fns = sphere_battery(sc.manifold.n)
        qr = cfg.quad_res or (128, 256)
    dens = sc.density if sc.density is not None else Constant(1.0)
    rep = _header(cfg, sc)
    rep["density"] = dens.label if sc.density is not None else "uniform"
    rep["invariance"] = check_invariance(dens, sys_, fns, qr, cfg.h).to_json()
    return rep, None, []


def cmd_harmonic(cfg: RunConfig, sc: Scenario):
    sys_ = sc.sde_system
    b = _budgets(sc, cfg)
    _say(cfg, f"{len(sc.constancy_starts)} starts x {b.replicas} replicas, T={b.T_ergodic:g}")
    erg = ergodic_constancy_test(sys_, sc.constancy_battery, sc.constancy_starts, b.replicas,
                                 b.T_ergodic, b.dt_ergodic, RandomStream(cfg.seed), workers=cfg.workers)
    rep = _header(cfg, sc)
    rep.update(budgets=b.to_json(), constancy=erg.to_json())
    if sc.harmonic_witness is not None:
        pts = np.array([p.coords for p in sc.markers] + [sc.start.coords])
        Lf = generator_apply_batch(sys_, [sc.harmonic_witness], pts, cfg.h)[0]
        rep["witness"] = {
            "function": sc.harmonic_witness.label,
            "generator_at_markers": {str(p.coords.tolist()): float(v) for p, v in zip(sc.markers, Lf)},
            "generator_at_start": float(Lf[-1]),
        }
    return rep, None, [erg.verdict]


def cmd_verify(cfg: RunConfig, sc: Scenario):
    b = _budgets(sc, cfg)
    rep_ = verify_equivalence(sc, RandomStream(cfg.seed), b, cfg.workers, lambda m: _say(cfg, m))
    rep = _header(cfg, sc)
    rep.update(rep_.to_json())
    rep["scenario"] = sc.name
    rep["expected"] = sc.expected
    if sc.expected is not None:
        got = {"reach": str(rep_.reach_verdict), "support": str(rep_.support_verdict),
               "constancy": str(rep_.constancy_verdict)}
        rep["matches_expected"] = got == sc.expected
    return rep, rep_.histogram, list(rep_.verdicts)


_DISPATCH = {
    "rank": cmd_rank,
    "reach": cmd_reach,
    "sde": cmd_sde,
    "occupation": cmd_occupation,
    "invariance": cmd_invariance,
    "harmonic": cmd_harmonic,
    "verify": cmd_verify,
}


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _fail(code: str, message: str) -> None:
    print(json.dumps({"error": code, "message": message}), file=sys.stderr, flush=True)


def execute(cfg: RunConfig) -> int:
    if cfg.command == "list-scenarios":
        rep, hist, verdicts = cmd_list(cfg)
    else:
        sc = build_scenario(cfg.scenario, cfg.params)
        rep, hist, verdicts = _DISPATCH[cfg.command](cfg, sc)
    _export(cfg, hist)
    text = _dumps(rep)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()
    if cfg.strict and Verdict.INCONCLUSIVE in verdicts:
        _fail("E_INCONCLUSIVE", "a verdict is Inconclusive and --strict is set")
        return 3
    return 0


def run(argv: Sequence[str]) -> int:
    try:
        cfg, dump = config_from_args(argv)
        if dump:
            sys.stdout.write(_dumps(cfg.to_json()))
            return 0
        return execute(cfg)
    except FoliasimError as e:
        _fail(e.code, str(e))
        return e.exit_code
    except OSError as e:
        _fail("E_IO", f"{e.filename or ''}: {e.strerror or e}".strip(": "))
        return 1
    except ValueError as e:
        _fail("E_INVALID", str(e))
        return 1
    except ArithmeticError as e:
        _fail("E_NUMERIC", str(e))
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
