"""Density of accessible sets of control systems, probed with diffusions on compact manifolds."""

from .dynamics import (
    ControlSignal,
    ControlSystem,
    SDESystem,
    Trajectory,
    brownian_motion,
    foliated_bm,
    generator_apply,
    integrate_control,
    reach_sample,
    sde_step_heun,
    simulate_sde,
)
from .errors import (
    BadParams,
    ConfigError,
    DegenerateInput,
    FoliasimError,
    NonCompactManifold,
    NumericalBlowup,
    ParseError,
    RankCollapse,
    UnknownScenario,
)
from .histogram import OccupationHistogram
from .manifold import SL2, TORUS2, CellGrid, ManifoldId, Point, TangentVector, retract, sphere, tangent_project
from .measure import (
    EquivalenceReport,
    ErgodicReport,
    InvarianceReport,
    SupportEstimate,
    Verdict,
    check_invariance,
    ergodic_average,
    ergodic_constancy_test,
    occupation_measure,
    support_consistency_test,
    support_estimate,
    verify_equivalence,
)
from .rng import RandomStream
from .scenarios import Budgets, Scenario, build_scenario, list_scenarios
from .vectorfield import (
    FieldFamily,
    RankReport,
    TorusExpr,
    VectorField,
    distribution_rank,
    foliated_frame,
    krener_rank_test,
    lie_algebra_basis,
    lie_bracket,
)

__version__ = "0.1.0"
