"""Risk-aware local trajectory planning for ground vehicles.

The package plans collision-free local trajectories for a polytopic
vehicle among static obstacles and moving obstacles with Gaussian
position uncertainty.  Moving obstacles are tracked with an EKF and
forecast as risk ellipses; collision avoidance enters the trajectory
NLP through Lagrangian-dual distance certificates, so converged plans
carry a proof of clearance rather than a sampled approximation.
"""

from .geometry import (
    GeometryError,
    Polytope,
    Pose2,
    RiskEllipse,
    distance_polytope_to_ellipse,
    distance_polytope_to_polytope,
    normalize_angle,
    transform_polytope,
)
from .nlp import (
    NonlinearProgram,
    SolveOptions,
    SolveResult,
    SolveStatus,
    check_gradients,
    solve,
)
from .planner import (
    ControlLimits,
    Planner,
    PlannerConfig,
    PlannerProblem,
    PlanningError,
    Trajectory,
    kinematic_step,
    planner_variants,
    rollout,
)
from .prediction import (
    NoiseSpec,
    ObstacleBelief,
    ObstacleState,
    ctrv_jacobian,
    ctrv_step,
    ekf_predict,
    ekf_update,
    forecast_risk_regions,
)
from .search import GridEnvironment, InitialPath, NoPathError, hybrid_a_star, resample_path
from .sim import Scenario, get_scenario, run_closed_loop, export_run
from .uncertainty import (
    DegenerateCovarianceError,
    GaussianPosition,
    confidence_scale,
    coverage_estimate,
    risk_ellipse,
)

__version__ = "0.1.0"
