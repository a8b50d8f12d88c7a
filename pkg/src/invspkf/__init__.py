"""Forward and inverse sigma-point Kalman filters.

The attacker runs a cubature, Gauss-Hermite quadrature or unscented Kalman
filter on its own observations; the defender runs an inverse filter that
recovers the attacker's estimate from its noisy actions.
"""
from .belief import GaussianBelief
from .config import ExperimentConfig, load_config, parse_config
from .errors import ConfigError, InvSPKFError, NumericalError
from .evaluation import (
    BoundFit,
    FisherInfo,
    check_exponential_bound,
    fit_exponential_bound,
    monte_carlo,
    rcrlb_forward_step,
    rcrlb_inverse_step,
    run_coupled_experiment,
)
from .forward import forward_step, measurement_update, time_update
from .inverse import (
    InverseFilterState,
    forward_transition,
    inverse_step,
    make_ickf,
    make_inverse,
    make_iqkf,
    make_iukf,
    sigma_star_update,
)
from .models import StateSpaceModel, coordinated_turn_model, linear_model, lorenz_model, simulate_trajectory
from .points import PointRule, PointSet

__version__ = "0.1.0"
