"""Whittle-index Q-learning for restless bandits.

The package splits into five layers:

``arms``         arm models, feature maps, builtin instances, TOML loaders
``exact``        average-reward DP solver and the bisection index oracle
``learners``     two-timescale Q-learning (tabular, linear, neural) over
                 compiled or pure-numpy kernels
``diagnostics``  Lyapunov tracking, linearization gap, Lipschitz probes,
                 mixing/contraction constants
``harness``      seeded Monte-Carlo experiments, CSV/JSON/SVG artifacts,
                 and the ``whittleq`` command-line tool
"""

from .arms import (ArmModel, FeatureMap, circulant_instance, load_arm,
                   load_feature_map, make_arm, one_hot_features, random_arm)
from .diagnostics import (C0Estimate, DiagnosticsRecord, LipschitzReport,
                          ReferenceSolution, c0_estimate, converged,
                          kappa_estimate, linearization_gap, lipschitz_probe,
                          lyapunov, measure_run, mixing_time_estimate,
                          reference_solution, span_seminorm, y_of_theta)
from .errors import (AssumptionViolationError, BracketError, ConfigError,
                     DivergenceError, MissingDataError, NonConvergenceError,
                     ReferenceUnavailableError, ValidationError,
                     WhittleqError)
from .exact import (DpSolution, WhittleTable, relative_value_iteration,
                    whittle_index_exact, whittle_table)
from .harness import (AlgorithmParams, DiagnosticsPlan, ExperimentConfig,
                      RunManifest, config_digest, load_config, resolve_arm,
                      run_experiment)
from .kernels import backend_name
from .learners import (IndexTable, StepSchedule, TrainConfig, TrainResult,
                       epsilon_greedy, prepare_run, top_k_policy, train_all,
                       train_index)
from .nets import (TwoLayerReluNet, f_table, forward, forward_linearized,
                   grad, init_net, load_net, save_net, with_theta)

__version__ = "0.1.0"


def __getattr__(name):
    # emit_plots pulls in matplotlib; defer that cost until someone plots.
    if name == "emit_plots":
        from .plots import emit_plots
        return emit_plots
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

__all__ = [
    "ArmModel", "FeatureMap", "circulant_instance", "load_arm",
    "load_feature_map", "make_arm", "one_hot_features", "random_arm",
    "C0Estimate", "DiagnosticsRecord", "LipschitzReport",
    "ReferenceSolution", "c0_estimate", "converged", "kappa_estimate",
    "linearization_gap", "lipschitz_probe", "lyapunov", "measure_run",
    "mixing_time_estimate", "reference_solution", "span_seminorm",
    "y_of_theta",
    "AssumptionViolationError", "BracketError", "ConfigError",
    "DivergenceError", "MissingDataError", "NonConvergenceError",
    "ReferenceUnavailableError", "ValidationError", "WhittleqError",
    "DpSolution", "WhittleTable", "relative_value_iteration",
    "whittle_index_exact", "whittle_table",
    "AlgorithmParams", "DiagnosticsPlan", "ExperimentConfig", "RunManifest",
    "config_digest", "load_config", "resolve_arm", "run_experiment",
    "backend_name",
    "IndexTable", "StepSchedule", "TrainConfig", "TrainResult",
    "epsilon_greedy", "prepare_run", "top_k_policy", "train_all",
    "train_index",
    "TwoLayerReluNet", "f_table", "forward", "forward_linearized", "grad",
    "init_net", "load_net", "save_net", "with_theta",
    "emit_plots",
    "__version__",
]
