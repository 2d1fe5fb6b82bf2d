"""Token-bucket constrained offloading of classification tasks from a weak
on-device model to a strong edge model."""

from .core import (Dataset, InputError, NaivePolicy, PolicyTable, Sample, ScaledBucket,
                   apply_policy, loss, parse_rational, reduce_bucket, step_bucket)
from .datasets import SynthParams, ingest, read_csv, read_jsonl, standard_fixture, synthesize
from .experiments import ExperimentSpec, kfold_eval, perturb_training, perturbation_study
from .mdp import (EmpiricalFG, NonConvergenceError, PolicySolver, build_fg, lower_bound_loss,
                  naive_threshold, solve_policy)
from .metric import (MetricMap, apply_metric_map, calibrate_temperature, entropy,
                     fit_metric_map)
from .multi import MultiConfig, grid_search_oversubscription, simulate_multi
from .sim import SimConfig, arrival_curve_violations, bucket_trajectory, simulate

__version__ = "0.1.0"

__all__ = [
    "Dataset", "EmpiricalFG", "ExperimentSpec", "InputError", "MetricMap", "MultiConfig",
    "NaivePolicy", "NonConvergenceError", "PolicySolver", "PolicyTable", "Sample",
    "ScaledBucket", "SimConfig", "SynthParams", "apply_metric_map", "apply_policy",
    "arrival_curve_violations", "bucket_trajectory", "build_fg", "calibrate_temperature", "entropy",
    "fit_metric_map", "grid_search_oversubscription", "ingest", "kfold_eval", "loss",
    "lower_bound_loss", "naive_threshold", "parse_rational", "perturb_training",
    "perturbation_study", "read_csv", "read_jsonl", "reduce_bucket", "simulate",
    "simulate_multi", "solve_policy", "standard_fixture", "step_bucket", "synthesize",
    "__version__",
]
