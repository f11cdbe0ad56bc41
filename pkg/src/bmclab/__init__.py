"""Simulation and verification lab for Markov chains on branching trees in varying environments."""

__version__ = "0.1.0"

from ._validation import (
    ConfigurationError,
    DegenerateEnvironmentError,
    EmptyGenerationError,
    EnumerationBudgetExceeded,
    UnsupportedExactError,
)
from .environment import (
    EnvironmentSpec,
    EnvSequence,
    EnvState,
    LocationEnvironment,
    reverse_env,
    sample_env_sequence,
    shift_env,
)
from .experiments import (
    BackwardLLN,
    CLTExperiment,
    CoalescenceDiagnostic,
    ConvergenceReport,
    DoeblinCheck,
    ExperimentConfig,
    ForwardLLN,
    ManyToOneGrid,
    SimulationRun,
    WholeTreeLLN,
    run_backward_lln,
    run_clt,
    run_coalescence_diagnostic,
    run_forward_lln,
    run_whole_tree_lln,
)
from .gallery import GalleryEntry, make_example
from .kernels import (
    FiniteStateJoint,
    IidIncrements,
    LocationRWRE,
    SymmetricIndependent,
    aux_n_step_distribution,
    build_aux_kernel,
    sample_aux_path,
)
from .simulation import CountingMeasure, Trajectory, simulate, simulate_backward
from .traits import Bins, Distribution, HalfLine, Interval
from .verification import check_doeblin, generation_law, many_to_one_exact, many_to_one_mc

__all__ = [
    "__version__",
    "ConfigurationError",
    "DegenerateEnvironmentError",
    "EmptyGenerationError",
    "EnumerationBudgetExceeded",
    "UnsupportedExactError",
    "EnvironmentSpec",
    "EnvSequence",
    "EnvState",
    "LocationEnvironment",
    "reverse_env",
    "sample_env_sequence",
    "shift_env",
    "BackwardLLN",
    "CLTExperiment",
    "CoalescenceDiagnostic",
    "ConvergenceReport",
    "DoeblinCheck",
    "ExperimentConfig",
    "ForwardLLN",
    "ManyToOneGrid",
    "SimulationRun",
    "WholeTreeLLN",
    "run_backward_lln",
    "run_clt",
    "run_coalescence_diagnostic",
    "run_forward_lln",
    "run_whole_tree_lln",
    "GalleryEntry",
    "make_example",
    "FiniteStateJoint",
    "IidIncrements",
    "LocationRWRE",
    "SymmetricIndependent",
    "aux_n_step_distribution",
    "build_aux_kernel",
    "sample_aux_path",
    "CountingMeasure",
    "Trajectory",
    "simulate",
    "simulate_backward",
    "Bins",
    "Distribution",
    "HalfLine",
    "Interval",
    "check_doeblin",
    "generation_law",
    "many_to_one_exact",
    "many_to_one_mc",
]
