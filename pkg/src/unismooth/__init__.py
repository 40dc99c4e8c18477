"""Joint unknown-input and state estimation for linear structural systems
with a fixed-lag minimum-variance unbiased smoother."""

from .structural import (ModalBasis, ModelError, ReducedModel, SecondOrderModel,
                         build_shear_frame, ground_motion_model, modal_basis, modal_reduce)
from .discretization import (ContinuousStateSpace, DiscreteStateSpace, SensorConfig,
                             build_discrete_system, build_output_matrices, discretize_zoh,
                             to_continuous)
from .extended import (ExtendedSystem, SelectionOperators, StackedNoise, build_extended_system,
                       selection_operators, stack_noise_covariances)
from .smoother import (ConditioningError, EstimateTrace, SmootherConfig, SmootherError,
                       SmootherState, StepEstimate, UniversalSmoother, init, input_step, run,
                       state_step, truncated_pinv)
from .akf import AugmentedModel, akf_run, augment

__version__ = "0.1.0"
