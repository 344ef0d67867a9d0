"""Point vortices on the unit torus: Green function, exact and split dynamics, Gibbs ensembles."""
from .errors import (EmptyShell, IntegrationError, InvalidInput, InvalidTemperature, NearCollision,
                     PVSplitError, SingularConfiguration, SingularPoint, TableAccuracy)
from .torus import (Configuration, TorusPoint, config_distance, distance_positions, min_displacement,
                    min_image, point_distance, uniform_configuration, wrap)
from .kernel import (GreenEvaluator, Kernel, KernelMode, KernelTable, Mollifier, biot_savart,
                     build_kernel_table, grad_green, green, regularized_green, regularized_kernel)
from .dynamics import (ConvergenceTable, FlowParams, TauSchedule, Trajectory, convergence_sweep,
                       deterministic_flow, deterministic_trajectory, interpolated_flow,
                       interpolated_trajectory, jumping_flow, jumping_trajectory, single_component_velocity,
                       single_vortex_flow, time_grid, velocity)
from .observables import (ObservableReport, center_of_vorticity, hamiltonian, l_estimate_constants,
                          l_functional, mean_nearest_neighbor_distance, min_pair_distance, observe)
from .ensembles import (CanonicalParams, EnsembleSample, FlowSpec, InvarianceReport, MicrocanonicalParams,
                        invariance_test, ks_critical_value, sample_canonical, sample_microcanonical)

__version__ = "0.1.0"
