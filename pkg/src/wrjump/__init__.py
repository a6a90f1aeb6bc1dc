"""wrjump: two-type repulsive jump dynamics on a periodic box.

An exact event-driven simulator, a correlation-hierarchy / dual-observable
operator-series solver, and a statistical verification battery that
cross-validates the two against each other and against the analytic bounds
the model satisfies.
"""

__version__ = "0.1.0"

from .geometry import (Box, Domain, TwoTypeConfiguration, big_psi,
                       config_distance, load_configuration,
                       ordered_tuple_count, psi, save_configuration)
from .kernels import (JumpKernel, KernelSet, RepulsionKernel, jump_rate,
                      kernel_convolve, optimal_horizon, psi_sigma,
                      semigroup_horizon, series_horizon)
from .observables import (QuasiObservable, TestFunction, TorusGrid,
                          damped_product, damped_tuple_sum, k_transform,
                          plain_product, tilted_observable)
from .combin import (ComparisonFamily, count_sequences,
                     forward_difference_power, sequence_weight, stirling2,
                     touchard)
from .simulate import (EventTrace, SimulationState, batch_simulate,
                       load_trace, load_traces, sample_at,
                       sample_poisson_initial, save_trace, save_traces,
                       simulate_path)
from .hierarchy import (CorrelationField, HierarchyParams, HorizonError,
                        SeriesError, constant_field, dual_expectation,
                        dual_generator, evolve_field, evolve_observable,
                        free_spectral_evolution, hierarchy_generator,
                        load_field, mayer_augmented, pair, product_field,
                        save_field)
from .estimators import (DampedProductFunctional, DampedTupleSumFunctional,
                         EstimateWithError, chentsov_product, chentsov_sweep,
                         correlation_estimate, exp_moment_check,
                         generator_apply, martingale_residual,
                         moment_bound_check, sigma_sweep, type_estimate)
from .config import ConfigError, ExperimentConfig
