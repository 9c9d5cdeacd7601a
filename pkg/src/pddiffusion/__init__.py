"""Decentralized sharing optimization by primal-dual diffusion.

Agents on a strongly connected digraph minimize a sum of private smooth
costs coupled through a non-smooth function of an aggregate,
``sum_k J_k(w_k) + g(sum_k C_k w_k)``, by exchanging dual iterates with
neighbors only. The package bundles the solver (three equivalent
recursion engines), adaptive combination weights, a linear-rate
certificate, consensus baselines for comparison, and a config-driven
experiment CLI.
"""

from .adaptive_weights import (AdaptiveWeightState, compute_weights,
                               init_weight_state,
                               update_chi_certificate_scaled, update_filter)
from .baselines import (BaselineConfig, consensus_truth, diging_run,
                        extra_run, tune_alpha)
from .certificate import (OptimalityResiduals, RateCertificate, c_o_constant,
                          certify, error_recursion_check,
                          optimality_residuals, rate_gamma,
                          residuals_of_state, stepsize_bounds)
from .metrics import (RateFit, RunTrace, fit_linear_rate, iterations_to,
                      msd_estimate)
from .problem import (CouplingMatrices, GroundTruth, LocalCost, NonSmoothTerm,
                      SharingProblem, load_instance, make_consensus_instance,
                      make_cs_instance, pair_residuals, prox_conjugate,
                      prox_g, save_instance, solve_centralized)
from .solver import (DivergenceError, StepSizes, default_steps, init_state,
                     init_network_state, init_tracking_state, network_step,
                     pdd_step, run, stationary_network_state, tracking_step,
                     tune_steps)
from .topology import (CombinationMatrix, DirectedTopology, build_topology,
                       disagreement_matrix, from_edge_list, metropolis_weights,
                       mixing_matrix, spectral_summary, to_edge_list)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
