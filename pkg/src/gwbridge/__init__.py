"""Random-walk bridges on Galton-Watson trees.

Offspring-law arithmetic, tree samplers (plain / survival-conditioned /
spine), exact interval and hitting-time oracles, walk kernels and couplings,
bridge DP with truncation certificates, the SRW/BRW change of measure, and a
reproducible experiment harness.
"""

__version__ = "0.1.0"

from .offspring import (CaseTag, OffspringDist, OffspringError, TrapConstants,
                        dual_distribution, extinct_size_gf, extinct_size_radius,
                        extinction_prob, make_offspring, pgf_eval, trap_constants,
                        truncated_mean)
from .trees import (BackboneMarks, TrapMode, TrapStats, Tree, TreeBudgetError,
                    TreeError, backbone_decompose, path_products, sample_gw,
                    sample_gw_survival, sample_min_degree_tree, sample_spine,
                    sample_trap_level_max, trap_level_max_cdf, trap_stats,
                    trap_tail_prob, tree_from_parents)
from .oracles import (MOGULSKII_CONSTANT, admissible_lambda, enumerate_rooted_trees,
                      enumerate_return_paths, bridge_prob_exact_enum, hitting_moment,
                      moment_bound_certified, moment_bound_n1_certified,
                      z_confinement, z_exit_time_dist, z_first_return_pmf)
from .walks import (BRW, SRW, BackboneObservables, CouplingResult, Kernel, PathStats,
                    WalkPath, backbone_observe, couple_from_vertex, couple_to_line,
                    couple_to_line_batch, escape_prob, first_branching_vertex,
                    n_p_count, path_statistics, regular_tree_escape_bracket,
                    sample_path, simulate_walks, step_kernel, step_probability)
from .bridge import (BridgeError, DispProfile, OccupancyTable, bridge_dp,
                     max_disp_profile, sample_bridge, truncation_bound)
from .measure import (SandwichConstants, SandwichReport, b_n_of_path, rn_derivative,
                      rn_derivative_stepwise, sandwich_constants, verify_sandwich)
from .experiments import (CSV_COLUMNS, DEFAULT_CONFIGS, ExperimentConfig,
                          ExperimentRecord, fit_slope, run_experiment, wilson_interval)
from .rng import derived_seed, stream
