"""Bayesian estimation of vertex labels from noisy pairwise edge
observations on finite graphs: exact inference, estimators, thresholds,
tree recursions, and a reproducible experiment harness."""

__version__ = "0.1.0"

from ._kernels import backend as kernel_backend
from .graphs import (
    Ball,
    Graph,
    ball,
    boundary,
    gen_ary_tree,
    gen_box,
    gen_random_regular,
    gen_torus,
    gen_tree,
    read_graph,
    write_graph,
)
from .model import (
    STAR,
    Instance,
    Kernel,
    channel_mutual_information,
    channel_statistics,
    edge_pair_law,
    kernel_zq,
    read_kernel,
    sample_instance,
    write_kernel,
)
from .inference import (
    bp_tree_marginals,
    boundary_conditioned_marginal,
    cmi_table,
    conditional_mutual_information,
    enumerate_posterior,
    exact_posterior_marginals,
    local_marginal,
    pairwise_posterior,
)
from .estimators import (
    EstimateMatrix,
    LabelFunction,
    default_f,
    edge_empirical,
    matrix_bayes,
    matrix_decoupled,
    matrix_local,
    sample_labels,
    score_vector,
    typical_set_estimator,
)
from .metrics import (
    MCEstimate,
    joint_vertex_empirical,
    mc_average,
    overlap,
    overlap_lower_bound,
    risk,
    tv_distance,
)
from .thresholds import (
    SStarResult,
    k_star,
    kesten_stigum,
    s_functional,
    s_star,
    s_star_upper_bound,
    uniform_overlap,
    weak_recovery_condition,
)
from .tree_recursion import (
    ExactRootLaw,
    RecursionTrace,
    exact_root_law,
    ks_phase_probe,
    recursion_residual,
    reweighting_check,
    simulate_root_statistic,
)
