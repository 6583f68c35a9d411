"""Neural network pruning with masks drawn from annealed Gibbs distributions."""

from .hamiltonians import (
    CouplingGraph,
    HamiltonianSpec,
    build_hamiltonian,
    build_linear_coeffs,
    build_quadratic,
    build_structured_linear_coeffs,
    energy,
    min_coupling_for_uniformity,
)
from .masks import (
    NeighbourhoodPartition,
    apply_mask,
    conv_partition,
    converged_mask_structured,
    converged_mask_unstructured,
    is_neighbourhood_uniform,
    mask_agreement,
    neighbourhood_rms,
    pruned_fraction,
    squared_quantile,
)
from .rng import RandomSource
from .samplers import (
    converged_probability,
    init_chain,
    make_bipartite_colouring,
    sample_binary,
    sample_block_exact,
    sample_chromatic,
    sample_linear,
    sample_mask,
    truncate_couplings,
)
from .schedules import BetaSchedule, LrSchedule, beta_at, lr_at, stretched

__version__ = "0.1.0"
