"""Interacting particles on the torus: simulation, correction hierarchy, bounds.

The package has three layers.  The analytic layer solves the mean-field
density and its finite-size correction hierarchy on a periodic spectral grid
(`pde`), with the combinatorial machinery of set-partition cluster expansions
in `partitions` and shared grid/kernel primitives in `core`.  The stochastic
layer simulates the interacting particle system (`particles`) and estimates
distances and joint cumulants from replica ensembles (`metrics`).  The
certification layer evaluates damping integrals and cascade bounds for
hierarchies of differential inequalities (`bounds`), and `experiments`/`cli`
drive end-to-end rate studies against the solved predictions.
"""

from .bounds import (
    BoundCascade,
    cascade_bound,
    eval_I,
    eval_I_many,
    eval_I_table,
    exp_bound,
    exp_bound_applies,
    integrate_hierarchy,
    poly_bound,
    recurrence_residual,
    recurrence_residual_sweep,
)
from .config import Config, ConfigError, load_config, parse_config_text
from .core import (
    GridField,
    KernelSpec,
    TorusGrid,
    convolve_density,
    eval_kernel,
    fourier_field,
    product_field,
    quadrature,
    trig_interp,
)
from .experiments import (
    BoundsReport,
    ExperimentConfig,
    RateFit,
    RateResult,
    fit_rate,
    run_bounds_report,
    run_rate_experiment,
)
from .metrics import (
    DivergenceReport,
    bin_masses,
    bin_samples,
    chi_squared_from_samples,
    chi_squared_grid,
    divergence_report_from_samples,
    joint_cumulant,
    pair_cumulant_from_replica_stats,
    paired_pair_cumulant_difference,
    relative_entropy_grid,
    total_variation_grid,
    weighted_l2_error,
)
from .particles import (
    ParticleEnsemble,
    SimConfig,
    SnapshotSet,
    drift_deriv_from_moments,
    em_step,
    extract_marginal_samples,
    khat_drift_from_moments,
    pair_drift,
    run_ensemble,
    sample_initial,
    trig_moments,
)
from .partitions import (
    OrderComposition,
    Partition,
    TriangularIndex,
    assemble_correction,
    cluster_from_marginals,
    enumerate_order_compositions,
    enumerate_partitions,
    marginals_from_clusters,
    max_asymmetry,
    mobius_sum_identity,
    mobius_weight,
    solve_order,
)
from .pde import (
    BBGKYResult,
    EnergyReport,
    GTable,
    TimeGrid,
    Trajectory,
    assemble_phi,
    check_energy_inequality,
    compute_remainder,
    solve_bbgky_reference,
    solve_g1_pair,
    solve_g1_single,
    solve_g_hierarchy,
    solve_mckean_vlasov,
)

__version__ = "0.1.0"
