"""Autoregressive structural models for multivariate longitudinal panels.

A per-wave template SEM is stacked across waves and linked by
autoregressive latent paths; the package fits it by maximum likelihood,
reports fit indices and invariance-ladder comparisons, bootstraps
confidence intervals, and ships a simulator that doubles as the
correctness oracle.
"""

from .assemble import (
    AssembledMatrices,
    StackedLayout,
    implied_covariance,
    implied_means,
    latent_covariance,
)
from .bootstrap import BootstrapConfig, BootstrapResult, bootstrap_ci, percentile_interval
from .data import IngestionReport, load_panel_csv
from .errors import (
    AsmError,
    ConstraintConflictError,
    IngestionError,
    NonPositiveDefiniteError,
    SpecSyntaxError,
    UnderIdentifiedError,
)
from .estimate import (
    FitResult,
    SampleMoments,
    fit,
    fml_discrepancy,
    gradient,
    moments_from_data,
    r_squared,
    standard_errors,
    standardize,
)
from .fitstats import (
    FitIndices,
    LadderComparison,
    cfi,
    compare_invariance,
    fit_indices,
    null_model_fit,
    rmsea,
    srmr,
)
from .modelspec import (
    FixedValue,
    ModelSpec,
    parse_model_spec,
    pretty_print_model_spec,
    validate_template,
    with_invariance,
)
from .paramtable import (
    ParameterEntry,
    ParameterTable,
    build_parameter_table,
    compute_starts,
    count_free_parameters,
    theta_to_matrices,
)
from .reference import (
    build_truth_from_standardized,
    random_truth,
    reference_spec,
    reference_spec_path,
    reference_standardized,
    reference_truth,
    truth_vector,
)
from .simulate import (
    GeneratorConfig,
    RecoveryReport,
    recovery_experiment,
    simulate_dataset,
)

__version__ = "0.1.0"
