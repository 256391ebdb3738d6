"""bvflow: continuous BV functions driven by non-atomic vector measures.

Measure calculus (variation norms, densities, bilinear products),
measure-driven differential equations solved by Picard contraction with
subdivision and gluing, evolution and right logarithmic derivative on
matrix Lie groups, and truncated path signatures.
"""

from .errors import (
    BVFlowError,
    ChartError,
    ConditioningError,
    DomainError,
    EscapeError,
    GluingError,
    InversionError,
    RelatednessError,
    ShapeError,
    SmallnessError,
    SpecError,
    ToleranceError,
    UnsupportedCombinationError,
)
from .measures import (
    BaseMeasure,
    Density,
    Interval,
    LinearMap,
    VectorMeasure,
    add_measures,
    cdf_eval,
    find_subdivision,
    integrate,
    linear_image,
    measure_eval,
    measure_from_dict,
    measure_to_dict,
    rebase,
    restrict,
    scale_measure,
    variation_norm,
)
from .bvfunction import (
    BVFunction,
    BVNorms,
    C1Map,
    C2TimeMap,
    bvfunction_from_dict,
    bvfunction_to_dict,
    compose_chain,
    fd_jacobian_apply,
    glue,
    linear_pushforward,
    norms,
    reparam_affine,
    split,
    superpose_time,
)
from .products import (
    BilinearMap,
    RHSMap,
    StepFunction,
    compose_linear_after,
    estimate_lipschitz,
    f_star,
    odot,
    odot_polynomial,
    odot_simple_oracle,
)
from .ode import (
    RHS,
    Chart,
    ChartSolveReport,
    ManifoldRHS,
    SolveReport,
    builtin_rhs,
    picard_local,
    solution_residual,
    solve_chartwise,
    solve_global,
    transport_solution,
)
from .lie import (
    GroupPath,
    MatrixGroup,
    constant_path,
    dexp_right,
    dexpinv_right,
    evolve,
    gl,
    group_from_name,
    heisenberg,
    log_derivative,
    nilpotent_free,
    path_invert,
    path_multiply,
    semidirect_split,
    so,
)
from .signature import (
    TruncatedTensor,
    chen_check,
    signature,
    tensor_exp,
    tensor_log,
    tensor_mul,
)

__version__ = "0.1.0"
