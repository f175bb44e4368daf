"""Learnable multi-peak spectral graph filters.

A shaped filter bank multiplies a shared baseline kernel ``g(lam)`` by K
Gaussian windows with trainable centers, widths and amplitudes. Filters are
applied exactly through an eigendecomposition or approximately with a
Chebyshev expansion that only needs sparse matrix-vector products.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CapabilityError,
    ConfigError,
    ContractError,
    DegenerateInputError,
    FormatError,
    LambdaMaxWarning,
    NumericError,
    ParameterError,
    ShapingError,
    SpectrumRangeWarning,
)
from .filtering import (  # noqa: E402
    ChebyshevFilter,
    apply_chebyshev,
    apply_exact,
    filter_bank_apply,
    project_chebyshev,
)
from .graphs import (  # noqa: E402
    Graph,
    LaplacianOperator,
    SpectralDecomposition,
    build_laplacian,
    decompose,
    estimate_lambda_max,
    generate_graph,
)
from .kernel import ShapedFilterBank, eval_bank, init_bank  # noqa: E402
from .metrics import improvement, mse, spectral_discrepancy  # noqa: E402
from .training import FreezeMask, TrainingConfig, TrainingState, fit, tass_adapt  # noqa: E402
