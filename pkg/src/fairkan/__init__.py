"""Fairness-constrained spline networks: library and CLI.

The public surface is re-exported here; the module layout mirrors the
pipeline: splines -> network -> optim -> fairness -> data -> training ->
diagnostics, with ``estimator`` providing the scikit-learn facade and
``cli`` the command-line entry point.
"""

from .data import (
    Dataset,
    SyntheticSpec,
    apply_scaler,
    fit_scaler,
    generate_synthetic,
    load_csv,
    save_csv,
    split,
    split_indices,
)
from .diagnostics import (
    TheoryReport,
    contraction_check,
    export_score_distributions,
    grad_check,
    lipschitz_estimate,
    smoothness_estimate,
    theory_report,
    wasserstein1_1d,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    FairkanError,
    ModelFormatError,
    NumericError,
    RefinementError,
    SchemaError,
    ShapeError,
    UsageError,
)
from .estimator import FairKanClassifier
from .fairness import (
    FairnessReport,
    auroc,
    dp_gap,
    evaluate_fairness,
    make_controller,
    p_percent_rule,
    update_lambda,
)
from .network import (
    KanLayer,
    KanNetwork,
    calibrate_grid_domains,
    clone_network,
    deserialize,
    init_network,
    network_to_text,
    refine_network,
    serialize,
)
from .optim import apply_step, make_optimizer
from .splines import (
    SplineGrid,
    basis_derivative,
    basis_eval,
    design_matrix,
    fit_coefficients,
    refine_grid,
    spline_eval,
)
from .training import (
    TrainConfig,
    TrainState,
    bce_loss,
    composite_objective,
    derive_seed,
    evaluate_model,
    train,
)

__version__ = "0.1.0"
