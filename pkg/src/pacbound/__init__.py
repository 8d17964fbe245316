"""Nonvacuous PAC-Bayes generalization bounds for stochastic ReLU networks.

The pipeline: momentum-SGD pretraining of a feed-forward ReLU classifier,
stochastic-gradient optimization of a PAC-Bayes error-bound objective over a
diagonal-Gaussian weight distribution, and a rigorously accounted final
certificate obtained by KL inversion. A path-norm margin-bound harness is
included for comparison against norm-based capacity bounds.
"""

from .boundopt import (
    BoundOptConfig,
    BoundOptState,
    GaussianPosterior,
    PriorSpec,
    b_re,
    b_re_from_kl,
    initial_state,
    objective_grad_step,
    optimize_bound,
)
from .certify import (
    BoundReport,
    certify,
    final_bound,
    mc_snn_error,
    round_lambda,
    snn_pvalue,
)
from .data import (
    LabeledDataset,
    binarize,
    load_idx,
    load_mnist,
    randomize_labels,
    synthetic_blobs,
    train_test_split,
)
from .klbounds import (
    kl_bernoulli,
    kl_diag_gaussian,
    kl_inverse,
    pinsker_inverse_upper,
    sample_convergence_bound,
    symmetrization_kl_identity,
)
from .nn import (
    MlpArchitecture,
    forward,
    grad_surrogate,
    init_weights,
    parse_arch,
    surrogate_error,
    zero_one_error,
)
from .pathnorm import (
    gamma_1_inf,
    margin_bound,
    path_norm,
    rademacher_upper,
    ramp_error,
    train_pathnorm_regularized,
)
from .sgd import SgdConfig, TrainResult, train_sgd

__version__ = "0.1.0"
