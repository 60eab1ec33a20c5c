"""Viterbi training versus maximum likelihood for hidden Markov models."""

from hmmvt.core import (
    HmmModel,
    build_model,
    joint_log_prob,
    observed_log_prob,
    sample,
    transfer_matrix,
)
from hmmvt.errors import (
    GuardError,
    HmmError,
    NonMixingError,
    NonStochasticError,
    TruncationError,
    UnreachableSequenceError,
)
from hmmvt.inference import (
    baum_welch_step,
    decode_overlap,
    forward_backward,
    gibbs_free_energy_exact,
    train,
    viterbi_decode,
    viterbi_training_step,
)
from hmmvt.zeta import (
    beta_deform,
    brute_force_lambda,
    likelihood_rate,
    orbit_classes,
    perron_eigenvalue,
    phi_weight,
    zeta_root,
    zeta_series_cumulant,
    zeta_series_cycle,
)

__version__ = "0.1.0"
