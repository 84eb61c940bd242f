"""Joint PLDA: probabilistic linear discriminant analysis with channel
factors tied across samples sharing a channel label.

The package trains the model by expectation-maximization with an exact
posterior over all tied latent factors, scores verification trials by
likelihood ratios that marginalize the channel-tie hypothesis, and ships
brute-force oracles plus a ``verify`` command that checks the fast paths
against them.
"""

from .dataset import EmbeddingTable, center, ingest_dataset
from .em import (SufficientStats, TrainConfig, TrainTrace, e_step,
                 init_params, log_marginal_likelihood, m_step, train)
from .exceptions import CapacityError, DataFormatError, NumericalError
from .model import (HypothesisPriors, ModelParams, PrecisionCache,
                    build_precisions)
from .oracle import (OracleLatentPosterior, StackedSystem, oracle_log_density,
                     oracle_posterior, standard_plda_reference)
from .posterior import (BlockOccupancy, InnerPosterior, OuterPosterior,
                        build_occupancy, inner_posterior, marginal_channel,
                        outer_posterior)
from .scoring import (TrialScore, TrialWorkspace, compute_eer, score_trial,
                      score_trial_list, score_unseen_channel)
from .simulate import simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "BlockOccupancy", "CapacityError", "DataFormatError", "EmbeddingTable",
    "HypothesisPriors", "InnerPosterior", "ModelParams", "NumericalError",
    "OracleLatentPosterior", "OuterPosterior", "PrecisionCache",
    "StackedSystem", "SufficientStats", "TrainConfig", "TrainTrace",
    "TrialScore", "TrialWorkspace", "build_occupancy", "build_precisions",
    "center", "compute_eer", "e_step", "ingest_dataset", "init_params",
    "inner_posterior", "log_marginal_likelihood", "m_step", "marginal_channel",
    "oracle_log_density", "oracle_posterior", "outer_posterior", "score_trial",
    "score_trial_list", "score_unseen_channel", "simulate_dataset",
    "standard_plda_reference", "train",
]
