"""Contrastive instance discrimination at desk scale.

Momentum-encoder pre-training with a filterable negative queue, difficulty
analyses over negatives, and linear-probe evaluation. The sklearn-style
entry points are ContrastiveEncoder (fit/transform) and LinearProbe
(fit/predict); the functional layers underneath are importable per module.
"""

from .analysis import (DifficultyMatrix, band_mean_lca, band_same_class_fraction,
                       build_difficulty_matrix, class_pair_mean_dots,
                       difficulty_dot_curve, hard_frequency_histogram,
                       shuffled_baseline_histogram)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .contrastive import (Band, ContrastiveConfig, Embedding, FilterPolicy,
                          NegativeQueue, apply_policy, band_count, info_nce_grad_query,
                          info_nce_loss, init_queue, rank_difficulty)
from .data import (AugmentConfig, ClassTree, Dataset, Instance, augment,
                   gen_hierarchical_gaussian, lca_depth, load_cifar10_batch)
from .encoder import (EncoderConfig, EncoderPair, EncoderParams, backward, embed,
                      ema_update, forward_base, forward_head, init_pair)
from .estimators import ContrastiveEncoder, LinearProbe
from .numerics import (OptimizerState, cosine_lr, finite_difference_gradcheck,
                       l2_normalize, rng_from_seed, sgd_momentum_step)
from .probe import ProbeResult, evaluate_probe, fit_linear_probe, top_k_accuracy
from .trainer import StepRecord, TrainConfig, train, train_step

__version__ = "0.1.0"
