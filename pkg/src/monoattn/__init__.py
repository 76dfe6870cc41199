"""MonoAttn-Transducer: streaming transduction with learned monotonic attention.

A numpy-only implementation at toy scale: Transducer lattice algorithms,
monotonic expected-context attention, a small reverse-mode autodiff, the
two-pass prior/posterior training procedure, streaming decoding, latency
metrics, and synthetic reordering tasks.
"""

from .decoding import DecodePolicyConfig, DecodeTrace, offline_decode, stream_decode
from .lattice import (
    AlignmentMatrix,
    ProbLattice,
    backward_vars,
    brute_force_posterior,
    brute_force_total_prob,
    forward_vars,
    posterior_alignment,
    total_log_prob,
)
from .metrics import (
    average_lagging,
    average_proportion,
    cross_count,
    differentiable_average_lagging,
    edit_distance_normalized,
    laal,
    token_accuracy,
)
from .model import ModelConfig, MonoAttnTransducer, predict_streaming
from .monotonic import (
    chunk_synchronize,
    diagonal_prior,
    expected_context_efficient,
    expected_context_nested,
    uniform_prior,
)
from .synthesis import SyntheticTaskSpec, generate_corpus, generate_samples
from .training import TrainConfig, Trainer, finetune_streaming, pretrain_offline, train

__version__ = "0.1.0"
