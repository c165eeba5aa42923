"""Empirical prototype learning for discriminative embeddings.

A desk-scale, numpy-only implementation: margin softmax losses over learned
prototype rows, a forward-updated bank of empirical prototypes with an
adaptive blend coefficient, a combined loss with a detached adaptive
margin, and a deterministic training/evaluation harness around them.
"""

from .bank import ACTIVATIONS, BankConfig, EmpiricalPrototypeBank, init_bank, update_coefficient
from .config import EvalOptions, RunConfig, load_config, parse_config
from .data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    make_verification_pairs,
    save_dataset,
    split_dataset,
)
from .encoder import MlpEncoder, backward, forward, init_encoder
from .epl_loss import (
    EplConfig,
    adaptive_margin,
    batch_epl_loss,
    combined_loss_from_similarities,
    epl_loss,
    epr_loss,
)
from .errors import (
    CacheMismatchError,
    CheckFailedError,
    ConfigError,
    DigestMismatchError,
    DimensionMismatchError,
    EmptyClassError,
    EmptyInputError,
    EplError,
    FormatError,
    IndexOutOfRangeError,
    InvalidShapeError,
    InvalidSpecError,
    VersionMismatchError,
    ZeroVectorError,
)
from .evaluate import (
    EmbeddingSet,
    HistogramSummary,
    centroid_alignment,
    embed,
    pair_scores,
    rank1_identification,
    tar_at_far,
    top_k_negative_similarities,
)
from .linalg import (
    cosine_similarity,
    l2_normalize,
    make_rng,
    random_unit_rows,
    random_unit_vector,
    similarity_matrix,
)
from .losses import (
    LossConfig,
    LossOutput,
    batch_loss,
    loss_from_similarities,
    prototype_grad_closed_form,
    prototype_loss,
)
from .train import (
    Checkpoint,
    Schedule,
    TrainConfig,
    TrainResult,
    config_digest,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    sgd_step,
    train,
    write_metrics_csv,
)

__version__ = "0.1.0"
