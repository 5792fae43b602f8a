"""Deep metric learning toolkit: joint local/global descriptors with
second-order attention, proxy-anchor + multi-similarity training, and
retrieval evaluation.

The heavy lifting lives in the compiled extension ``dmlkit._core``; this
package re-exports its public surface.
"""

from dmlkit._core import (
    ConfigError,
    IoError,
    NumericError,
    cosine_similarity_matrix,
    default_config,
    embed,
    gen_synthetic,
    gradcheck,
    hybrid_loss,
    ms_loss,
    proxy_anchor_loss,
    recall_at_k,
    run_eval,
    run_train,
    validate_config,
)

__all__ = [
    "ConfigError",
    "IoError",
    "NumericError",
    "cosine_similarity_matrix",
    "default_config",
    "embed",
    "gen_synthetic",
    "gradcheck",
    "hybrid_loss",
    "ms_loss",
    "proxy_anchor_loss",
    "recall_at_k",
    "run_eval",
    "run_train",
    "validate_config",
]
