"""Teacher fusion and feature distillation for image classifiers.

Thin Python layer over the C++ core. Arrays are numpy; images are
``float32`` batches shaped ``[B, H, W, 3]`` with values in ``[0, 1]``.
"""

from ._core import (
    EMBED_DIM,
    CacheFormatError,
    CacheMagicError,
    ConfigError,
    DatasetIndex,
    DistillkitError,
    InvalidArgumentError,
    Model,
    NotFoundError,
    Sample,
    Teacher,
    augment_rotations,
    combine_embeddings,
    distill_loss,
    entropy_loss,
    feature_distance,
    kl_loss,
    read_feature_cache,
    reference_backbones,
    run_experiment,
    scan_dataset,
    split_dataset,
    synth,
    trainable_params,
    write_feature_cache,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
