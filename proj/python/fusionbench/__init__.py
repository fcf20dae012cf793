"""Multimodal fusion benchmark: gated-pooling image encoder plus clinical encoder,
concat or Kronecker fusion, and the ES / CP / DF auxiliary methods."""

from ._core import (
    ConfigError,
    DataError,
    Dataset,
    FusionbenchError,
    FusionConfig,
    IoError,
    NumericError,
    __version__,
    auc,
    closed_form_param_count,
    count_params,
    cross_validate,
    generate_synthetic,
    load_dataset,
    run_cli,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "FusionbenchError",
    "FusionConfig",
    "IoError",
    "NumericError",
    "__version__",
    "auc",
    "closed_form_param_count",
    "count_params",
    "cross_validate",
    "generate_synthetic",
    "load_dataset",
    "run_cli",
]
