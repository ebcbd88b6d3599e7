"""Relaxed splitting pruners with adversarial training."""

from ._core import (  # noqa: F401
    Error,
    FormatError,
    IoError,
    ParameterError,
    ParseError,
    ValidationError,
    config_hash,
    evaluate,
    hard_threshold,
    histogram_svg,
    make_blobs,
    normalize_attack,
    normalize_config,
    prox_group_l0,
    prox_group_lasso,
    rvsm_threshold,
    soft_threshold,
    train,
)
