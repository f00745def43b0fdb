"""Slice-sequence intracranial hemorrhage classifier.

Thin bindings over the C++ core. Arrays are float64 numpy arrays; paths may be
str or pathlib.Path.
"""

from ._core import (
    CLASS_NAMES,
    ConfigError,
    ContractError,
    DataError,
    Error,
    IoError,
    NumericError,
    aggregate_scan,
    apply_window,
    build_manifest,
    config_text,
    lr_at,
    predict,
    read_manifest,
    roc_auc,
    run_cli,
    stack_windows,
    synth,
    validate,
    weighted_log_loss,
)

__all__ = [
    "CLASS_NAMES",
    "ConfigError",
    "ContractError",
    "DataError",
    "Error",
    "IoError",
    "NumericError",
    "aggregate_scan",
    "apply_window",
    "build_manifest",
    "config_text",
    "lr_at",
    "predict",
    "read_manifest",
    "roc_auc",
    "run_cli",
    "stack_windows",
    "synth",
    "validate",
    "weighted_log_loss",
]
