"""Graph-enhanced texture encoding: C++ core exposed through pybind11."""

from ._core import (
    CheckpointError,
    ConfigError,
    ContractError,
    DatasetError,
    DimensionError,
    Error,
    Model,
    OracleError,
    cross_entropy,
    dilated_context,
    encode_patch,
    gradcheck,
    patch_count,
    read_ppm,
    run_cli,
    soft_assignments,
    topn_neighbors,
    write_ppm,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DatasetError",
    "DimensionError",
    "Error",
    "Model",
    "OracleError",
    "cross_entropy",
    "dilated_context",
    "encode_patch",
    "gradcheck",
    "patch_count",
    "read_ppm",
    "run_cli",
    "soft_assignments",
    "topn_neighbors",
    "write_ppm",
]
