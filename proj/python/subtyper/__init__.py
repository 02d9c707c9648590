"""Multi-omics cancer subtype discovery."""

from ._core import (
    ArgumentError,
    ConfigError,
    DataError,
    Error,
    Model,
    NumericError,
    ParseError,
    ShapeError,
    ari,
    chi_square,
    consensus,
    feature_importance,
    friedman,
    km_curve,
    kmeans,
    kruskal_wallis,
    logrank,
    nmi,
    run,
    run_file,
    select_k,
    simulate,
    train,
    version,
    write_simulation,
)

__version__ = version()

__all__ = [
    "ArgumentError",
    "ConfigError",
    "DataError",
    "Error",
    "Model",
    "NumericError",
    "ParseError",
    "ShapeError",
    "ari",
    "chi_square",
    "consensus",
    "feature_importance",
    "friedman",
    "km_curve",
    "kmeans",
    "kruskal_wallis",
    "logrank",
    "nmi",
    "run",
    "run_file",
    "select_k",
    "simulate",
    "train",
    "version",
    "write_simulation",
]
