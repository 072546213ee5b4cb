"""Multi-criteria word segmentation with switched LSTMs and a linear-chain CRF."""

from switchseg.errors import (
    ConfigError,
    ContractError,
    FormatError,
    InvalidInputError,
    NumericalError,
)

__version__ = "0.1.0"

LABELS = ("B", "M", "E", "S")

__all__ = [
    "LABELS",
    "ConfigError",
    "ContractError",
    "FormatError",
    "InvalidInputError",
    "NumericalError",
]
