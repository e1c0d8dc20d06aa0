"""Hybrid cross-domain robust reinforcement learning on tabular problems."""

from ._validation import FailStateAssumptionError, InvalidInputError, NonConvergenceWarning
from .data import Dataset, SampleBatch
from .ensemble import TabularDynamicsEnsemble
from .learners import FQI, HYDRO, RFQI, hydro_train, naive_merge, rfqi_train
from .rmdp import TabularMDP, UncertaintySpec

__version__ = "0.1.0"

__all__ = [
    "Dataset", "SampleBatch", "TabularMDP", "UncertaintySpec",
    "TabularDynamicsEnsemble", "FQI", "RFQI", "HYDRO", "naive_merge",
    "rfqi_train", "hydro_train", "InvalidInputError",
    "FailStateAssumptionError", "NonConvergenceWarning",
]
