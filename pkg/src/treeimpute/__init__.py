"""Tree-based imputation and estimation of means under item nonresponse."""

from ._backend import active_name as backend
from .dataset import Column, Dataset, DataError, VariableKind, load_csv, load_schema, write_csv

__version__ = "0.1.0"

__all__ = ["Column", "Dataset", "DataError", "VariableKind", "load_csv", "load_schema",
           "write_csv", "backend", "__version__"]
