"""Tiny pointers: dereference tables that hand out few-bit pointers, plus
the balls-into-bins schemes used to analyse them."""

from .adapters import RelaxedRetrieval, StableDict
from .ballsbins import BinSystem, iceberg_curve, probe_experiment, run_rule
from .bitcodec import ChunkedPointerArray, gamma_decode, gamma_encode, select_one
from .core import (
    AllocationFailure,
    CapacityExceeded,
    ContractViolation,
    DereferenceTable,
    InvalidParams,
    ShadowTable,
    TableStats,
    TinyPointer,
    TinyPtrError,
)
from .fixed import FixedTable, TwoChoiceTable
from .hashing import derive_seed, hash_to_range
from .lbt import LoadBalancingTable
from .variable import VariableTable, WrappedVariableTable
from .workloads import Workload, generate, read_workload, replay, write_workload

__version__ = "0.1.0"

__all__ = [
    "AllocationFailure",
    "BinSystem",
    "CapacityExceeded",
    "ChunkedPointerArray",
    "ContractViolation",
    "DereferenceTable",
    "FixedTable",
    "InvalidParams",
    "LoadBalancingTable",
    "RelaxedRetrieval",
    "ShadowTable",
    "StableDict",
    "TableStats",
    "TinyPointer",
    "TinyPtrError",
    "TwoChoiceTable",
    "VariableTable",
    "Workload",
    "WrappedVariableTable",
    "derive_seed",
    "gamma_decode",
    "gamma_encode",
    "generate",
    "hash_to_range",
    "iceberg_curve",
    "probe_experiment",
    "read_workload",
    "replay",
    "run_rule",
    "select_one",
    "write_workload",
]
