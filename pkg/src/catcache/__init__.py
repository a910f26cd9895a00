"""Category-aware semantic cache.

Embeddings live in an in-memory HNSW graph per category; response bodies
live in a separate document store. Per-category policies set the match
threshold and TTL, and a load-driven controller relaxes both when a
downstream model is busy.
"""

from .cache import HYBRID_COSTS, VDB_COSTS, LookupCosts, LookupResult, SemanticCache
from .controller import AdaptiveController, ControllerConfig, LoadSignal, compute_load_factor
from .docstore import BackendLatencyModel, DocumentRecord, DocumentStore, FileDocStore, SimulatedDocStore
from .economics import CostModel, break_even_hybrid, break_even_vdb, viability_table
from .errors import CatCacheError, DocNotFound, DomainError, StorageError, UsageError, ValidationError
from .index import HNSWIndex, IndexParams
from .kernels import get_kernels
from .policy import CategoryConfig, EffectivePolicy, PolicyRegistry, load_configs
from .workload import CategorySpec, Workload, generate_workload

__version__ = "0.1.0"

__all__ = [
    "AdaptiveController", "BackendLatencyModel", "CatCacheError", "CategoryConfig", "CategorySpec",
    "ControllerConfig", "CostModel", "DocNotFound", "DocumentRecord", "DocumentStore", "DomainError",
    "EffectivePolicy", "FileDocStore", "HNSWIndex", "HYBRID_COSTS", "IndexParams", "LoadSignal",
    "LookupCosts", "LookupResult", "PolicyRegistry", "SemanticCache", "SimulatedDocStore",
    "StorageError", "UsageError", "VDB_COSTS", "ValidationError", "Workload", "break_even_hybrid",
    "break_even_vdb", "compute_load_factor", "generate_workload", "get_kernels", "load_configs",
    "viability_table",
]
