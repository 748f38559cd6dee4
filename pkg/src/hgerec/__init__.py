"""Cold-start recommendation with hierarchical graph embeddings."""
from .data import (
    ColdStartSplit,
    Hierarchy,
    InteractionLog,
    build_incidences,
    cold_start_split,
    k_core_filter,
    synth_generate,
)
from .evaluation import cluster_report, evaluate_cold, export_embeddings, timing_benchmark
from .models import (
    AlsModel,
    HgeLayer,
    HgeModel,
    HybridMfModel,
    MfModel,
    RandomModel,
    als_fit,
    hge_item_embeddings,
    hge_layer_forward,
    param_count,
    recommend_topk,
)
from .numerics import SparseIncidence
from .training import TrainConfig, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ColdStartSplit",
    "Hierarchy",
    "InteractionLog",
    "build_incidences",
    "cold_start_split",
    "k_core_filter",
    "synth_generate",
    "cluster_report",
    "evaluate_cold",
    "export_embeddings",
    "timing_benchmark",
    "AlsModel",
    "HgeLayer",
    "HgeModel",
    "HybridMfModel",
    "MfModel",
    "RandomModel",
    "als_fit",
    "hge_item_embeddings",
    "hge_layer_forward",
    "param_count",
    "recommend_topk",
    "SparseIncidence",
    "TrainConfig",
    "fit",
    "load_checkpoint",
    "save_checkpoint",
]
