"""pkge: multi-core knowledge-graph embedding.

Translation embeddings trained with a single-thread SGD baseline or with
map/reduce worker pools (parallel SGD with embedding-merge strategies, or
BGD with gradient-sum reduce), plus ranking and classification evaluation.
"""

from .data import (
    Dataset,
    Partition,
    Triple,
    Vocabulary,
    load_dataset,
    load_triples,
    make_synthetic_translation_kg,
    partition,
    write_triples,
)
from .evaluation import (
    ClassifierThresholds,
    RankingMetrics,
    classify,
    evaluate_ranking,
    fit_thresholds,
    rank_entities,
    rank_relations,
)
from .model import corrupt, energy, hinge, term_gradients, triple_gradient
from .store import (
    EmbeddingTable,
    ModelCheckpoint,
    init_table,
    load_checkpoint,
    normalize_entities,
    save_checkpoint,
    snapshot,
)
from .train_mapreduce import (
    MapOutputBgd,
    MapOutputSgd,
    RoundReport,
    SyncSchedule,
    reduce_bgd,
    reduce_sgd,
    run_map_bgd,
    run_map_sgd,
    train_mapreduce,
)
from .train_single import EpochReport, TrainConfig, epoch_loss, train_single

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Partition",
    "Triple",
    "Vocabulary",
    "load_dataset",
    "load_triples",
    "make_synthetic_translation_kg",
    "partition",
    "write_triples",
    "ClassifierThresholds",
    "RankingMetrics",
    "classify",
    "evaluate_ranking",
    "fit_thresholds",
    "rank_entities",
    "rank_relations",
    "corrupt",
    "energy",
    "hinge",
    "term_gradients",
    "triple_gradient",
    "EmbeddingTable",
    "ModelCheckpoint",
    "init_table",
    "load_checkpoint",
    "normalize_entities",
    "save_checkpoint",
    "snapshot",
    "MapOutputBgd",
    "MapOutputSgd",
    "RoundReport",
    "SyncSchedule",
    "reduce_bgd",
    "reduce_sgd",
    "run_map_bgd",
    "run_map_sgd",
    "train_mapreduce",
    "EpochReport",
    "TrainConfig",
    "epoch_loss",
    "train_single",
    "__version__",
]
