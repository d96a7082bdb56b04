"""Region-template retrieval over precomputed convolutional feature maps.

A query image's regions of interest are projected onto its feature grid to
form a sparse template; every stored image is scored by the mean best-match
cosine between template cells and its own cells. Stores are memory-mapped
binary files of channel-normalized float32 feature maps, searched
exhaustively with deterministic, parallel top-k selection.
"""

from .baseline import (
    DetectionRecord,
    GapDescriptor,
    di_rank,
    gap_descriptor,
    gap_search,
    read_detections,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DtmError,
    InvalidInputError,
    ShapeError,
    StoreCorruptionError,
    StoreFormatError,
)
from .estimators import GapRetriever, TemplateMatcher
from .evaluation import (
    ClassSpec,
    EvalQuery,
    EvalReport,
    PlantedBlock,
    SynthConfig,
    SynthResult,
    bin_queries_by_roi_area,
    generate_synthetic,
    hit_rate_at_n,
    measure_plant_separability,
    queries_from_plants,
    run_experiment,
)
from .featmap import (
    FeatureMap,
    QuerySpec,
    RoiBox,
    Template,
    l2_normalize_channels,
    maxpool_downsample,
    project_roi,
    validate_feature_map,
)
from .scoring import (
    ScoreMap,
    ScoreValue,
    SimilarityTensor,
    sample_match_map,
    score,
    score_batch,
    score_map,
    similarity_tensor,
)
from .search import RetrievalResult, SearchConfig, search, search_multi
from .store import (
    EmbeddingStore,
    InMemoryStore,
    ManifestEntry,
    StoreHeader,
    get_record,
    open_store,
    read_manifest,
    write_store,
)

__version__ = "0.1.0"

__all__ = [
    "ClassSpec",
    "ConfigError",
    "ContractError",
    "DataError",
    "DetectionRecord",
    "DtmError",
    "EmbeddingStore",
    "EvalQuery",
    "EvalReport",
    "FeatureMap",
    "GapDescriptor",
    "GapRetriever",
    "InMemoryStore",
    "InvalidInputError",
    "ManifestEntry",
    "PlantedBlock",
    "QuerySpec",
    "RetrievalResult",
    "RoiBox",
    "ScoreMap",
    "ScoreValue",
    "SearchConfig",
    "ShapeError",
    "SimilarityTensor",
    "StoreCorruptionError",
    "StoreFormatError",
    "StoreHeader",
    "SynthConfig",
    "SynthResult",
    "Template",
    "TemplateMatcher",
    "bin_queries_by_roi_area",
    "di_rank",
    "gap_descriptor",
    "gap_search",
    "generate_synthetic",
    "get_record",
    "hit_rate_at_n",
    "l2_normalize_channels",
    "maxpool_downsample",
    "measure_plant_separability",
    "open_store",
    "project_roi",
    "queries_from_plants",
    "read_detections",
    "read_manifest",
    "run_experiment",
    "sample_match_map",
    "score",
    "score_batch",
    "score_map",
    "search",
    "search_multi",
    "similarity_tensor",
    "validate_feature_map",
    "write_store",
]
