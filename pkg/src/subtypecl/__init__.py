"""Subtype-guided contrastive learning for functional brain-connectivity cohorts."""

from .cohort import (
    Cohort,
    ConnectivityMatrix,
    Subject,
    compute_pcc,
    load_cohort,
    save_cohort,
    validate_subject,
)
from .contrastive import (
    BatchSample,
    ConnectomeEncoder,
    ConnectomeEncoderConfig,
    LabelQueue,
    QueueEntry,
    TrainerConfig,
    TrainState,
    encode,
    enqueue,
    hard_negative_select,
    info_nce,
    momentum_update,
    predict_scores,
    total_loss,
    train,
)
from .errors import ConfigError, DataError, NumericsError, ProviderError, SubtypeclError
from .evaluation import (
    MetricEntry,
    MetricReport,
    VariantSpec,
    compute_metrics,
    export_embedding_2d,
    kfold_split,
    run_fold,
    run_variant,
)
from .fusion import FusedSimilarity, SnfConfig, affinity_from_similarity, snf_fuse
from .prototypes import (
    AttentionParams,
    PrototypeGraph,
    SampleGraph,
    build_prototype,
    node_attention,
    sample_attention,
    top_regions,
)
from .structure import (
    EncoderConfig,
    RoiSeriesEncoder,
    StructureFitResult,
    build_structure,
    encode_roi_series,
    fit_structure_learner,
    structure_loss,
    structure_similarity,
)
from .subtypes import SubtypeAssignment, discover_subtypes, knn_graph, spectral_cluster
from .synth import SynthSpec, ari, generate, write_cohort
from .textview import TextEmbeddingProvider, embed_text, text_similarity
from .views import ViewSimilarity

__version__ = "0.1.0"
