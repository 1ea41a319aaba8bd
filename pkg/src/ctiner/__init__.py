"""Trainable NER toolkit for cyber-threat-intelligence text.

Pipeline: BIO corpora -> mixed token features -> BiLSTM/multi-head-attention
encoder -> gated internal (embedding-neighbor) and external (contextual-LM)
semantic augmentation -> softmax tagging, with strict entity-level
evaluation and a reproducible training CLI.
"""

from .cbow import CbowConfig, EmbeddingModel, train_cbow
from .corpus import (
    EntitySpan,
    LabeledCorpus,
    Sentence,
    Token,
    Vocabulary,
    build_vocab,
    extract_entities,
    load_conll,
    spans_to_bio,
    split_corpus,
)
from .config import RunConfig, default_config, load_config, save_config
from .encoder import ContextEncoder, EncoderConfig, scaled_dot_attention
from .evaluation import (
    MetricsReport,
    evaluate_labels,
    per_type_report,
    strict_match_prf,
    token_accuracy,
)
from .external import (
    PrecomputedProvider,
    StubProvider,
    align_subtokens,
    pool_and_project,
)
from .features import (
    MixedFeatureConfig,
    WordEmbeddingTable,
    classify_component,
    pretrain_pos_embeddings,
)
from .fusion import GateLayer, decode_labels, sequence_loss
from .internal import (
    NeighborCache,
    SoftNeighborAttention,
    hsa_augment,
    knn_neighbors,
    train_domain_embeddings,
)
from .model import (
    AugmentationSwitches,
    ModelConfig,
    TaggerModel,
    load_checkpoint,
    save_checkpoint,
)
from .pipeline import BatchBuilder, Resources
from .training import (
    ABLATION_ORDER,
    TrainConfig,
    evaluate_model,
    fit,
    predict_labels,
    run_ablation,
    train_model,
)

__version__ = "0.1.0"
