"""Sequence labeling core: BiGRU encoder, linear-chain CRF, training, events."""

from .augment import AugmentResources, DictionaryTranslator, augment, load_augment_resources
from .crf import NEG_INF, log_partition, nll, nll_gradients, sequence_score, viterbi
from .events import EventArgument, EventRecord, assemble_events, extract_events
from .gru import GruDirection, GruParams, bigru_forward, gru_cell
from .network import SequenceModel
from .serialize import load_model, model_hash, save_model
from .training import TrainConfig, train, train_dev_split

__all__ = [
    "AugmentResources",
    "DictionaryTranslator",
    "EventArgument",
    "EventRecord",
    "GruDirection",
    "GruParams",
    "NEG_INF",
    "SequenceModel",
    "TrainConfig",
    "assemble_events",
    "augment",
    "bigru_forward",
    "extract_events",
    "gru_cell",
    "load_augment_resources",
    "load_model",
    "log_partition",
    "model_hash",
    "nll",
    "nll_gradients",
    "save_model",
    "sequence_score",
    "train",
    "train_dev_split",
    "viterbi",
]
