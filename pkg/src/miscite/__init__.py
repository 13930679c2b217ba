"""Miscitation detection: an LLM reasons over evidence chains and a graph
neural network student learns from its reasoning states."""

from .backends import HttpBackend, MockBackend
from .chain import ChainConfig, EvidenceChain, build_chain, expand_sources, filter_hop
from .encoder import EncoderSpec, Embedding, cosine_sim, encode_graph, encode_text
from .graph import CitationEdge, CitationGraph, DatasetSplit, GraphError, Publication, load_graph, split_edges, validate
from .losses import entropy, infonce_loss, task_loss
from .metrics import MetricsReport, auc, f1_precision
from .reasoner import TeacherTrace, TraceStore, reason_edge
from .student import StudentDims, StudentModel, init_model, load_checkpoint, save_checkpoint
from .synthetic import SyntheticConfig, generate_synthetic
from .trainer import TrainConfig, select_uncertain, train

__version__ = "0.1.0"

__all__ = [
    "HttpBackend", "MockBackend", "ChainConfig", "EvidenceChain", "build_chain", "expand_sources", "filter_hop",
    "EncoderSpec", "Embedding", "cosine_sim", "encode_graph", "encode_text", "CitationEdge", "CitationGraph",
    "DatasetSplit", "GraphError", "Publication", "load_graph", "split_edges", "validate", "entropy",
    "infonce_loss", "task_loss", "MetricsReport", "auc", "f1_precision", "TeacherTrace", "TraceStore",
    "reason_edge", "StudentDims", "StudentModel", "init_model", "load_checkpoint", "save_checkpoint",
    "SyntheticConfig", "generate_synthetic", "TrainConfig", "select_uncertain", "train", "__version__",
]
