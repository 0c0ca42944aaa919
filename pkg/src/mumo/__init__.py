"""Multimodal molecular representation learning on a unified 2D/3D graph."""

from .smiles import Atom, Bond, Molecule, parse_smiles, featurize_atoms, featurize_bonds
from .tokenizer import Vocab, TokenSequence, tokenize, tokenize_chars, build_vocab, encode, decode
from .geometry import (
    GeomTriplet,
    RigidTransform,
    apply_rigid_transform,
    geometric_triplet,
    radius_edges,
    random_rotation,
    torsion_cross,
    torsion_standard,
)
from .unigraph import (
    GraphConfig,
    PaddedNodeSeq,
    UnifiedGraph,
    batch_graphs,
    build_unified_graph,
    global_add_pool,
    rebatch_node_states,
    unbatch_node_states,
)
from .partition import CutRuleSet, SegmentedGraph, annotate_fragments, compute_cut_set, segment_graph
from .checkpoint import Checkpoint
from .model import Batch, GraphState, ModelConfig, MuMo, count_params, init_params
from .config import RunConfig, load_run_config
from .train import (
    Fingerprint,
    MlmBatch,
    OptimizerState,
    adam_step,
    embedding_similarity_report,
    lr_schedule,
    metrics_auroc,
    metrics_regression,
    mlm_loss,
    mlm_mask,
    morgan_fp,
    pearson,
    similarity,
)

__version__ = "0.1.0"
