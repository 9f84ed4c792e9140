"""Subspace contrastive learning over precomputed text embeddings.

A self-expressive head turns each batch into an affinity matrix and
virtual positive samples; a cluster-wise contrastive loss with adaptive
temperature trains it; spectral clustering or k-means on the result,
scored by ACC and NMI, closes the loop.
"""
from .clustering import ClusterResult, kmeans, spectral_cluster, symmetrize
from .data_io import SynthSpec, read_embeddings, synth_subspace_dataset, write_embeddings
from .losses import LossConfig, total_loss
from .metrics import clustering_accuracy, hungarian_assignment, nmi
from .model import ModelParams, embed, forward, infer_affinity, init_params
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ClusterResult", "LossConfig", "ModelParams", "SynthSpec", "TrainConfig",
    "clustering_accuracy", "embed", "forward", "hungarian_assignment", "infer_affinity",
    "init_params", "kmeans",
    "nmi", "read_embeddings", "spectral_cluster", "symmetrize", "synth_subspace_dataset",
    "total_loss", "train", "write_embeddings",
]
