"""Graph-based continuity-preserving vessel segmentation with topological evaluation."""

from .graph import GridGraph, PatchGrid, build_grid_graph, nodes_to_pixels, pool_node_features, reshape_nodes_to_grid
from .imaging import read_pgm, threshold, write_pgm
from .losses import LossConfig, combined_loss, cross_entropy_loss, soft_cldice_loss, soft_skeleton
from .synth import SynthConfig, synth_vessels
from .topology import (
    TopologySummary,
    betti_numbers,
    cldice_metric,
    connected_components,
    euler_characteristic,
    evaluate_pair,
    pixel_metrics,
    skeletonize,
)

__version__ = "0.1.0"
