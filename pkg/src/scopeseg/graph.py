"""Patch-grid visual graph: vertices, 8-neighbour edges, pooling and mapping.

Vertex ``v = row * cols + col`` owns the ``n x n`` pixel block starting at
``(row * n, col * n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("patch size must be positive")
        if self.height % self.n or self.width % self.n:
            raise ValueError(
                f"patch size {self.n} does not divide image {self.height}x{self.width}"
            )

    @property
    def rows(self) -> int:
        return self.height // self.n

    @property
    def cols(self) -> int:
        return self.width // self.n

    @property
    def num_nodes(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class GridGraph:
    grid: PatchGrid
    edges: np.ndarray  # (E, 2) int64, i < j, lexicographically sorted

    @property
    def num_nodes(self) -> int:
        return self.grid.num_nodes

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.num_nodes)


def build_grid_graph(height: int, width: int, n: int) -> GridGraph:
    grid = PatchGrid(height, width, n)
    rows, cols = grid.rows, grid.cols
    ids = np.arange(rows * cols).reshape(rows, cols)
    pairs = [
        (ids[:, :-1], ids[:, 1:]),      # east
        (ids[:-1, :], ids[1:, :]),      # south
        (ids[:-1, :-1], ids[1:, 1:]),   # south-east
        (ids[:-1, 1:], ids[1:, :-1]),   # south-west
    ]
    a = np.concatenate([p[0].ravel() for p in pairs])
    b = np.concatenate([p[1].ravel() for p in pairs])
    edges = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return GridGraph(grid, edges[order])


def _blocks(field: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """(H, W, C) -> (N, n*n, C), patch pixels in row-major order."""
    n, c = grid.n, field.shape[2]
    x = field.reshape(grid.rows, n, grid.cols, n, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(grid.num_nodes, n * n, c)


def pool_node_features(field: np.ndarray, grid: PatchGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-patch channel max.

    Returns ``(features (N, C), argmax)`` where ``argmax[v, c]`` is the flat
    pixel index (``y * W + x``) of the winning pixel, first in row-major
    order on ties.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 2:
        field = field[:, :, None]
    if field.shape[:2] != (grid.height, grid.width):
        raise ValueError(f"field {field.shape[:2]} does not match grid {grid}")
    blocks = _blocks(field, grid)
    local = blocks.argmax(axis=1)  # (N, C)
    feats = np.take_along_axis(blocks, local[:, None, :], axis=1)[:, 0, :]
    n = grid.n
    vrow, vcol = np.divmod(np.arange(grid.num_nodes), grid.cols)
    dy, dx = np.divmod(local, n)
    pix = (vrow[:, None] * n + dy) * grid.width + vcol[:, None] * n + dx
    return feats, pix


def backprop_pool(grad_nodes: np.ndarray, argmax: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Route node gradients to the winning pixels; returns (H, W, C)."""
    grad_nodes = np.asarray(grad_nodes, dtype=np.float64)
    if grad_nodes.shape != argmax.shape or argmax.shape[0] != grid.num_nodes:
        raise ValueError("gradient / argmax cache shape mismatch")
    c = grad_nodes.shape[1]
    out = np.zeros((grid.height * grid.width, c))
    # patches are disjoint, so each pixel wins at most once per channel
    out[argmax, np.arange(c)[None, :]] = grad_nodes
    return out.reshape(grid.height, grid.width, c)


def reshape_nodes_to_grid(values, grid: PatchGrid) -> np.ndarray:
    """Row-major vertex vector -> (rows, cols) field."""
    values = np.asarray(values)
    if values.shape[0] != grid.num_nodes:
        raise ValueError(f"expected {grid.num_nodes} node values, got {values.shape[0]}")
    return values.reshape((grid.rows, grid.cols) + values.shape[1:])


def nodes_to_pixels(values, grid: PatchGrid) -> np.ndarray:
    """Nearest-neighbour expansion of node values to their n x n blocks."""
    field = reshape_nodes_to_grid(values, grid)
    n = grid.n
    return np.repeat(np.repeat(field, n, axis=0), n, axis=1)


def pool_mask(mask, grid: PatchGrid) -> np.ndarray:
    """Node labels from a pixel mask: a patch is foreground if any pixel is."""
    feats, _ = pool_node_features(np.asarray(mask, dtype=np.float64), grid)
    return (feats[:, 0] > 0).astype(np.uint8)
