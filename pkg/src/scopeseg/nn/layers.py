"""Forward/backward kernels: 3x3 convolution and graph convolution."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..graph import GridGraph


def _im2col(x: np.ndarray) -> np.ndarray:
    """(H, W, C) -> (H*W, 9*C), columns ordered (ky, kx, c), zero padding 1."""
    h, w, c = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(0, 1))
    return win.transpose(0, 1, 3, 4, 2).reshape(h * w, 9 * c)


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, relu: bool = True):
    """3x3 cross-correlation, stride 1, zero padding 1, optional ReLU.

    ``weight`` has shape ``(3, 3, C_in, C_out)``. Returns ``(out, cache)``.
    """
    if x.ndim != 3 or weight.shape[:3] != (3, 3, x.shape[2]) or bias.shape != weight.shape[3:]:
        raise ValueError(f"conv shape mismatch: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    h, w, _ = x.shape
    cols = _im2col(x)
    pre = cols @ weight.reshape(-1, weight.shape[3]) + bias
    out = np.maximum(pre, 0.0) if relu else pre
    return out.reshape(h, w, -1), (cols, pre, x.shape, weight, relu)


def conv_backward(grad_out: np.ndarray, cache):
    """Returns ``(grad_input, grad_weight, grad_bias)``."""
    cols, pre, in_shape, weight, relu = cache
    h, w, c = in_shape
    g = grad_out.reshape(h * w, -1)
    if relu:
        g = g * (pre > 0)
    grad_w = (cols.T @ g).reshape(weight.shape)
    grad_b = g.sum(axis=0)
    dcols = (g @ weight.reshape(-1, weight.shape[3]).T).reshape(h, w, 3, 3, c)
    dxp = np.zeros((h + 2, w + 2, c))
    for ky in range(3):
        for kx in range(3):
            dxp[ky : ky + h, kx : kx + w] += dcols[:, :, ky, kx]
    return dxp[1:-1, 1:-1], grad_w, grad_b


def normalized_adjacency(graph_or_edges, num_nodes: int | None = None) -> sp.csr_matrix:
    """Symmetric normalisation D^-1/2 (A + I) D^-1/2 as CSR with sorted indices."""
    if isinstance(graph_or_edges, GridGraph):
        edges, num_nodes = graph_or_edges.edges, graph_or_edges.num_nodes
    else:
        edges = np.asarray(graph_or_edges, dtype=np.int64).reshape(-1, 2)
        if num_nodes is None:
            raise ValueError("num_nodes required with a raw edge list")
    loops = np.arange(num_nodes)
    rows = np.concatenate([edges[:, 0], edges[:, 1], loops])
    cols = np.concatenate([edges[:, 1], edges[:, 0], loops])
    a_hat = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(num_nodes, num_nodes))
    a_hat.sum_duplicates()
    inv_sqrt = 1.0 / np.sqrt(np.asarray(a_hat.sum(axis=1)).ravel())
    a_hat = a_hat.tocoo()
    data = inv_sqrt[a_hat.row] * a_hat.data * inv_sqrt[a_hat.col]
    out = sp.csr_matrix((data, (a_hat.row, a_hat.col)), shape=a_hat.shape)
    out.sort_indices()
    return out


def gcn_forward(a_norm, h: np.ndarray, weight: np.ndarray, bias: np.ndarray, relu: bool = True):
    """``act(A_norm @ H @ W + b)``. Returns ``(out, cache)``.

    The sparse product is taken on the ``C_out``-wide side, ``A (H W)``.
    """
    if h.shape[1] != weight.shape[0] or bias.shape != (weight.shape[1],) or a_norm.shape[1] != h.shape[0]:
        raise ValueError(f"gcn shape mismatch: H {h.shape}, W {weight.shape}, A {a_norm.shape}")
    pre = a_norm @ (h @ weight) + bias
    out = np.maximum(pre, 0.0) if relu else pre
    return out, (a_norm, h, pre, weight, relu)


def gcn_backward(grad_out: np.ndarray, cache):
    """Returns ``(grad_h, grad_weight, grad_bias)``; relies on A_norm being symmetric."""
    a_norm, h, pre, weight, relu = cache
    g = grad_out * (pre > 0) if relu else grad_out
    ag = a_norm @ g
    return ag @ weight.T, h.T @ ag, g.sum(axis=0)
