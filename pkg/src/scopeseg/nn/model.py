"""The segmentation network: conv feature generator + 11-layer GCN stack.

Wiring of the graph module (``out[0]`` is the pooled 64-channel node
features, ``out[j]`` the output of GCN layer ``j``)::

    layer 1        in = out[0]                    64 -> 32
    layers 2-4     in = out[j-1]                  32 -> 32
    layers 5-10    in = [out[j-4], out[j-1]]      64 -> 32   (local skips)
    layer 11       in = [out[0], out[10]]         96 -> 2    (head, no ReLU)

A local skip takes the through-input of layer ``i = j - 3`` (that is,
``out[i-1]``) and concatenates it with the output of layer ``i + 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..graph import GridGraph, backprop_pool, pool_node_features
from .layers import conv_backward, conv_forward, gcn_backward, gcn_forward, normalized_adjacency

CONV_WIDTHS = (1, 16, 32, 64)
NUM_GCN = 11
HIDDEN = 32
NUM_CLASSES = 2


def gcn_inputs(num_layers: int = NUM_GCN) -> dict[int, tuple[int, ...]]:
    """Source indices (into ``out``) concatenated to form each layer's input."""
    inputs = {1: (0,)}
    for j in range(2, num_layers):
        inputs[j] = (j - 4, j - 1) if j >= 5 else (j - 1,)
    inputs[num_layers] = (0, num_layers - 1)
    return inputs


def _widths(feat_dim: int, num_layers: int) -> dict[int, tuple[int, int]]:
    out_width = {0: feat_dim}
    widths = {}
    for j, srcs in gcn_inputs(num_layers).items():
        c_in = sum(out_width[s] for s in srcs)
        c_out = NUM_CLASSES if j == num_layers else HIDDEN
        widths[j] = (c_in, c_out)
        out_width[j] = c_out
    return widths


def param_shapes(feat_dim: int = CONV_WIDTHS[-1], num_layers: int = NUM_GCN) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for k in range(1, len(CONV_WIDTHS)):
        shapes[f"conv{k}.weight"] = (3, 3, CONV_WIDTHS[k - 1], CONV_WIDTHS[k])
        shapes[f"conv{k}.bias"] = (CONV_WIDTHS[k],)
    for j, (c_in, c_out) in _widths(feat_dim, num_layers).items():
        shapes[f"gcn{j}.weight"] = (c_in, c_out)
        shapes[f"gcn{j}.bias"] = (c_out,)
    if _widths(feat_dim, num_layers)[num_layers][0] != feat_dim + HIDDEN:
        raise ValueError("wiring inconsistency: head width")
    return shapes


def init_params(seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, drawn in a fixed order."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
            continue
        if len(shape) == 4:
            fan_in, fan_out = 9 * shape[2], 9 * shape[3]
        else:
            fan_in, fan_out = shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass
class ForwardCache:
    graph: GridGraph
    a_norm: object
    conv: list = field(default_factory=list)
    pool_argmax: np.ndarray | None = None
    gcn: dict = field(default_factory=dict)
    widths: dict = field(default_factory=dict)
    precomputed: bool = False


class ScopeNet:
    """Parameters plus forward/backward for one patch size.

    ``forward`` accepts either a gray image ``(H, W)`` or a precomputed
    pixel feature map ``(H, W, 64)``; the latter bypasses the conv stack.
    """

    def __init__(self, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.params = init_params(seed) if params is None else params
        expected = param_shapes()
        for name, shape in expected.items():
            if name not in self.params or self.params[name].shape != shape:
                got = self.params[name].shape if name in self.params else None
                raise ValueError(f"parameter {name}: expected {shape}, got {got}")
        self._adj_cache: dict = {}

    def adjacency(self, graph: GridGraph):
        key = (graph.grid, graph.edges.shape[0])
        if key not in self._adj_cache:
            self._adj_cache[key] = normalized_adjacency(graph)
        return self._adj_cache[key]

    def features(self, image: np.ndarray, cache: ForwardCache | None = None) -> np.ndarray:
        x = np.asarray(image, dtype=np.float64)
        if x.ndim == 3 and x.shape[2] == CONV_WIDTHS[-1]:
            if cache is not None:
                cache.precomputed = True
            return x
        if x.ndim == 2:
            x = x[:, :, None]
        for k in range(1, len(CONV_WIDTHS)):
            x, c = conv_forward(x, self.params[f"conv{k}.weight"], self.params[f"conv{k}.bias"])
            if cache is not None:
                cache.conv.append(c)
        return x

    def forward(self, image: np.ndarray, graph: GridGraph, a_norm=None):
        """Returns ``(logits (N, 2), cache)``."""
        a_norm = self.adjacency(graph) if a_norm is None else a_norm
        cache = ForwardCache(graph=graph, a_norm=a_norm)
        pix = self.features(image, cache)
        f_c, cache.pool_argmax = pool_node_features(pix, graph.grid)
        logits = self.graph_forward(a_norm, f_c, cache)
        return logits, cache

    def graph_forward(self, a_norm, f_c: np.ndarray, cache: ForwardCache | None = None) -> np.ndarray:
        outs = {0: f_c}
        for j, srcs in gcn_inputs().items():
            h = np.concatenate([outs[s] for s in srcs], axis=1) if len(srcs) > 1 else outs[srcs[0]]
            outs[j], c = gcn_forward(
                a_norm, h, self.params[f"gcn{j}.weight"], self.params[f"gcn{j}.bias"], relu=j < NUM_GCN
            )
            if cache is not None:
                cache.gcn[j] = c
                cache.widths[j] = [outs[s].shape[1] for s in srcs]
        return outs[NUM_GCN]

    def backward(self, cache: ForwardCache, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        if grad_logits.shape != (cache.graph.num_nodes, NUM_CLASSES) or not cache.gcn:
            raise ValueError("stale or mismatched forward cache")
        g_out = {NUM_GCN: grad_logits}
        for j in range(NUM_GCN, 0, -1):
            g_in, grads[f"gcn{j}.weight"], grads[f"gcn{j}.bias"] = gcn_backward(g_out.pop(j), cache.gcn[j])
            offset = 0
            for s, w in zip(gcn_inputs()[j], cache.widths[j]):
                part = g_in[:, offset : offset + w]
                g_out[s] = g_out[s] + part if s in g_out else part
                offset += w
        g_pix = backprop_pool(g_out[0], cache.pool_argmax, cache.graph.grid)
        if not cache.precomputed:
            self.features_backward(cache, g_pix, grads)
        return grads

    def features_backward(self, cache: ForwardCache, g_pix: np.ndarray, grads: dict) -> None:
        for k in range(len(CONV_WIDTHS) - 1, 0, -1):
            g_pix, grads[f"conv{k}.weight"], grads[f"conv{k}.bias"] = conv_backward(g_pix, cache.conv[k - 1])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class PixelClassifier:
    """Conv feature generator with a per-pixel linear head (1x1 conv, 64 -> 2).

    Used to pretrain the generator on its own before it is placed under the
    graph module; the head is discarded afterwards.
    """

    def __init__(self, seed: int):
        self.net = ScopeNet(seed=seed)
        rng = np.random.default_rng([seed, 1])
        c = CONV_WIDTHS[-1]
        bound = np.sqrt(6.0 / (c + NUM_CLASSES))
        self.params = {k: v for k, v in self.net.params.items() if k.startswith("conv")}
        self.params["head.weight"] = rng.uniform(-bound, bound, size=(c, NUM_CLASSES))
        self.params["head.bias"] = np.zeros(NUM_CLASSES)
        self.net.params.update(self.params)

    def forward(self, image: np.ndarray):
        cache = ForwardCache(graph=None, a_norm=None)
        feats = self.net.features(image, cache)
        flat = feats.reshape(-1, feats.shape[2])
        logits = flat @ self.params["head.weight"] + self.params["head.bias"]
        return logits, (cache, flat, feats.shape)

    def backward(self, state, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        cache, flat, shape = state
        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        grads["head.weight"] = flat.T @ grad_logits
        grads["head.bias"] = grad_logits.sum(axis=0)
        g_pix = (grad_logits @ self.params["head.weight"].T).reshape(shape)
        self.net.features_backward(cache, g_pix, grads)
        return grads

    def conv_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items() if k.startswith("conv")}
