"""Central finite-difference checks for every differentiable path.

A coordinate is only compared when the piecewise structure (ReLU masks,
pooling winners, morphology winners, clamps) is identical at ``x - h``,
``x`` and ``x + h``; otherwise the difference quotient straddles a kink
and says nothing about the analytic gradient. Rejected draws are
resampled and counted.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph import build_grid_graph, pool_mask, pool_node_features, backprop_pool
from .losses import LossConfig, combined_loss, cross_entropy_loss, soft_cldice_loss, soft_skeleton
from .nn.layers import conv_backward, conv_forward, gcn_backward, gcn_forward, normalized_adjacency
from .nn.model import NUM_GCN, ScopeNet, softmax

STEP = 1e-5
TOLERANCE = 1e-4
REL_FLOOR = 1e-6


@dataclass
class CheckResult:
    component: str
    max_rel_error: float
    checked: int
    rejected: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE and self.checked > 0


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def _digest(*arrays) -> bytes:
    h = hashlib.sha1()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.digest()


def check_coordinates(
    name: str,
    target: np.ndarray,
    grad: np.ndarray,
    evaluate: Callable[[], tuple[float, bytes]],
    rng: np.random.Generator,
    count: int,
    step: float = STEP,
    max_draws: int | None = None,
) -> CheckResult:
    """Compare ``grad`` with central differences at random entries of ``target``.

    ``evaluate`` returns ``(loss, structure signature)`` for the current
    contents of ``target``, which is modified in place and restored.
    """
    max_draws = max_draws or 50 * count
    _, base_sig = evaluate()
    worst, checked, rejected = 0.0, 0, 0
    for _ in range(max_draws):
        if checked == count:
            break
        idx = tuple(int(rng.integers(s)) for s in target.shape)
        old = target[idx]
        target[idx] = old + step
        f_plus, sig_plus = evaluate()
        target[idx] = old - step
        f_minus, sig_minus = evaluate()
        target[idx] = old
        if sig_plus != base_sig or sig_minus != base_sig:
            rejected += 1
            continue
        worst = max(worst, rel_error(float(grad[idx]), (f_plus - f_minus) / (2 * step)))
        checked += 1
    return CheckResult(name, worst, checked, rejected)


def _conv_suite(rng, count, perturb):
    x = rng.normal(size=(5, 6, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    r = rng.normal(size=(5, 6, 3))

    def evaluate():
        out, (_, pre, *_rest) = conv_forward(x, w, b)
        return float((out * r).sum()), _digest(pre > 0)

    _, cache = conv_forward(x, w, b)
    gx, gw, gb = conv_backward(r, cache)
    gx = gx + perturb
    results = [
        check_coordinates("conv.input", x, gx, evaluate, rng, count),
        check_coordinates("conv.weight", w, gw, evaluate, rng, count),
        check_coordinates("conv.bias", b, gb, evaluate, rng, count),
    ]
    return _merge("conv", results)


def _pool_suite(rng, count, perturb):
    results = []
    for n in (1, 2, 3):
        grid = build_grid_graph(6, 6, n).grid
        field = rng.normal(size=(6, 6, 2))
        r = rng.normal(size=(grid.num_nodes, 2))

        def evaluate(field=field, grid=grid, r=r):
            feats, arg = pool_node_features(field, grid)
            return float((feats * r).sum()), _digest(arg)

        _, arg = pool_node_features(field, grid)
        g = backprop_pool(r, arg, grid) + perturb
        results.append(check_coordinates(f"pool.n{n}", field, g, evaluate, rng, count))
    return _merge("pool", results)


def _gcn_suite(rng, count, perturb):
    graph = build_grid_graph(4, 5, 1)
    a = normalized_adjacency(graph)
    h = rng.normal(size=(graph.num_nodes, 4))
    w = rng.normal(size=(4, 3))
    b = rng.normal(size=3)
    r = rng.normal(size=(graph.num_nodes, 3))

    def evaluate():
        out, (_, _, pre, *_rest) = gcn_forward(a, h, w, b)
        return float((out * r).sum()), _digest(pre > 0)

    _, cache = gcn_forward(a, h, w, b)
    gh, gw, gb = gcn_backward(r, cache)
    gh = gh + perturb
    results = [
        check_coordinates("gcn.input", h, gh, evaluate, rng, count),
        check_coordinates("gcn.weight", w, gw, evaluate, rng, count),
        check_coordinates("gcn.bias", b, gb, evaluate, rng, count),
    ]
    return _merge("gcn", results)


def _ce_suite(rng, count, perturb):
    logits = rng.normal(scale=2.0, size=(12, 2))
    labels = rng.integers(0, 2, 12)
    _, g = cross_entropy_loss(logits, labels)
    g = g + perturb

    def evaluate():
        return cross_entropy_loss(logits, labels)[0], b""

    return check_coordinates("ce", logits, g, evaluate, rng, count)


def _skeleton_signature(field: np.ndarray, k: int) -> bytes:
    _, (steps, clip_mask) = soft_skeleton(field, k, return_tape=True)
    parts = [clip_mask]
    for e_idx, o_idx, d_pos, _delta, _skel, u_pos in steps:
        parts += [o_idx, d_pos]
        if e_idx is not None:
            parts += [e_idx, u_pos]
    return _digest(*parts)


def _cldice_suite(rng, count, perturb):
    cfg = LossConfig(kind="cldice", k=4)
    pred = rng.uniform(0.02, 0.98, size=(9, 9))
    gt = np.zeros((9, 9))
    gt[3:6, :] = 1.0
    gt[:, 4] = 1.0
    _, g = soft_cldice_loss(pred, gt, cfg)
    g = g + perturb

    def evaluate():
        return soft_cldice_loss(pred, gt, cfg)[0], _skeleton_signature(pred, cfg.k)

    return check_coordinates("soft_cldice", pred, g, evaluate, rng, count)


def _net_signature(net: ScopeNet, cache, logits, grid, cfg: LossConfig) -> bytes:
    parts = [cache.pool_argmax]
    parts += [c[1] > 0 for c in cache.conv]
    parts += [cache.gcn[j][2] > 0 for j in sorted(cache.gcn)]
    sig = _digest(*parts)
    if cfg.kind != "ce":
        field = softmax(logits)[:, 1].reshape(grid.rows, grid.cols)
        sig += _skeleton_signature(field, cfg.k)
    return sig


def _random_net(rng, seed) -> ScopeNet:
    net = ScopeNet(seed=seed)
    # non-zero biases keep units off the ReLU kink at exactly 0
    for name, p in net.params.items():
        if name.endswith(".bias"):
            p[:] = rng.uniform(-0.1, 0.1, size=p.shape)
    return net


def _network_case(rng, seed, n, cfg):
    net = _random_net(rng, seed)
    graph = build_grid_graph(6, 6, n)
    image = rng.uniform(size=(6, 6))
    mask = np.zeros((6, 6), dtype=np.uint8)
    mask[2:4, :] = 1
    labels = pool_mask(mask, graph.grid)

    def evaluate():
        logits, cache = net.forward(image, graph)
        loss, _ = combined_loss(logits, labels, graph.grid, cfg)
        return loss, _net_signature(net, cache, logits, graph.grid, cfg)

    logits, cache = net.forward(image, graph)
    _, g_logits = combined_loss(logits, labels, graph.grid, cfg)
    grads = net.backward(cache, g_logits)
    return net, grads, evaluate


def _layer_suite(rng, count, perturb, seed):
    """Every GCN layer (and so every skip concatenation) inside the network."""
    cfg = LossConfig(kind="ce")
    net, grads, evaluate = _network_case(rng, seed, 1, cfg)
    results = []
    for j in range(1, NUM_GCN + 1):
        parts = []
        for suffix in ("weight", "bias"):
            name = f"gcn{j}.{suffix}"
            parts.append(check_coordinates(name, net.params[name], grads[name] + perturb, evaluate, rng, count))
        results.append(_merge(f"net.gcn{j}", parts))
    return results


def _end_to_end_suite(rng, count, perturb, seed):
    results = []
    for n in (1, 2):
        cfg = LossConfig(kind="ce_plus_cldice", k=3)
        net, grads, evaluate = _network_case(rng, seed + n, n, cfg)
        names = list(net.params)
        checked, rejected, worst = 0, 0, 0.0
        # random parameter coordinates spread over all groups
        while checked < count and rejected < 50 * count:
            name = names[int(rng.integers(len(names)))]
            r = check_coordinates(name, net.params[name], grads[name] + perturb, evaluate, rng, 1, max_draws=1)
            checked += r.checked
            rejected += r.rejected
            worst = max(worst, r.max_rel_error)
        results.append(CheckResult(f"end_to_end.n{n}", worst, checked, rejected))
    return _merge("end_to_end", results)


def _merge(name: str, results: list[CheckResult]) -> CheckResult:
    checked = sum(r.checked for r in results)
    # a sub-check that found no admissible coordinate makes the group fail
    worst = max(r.max_rel_error if r.checked else np.inf for r in results)
    return CheckResult(name, worst, checked, sum(r.rejected for r in results))


def run_gradcheck(seed: int = 0, count: int = 10, perturb: float = 0.0) -> list[CheckResult]:
    """Run all suites. ``perturb`` is added to every analytic gradient (detector test hook)."""
    rng = np.random.default_rng(seed)
    results = [
        _conv_suite(rng, count, perturb),
        _pool_suite(rng, count, perturb),
        _gcn_suite(rng, count, perturb),
        *_layer_suite(rng, count, perturb, seed),
        _ce_suite(rng, count, perturb),
        _cldice_suite(rng, count, perturb),
        _end_to_end_suite(rng, 20, perturb, seed),
    ]
    return results
