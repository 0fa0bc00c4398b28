"""Training objectives: soft skeleton, soft clDice, cross-entropy.

Soft erosion and dilation are min/max filters. Each filter output copies
one input value, so it is stored as a gather index; gradients flow back by
scattering onto that source (first extremum in row-major window order).

Outside the canvas is background: erosion sees zeros beyond the border
(index ``H*W`` in the gather maps is that constant zero). Dilation ignores
out-of-bounds neighbours, which is equivalent for non-negative fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import PatchGrid, reshape_nodes_to_grid
from .nn.model import softmax

CROSS = ((-1, 0), (0, -1), (0, 0), (0, 1), (1, 0))
SQUARE = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))

LOSS_KINDS = ("ce", "cldice", "ce_plus_cldice")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "cldice"
    k: int = 10
    epsilon: float = 1e-6
    lam: float = 0.5

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.k < 1:
            raise ValueError("skeleton iterations must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")


def filter_index(x: np.ndarray, offsets, largest: bool) -> np.ndarray:
    """Flat source index of the window extremum at every pixel.

    Max filters skip out-of-bounds neighbours; min filters see a zero there,
    returned as the sentinel index ``x.size``.
    """
    h, w = x.shape
    fill = -np.inf if largest else 0.0
    xp = np.pad(x, 1, constant_values=fill)
    ip = np.pad(np.arange(h * w).reshape(h, w), 1, constant_values=h * w)
    vals = np.stack([xp[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] for dy, dx in offsets])
    idx = np.stack([ip[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] for dy, dx in offsets])
    pick = vals.argmax(axis=0) if largest else vals.argmin(axis=0)
    return np.take_along_axis(idx, pick[None], axis=0)[0]


def _gather(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.append(x.ravel(), 0.0)[idx]


def soft_erode(x: np.ndarray) -> np.ndarray:
    return _gather(x, filter_index(x, CROSS, largest=False))


def soft_dilate(x: np.ndarray) -> np.ndarray:
    return _gather(x, filter_index(x, SQUARE, largest=True))


def _open_index(x: np.ndarray) -> np.ndarray:
    e_idx = filter_index(x, CROSS, largest=False)
    eroded = _gather(x, e_idx)
    # dilation never picks an out-of-bounds neighbour, so the lookup stays in range
    return e_idx.ravel()[filter_index(eroded, SQUARE, largest=True)]


def soft_open(x: np.ndarray) -> np.ndarray:
    return _gather(x, _open_index(x))


def _scatter(grad: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Adjoint of ``_gather``; contributions to the zero sentinel are dropped."""
    out = np.bincount(idx.ravel(), weights=grad.ravel(), minlength=grad.size + 1)
    return out[: grad.size].reshape(grad.shape)


def soft_skeleton(field: np.ndarray, k: int, return_tape: bool = False):
    """Iterative soft skeleton of a probability field, clamped to [0, 1]."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x = np.asarray(field, dtype=np.float64)
    o_idx = _open_index(x)
    d = x - _gather(x, o_idx)
    skel = np.maximum(d, 0.0)
    steps = [(None, o_idx, d > 0, None, None, None)]
    for _ in range(k):
        e_idx = filter_index(x, CROSS, largest=False)
        x = _gather(x, e_idx)
        o_idx = _open_index(x)
        d = x - _gather(x, o_idx)
        delta = np.maximum(d, 0.0)
        u = delta * (1.0 - skel)
        steps.append((e_idx, o_idx, d > 0, delta, skel, u > 0))
        skel = skel + np.maximum(u, 0.0)
    out = np.clip(skel, 0.0, 1.0)
    if not return_tape:
        return out
    return out, (steps, (skel >= 0.0) & (skel <= 1.0))


def soft_skeleton_backward(grad_out: np.ndarray, tape) -> np.ndarray:
    """Gradient of ``sum(grad_out * soft_skeleton(field))`` w.r.t. ``field``."""
    steps, clip_mask = tape
    g_skel = grad_out * clip_mask
    g_x = np.zeros_like(grad_out, dtype=np.float64)
    for e_idx, o_idx, d_pos, delta, skel_prev, u_pos in reversed(steps):
        if e_idx is None:
            g_d = g_skel * d_pos
        else:
            g_u = g_skel * u_pos
            g_d = g_u * (1.0 - skel_prev) * d_pos
            g_skel = g_skel - g_u * delta
        g_x = g_x + g_d - _scatter(g_d, o_idx)
        if e_idx is not None:
            g_x = _scatter(g_x, e_idx)
    return g_x


def soft_cldice_loss(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig = LossConfig()):
    """``(loss, d loss / d pred)`` for a probability field against a 0/1 field."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    eps = cfg.epsilon
    sp, tape = soft_skeleton(pred, cfg.k, return_tape=True)
    sg = soft_skeleton(gt, cfg.k)
    b = sp.sum() + eps
    d = sg.sum() + eps
    tprec = ((sp * gt).sum() + eps) / b
    tsens = ((sg * pred).sum() + eps) / d
    s = tprec + tsens
    loss = 1.0 - 2.0 * tprec * tsens / s
    dl_dprec = -2.0 * tsens**2 / s**2
    dl_dsens = -2.0 * tprec**2 / s**2
    grad = dl_dsens * sg / d + soft_skeleton_backward(dl_dprec * (gt - tprec) / b, tape)
    return float(loss), grad


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood over nodes and its gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64).ravel()
    if labels.shape[0] != logits.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {logits.shape[0]} nodes")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def combined_loss(logits: np.ndarray, labels: np.ndarray, grid: PatchGrid, cfg: LossConfig = LossConfig()):
    """CE, soft clDice on the reshaped foreground probabilities, or a mix.

    ``labels`` are node labels (a patch is foreground if any pixel is).
    The mix is ``lam * CE + (1 - lam) * clDice``.
    """
    labels = np.asarray(labels).ravel()
    if cfg.kind == "ce":
        return cross_entropy_loss(logits, labels)
    p1 = softmax(logits)[:, 1]
    field = reshape_nodes_to_grid(p1, grid)
    gt = reshape_nodes_to_grid(labels.astype(np.float64), grid)
    cl, g_field = soft_cldice_loss(field, gt, cfg)
    g_p1 = g_field.ravel() * p1 * (1.0 - p1)
    g_cl = np.stack([-g_p1, g_p1], axis=1)
    if cfg.kind == "cldice":
        return cl, g_cl
    ce, g_ce = cross_entropy_loss(logits, labels)
    lam = cfg.lam
    return lam * ce + (1.0 - lam) * cl, lam * g_ce + (1.0 - lam) * g_cl
