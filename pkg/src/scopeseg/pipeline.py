"""Dataset generation, training, inference, evaluation and the ablation grid."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, dump, parse_lines
from .graph import build_grid_graph, nodes_to_pixels, pool_mask
from .imaging import read_mask, read_pgm, threshold, write_mask, write_pgm
from .losses import combined_loss, cross_entropy_loss
from .nn import AdamState, PixelClassifier, ScopeNet, adam_step, load_checkpoint, save_checkpoint, softmax
from .nn.checkpoint import CheckpointError
from .synth import SynthConfig, synth_vessels
from .topology import TopologySummary, evaluate_pair

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
CSV_COLUMNS = ("precision", "recall", "dice", "cldice", "err_b0", "err_b1", "err_chi")


class DatasetError(RuntimeError):
    pass


class PairingError(RuntimeError):
    pass


def image_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cmd_synth(count: int, cfg: SynthConfig, out_dir: str | os.PathLike) -> list[tuple[str, str]]:
    """Write ``img_%04d.pgm`` / ``msk_%04d.pgm`` pairs and ``manifest.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    for i in range(count):
        image, mask = synth_vessels(replace(cfg, seed=image_seed(cfg.seed, i)))
        img_name, msk_name = f"img_{i:04d}.pgm", f"msk_{i:04d}.pgm"
        write_pgm(image, out / img_name)
        write_mask(mask, out / msk_name)
        pairs.append((img_name, msk_name))
    (out / MANIFEST).write_text("".join(f"{a} {b}\n" for a, b in pairs), encoding="utf-8")
    return pairs


def load_manifest(data_dir: str | os.PathLike) -> list[tuple[Path, Path]]:
    root = Path(data_dir)
    path = root / MANIFEST
    if not path.is_file():
        raise DatasetError(f"no {MANIFEST} in {root}")
    pairs = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            img, msk = line.split()
            pairs.append((root / img, root / msk))
    if not pairs:
        raise DatasetError(f"empty manifest in {root}")
    return pairs


def split(pairs: list, n_train: int, n_test: int) -> tuple[list, list]:
    """Even indices train, odd indices test, each capped."""
    return pairs[0::2][:n_train], pairs[1::2][:n_test]


def load_pairs(pairs) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(read_pgm(img), read_mask(msk)) for img, msk in pairs]


@dataclass
class TrainResult:
    params: dict
    losses: list[float]


def _accumulate(acc: dict | None, grads: dict) -> dict:
    if acc is None:
        return grads
    for k in acc:
        acc[k] += grads[k]
    return acc


def _batches(rng: np.random.Generator, n: int, size: int):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start : start + size]


def pretrain_features(data: list[tuple[np.ndarray, np.ndarray]], cfg: RunConfig) -> dict[str, np.ndarray]:
    """Train the conv feature generator alone as a per-pixel CE classifier.

    Returns the conv parameters only; the pixel head is dropped.
    """
    model = PixelClassifier(cfg.seed)
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 2])
    labels = [m.ravel() for _, m in data]
    for epoch in range(cfg.pretrain_epochs):
        total = 0.0
        for batch in _batches(rng, len(data), cfg.batch_accum):
            acc = None
            for i in batch:
                logits, cache = model.forward(data[i][0])
                loss, g = cross_entropy_loss(logits, labels[i])
                total += loss
                acc = _accumulate(acc, model.backward(cache, g))
            adam_step(model.params, {k: v / len(batch) for k, v in acc.items()}, state)
        log.info("pretrain epoch %d loss %.6f", epoch + 1, total / len(data))
    return model.conv_params()


def train(
    data: list[tuple[np.ndarray, np.ndarray]],
    cfg: RunConfig,
    features: dict[str, np.ndarray] | None = None,
) -> TrainResult:
    """Single-threaded reference training loop.

    The conv generator starts from ``features`` if given, otherwise from
    ``pretrain_features`` (skipped when ``pretrain_epochs`` is 0). Gradients
    are averaged over ``batch_accum`` images before each Adam step; image
    order is reshuffled every epoch from ``seed``.
    """
    if not data:
        raise DatasetError("no training images")
    h, w = data[0][0].shape
    for i, (image, mask) in enumerate(data):
        if image.shape != (h, w) or mask.shape != (h, w):
            raise DatasetError(f"pair {i} has shape {image.shape}/{mask.shape}, expected {(h, w)}")
    graph = build_grid_graph(h, w, cfg.patch_size)
    labels = [pool_mask(m, graph.grid) for _, m in data]
    if features is None and cfg.pretrain_epochs > 0:
        features = pretrain_features(data, cfg)
    net = ScopeNet(seed=cfg.seed)
    if features is not None:
        net.params.update({k: v.copy() for k, v in features.items()})
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    epoch_losses = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for batch in _batches(rng, len(data), cfg.batch_accum):
            acc = None
            for i in batch:
                logits, cache = net.forward(data[i][0], graph)
                loss, g_logits = combined_loss(logits, labels[i], graph.grid, cfg.loss)
                total += loss
                acc = _accumulate(acc, net.backward(cache, g_logits))
            adam_step(net.params, {k: v / len(batch) for k, v in acc.items()}, state)
        epoch_losses.append(total / len(data))
        log.info("epoch %d loss %.6f", epoch + 1, epoch_losses[-1])
    return TrainResult(net.params, epoch_losses)


def predict(net: ScopeNet, image: np.ndarray, patch_size: int) -> np.ndarray:
    """Foreground probability per pixel (node values replicated over patches)."""
    graph = build_grid_graph(image.shape[0], image.shape[1], patch_size)
    logits, _ = net.forward(image, graph)
    return nodes_to_pixels(softmax(logits)[:, 1], graph.grid)


def cmd_train(cfg: RunConfig, out_dir: str | os.PathLike | None = None) -> tuple[Path, Path]:
    """Train on the even half of the dataset; write ``model.scope`` and ``train_log.csv``."""
    pairs, _ = split(load_manifest(cfg.dataset), cfg.n_train, cfg.n_test)
    result = train(load_pairs(pairs), cfg)
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.scope"
    save_checkpoint(result.params, ckpt)
    log_path = out / "train_log.csv"
    log_path.write_text(
        "epoch,loss\n" + "".join(f"{i + 1},{v:.6f}\n" for i, v in enumerate(result.losses)),
        encoding="utf-8",
    )
    (out / "config.txt").write_text(dump(cfg), encoding="utf-8")
    return ckpt, log_path


def cmd_infer(checkpoint, image_path, out_path, cfg: RunConfig) -> tuple[Path, Path]:
    """Write the soft prediction to ``out_path`` and the mask next to it (``*_mask.pgm``)."""
    saved = Path(checkpoint).with_name("config.txt")
    if saved.is_file():
        trained_n = parse_lines(saved.read_text(encoding="utf-8")).get("patch_size")
        if trained_n is not None and int(trained_n) != cfg.patch_size:
            raise CheckpointError(f"checkpoint trained with patch_size={trained_n}, config has {cfg.patch_size}")
    net = ScopeNet(load_checkpoint(checkpoint))
    image = read_pgm(image_path)
    prob = predict(net, image, cfg.patch_size)
    out = Path(out_path)
    mask_path = out.with_name(out.stem + "_mask" + out.suffix)
    write_pgm(prob, out)
    write_mask(threshold(prob, cfg.threshold), mask_path)
    return out, mask_path


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SCOPE_THREADS", "1")))
    except ValueError:
        return 1


def evaluate_masks(pairs: list[tuple[str, np.ndarray, np.ndarray]]) -> list[tuple[str, TopologySummary]]:
    """Evaluate named (pred, gt) pairs; fans out over ``SCOPE_THREADS`` workers."""
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        rows = list(pool.map(lambda p: evaluate_pair(p[1], p[2]), pairs))
    return [(p[0], r) for p, r in zip(pairs, rows)]


def format_csv(rows: list[tuple[str, TopologySummary]], errors: list[tuple[str, str]] = ()) -> str:
    lines = ["file," + ",".join(CSV_COLUMNS)]
    for name, s in rows:
        lines.append(name + "," + ",".join(f"{float(getattr(s, c)):.6f}" for c in CSV_COLUMNS))
    for name, msg in errors:
        lines.append(f"{name},error: {msg}")
    if rows:
        means = [np.mean([float(getattr(s, c)) for _, s in rows]) for c in CSV_COLUMNS]
        lines.append("mean," + ",".join(f"{m:.6f}" for m in means))
    return "\n".join(lines) + "\n"


@dataclass
class MetricsReport:
    rows: list[tuple[str, TopologySummary]]
    errors: list[tuple[str, str]]
    seconds: float

    def means(self) -> dict[str, float]:
        return {f.name: float(np.mean([getattr(s, f.name) for _, s in self.rows])) for f in fields(TopologySummary)}


def cmd_eval(pred_dir, gt_dir, out_csv, t: float = 0.5) -> MetricsReport:
    """Compare every ``*.pgm`` in ``pred_dir`` with the same-named file in ``gt_dir``."""
    start = time.perf_counter()
    pred_root, gt_root = Path(pred_dir), Path(gt_dir)
    pred_names = sorted(p.name for p in pred_root.glob("*.pgm"))
    gt_names = {p.name for p in gt_root.glob("*.pgm")}
    missing = [n for n in pred_names if n not in gt_names]
    if missing or not pred_names:
        raise PairingError(f"unmatched prediction files: {missing or 'none found'}")
    pairs, errors = [], []
    for name in pred_names:
        pred = read_mask(pred_root / name, t)
        gt = read_mask(gt_root / name, t)
        if pred.shape != gt.shape:
            errors.append((name, f"shape {pred.shape} vs {gt.shape}"))
            continue
        pairs.append((name, pred, gt))
    rows = evaluate_masks(pairs)
    Path(out_csv).write_text(format_csv(rows, errors), encoding="utf-8")
    return MetricsReport(rows, errors, time.perf_counter() - start)


ABLATION_CELLS = (
    ("ce", 1),
    ("ce_plus_cldice", 1),
    ("cldice", 1),
    ("cldice", 2),
)


def cmd_ablate(cfg: RunConfig, out_csv=None) -> list[dict]:
    """Train and evaluate the loss x patch-size grid on the held-out split.

    The dataset is generated from ``cfg.synth`` first if it has no manifest.
    """
    root = Path(cfg.dataset)
    if not (root / MANIFEST).is_file():
        cmd_synth(cfg.synth_count, cfg.synth, root)
    train_pairs, test_pairs = split(load_manifest(root), cfg.n_train, cfg.n_test)
    train_data, test_data = load_pairs(train_pairs), load_pairs(test_pairs)
    features = pretrain_features(train_data, cfg) if cfg.pretrain_epochs > 0 else None
    results = []
    for kind, n in ABLATION_CELLS:
        cell = replace(cfg, patch_size=n, loss=replace(cfg.loss, kind=kind))
        start = time.perf_counter()
        trained = train(train_data, cell, features)
        net = ScopeNet(trained.params)
        pairs = [
            (Path(img).name, threshold(predict(net, image, n), cfg.threshold), gt)
            for (img, _), (image, gt) in zip(test_pairs, test_data)
        ]
        report = MetricsReport(evaluate_masks(pairs), [], time.perf_counter() - start)
        row = {
            "loss": kind,
            "n": n,
            **{c: report.means()[c] for c in CSV_COLUMNS},
            "seconds": report.seconds,
            "epoch_losses": trained.losses,
        }
        log.info("ablation %s n=%d: %s", kind, n, row)
        results.append(row)
    if out_csv is not None:
        Path(out_csv).write_text(format_ablation(results), encoding="utf-8")
    return results


def format_ablation(rows: list[dict]) -> str:
    lines = ["loss,n," + ",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(f"{r['loss']},{r['n']}x{r['n']}," + ",".join(f"{r[c]:.6f}" for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


