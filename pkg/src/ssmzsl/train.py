"""Training loop, CZSL/GZSL evaluation and calibration sweeps."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from . import head as H
from .config import TrainConfig
from .data import SplitSpec, ZslDataset
from .encoder import EncoderConfig
from .model import ZslModel, batch_loss
from .optim import sgd_step
from .rng import XorShift64Star
from .tensor import Tape

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class EpochRecord:
    epoch: int
    ce: float
    sc: float
    total: float


def build_model(cfg: TrainConfig, dataset: ZslDataset) -> ZslModel:
    enc = cfg.encoder
    if tuple(dataset.image_shape) != (enc.in_channels, enc.image_size, enc.image_size):
        raise ValueError(f"dataset images {dataset.image_shape} do not match encoder input "
                         f"({enc.in_channels}, {enc.image_size}, {enc.image_size})")
    sem = dataset.semantic
    return ZslModel(enc, sem.attribute_count, sem.embed_dim, seed=cfg.seed, precision=cfg.precision)


def train(dataset: ZslDataset, split: SplitSpec, cfg: TrainConfig,
          model: ZslModel | None = None) -> tuple[ZslModel, list[EpochRecord]]:
    model = model or build_model(cfg, dataset)
    params = model.parameters()
    velocity: list[np.ndarray] = []
    order_rng = XorShift64Star(cfg.seed ^ 0x5EED)
    train_idx = np.asarray(split.train_idx)
    if train_idx.size == 0:
        raise ValueError("no training samples")
    history = []
    for epoch in range(cfg.epochs):
        perm = train_idx[order_rng.permutation(len(train_idx))]
        sums = np.zeros(3)
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            with Tape() as tape:
                losses = batch_loss(model, dataset.images[idx], dataset.labels[idx], dataset.semantic,
                                    split.seen_classes, cfg.lambda_sc, cfg.temperature)
                total = float(losses.total.data)
                if not math.isfinite(total):
                    raise NumericalError(f"non-finite loss {total} at epoch {epoch}, batch starting {start}")
                grads = tape.gradients(losses.total, params)
            sgd_step(params, grads, velocity, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
            sums += len(idx) * np.array([float(losses.ce.data), float(losses.sc.data), total])
        ce, sc, tot = sums / len(perm)
        history.append(EpochRecord(epoch, float(ce), float(sc), float(tot)))
        log.info("epoch %d  ce %.4f  sc %.4f  total %.4f", epoch, ce, sc, tot)
    return model, history


# ---------------------------------------------------------------- metrics

def harmonic_mean(s: float, u: float) -> float:
    return 0.0 if s + u == 0 else 2 * s * u / (s + u)


@dataclass
class Metrics:
    """Accuracies in percent; fields not produced by a mode stay ``None``."""

    acc: float | None = None
    s: float | None = None
    u: float | None = None
    h: float | None = None

    @classmethod
    def from_su(cls, s: float, u: float, acc: float | None = None) -> "Metrics":
        return cls(acc=acc, s=s, u=u, h=harmonic_mean(s, u))

    def to_json(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        return "  ".join(f"{k}={v:.1f}" for k, v in asdict(self).items() if v is not None)


def per_class_accuracy(pred, labels, classes=None) -> float:
    """Unweighted mean over classes of top-1 accuracy, in percent."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty test set")
    classes = np.unique(labels) if classes is None else [c for c in classes if np.any(labels == c)]
    accs = [np.mean(pred[labels == c] == c) for c in classes]
    return 100.0 * float(np.mean(accs))


def score_table(model: ZslModel, dataset: ZslDataset, indices, batch_size: int = 64) -> np.ndarray:
    """Cosine scores against every class prototype, (n, C), float64."""
    rows = []
    indices = np.asarray(indices, dtype=np.intp)
    for start in range(0, len(indices), batch_size):
        idx = indices[start:start + batch_size]
        out = model(dataset.images[idx], dataset.semantic.embeddings)
        rows.append(H.class_scores(out.fused, dataset.semantic.prototypes).data.astype(np.float64))
    return np.concatenate(rows) if rows else np.zeros((0, dataset.semantic.class_count))


def metrics_from_scores(seen_scores, seen_labels, unseen_scores, unseen_labels, unseen_mask,
                        mode: str, lambda_col: float = 0.0) -> Metrics:
    if mode == "czsl":
        pred = H.predict(unseen_scores, unseen_mask, mode="czsl")
        return Metrics(acc=per_class_accuracy(pred, unseen_labels))
    if mode == "gzsl":
        s = per_class_accuracy(H.predict(seen_scores, unseen_mask, lambda_col, "gzsl"), seen_labels)
        u = per_class_accuracy(H.predict(unseen_scores, unseen_mask, lambda_col, "gzsl"), unseen_labels)
        return Metrics.from_su(s, u)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class _Scores:
    seen: np.ndarray
    seen_labels: np.ndarray
    unseen: np.ndarray
    unseen_labels: np.ndarray
    unseen_mask: np.ndarray


def _scores(model, dataset, split) -> _Scores:
    C = dataset.semantic.class_count
    if model.head.mlp_gs.fc2.w.shape[1] != dataset.semantic.attribute_count:
        raise ValueError("model attribute count does not match the dataset")
    return _Scores(score_table(model, dataset, split.test_seen_idx), dataset.labels[split.test_seen_idx],
                   score_table(model, dataset, split.test_unseen_idx), dataset.labels[split.test_unseen_idx],
                   split.unseen_mask(C))


def evaluate(model: ZslModel, dataset: ZslDataset, split: SplitSpec, mode: str = "gzsl",
             lambda_col: float = 0.0) -> Metrics:
    sc = _scores(model, dataset, split)
    return metrics_from_scores(sc.seen, sc.seen_labels, sc.unseen, sc.unseen_labels,
                               sc.unseen_mask, mode, lambda_col)


def sweep(model: ZslModel, dataset: ZslDataset, split: SplitSpec, grid) -> list[tuple[float, float, float, float]]:
    """GZSL (lambda_col, S, U, H) rows; scores are computed once for the whole grid."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("empty lambda_col grid")
    sc = _scores(model, dataset, split)
    rows = []
    for lam in grid:
        m = metrics_from_scores(sc.seen, sc.seen_labels, sc.unseen, sc.unseen_labels,
                                sc.unseen_mask, "gzsl", lam)
        rows.append((lam, m.s, m.u, m.h))
    return rows


# ---------------------------------------------------------------- persistence

def save_run(out_dir, model: ZslModel, history: list[EpochRecord] | None = None,
             cfg: TrainConfig | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out / "checkpoint.zmba", model.state_dict())
    head = model.head
    meta = {
        "encoder": asdict(model.cfg),
        "n_attr": head.mlp_ls.fc1.w.shape[0],
        "embed_dim": head.w1.shape[0],
        "precision": model.precision,
    }
    if cfg is not None:
        meta["train"] = {k: v for k, v in cfg.to_dict().items() if k != "encoder"}
    (out / "model.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    if history is not None:
        with open(out / "train_log.jsonl", "w") as fh:
            for rec in history:
                fh.write(json.dumps(asdict(rec)) + "\n")
    return out


def load_model(path) -> ZslModel:
    """Load from a run directory or a ``checkpoint.zmba`` with a sibling ``model.json``."""
    path = Path(path)
    ckpt = path / "checkpoint.zmba" if path.is_dir() else path
    meta = json.loads((ckpt.parent / "model.json").read_text())
    model = ZslModel(EncoderConfig(**meta["encoder"]), meta["n_attr"], meta["embed_dim"],
                     precision=meta["precision"])
    model.load_state_dict(checkpoint.load(ckpt))
    return model
