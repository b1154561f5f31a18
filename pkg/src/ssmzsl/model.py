"""Encoder plus semantic head, and the per-batch loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import head as H
from .encoder import Encoder, EncoderConfig
from .nn import Module
from .rng import XorShift64Star
from .tensor import Tensor

DTYPES = {"float32": np.float32, "float64": np.float64}


class ZslModel(Module):
    def __init__(self, cfg: EncoderConfig, n_attr: int, embed_dim: int, seed: int = 0,
                 precision: str = "float32"):
        dtype = DTYPES[precision]
        rng = XorShift64Star(seed).numpy()
        self.cfg = cfg
        self.precision = precision
        self.encoder = Encoder(cfg, rng, dtype)
        self.head = H.ZslHead(n_attr, embed_dim, cfg.feature_dim, rng, dtype)

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def __call__(self, images, embeddings) -> H.HeadOutput:
        if not isinstance(images, Tensor):
            images = Tensor(np.asarray(images, dtype=self.dtype))
        return self.head(self.encoder(images), np.asarray(embeddings, dtype=self.dtype))


@dataclass
class BatchLoss:
    total: Tensor
    ce: Tensor
    sc: Tensor


def batch_loss(model: ZslModel, images, labels, semantic: H.SemanticSpace, seen_classes,
               lambda_sc: float, temperature: float) -> BatchLoss:
    """Cross-entropy over seen classes plus the weighted attribute constraint."""
    seen = np.asarray(seen_classes, dtype=np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    local = np.searchsorted(seen, labels)
    if np.any(local >= len(seen)) or np.any(seen[np.minimum(local, len(seen) - 1)] != labels):
        raise ValueError("training labels must all be seen classes")
    out = model(images, semantic.embeddings)
    scores = H.class_scores(out.fused, semantic.prototypes, seen)
    ce = H.ce_loss(scores, local, temperature)
    sc = H.semantic_constraint_loss(out.fused, semantic.prototypes[:, labels].T)
    return BatchLoss(H.total_loss(ce, sc, lambda_sc), ce, sc)
