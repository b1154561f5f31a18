"""Semantic head: attribute attention, global projection, fusion, losses and
calibrated prediction.

Attribute embeddings are stored attribute-major, ``(K, d_s)``; prototypes are
``(K, C)`` with one column per class.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import FeatureMap
from .nn import MLP, LayerNorm, Module, param
from .tensor import Tensor


@dataclass
class SemanticSpace:
    prototypes: np.ndarray
    embeddings: np.ndarray

    def __post_init__(self):
        self.prototypes = np.atleast_2d(np.asarray(self.prototypes, dtype=np.float64))
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        if self.prototypes.shape[0] != self.embeddings.shape[0]:
            raise ValueError(f"attribute count mismatch: prototypes have K={self.prototypes.shape[0]}, "
                             f"embeddings have K={self.embeddings.shape[0]}")

    @property
    def attribute_count(self) -> int:
        return self.prototypes.shape[0]

    @property
    def class_count(self) -> int:
        return self.prototypes.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class HeadOutput:
    local: Tensor
    global_: Tensor
    fused: Tensor


class ZslHead(Module):
    def __init__(self, n_attr: int, embed_dim: int, feat_dim: int, rng, dtype=np.float32):
        s = 1.0 / np.sqrt(embed_dim)
        self.w1 = param(rng.uniform(-s, s, (embed_dim, feat_dim)), dtype)
        self.w2 = param(rng.uniform(-s, s, (embed_dim, feat_dim)), dtype)
        self.mlp_ls = MLP(n_attr, n_attr, n_attr, rng, dtype)
        self.mlp_gs = MLP(feat_dim, feat_dim, n_attr, rng, dtype)
        self.norm = LayerNorm(feat_dim, dtype)

    def __call__(self, fmap: FeatureMap, embeddings) -> HeadOutput:
        local = slp_forward(fmap, embeddings, self)
        glob = grl_forward(fmap, self)
        return HeadOutput(local, glob, sef_fuse(glob, local))


def _const(values, like: Tensor) -> Tensor:
    return values if isinstance(values, Tensor) else Tensor(np.asarray(values, dtype=like.dtype))


def attention_map(fmap: FeatureMap, embeddings, head: ZslHead) -> Tensor:
    """Per-attribute softmax over regions, shape (B, K, r')."""
    f = fmap.values
    B, d_v = f.shape[0], fmap.channels
    emb = _const(embeddings, f)
    flat = T.reshape(f, (B, fmap.regions, d_v))
    query = T.matmul(emb, head.w1)                                   # (K, d_v)
    logits = T.transpose(T.linear(flat, T.transpose(query, (1, 0))), (0, 2, 1))
    return T.softmax(logits, axis=-1)


def slp_forward(fmap: FeatureMap, embeddings, head: ZslHead) -> Tensor:
    """Attribute-attended local scores mapped to attribute space, (B, K)."""
    f = fmap.values
    B, d_v = f.shape[0], fmap.channels
    emb = _const(embeddings, f)
    if emb.shape[1] != head.w1.shape[0] or d_v != head.w1.shape[1]:
        raise ValueError(f"embeddings {emb.shape} / features d_v={d_v} do not fit "
                         f"projection {head.w1.shape}")
    K = emb.shape[0]
    flat = T.reshape(f, (B, fmap.regions, d_v))
    attn = attention_map(fmap, emb, head)                            # (B, K, r')
    attended = T.matmul(attn, flat)                                  # (B, K, d_v)
    key = T.broadcast_to(T.matmul(emb, head.w2), (B, K, d_v))
    scores = T.reduce("sum", T.mul(key, attended), axis=-1)          # (B, K)
    return head.mlp_ls(scores)


def grl_forward(fmap: FeatureMap, head: ZslHead) -> Tensor:
    pooled = T.reduce("mean", head.norm(fmap.values), axis=(1, 2))
    return head.mlp_gs(pooled)


def sef_fuse(glob: Tensor, local: Tensor) -> Tensor:
    return T.add(glob, T.l2_normalize(local, axis=-1, eps=1e-12))


def semantic_constraint_loss(a_hat: Tensor, proto) -> Tensor:
    """Batch mean of the per-sample mean absolute attribute error."""
    return T.reduce("mean", T.absolute(T.sub(a_hat, _const(proto, a_hat))))


def class_scores(a_hat: Tensor, prototypes: np.ndarray, classes=None) -> Tensor:
    """Cosine between each predicted attribute vector and each class prototype.

    ``a_hat`` is (B, K); returns (B, len(classes)).
    """
    protos = np.asarray(prototypes)
    if classes is not None:
        classes = np.asarray(classes, dtype=np.intp)
        if classes.size == 0:
            raise ValueError("class subset is empty")
        protos = protos[:, classes]
    B, K = a_hat.shape
    C = protos.shape[1]
    u = T.broadcast_to(T.reshape(a_hat, (B, 1, K)), (B, C, K))
    v = Tensor(np.broadcast_to(protos.T, (B, C, K)).astype(a_hat.dtype))
    return T.cosine_similarity(u, v)


def ce_loss(scores: Tensor, labels, temperature: float = 1.0) -> Tensor:
    """Mean of -log softmax(tau * scores)[label] over the batch."""
    labels = np.asarray(labels, dtype=np.intp)
    B, C = scores.shape
    if labels.shape != (B,) or np.any(labels < 0) or np.any(labels >= C):
        raise ValueError(f"labels {labels.tolist()} out of range for {C} classes")
    onehot = np.zeros((B, C), dtype=scores.dtype)
    onehot[np.arange(B), labels] = 1
    logp = T.log_softmax(T.scale(scores, temperature), axis=-1)
    return T.scale(T.reduce("mean", T.reduce("sum", T.mul(logp, Tensor(onehot)), axis=-1)), -1.0)


def total_loss(ce: Tensor, sc: Tensor, lambda_sc: float) -> Tensor:
    if lambda_sc < 0:
        raise ValueError("lambda_sc must be nonnegative")
    if lambda_sc == 0:
        return ce
    return T.add(ce, T.scale(sc, lambda_sc))


def predict(scores, unseen_mask, lambda_col: float = 0.0, mode: str = "gzsl") -> np.ndarray:
    """Calibrated argmax over candidate classes; ties go to the lowest index.

    ``scores`` is (C,) or (B, C) over all classes.  In ``czsl`` mode only
    unseen classes are candidates; in ``gzsl`` mode every class is, and
    unseen ones receive a ``lambda_col`` bonus.
    """
    scores = np.asarray(scores, dtype=np.float64)
    unseen = np.asarray(unseen_mask, dtype=bool)
    if mode == "czsl":
        candidates = unseen
        adjusted = scores.copy()
    elif mode == "gzsl":
        candidates = np.ones_like(unseen)
        adjusted = scores + lambda_col * unseen
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not candidates.any():
        raise ValueError("empty candidate set")
    adjusted = np.where(candidates, adjusted, -np.inf)
    return np.argmax(adjusted, axis=-1)
