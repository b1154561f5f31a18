"""Four-direction 2-D selective scanning encoder.

Grids are kept channel-last, ``(B, r, r, d)``; :meth:`Encoder.__call__`
takes channel-first images ``(B, C, H, W)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import MLP, LayerNorm, Linear, Module, param
from .ssm import SsmParams, selective_scan
from .tensor import Tensor


@dataclass
class EncoderConfig:
    in_channels: int = 3
    image_size: int = 32
    patch_size: int = 4
    stage_dims: tuple[int, ...] = (16, 32)
    stage_depths: tuple[int, ...] = (2, 2)
    state_dim: int = 8
    mlp_ratio: int = 2
    zoh_exact: bool = True
    per_direction_params: bool = False
    abs_pos_embed: bool = True
    dt_min: float = 1e-3
    dt_max: float = 1e-1

    def __post_init__(self):
        self.stage_dims = tuple(int(d) for d in self.stage_dims)
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        self.validate()

    def validate(self):
        if len(self.stage_dims) != len(self.stage_depths) or not self.stage_dims:
            raise ValueError("stage_dims and stage_depths must be nonempty and equal length")
        if self.image_size % self.patch_size:
            raise ValueError(f"image size {self.image_size} not divisible by patch {self.patch_size}")
        grid = self.image_size // self.patch_size
        if grid % 2 ** (len(self.stage_dims) - 1):
            raise ValueError(f"patch grid {grid} cannot be halved {len(self.stage_dims) - 1} times")
        for i in range(1, len(self.stage_dims)):
            if self.stage_dims[i] != 2 * self.stage_dims[i - 1]:
                raise ValueError("each stage must double the channel width")

    @property
    def feature_dim(self) -> int:
        return self.stage_dims[-1]

    @property
    def feature_side(self) -> int:
        return self.image_size // self.patch_size // 2 ** (len(self.stage_dims) - 1)


class ScanOrder(enum.Enum):
    ROW_FORWARD = "row_forward"
    ROW_BACKWARD = "row_backward"
    COL_FORWARD = "col_forward"
    COL_BACKWARD = "col_backward"


ORDERS = tuple(ScanOrder)


def scan_indices(r: int, order: ScanOrder) -> np.ndarray:
    """Row-major cell index visited at each sequence position."""
    rows = np.arange(r * r)
    cols = rows.reshape(r, r).T.reshape(-1)
    return {
        ScanOrder.ROW_FORWARD: rows,
        ScanOrder.ROW_BACKWARD: rows[::-1].copy(),
        ScanOrder.COL_FORWARD: cols,
        ScanOrder.COL_BACKWARD: cols[::-1].copy(),
    }[order]


def scan_expand(grid: Tensor, order: ScanOrder) -> Tensor:
    """(B, r, r, d) grid -> (B, r*r, d) sequence in the given traversal order."""
    B, r, r2, d = grid.shape
    if r != r2:
        raise ValueError(f"scan_expand needs a square grid, got {r}x{r2}")
    return T.take(T.reshape(grid, (B, r * r, d)), scan_indices(r, order), axis=1)


def scan_merge(seqs, orders, r: int) -> Tensor:
    """Route each sequence back to grid layout and sum the grids."""
    total = None
    for seq, order in zip(seqs, orders, strict=True):
        if seq.shape[1] != r * r:
            raise ValueError(f"sequence length {seq.shape[1]} != {r * r}")
        back = T.take(seq, np.argsort(scan_indices(r, order)), axis=1)
        total = back if total is None else T.add(total, back)
    B, _, d = total.shape
    return T.reshape(total, (B, r, r, d))


class SS2D(Module):
    def __init__(self, d: int, cfg: EncoderConfig, rng, dtype=np.float32):
        self.in_proj = Linear(d, d, rng, dtype)
        n_ssm = 4 if cfg.per_direction_params else 1
        self.ssm = [SsmParams(d, cfg.state_dim, rng, dtype, cfg.dt_min, cfg.dt_max)
                    for _ in range(n_ssm)]
        self.out_proj = Linear(d, d, rng, dtype)
        self.exact = cfg.zoh_exact

    def __call__(self, grid: Tensor) -> Tensor:
        B, r, _, d = grid.shape
        x = self.in_proj(grid)
        seqs = [scan_expand(x, o) for o in ORDERS]
        if len(self.ssm) == 1:
            # one shared SSM: run the four orders as one batch
            ys = selective_scan(self.ssm[0], T.concat(seqs, axis=0), self.exact)
            outs = [T.take(ys, np.arange(i * B, (i + 1) * B), axis=0) for i in range(4)]
        else:
            outs = [selective_scan(p, s, self.exact) for p, s in zip(self.ssm, seqs)]
        return self.out_proj(scan_merge(outs, ORDERS, r))


class VSSBlock(Module):
    def __init__(self, d: int, cfg: EncoderConfig, rng, dtype=np.float32):
        self.norm1 = LayerNorm(d, dtype)
        self.ss2d = SS2D(d, cfg, rng, dtype)
        self.norm2 = LayerNorm(d, dtype)
        self.mlp = MLP(d, cfg.mlp_ratio * d, d, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        y = T.add(x, self.ss2d(self.norm1(x)))
        return T.add(y, self.mlp(self.norm2(y)))


class Downsample(Module):
    """2x2 neighbourhood concatenation then a linear map 4d -> 2d."""

    def __init__(self, d: int, rng, dtype=np.float32):
        self.proj = Linear(4 * d, 2 * d, rng, dtype)

    def __call__(self, grid: Tensor) -> Tensor:
        B, r, _, d = grid.shape
        if r % 2:
            raise ValueError(f"downsample needs an even grid side, got {r}")
        h = r // 2
        x = T.reshape(grid, (B, h, 2, h, 2, d))
        x = T.transpose(x, (0, 1, 3, 2, 4, 5))
        return self.proj(T.reshape(x, (B, h, h, 4 * d)))


class PatchEmbed(Module):
    def __init__(self, cfg: EncoderConfig, rng, dtype=np.float32):
        self.patch = cfg.patch_size
        self.proj = Linear(cfg.in_channels * cfg.patch_size ** 2, cfg.stage_dims[0], rng, dtype)

    def __call__(self, images: Tensor) -> Tensor:
        B, C, H, W = images.shape
        p = self.patch
        if H % p or W % p:
            raise ValueError(f"image {H}x{W} not divisible by patch size {p}")
        x = T.reshape(images, (B, C, H // p, p, W // p, p))
        x = T.transpose(x, (0, 2, 4, 1, 3, 5))
        return self.proj(T.reshape(x, (B, H // p, W // p, C * p * p)))


@dataclass
class FeatureMap:
    """Encoder output, channel-last: ``values`` has shape (B, r, r, d_v)."""

    values: Tensor

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    @property
    def side(self) -> int:
        return self.values.shape[1]

    @property
    def regions(self) -> int:
        return self.side * self.side


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg, rng, dtype)
        if cfg.abs_pos_embed:
            g = cfg.image_size // cfg.patch_size
            self.pos_embed = param(0.02 * rng.standard_normal((g, g, cfg.stage_dims[0])), dtype)
        self.stages = []
        self.downsamples = []
        for i, (d, depth) in enumerate(zip(cfg.stage_dims, cfg.stage_depths)):
            self.stages.append(_Stage([VSSBlock(d, cfg, rng, dtype) for _ in range(depth)]))
            if i + 1 < len(cfg.stage_dims):
                self.downsamples.append(Downsample(d, rng, dtype))

    def __call__(self, images) -> FeatureMap:
        if not isinstance(images, Tensor):
            images = Tensor(np.asarray(images, dtype=self.patch_embed.proj.w.dtype))
        x = self.patch_embed(images)
        if self.cfg.abs_pos_embed:
            x = T.add(x, T.broadcast_to(self.pos_embed, x.shape))
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i < len(self.downsamples):
                x = self.downsamples[i](x)
        return FeatureMap(x)


class _Stage(Module):
    def __init__(self, blocks):
        self.blocks = blocks

    def __call__(self, x):
        for block in self.blocks:
            x = block(x)
        return x
