"""Synthetic attribute datasets, semantic matrix ingestion and class splits.

Archive layout (one directory)::

    images.bin      little-endian float32, samples concatenated (N, C, H, W)
    labels.txt      one class index per line
    splits.json     seen_classes, unseen_classes, train_idx, test_seen_idx, test_unseen_idx
    meta.json       counts, shapes, seed, generator version
    prototypes.csv  C rows x K attribute values
    embeddings.csv  K rows x d_s embedding values
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .head import SemanticSpace
from .rng import XorShift64Star

GENERATOR_VERSION = 1


@dataclass
class ZslDataset:
    images: np.ndarray
    labels: np.ndarray
    semantic: SemanticSpace
    name: str = "synthetic"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and self.labels.max() >= self.semantic.class_count:
            raise ValueError(f"label {self.labels.max()} >= class count {self.semantic.class_count}")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])


@dataclass
class SplitSpec:
    seen_classes: list[int]
    unseen_classes: list[int]
    train_idx: list[int]
    test_seen_idx: list[int]
    test_unseen_idx: list[int]

    FIELDS = ("seen_classes", "unseen_classes", "train_idx", "test_seen_idx", "test_unseen_idx")

    def validate(self, labels) -> None:
        labels = np.asarray(labels)
        seen, unseen = set(self.seen_classes), set(self.unseen_classes)
        if seen & unseen:
            raise ValueError(f"classes {sorted(seen & unseen)} are both seen and unseen")
        all_idx = self.train_idx + self.test_seen_idx + self.test_unseen_idx
        if len(all_idx) != len(set(all_idx)):
            raise ValueError("a sample index appears in more than one split list")
        for name, allowed in (("train_idx", seen), ("test_seen_idx", seen), ("test_unseen_idx", unseen)):
            bad = [i for i in getattr(self, name) if int(labels[i]) not in allowed]
            if bad:
                raise ValueError(f"{name} holds samples {bad[:5]} from the wrong class side")

    def unseen_mask(self, class_count: int) -> np.ndarray:
        mask = np.zeros(class_count, dtype=bool)
        mask[self.unseen_classes] = True
        return mask

    def to_json(self) -> dict:
        return {k: [int(i) for i in getattr(self, k)] for k in self.FIELDS}

    @classmethod
    def from_json(cls, obj: dict) -> "SplitSpec":
        missing = [k for k in cls.FIELDS if k not in obj]
        if missing:
            raise ValueError(f"splits missing keys {missing}")
        return cls(**{k: [int(i) for i in obj[k]] for k in cls.FIELDS})


def attribute_layout(n_attr: int, image_size: int) -> tuple[int, int]:
    """Grid side and block size for tiling ``n_attr`` blocks over the image."""
    side = math.ceil(math.sqrt(n_attr))
    block = image_size // side
    if block < 1:
        raise ValueError(f"cannot tile {n_attr} attribute blocks on a {image_size}px image")
    return side, block


def render(signature, image_size: int, channels: int = 3) -> np.ndarray:
    """Noise-free image whose active attributes are bright blocks."""
    side, block = attribute_layout(len(signature), image_size)
    img = np.zeros((channels, image_size, image_size), dtype=np.float32)
    for k, on in enumerate(signature):
        if on:
            r, c = divmod(k, side)
            img[k % channels, r * block:(r + 1) * block, c * block:(c + 1) * block] = 1.0
    return img


def block_means(image: np.ndarray, n_attr: int) -> np.ndarray:
    """Mean intensity of each attribute block on its rendering channel."""
    channels, size = image.shape[0], image.shape[1]
    side, block = attribute_layout(n_attr, size)
    out = np.empty(n_attr)
    for k in range(n_attr):
        r, c = divmod(k, side)
        out[k] = image[k % channels, r * block:(r + 1) * block, c * block:(c + 1) * block].mean()
    return out


def _class_partition(num_classes: int, num_seen: int, rng: XorShift64Star):
    perm = rng.permutation(num_classes)
    return sorted(perm[:num_seen]), sorted(perm[num_seen:])


def _signatures(num_classes, num_attr, seen, gen, max_tries=10_000):
    for _ in range(max_tries):
        sig = (gen.random((num_classes, num_attr)) < 0.5).astype(np.float64)
        if np.any(sig.sum(axis=1) == 0):
            continue
        dist = np.abs(sig[:, None, :] - sig[None, :, :]).sum(-1)
        np.fill_diagonal(dist, num_attr)
        if dist.min() < 2:
            continue
        seen_sig = sig[seen]
        # every attribute must be both present and absent somewhere among seen classes
        if np.all(seen_sig.max(axis=0) == 1) and np.all(seen_sig.min(axis=0) == 0):
            return sig
    raise ValueError("could not draw distinct attribute signatures; too few attributes")


def gen_synthetic(num_classes: int = 20, num_seen: int = 15, num_attributes: int = 12,
                  embed_dim: int = 16, image_size: int = 32, images_per_class: int = 30,
                  noise: float = 0.1, seed: int = 0, channels: int = 3,
                  test_fraction: float = 0.2) -> tuple[ZslDataset, SplitSpec]:
    if not 0 < num_seen < num_classes:
        raise ValueError(f"need 0 < seen ({num_seen}) < classes ({num_classes})")
    attribute_layout(num_attributes, image_size)
    stream = XorShift64Star(seed)
    seen, unseen = _class_partition(num_classes, num_seen, stream)
    gen = stream.numpy()
    sig = _signatures(num_classes, num_attributes, seen, gen)
    emb = gen.normal(size=(num_attributes, embed_dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)

    images = np.empty((num_classes * images_per_class, channels, image_size, image_size), np.float32)
    labels = np.repeat(np.arange(num_classes), images_per_class)
    for c in range(num_classes):
        base = render(sig[c], image_size, channels)
        block = slice(c * images_per_class, (c + 1) * images_per_class)
        images[block] = base + noise * gen.standard_normal((images_per_class,) + base.shape)
    meta = {
        "name": "synthetic", "generator_version": GENERATOR_VERSION, "seed": seed,
        "num_classes": num_classes, "num_seen": num_seen, "num_attributes": num_attributes,
        "embed_dim": embed_dim, "images_per_class": images_per_class, "noise": noise,
        "image_shape": [channels, image_size, image_size], "num_images": len(labels),
    }
    data = ZslDataset(images, labels, SemanticSpace(sig.T, emb), "synthetic", meta)
    split = _sample_split(labels, seen, unseen, test_fraction, stream)
    return data, split


def _sample_split(labels, seen, unseen, test_fraction, rng: XorShift64Star) -> SplitSpec:
    train, test_seen, test_unseen = [], [], []
    for c in seen:
        idx = np.flatnonzero(labels == c)
        order = [int(idx[i]) for i in rng.permutation(len(idx))]
        n_test = max(1, round(test_fraction * len(idx))) if len(idx) > 1 else 0
        test_seen += order[:n_test]
        train += order[n_test:]
    for c in unseen:
        test_unseen += [int(i) for i in np.flatnonzero(labels == c)]
    split = SplitSpec(sorted(int(c) for c in seen), sorted(int(c) for c in unseen),
                      sorted(train), sorted(test_seen), sorted(test_unseen))
    split.validate(labels)
    return split


def make_splits(dataset: ZslDataset, seen_fraction: float, seed: int,
                test_fraction: float = 0.2) -> SplitSpec:
    C = dataset.semantic.class_count
    n_seen = round(seen_fraction * C)
    if n_seen < 1 or n_seen >= C:
        raise ValueError(f"seen fraction {seen_fraction} leaves {n_seen} seen of {C} classes; "
                         "both sides need at least one class")
    rng = XorShift64Star(seed)
    seen, unseen = _class_partition(C, n_seen, rng)
    return _sample_split(dataset.labels, seen, unseen, test_fraction, rng)


def _read_matrix(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: empty matrix")
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise ValueError(f"{path}: ragged rows with widths {sorted(widths)}")
    return np.array(rows)


def write_matrix(path, matrix) -> None:
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")


def load_semantic(prototypes_path, embeddings_path) -> SemanticSpace:
    """Read class prototypes (C x K) and attribute embeddings (K x d_s)."""
    protos = _read_matrix(prototypes_path)
    emb = _read_matrix(embeddings_path)
    if protos.shape[1] != emb.shape[0]:
        raise ValueError(f"attribute count mismatch: prototypes file has K={protos.shape[1]}, "
                         f"embeddings file has K={emb.shape[0]}")
    return SemanticSpace(protos.T, emb)


def save_dataset(dataset: ZslDataset, split: SplitSpec, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset.images.astype("<f4").tofile(out / "images.bin")
    (out / "labels.txt").write_text("".join(f"{int(y)}\n" for y in dataset.labels))
    (out / "splits.json").write_text(json.dumps(split.to_json(), indent=1))
    meta = dict(dataset.meta)
    meta.update(name=dataset.name, num_images=len(dataset),
                image_shape=list(dataset.image_shape),
                num_classes=dataset.semantic.class_count,
                num_attributes=dataset.semantic.attribute_count,
                embed_dim=dataset.semantic.embed_dim)
    meta.setdefault("generator_version", GENERATOR_VERSION)
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    write_matrix(out / "prototypes.csv", dataset.semantic.prototypes.T)
    write_matrix(out / "embeddings.csv", dataset.semantic.embeddings)
    return out


def load_dataset(path) -> tuple[ZslDataset, SplitSpec]:
    root = Path(path)
    if not (root / "meta.json").exists():
        raise FileNotFoundError(f"{root} is not a dataset archive (no meta.json)")
    meta = json.loads((root / "meta.json").read_text())
    shape = tuple(meta["image_shape"])
    images = np.fromfile(root / "images.bin", dtype="<f4")
    n = int(meta["num_images"])
    if images.size != n * int(np.prod(shape)):
        raise ValueError(f"images.bin holds {images.size} floats, expected {n} x {shape}")
    images = images.reshape((n,) + shape).astype(np.float32)
    labels = np.array([int(l) for l in (root / "labels.txt").read_text().split()], dtype=np.int64)
    semantic = load_semantic(root / "prototypes.csv", root / "embeddings.csv")
    split = SplitSpec.from_json(json.loads((root / "splits.json").read_text()))
    data = ZslDataset(images, labels, semantic, meta.get("name", root.name), meta)
    split.validate(labels)
    return data, split
