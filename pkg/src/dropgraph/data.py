"""Synthetic datasets for the desk-scale experiments.

Images: four pattern families (oriented gratings, Gaussian blobs, axis
checkers, concentric rings), one per class, with per-sample latents and
additive Gaussian noise, normalized to zero mean / unit variance over the
training split.  Small train splits overfit by design.

Graphs: a stochastic block model with community-informative noisy node
features, split Cora-style (a few labeled nodes per class, disjoint
val/test).

Both dataset kinds serialize to a versioned binary cache file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .backbones import GraphInstance
from .errors import ConfigError, ContractError
from .rng import RngStream

__all__ = [
    "SyntheticImageSpec",
    "ImageDataset",
    "SbmGraphSpec",
    "gen_images",
    "gen_sbm",
    "linear_probe_accuracy",
    "save_dataset_cache",
    "load_dataset_cache",
]


PATTERN_FAMILIES = ("gratings", "blobs", "checkers", "rings")


@dataclass
class SyntheticImageSpec:
    classes: int = 4
    image_size: int = 32
    train_count: int = 512
    val_count: int = 2048
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (2 <= self.classes <= len(PATTERN_FAMILIES)):
            raise ConfigError(
                f"classes must lie in [2, {len(PATTERN_FAMILIES)}], got {self.classes}"
            )
        if self.image_size < 8:
            raise ConfigError(f"image_size must be >= 8, got {self.image_size}")
        if self.train_count < self.classes or self.val_count < self.classes:
            raise ConfigError("train_count and val_count must cover every class")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")


@dataclass
class ImageDataset:
    spec: SyntheticImageSpec
    train_x: np.ndarray  # (n, 1, s, s) float64, normalized
    train_y: np.ndarray  # (n,) int64
    val_x: np.ndarray
    val_y: np.ndarray
    pixel_mean: float
    pixel_std: float


def _grid(size):
    ax = np.linspace(-1.0, 1.0, size)
    return np.meshgrid(ax, ax, indexing="ij")


def _pattern(family: str, size: int, rng: RngStream) -> np.ndarray:
    yy, xx = _grid(size)
    if family == "gratings":
        theta = rng.uniform() * np.pi
        freq = rng.uniform(low=1.5, high=3.5)
        phase = rng.uniform() * 2 * np.pi
        return np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    if family == "blobs":
        img = np.zeros((size, size))
        for _ in range(3):
            cy, cx = rng.uniform(size=2, low=-0.6, high=0.6)
            width = rng.uniform(low=0.15, high=0.3)
            img += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        return img - img.mean()
    if family == "checkers":
        freq = rng.uniform(low=1.0, high=2.5)
        p1 = rng.uniform() * 2 * np.pi
        p2 = rng.uniform() * 2 * np.pi
        return np.sign(np.sin(np.pi * freq * xx + p1) * np.sin(np.pi * freq * yy + p2))
    if family == "rings":
        cy, cx = rng.uniform(size=2, low=-0.3, high=0.3)
        freq = rng.uniform(low=1.5, high=3.0)
        phase = rng.uniform() * 2 * np.pi
        r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        return np.cos(2 * np.pi * freq * r + phase)
    raise ConfigError(f"unknown pattern family {family!r}")


def _make_split(spec: SyntheticImageSpec, rng: RngStream, count: int):
    xs = np.empty((count, 1, spec.image_size, spec.image_size))
    ys = np.empty(count, dtype=np.int64)
    for i in range(count):
        label = i % spec.classes
        sample_rng = rng.child(i)
        img = _pattern(PATTERN_FAMILIES[label], spec.image_size, sample_rng.child("latent"))
        if spec.noise_std > 0:
            img = img + sample_rng.child("noise").normal(size=img.shape, scale=spec.noise_std)
        xs[i, 0] = img
        ys[i] = label
    return xs, ys


def gen_images(spec: SyntheticImageSpec) -> ImageDataset:
    """Deterministic class-balanced image dataset for the given spec."""
    rng = RngStream(spec.seed, ("images",))
    train_x, train_y = _make_split(spec, rng.child("train"), spec.train_count)
    val_x, val_y = _make_split(spec, rng.child("val"), spec.val_count)
    mean = float(train_x.mean())
    std = float(train_x.std())
    if std == 0.0:
        std = 1.0
    train_x = (train_x - mean) / std
    val_x = (val_x - mean) / std
    return ImageDataset(spec=spec, train_x=train_x, train_y=train_y,
                        val_x=val_x, val_y=val_y, pixel_mean=mean, pixel_std=std)


def linear_probe_accuracy(ds: ImageDataset, ridge: float = 1e-3) -> float:
    """Validation accuracy of a ridge-regression probe on raw pixels.

    The oracle that keeps the task honest: it must stay clearly below the
    CNN's reach, otherwise the synthetic task carries no spatial structure
    worth learning.
    """
    n = ds.train_x.shape[0]
    x = ds.train_x.reshape(n, -1)
    x = np.hstack([x, np.ones((n, 1))])
    onehot = np.eye(ds.spec.classes)[ds.train_y]
    gram = x.T @ x + ridge * np.eye(x.shape[1])
    weights = np.linalg.solve(gram, x.T @ onehot)
    xv = ds.val_x.reshape(ds.val_x.shape[0], -1)
    xv = np.hstack([xv, np.ones((xv.shape[0], 1))])
    pred = (xv @ weights).argmax(axis=1)
    return float((pred == ds.val_y).mean())


# -- stochastic block model ---------------------------------------------------------


@dataclass
class SbmGraphSpec:
    nodes: int = 300
    communities: int = 3
    p_in: float = 0.08
    p_out: float = 0.01
    labeled_per_class: int = 20
    feature_noise: float = 2.5
    feature_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.p_in <= self.p_out:
            raise ConfigError(
                f"p_in must exceed p_out, got p_in={self.p_in}, p_out={self.p_out}"
            )
        if self.nodes < self.communities * (self.labeled_per_class + 2):
            raise ConfigError("not enough nodes for the requested labeled/val/test split")


def gen_sbm(spec: SbmGraphSpec) -> GraphInstance:
    """Stochastic block model graph with noisy community features."""
    rng = RngStream(spec.seed, ("sbm",))
    n, k = spec.nodes, spec.communities
    labels = np.arange(n, dtype=np.int64) % k
    upper = rng.child("edges").uniform(size=(n, n))
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, spec.p_in, spec.p_out)
    adj = np.triu(upper < prob, k=1).astype(np.float64)
    adj = adj + adj.T
    # symmetric degree normalization of A + I
    a_hat = adj + np.eye(n)
    deg = a_hat.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    a_hat = a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]

    means = rng.child("means").normal(size=(k, spec.feature_dim))
    feats = means[labels] + rng.child("feats").normal(
        size=(n, spec.feature_dim), scale=spec.feature_noise
    )

    train_idx = []
    rest = []
    for c in range(k):
        members = np.flatnonzero(labels == c)
        order = rng.child("split", c).permutation(len(members))
        members = members[order]
        train_idx.extend(members[: spec.labeled_per_class])
        rest.extend(members[spec.labeled_per_class :])
    rest = np.array(sorted(rest), dtype=np.int64)
    half = len(rest) // 2
    return GraphInstance(
        node_features=feats,
        normalized_adjacency=a_hat,
        labels=labels,
        train_idx=np.array(sorted(train_idx), dtype=np.int64),
        val_idx=rest[:half],
        test_idx=rest[half:],
    )


# -- dataset cache files ---------------------------------------------------------------

_CACHE_MAGIC = b"DGDATA"
_CACHE_VERSION = 1


def save_dataset_cache(path, kind: str, meta: dict, arrays: dict):
    """Versioned binary dataset cache.

    Layout: magic ``DGDATA`` (6 bytes), version u16, u32 JSON header length,
    UTF-8 JSON header {kind, meta, arrays: [{name, dtype, shape}]}, then each
    array's raw bytes (little-endian, C order) in header order.
    """
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = {"float64": "<f8", "int64": "<i8"}.get(arr.dtype.name)
        if dtype is None:
            raise ContractError(f"unsupported cache dtype {arr.dtype} for {name!r}")
        manifest.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr).astype(dtype).tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "arrays": manifest},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<HI", _CACHE_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_dataset_cache(path):
    """Read back (kind, meta, arrays) from a dataset cache file."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CACHE_MAGIC))
        if magic != _CACHE_MAGIC:
            raise ContractError(f"not a dataset cache file: bad magic {magic!r}")
        version, header_len = struct.unpack("<HI", fh.read(6))
        if version != _CACHE_VERSION:
            raise ContractError(f"unsupported dataset cache version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            n_values = int(np.prod(shape)) if shape else 1
            itemsize = 8
            raw = fh.read(n_values * itemsize)
            arrays[entry["name"]] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(shape).copy()
        return header["kind"], header["meta"], arrays


def save_image_dataset(ds: ImageDataset, path):
    meta = {
        "classes": ds.spec.classes,
        "image_size": ds.spec.image_size,
        "train_count": ds.spec.train_count,
        "val_count": ds.spec.val_count,
        "noise_std": ds.spec.noise_std,
        "seed": ds.spec.seed,
        "pixel_mean": ds.pixel_mean,
        "pixel_std": ds.pixel_std,
    }
    arrays = {"train_x": ds.train_x, "train_y": ds.train_y,
              "val_x": ds.val_x, "val_y": ds.val_y}
    save_dataset_cache(path, "image", meta, arrays)


def load_image_dataset(path) -> ImageDataset:
    kind, meta, arrays = load_dataset_cache(path)
    if kind != "image":
        raise ContractError(f"expected an image dataset cache, got kind {kind!r}")
    spec = SyntheticImageSpec(
        classes=meta["classes"], image_size=meta["image_size"],
        train_count=meta["train_count"], val_count=meta["val_count"],
        noise_std=meta["noise_std"], seed=meta["seed"],
    )
    return ImageDataset(spec=spec, train_x=arrays["train_x"], train_y=arrays["train_y"],
                        val_x=arrays["val_x"], val_y=arrays["val_y"],
                        pixel_mean=meta["pixel_mean"], pixel_std=meta["pixel_std"])


def save_graph_dataset(g: GraphInstance, spec: SbmGraphSpec, path):
    meta = {
        "nodes": spec.nodes, "communities": spec.communities,
        "p_in": spec.p_in, "p_out": spec.p_out,
        "labeled_per_class": spec.labeled_per_class,
        "feature_noise": spec.feature_noise, "feature_dim": spec.feature_dim,
        "seed": spec.seed,
    }
    arrays = {
        "node_features": g.node_features,
        "normalized_adjacency": g.normalized_adjacency,
        "labels": g.labels, "train_idx": g.train_idx,
        "val_idx": g.val_idx, "test_idx": g.test_idx,
    }
    save_dataset_cache(path, "graph", meta, arrays)


def load_graph_dataset(path):
    kind, meta, arrays = load_dataset_cache(path)
    if kind != "graph":
        raise ContractError(f"expected a graph dataset cache, got kind {kind!r}")
    spec = SbmGraphSpec(**meta)
    return GraphInstance(
        node_features=arrays["node_features"],
        normalized_adjacency=arrays["normalized_adjacency"],
        labels=arrays["labels"], train_idx=arrays["train_idx"],
        val_idx=arrays["val_idx"], test_idx=arrays["test_idx"],
    ), spec
