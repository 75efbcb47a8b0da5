"""Main-task datasets, client partitioning and per-client watermark sets."""
import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-d matrix")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("label outside [0, class_count)")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.inputs[indices], self.labels[indices], self.class_count)


@dataclass(frozen=True)
class WatermarkDataset:
    owner: int
    triggers: np.ndarray
    target_label: int
    holdout_triggers: np.ndarray

    @property
    def size(self):
        return self.triggers.shape[0]

    def train_labels(self):
        return np.full(self.triggers.shape[0], self.target_label, dtype=np.int64)

    def holdout_labels(self):
        return np.full(self.holdout_triggers.shape[0], self.target_label, dtype=np.int64)


@dataclass
class PartitionPlan:
    client_indices: list
    concentration: float = field(default=float("inf"))

    def shards(self, dataset):
        return [dataset.subset(ix) for ix in self.client_indices]


def _grid_side(dim):
    side = int(round(np.sqrt(dim)))
    return side if side * side == dim else None


def generate_synthetic(classes, per_class, input_dim, noise_std, seed, template_seed=None,
                       margin=0):
    """Gaussian clouds around seeded per-class templates, clipped to [0, 1].

    ``template_seed`` (defaults to ``seed``) fixes the class templates so a
    train and a test split can share them while drawing independent noise.
    For square inputs, ``margin`` blanks that many border pixels of every
    template, like the empty frame around MNIST-style digits.
    """
    if classes < 2 or per_class < 1:
        raise ValueError("need at least 2 classes and 1 sample per class")
    if noise_std < 0:
        raise ValueError(f"noise_std must be non-negative, got {noise_std}")
    trng = np.random.default_rng(seed if template_seed is None else template_seed)
    templates = trng.uniform(0.0, 1.0, size=(classes, input_dim))
    if margin > 0:
        side = _grid_side(input_dim)
        if side is None or 2 * margin >= side:
            raise ValueError(f"margin {margin} needs a square input wider than {2 * margin}")
        frame = np.zeros((side, side))
        frame[margin:side - margin, margin:side - margin] = 1.0
        templates *= frame.ravel()
    rng = np.random.default_rng([seed, 1])
    labels = np.repeat(np.arange(classes), per_class)
    x = templates[labels]
    if noise_std > 0:
        x = x + rng.normal(0.0, noise_std, size=x.shape)
    x = np.clip(x, 0.0, 1.0).astype(np.float32)
    return LabeledDataset(x, labels.astype(np.int64), classes)


IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _read_idx(path, expect_magic, ndim):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at byte offset 0")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    need = head + int(np.prod(dims))
    if len(raw) < need:
        raise FormatError(f"{path}: truncated payload at byte offset {len(raw)}, expected {need}")
    data = np.frombuffer(raw, dtype=np.uint8, count=int(np.prod(dims)), offset=head)
    return data.reshape(dims)


def load_idx(images_path, labels_path, class_count=None):
    """Load an MNIST-family IDX image/label pair; pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES, 3)
    labels = _read_idx(labels_path, IDX_LABELS, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels (byte offset 4)"
        )
    if images.shape[0] == 0:
        raise FormatError("IDX files contain no samples (byte offset 4)")
    x = images.reshape(images.shape[0], -1).astype(np.float32) / 255.0
    y = labels.astype(np.int64)
    classes = class_count or int(y.max()) + 1
    return LabeledDataset(x, y, max(classes, 2))


def write_idx(images_path, labels_path, images, labels):
    """Inverse of :func:`load_idx` for uint8 image stacks."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS, labels.shape[0]))
        f.write(labels.tobytes())


def iid_partition(dataset, n, seed):
    if len(dataset) < n:
        raise ValueError(f"dataset of {len(dataset)} samples cannot feed {n} clients")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    return PartitionPlan([np.sort(s) for s in np.array_split(perm, n)])


def dirichlet_partition(dataset, n, gamma, seed):
    """Per class, split samples among clients in Dirichlet(gamma) proportions."""
    if n < 2:
        raise ValueError("need at least 2 clients")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if len(dataset) < n:
        raise ValueError(f"dataset of {len(dataset)} samples cannot feed {n} clients")
    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(n)]
    for c in range(dataset.class_count):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        props = rng.dirichlet(np.full(n, gamma))
        cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
        for i, part in enumerate(np.split(idx, cuts)):
            buckets[i].extend(part.tolist())
    for i in range(n):
        if not buckets[i]:
            donor = max(range(n), key=lambda j: (len(buckets[j]), -j))
            buckets[i].append(buckets[donor].pop())
    return PartitionPlan([np.sort(np.asarray(b, dtype=np.int64)) for b in buckets], gamma)


def row_hashes(x):
    x = np.ascontiguousarray(x)
    return {hashlib.sha1(row.tobytes()).hexdigest() for row in x}


def _levels(u, levels):
    if levels < 2:
        return u
    return np.floor(u * levels).clip(0, levels - 1) / (levels - 1)


def block_pattern(rng, input_dim, blocks=4, levels=0):
    """Uniform noise on a coarse ``blocks x blocks`` grid, upsampled to ``input_dim``.

    ``levels >= 2`` quantizes each block value to that many evenly spaced grey levels.
    """
    side = _grid_side(input_dim)
    if side is not None and side >= blocks:
        coarse = _levels(rng.uniform(0.0, 1.0, size=(blocks, blocks)), levels)
        edges = np.linspace(0, side, blocks + 1).astype(int)
        ri = np.searchsorted(edges, np.arange(side), side="right") - 1
        return coarse[np.ix_(ri, ri)].ravel()
    coarse = _levels(rng.uniform(0.0, 1.0, size=blocks * blocks), levels)
    seg = np.minimum(np.arange(input_dim) * (blocks * blocks) // input_dim, blocks * blocks - 1)
    return coarse[seg]


def build_watermark_datasets(n, size, input_dim, num_classes, seed, source="noise_pattern",
                             ood=None, jitter=0.1, levels=0, min_separation=None):
    """One watermark set per client: disjoint triggers, target label ``i mod C``.

    ``noise_pattern`` triggers are jittered copies of a per-client block
    pattern; ``ood_idx_dataset`` triggers are samples of label ``i`` in ``ood``.
    """
    if size < 1:
        raise ValueError("watermark dataset size must be at least 1")
    rng = np.random.default_rng([seed, 7])
    sets = []
    if source == "noise_pattern":
        if min_separation is None:
            min_separation = 0.1 * np.sqrt(input_dim)
        bases = []
        while len(bases) < n:
            cand = block_pattern(rng, input_dim, levels=levels)
            if all(np.linalg.norm(cand - b) >= min_separation for b in bases):
                bases.append(cand)
        for i, base in enumerate(bases):
            x = base + rng.normal(0.0, jitter, size=(2 * size, input_dim))
            x = np.clip(x, 0.0, 1.0).astype(np.float32)
            sets.append(WatermarkDataset(i, x[:size], i % num_classes, x[size:]))
    elif source == "ood_idx_dataset":
        if ood is None:
            raise ValueError("ood source needs a loaded dataset")
        if ood.input_dim != input_dim:
            raise ValueError(f"OOD inputs have dim {ood.input_dim}, expected {input_dim}")
        present = np.unique(ood.labels)
        if n > present.size:
            raise ValueError(f"{n} clients but only {present.size} distinct OOD labels")
        for i in range(n):
            idx = rng.permutation(np.flatnonzero(ood.labels == present[i]))
            x = np.unique(ood.inputs[idx], axis=0)
            x = x[rng.permutation(x.shape[0])]
            if x.shape[0] < 2:
                raise ValueError(f"OOD label {present[i]} has too few distinct samples")
            m = min(size, x.shape[0] // 2)
            sets.append(WatermarkDataset(i, x[:m], i % num_classes, x[m:2 * m]))
    else:
        raise ValueError(f"unknown watermark source {source!r}")

    seen = set()
    for ds in sets:
        h = row_hashes(np.concatenate([ds.triggers, ds.holdout_triggers]))
        if seen & h:
            raise RuntimeError(f"trigger overlap for client {ds.owner}")
        seen |= h
    return sets


def watermark_testset(wm_sets):
    """All clients' holdout triggers with their target labels."""
    x = np.concatenate([w.holdout_triggers for w in wm_sets])
    y = np.concatenate([w.holdout_labels() for w in wm_sets])
    return x, y
