"""Dataset ingestion, sampling and augmentation.

Covers the UBC PhotoTour layout (1024x1024 8-bit mosaics holding a 16x16 grid
of 64x64 patches, an info file with one 3-D point id per patch, and 7-column
match files), triplet/pair construction, the six-way augmentation group, the
central-surround decomposition, the two-Gaussian toy set with flipped labels,
and a synthetic patch fixture for desk-scale runs without the real dataset.
"""

import glob
import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import IngestionError, ShapeError, UsageError

PATCH_SIZE = 64
MOSAIC_GRID = 16  # 16x16 patches per 1024x1024 mosaic


@dataclass
class PatchSet:
    patches: np.ndarray      # (n, 64, 64) uint8 or float
    class_ids: np.ndarray    # (n,) int
    source: str = ""


@dataclass
class PairBatch:
    left: np.ndarray         # indices into a PatchSet, or patch tensors
    right: np.ndarray
    labels: np.ndarray       # True for matching pairs


@dataclass
class ToySet:
    points: np.ndarray       # (n, 2)
    labels: np.ndarray       # (n,) in {0, 1}, after corruption
    clean_labels: np.ndarray
    flipped_indices: np.ndarray


# ---------------------------------------------------------------------------
# UBC PhotoTour ingestion
# ---------------------------------------------------------------------------

def load_ubc(directory: str, set_name: str = "", max_patches: Optional[int] = None) -> PatchSet:
    """Extract patches from the mosaic bitmaps listed in ``directory`` in
    row-major order, with class ids from info.txt."""
    from PIL import Image

    info_path = os.path.join(directory, "info.txt")
    if not os.path.exists(info_path):
        raise IngestionError(f"missing info file: {info_path}")
    class_ids = []
    with open(info_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                class_ids.append(int(parts[0]))
            except ValueError:
                raise IngestionError(f"{info_path}:{lineno}: bad 3-D point id {parts[0]!r}") from None
    n_patches = len(class_ids)
    if max_patches is not None:
        n_patches = min(n_patches, max_patches)
    mosaics = sorted(glob.glob(os.path.join(directory, "patches*.bmp")))
    if not mosaics:
        raise IngestionError(f"no patches*.bmp mosaics found in {directory}")
    per_mosaic = MOSAIC_GRID * MOSAIC_GRID
    patches = np.empty((n_patches, PATCH_SIZE, PATCH_SIZE), dtype=np.uint8)
    filled = 0
    for path in mosaics:
        if filled >= n_patches:
            break
        img = np.asarray(Image.open(path).convert("L"))
        if img.shape != (MOSAIC_GRID * PATCH_SIZE, MOSAIC_GRID * PATCH_SIZE):
            raise IngestionError(f"{path}: expected 1024x1024 mosaic, got {img.shape}")
        grid = img.reshape(MOSAIC_GRID, PATCH_SIZE, MOSAIC_GRID, PATCH_SIZE)
        flat = grid.transpose(0, 2, 1, 3).reshape(per_mosaic, PATCH_SIZE, PATCH_SIZE)
        take = min(per_mosaic, n_patches - filled)
        patches[filled:filled + take] = flat[:take]
        filled += take
    if filled < n_patches:
        raise IngestionError(
            f"{directory}: info file lists {n_patches} patches but mosaics hold only {filled}"
        )
    return PatchSet(patches=patches, class_ids=np.asarray(class_ids[:n_patches]),
                    source=set_name or os.path.basename(directory.rstrip("/")))


def load_eval_pairs(directory: str, pair_file_name: str) -> PairBatch:
    """Parse a 7-column m50-style match file; a pair matches iff its two 3-D
    point ids are equal."""
    path = os.path.join(directory, pair_file_name)
    if not os.path.exists(path):
        raise IngestionError(f"missing match file: {path}")
    left, right, labels = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 6:
                raise IngestionError(f"{path}:{lineno}: expected >= 6 columns, got {len(parts)}")
            try:
                p1, id1, p2, id2 = int(parts[0]), int(parts[1]), int(parts[3]), int(parts[4])
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: non-integer column") from None
            left.append(p1)
            right.append(p2)
            labels.append(id1 == id2)
    return PairBatch(left=np.asarray(left), right=np.asarray(right),
                     labels=np.asarray(labels, dtype=bool))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_triplets(patch_set: PatchSet, count: int, seed: int) -> np.ndarray:
    """(count, 3) index array of (anchor, positive, negative) with
    class(anchor) = class(positive) != class(negative)."""
    rng = np.random.default_rng(seed)
    ids = patch_set.class_ids
    classes, starts = np.unique(ids, return_index=True)
    groups = {c: np.flatnonzero(ids == c) for c in classes}
    rich = [c for c in classes if len(groups[c]) >= 2]
    if len(classes) < 2 or not rich:
        raise UsageError("triplet sampling needs >= 2 classes and one class with >= 2 patches")
    out = np.empty((count, 3), dtype=np.int64)
    for i in range(count):
        c = rich[rng.integers(len(rich))]
        a, p = rng.choice(groups[c], size=2, replace=False)
        while True:
            neg = rng.integers(len(ids))
            if ids[neg] != c:
                break
        out[i] = (a, p, neg)
    return out


def sample_eval_pairs(patch_set: PatchSet, count: int, seed: int) -> PairBatch:
    """Label-balanced evaluation pairs sampled directly from class groupings."""
    rng = np.random.default_rng(seed)
    triplets = sample_triplets(patch_set, count - count // 2, seed)
    left = np.concatenate([triplets[:, 0], triplets[:count // 2, 0]])
    right = np.concatenate([triplets[:, 1], triplets[:count // 2, 2]])
    labels = np.concatenate([np.ones(len(triplets), bool), np.zeros(count // 2, bool)])
    order = rng.permutation(len(labels))
    return PairBatch(left=left[order], right=right[order], labels=labels[order])


# ---------------------------------------------------------------------------
# Augmentation and preprocessing
# ---------------------------------------------------------------------------

N_AUGMENTATIONS = 6


def augment(patch: np.ndarray, transform_index: int) -> np.ndarray:
    """Index 0: identity; 1-3: counter-clockwise rotations by 90/180/270;
    4: horizontal flip; 5: vertical flip."""
    if patch.shape[-2] != patch.shape[-1]:
        raise UsageError("augmentation requires square patches")
    if not 0 <= transform_index < N_AUGMENTATIONS:
        raise UsageError(f"transform index must be 0..5, got {transform_index}")
    if transform_index == 0:
        return patch.copy()
    if transform_index <= 3:
        return np.rot90(patch, k=transform_index, axes=(-2, -1)).copy()
    if transform_index == 4:
        return patch[..., :, ::-1].copy()
    return patch[..., ::-1, :].copy()


def preprocess(patch: np.ndarray) -> np.ndarray:
    """Affine pixel map (v - 128) / 160: zero-centered, roughly unit-range."""
    return (np.asarray(patch, dtype=np.float64) - 128.0) / 160.0


def central_surround_split(patch: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(central 32x32 crop, 2x2-average-pooled surround 32x32) of a 64x64 patch.

    Works on a single patch or a batch with trailing spatial axes.
    """
    if patch.shape[-2:] != (PATCH_SIZE, PATCH_SIZE):
        raise ShapeError(f"central-surround split expects 64x64 patches, got {patch.shape[-2:]}")
    q = PATCH_SIZE // 4
    central = patch[..., q:3 * q, q:3 * q]
    shape = patch.shape[:-2] + (PATCH_SIZE // 2, 2, PATCH_SIZE // 2, 2)
    surround = np.asarray(patch, dtype=np.float64).reshape(shape).mean(axis=(-3, -1))
    return np.asarray(central, dtype=np.float64).copy(), surround


# ---------------------------------------------------------------------------
# Toy dataset
# ---------------------------------------------------------------------------

TOY_MEANS = ((-1.0, 0.0), (1.0, 0.0))
TOY_SIGMA = 0.6
TOY_SAMPLES = 80
TOY_FLIPS = 4


def make_toy_set(seed: int, n_samples: int = TOY_SAMPLES, sigma: float = TOY_SIGMA,
                 means=TOY_MEANS, n_flips: int = TOY_FLIPS) -> ToySet:
    """Two isotropic Gaussian clouds, half the samples per class, with a fixed
    number of labels flipped uniformly at random."""
    rng = np.random.default_rng(seed)
    per = n_samples // 2
    pts0 = rng.normal(means[0], sigma, size=(per, 2))
    pts1 = rng.normal(means[1], sigma, size=(n_samples - per, 2))
    points = np.concatenate([pts0, pts1], axis=0)
    clean = np.concatenate([np.zeros(per, int), np.ones(n_samples - per, int)])
    flipped = rng.choice(n_samples, size=n_flips, replace=False)
    labels = clean.copy()
    labels[flipped] = 1 - labels[flipped]
    return ToySet(points=points, labels=labels, clean_labels=clean,
                  flipped_indices=np.sort(flipped))


def toy_to_input(points: np.ndarray) -> np.ndarray:
    """2-d points as (batch, 2, 1, 1) tensors for the dense-map toy tower."""
    return points.reshape(-1, 2, 1, 1)


def export_toy_csv(toy: ToySet, path) -> None:
    flipped = np.zeros(len(toy.points), dtype=int)
    flipped[toy.flipped_indices] = 1
    with open(path, "w") as fh:
        fh.write("x,y,label,flipped\n")
        for (x, y), lab, fl in zip(toy.points, toy.labels, flipped):
            fh.write(f"{x!r},{y!r},{lab},{fl}\n")


# ---------------------------------------------------------------------------
# Synthetic patch fixture (stand-in when the real UBC data is absent)
# ---------------------------------------------------------------------------

def make_synthetic_patchset(n_classes: int, per_class: int, seed: int,
                            gain_range=(0.6, 1.4), offset_range=(-2.0, 2.0),
                            noise_sigma: float = 0.05) -> PatchSet:
    """Classes are smooth random patterns; each patch is its class pattern
    under a random per-patch gain, brightness offset and pixel noise, so raw
    pixel distance is dominated by nuisance while class structure is learnable.
    Patches are float64 in roughly [-3, 3] (already preprocessed scale)."""
    rng = np.random.default_rng(seed)
    k = PATCH_SIZE // 8
    base = rng.normal(size=(n_classes, k, k))
    patterns = base.repeat(8, axis=1).repeat(8, axis=2)
    # Light smoothing so patterns are not blocky.
    patterns = (patterns + np.roll(patterns, 4, axis=1) + np.roll(patterns, 4, axis=2)) / 3.0
    patterns -= patterns.mean(axis=(1, 2), keepdims=True)
    patterns /= patterns.std(axis=(1, 2), keepdims=True)
    n = n_classes * per_class
    gains = rng.uniform(*gain_range, size=(n, 1, 1))
    offsets = rng.uniform(*offset_range, size=(n, 1, 1))
    noise = rng.normal(0.0, noise_sigma, size=(n, PATCH_SIZE, PATCH_SIZE))
    class_ids = np.repeat(np.arange(n_classes), per_class)
    patches = gains * patterns[class_ids] + offsets + noise
    return PatchSet(patches=patches, class_ids=class_ids, source="synthetic")


def write_synthetic_ubc(directory: str, n_patches: int = 512, seed: int = 0) -> None:
    """Write a small synthetic dataset in the UBC on-disk layout (mosaics +
    info.txt + an m50-style match file), for loader tests and demos."""
    from PIL import Image

    os.makedirs(directory, exist_ok=True)
    rng = np.random.default_rng(seed)
    per_mosaic = MOSAIC_GRID * MOSAIC_GRID
    n_mosaics = (n_patches + per_mosaic - 1) // per_mosaic
    class_ids = np.sort(rng.integers(0, max(2, n_patches // 3), size=n_patches))
    raw = rng.integers(0, 256, size=(n_mosaics * per_mosaic, PATCH_SIZE, PATCH_SIZE),
                       dtype=np.uint8)
    for m in range(n_mosaics):
        block = raw[m * per_mosaic:(m + 1) * per_mosaic]
        mosaic = block.reshape(MOSAIC_GRID, MOSAIC_GRID, PATCH_SIZE, PATCH_SIZE)
        mosaic = mosaic.transpose(0, 2, 1, 3).reshape(MOSAIC_GRID * PATCH_SIZE,
                                                      MOSAIC_GRID * PATCH_SIZE)
        Image.fromarray(mosaic).save(os.path.join(directory, f"patches{m:04d}.bmp"))
    with open(os.path.join(directory, "info.txt"), "w") as fh:
        for cid in class_ids:
            fh.write(f"{cid} 0\n")
    lines = []
    for i in range(0, n_patches - 1, 2):
        if class_ids[i] == class_ids[i + 1]:
            lines.append(f"{i} {class_ids[i]} 0 {i + 1} {class_ids[i + 1]} 0 0\n")
    with open(os.path.join(directory, "m50_synthetic.txt"), "w") as fh:
        fh.writelines(lines)
