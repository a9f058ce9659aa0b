"""Evaluation: ROC sweep with FPR at 95% recall, nearest-neighbour label maps
for the toy study, a raw-pixel baseline, and the central finite-difference
gradient checker used throughout the test suite.
"""

import csv
import json
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from .errors import UsageError

RECALL_TARGET = 0.95


@dataclass
class ScoredPairs:
    scores: np.ndarray
    labels: np.ndarray               # True = matching pair
    higher_is_similar: bool = True


@dataclass
class EvalReport:
    roc_points: List[Tuple[float, float]]   # (FPR, TPR) along the sweep
    fpr95: float
    threshold95: float

    def to_json(self) -> str:
        return json.dumps({
            "fpr95": self.fpr95,
            "threshold95": self.threshold95,
            "roc": [[f, t] for f, t in self.roc_points],
        })

    def write_roc_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr"])
            for f, t in self.roc_points:
                w.writerow([repr(f), repr(t)])


@dataclass
class LabelMap:
    xs: np.ndarray
    ys: np.ndarray
    labels: np.ndarray               # (len(ys), len(xs))

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("x,y,label\n")
            for iy, y in enumerate(self.ys):
                for ix, x in enumerate(self.xs):
                    fh.write(f"{x!r},{y!r},{int(self.labels[iy, ix])}\n")


def roc_and_fpr95(sp: ScoredPairs) -> EvalReport:
    """Threshold sweep over all distinct scores (classify positive when the
    orientation-normalized score >= threshold). FPR95 is the FPR at 95%
    recall, linearly interpolated between adjacent sweep points."""
    labels = np.asarray(sp.labels, dtype=bool)
    if labels.all() or not labels.any():
        raise UsageError("ROC needs at least one matching and one non-matching pair")
    scores = np.asarray(sp.scores, dtype=float)
    if not sp.higher_is_similar:
        scores = -scores
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(~sorted_labels)
    # Operating points only where the threshold can actually change: at the
    # last occurrence of each distinct score, plus the (0, 0) point.
    distinct = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    tpr = np.r_[0.0, tp[distinct] / n_pos]
    fpr = np.r_[0.0, fp[distinct] / n_neg]
    thresholds = np.r_[np.inf, sorted_scores[distinct]]
    fpr95, thr95 = _fpr_at_recall(fpr, tpr, thresholds, RECALL_TARGET)
    if not sp.higher_is_similar:
        thr95 = -thr95
    return EvalReport(roc_points=list(zip(fpr.tolist(), tpr.tolist())),
                      fpr95=fpr95, threshold95=thr95)


def _fpr_at_recall(fpr, tpr, thresholds, target):
    """First sweep point reaching the target recall, linearly interpolating
    the FPR from the preceding point when the target falls between points.

    No interpolation from the synthetic (0, 0) anchor: when the first real
    operating point already reaches the target, its FPR is reported as-is.
    """
    idx = int(np.argmax(tpr >= target))
    if tpr[idx] == target or idx <= 1:
        return float(fpr[idx]), float(thresholds[idx])
    t0, t1 = tpr[idx - 1], tpr[idx]
    f0, f1 = fpr[idx - 1], fpr[idx]
    frac = (target - t0) / (t1 - t0)
    return float(f0 + (f1 - f0) * frac), float(thresholds[idx])


def nn_label_map(train_embeddings: np.ndarray, train_labels: np.ndarray,
                 grid_xs: np.ndarray, grid_ys: np.ndarray,
                 embed_fn: Callable[[np.ndarray], np.ndarray]) -> LabelMap:
    """Label every grid point by its single nearest training neighbour in the
    embedding space (Euclidean; ties break to the lowest training index)."""
    if len(train_embeddings) == 0:
        raise UsageError("nearest-neighbour map needs a non-empty training set")
    gx, gy = np.meshgrid(grid_xs, grid_ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    emb = embed_fn(pts)
    # chunked so the (grid, train, dim) difference tensor stays small
    nearest = np.empty(len(emb), dtype=np.int64)
    for start in range(0, len(emb), 2048):
        chunk = emb[start:start + 2048]
        d2 = ((chunk[:, None, :] - train_embeddings[None, :, :]) ** 2).sum(axis=2)
        nearest[start:start + 2048] = d2.argmin(axis=1)  # first index on ties
    labels = np.asarray(train_labels)[nearest].reshape(len(grid_ys), len(grid_xs))
    return LabelMap(xs=np.asarray(grid_xs), ys=np.asarray(grid_ys), labels=labels)


def make_grid(points: np.ndarray, resolution: int = 200, margin: float = 0.2):
    """Evaluation grid over the data bounding box plus a proportional margin."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = hi - lo
    lo = lo - margin * span
    hi = hi + margin * span
    return (np.linspace(lo[0], hi[0], resolution),
            np.linspace(lo[1], hi[1], resolution))


def raw_pixel_baseline(left: np.ndarray, right: np.ndarray) -> ScoredPairs:
    """Score = negative Euclidean distance between flattened patches."""
    l2 = left.reshape(len(left), -1).astype(np.float64)
    r2 = right.reshape(len(right), -1).astype(np.float64)
    d = np.linalg.norm(l2 - r2, axis=1)
    return ScoredPairs(scores=-d, labels=np.zeros(len(d), bool), higher_is_similar=True)


def gradient_check(fn: Callable, point: np.ndarray, step: float = 1e-5) -> float:
    """Max relative error between the analytic gradient returned by
    ``fn(point) -> (value, grad)`` and central finite differences."""
    point = np.asarray(point, dtype=np.float64)
    _, grad = fn(point)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != point.shape:
        raise UsageError(f"gradient shape {grad.shape} != point shape {point.shape}")
    worst = 0.0
    flat = point.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up, _ = fn(point)
        flat[i] = orig - step
        down, _ = fn(point)
        flat[i] = orig
        numeric = (up - down) / (2 * step)
        if not np.isfinite(numeric):
            raise UsageError(f"non-finite finite-difference value at coordinate {i}")
        err = abs(grad.ravel()[i] - numeric) / max(1e-8, abs(numeric))
        worst = max(worst, err)
    return worst


def embedding_pair_scores(embed_fn: Callable, left: np.ndarray,
                          right: np.ndarray) -> ScoredPairs:
    """Squared Euclidean embedding distance, lower-is-more-similar."""
    el = embed_fn(left)
    er = embed_fn(right)
    d2 = ((el - er) ** 2).sum(axis=1)
    return ScoredPairs(scores=d2, labels=np.zeros(len(d2), bool), higher_is_similar=False)
