"""Two-dimensional outlier study.

Trains the small dense tower three times on the same corrupted point cloud,
once per loss (per-triplet ratio, combined, batch statistics), then labels an
input-space grid by nearest training neighbour in the embedding space.  The
quality statistic is agreement with the clean decision boundary of the two
generating Gaussians, which is the vertical line between their means.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from . import data, evaluate, optim
from .arch import TOY_ARCH, parse_arch
from .losses import LossConfig
from .model import EmbeddingNet

TOY_LOSSES = ("triplet", "triplet+global", "global-embed")


@dataclass
class ToyStudyConfig:
    seed: int = 0
    epochs: int = 300
    batch_size: int = 80
    triplets_per_epoch: int = 160
    lr_start: float = 0.2
    lr_end: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.0
    resolution: int = 64
    grid_margin: float = 0.0
    loss: LossConfig = field(default_factory=lambda: LossConfig(gamma=1.0 / 320))


@dataclass
class ToyRunResult:
    loss_name: str
    clean_accuracy: float
    train_accuracy: float
    label_map: evaluate.LabelMap
    trace: List[optim.EpochTrace]


def clean_accuracy(label_map: evaluate.LabelMap) -> float:
    """Fraction of grid cells whose label agrees with the ideal boundary
    separating the two generating Gaussians (class 1 right of the midline)."""
    xs = label_map.xs
    midline = sum(m[0] for m in data.TOY_MEANS) / len(data.TOY_MEANS)
    ideal = (xs[None, :] > midline).astype(int)
    ideal = np.broadcast_to(ideal, label_map.labels.shape)
    return float((label_map.labels == ideal).mean())


def train_toy_model(toy: data.ToySet, loss_name: str,
                    cfg: ToyStudyConfig) -> Tuple[EmbeddingNet, List[optim.EpochTrace]]:
    """One training run on the corrupted toy set with the given loss."""
    spec = parse_arch(TOY_ARCH, input_shape=(2, 1, 1))
    net = EmbeddingNet(spec, seed=cfg.seed)
    inputs = data.toy_to_input(toy.points)
    pseudo = data.PatchSet(patches=inputs, class_ids=toy.labels)

    def batches(epoch: int, seed: int) -> list:
        idx = data.sample_triplets(pseudo, cfg.triplets_per_epoch,
                                   seed + 7919 * epoch)
        out = []
        for start in range(0, len(idx), cfg.batch_size):
            chunk = idx[start:start + cfg.batch_size]
            out.append((inputs[chunk[:, 0]], inputs[chunk[:, 1]],
                        inputs[chunk[:, 2]]))
        return out

    train_cfg = optim.TrainConfig(
        lr_start=cfg.lr_start, lr_end=cfg.lr_end, momentum=cfg.momentum,
        weight_decay=cfg.weight_decay, epochs=cfg.epochs,
        batch_size=cfg.batch_size, seed=cfg.seed)
    trace = optim.train(net, batches, loss_name, cfg.loss, train_cfg)
    return net, trace


def run_toy_study(cfg: ToyStudyConfig,
                  loss_names: Tuple[str, ...] = TOY_LOSSES) -> Dict[str, ToyRunResult]:
    """Train once per loss on identical data and map the input space."""
    toy = data.make_toy_set(cfg.seed)
    grid_xs, grid_ys = evaluate.make_grid(toy.points, resolution=cfg.resolution,
                                          margin=cfg.grid_margin)
    results: Dict[str, ToyRunResult] = {}
    for loss_name in loss_names:
        net, trace = train_toy_model(toy, loss_name, cfg)
        train_emb = net.embed(data.toy_to_input(toy.points))
        label_map = evaluate.nn_label_map(
            train_emb, toy.labels, grid_xs, grid_ys,
            lambda pts: net.embed(data.toy_to_input(pts)))
        train_pred = _nn_self_labels(train_emb, toy.labels)
        results[loss_name] = ToyRunResult(
            loss_name=loss_name,
            clean_accuracy=clean_accuracy(label_map),
            train_accuracy=float((train_pred == toy.labels).mean()),
            label_map=label_map,
            trace=trace,
        )
    return results


def _nn_self_labels(embeddings: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Leave-one-out nearest-neighbour labels of the training points."""
    d2 = ((embeddings[:, None, :] - embeddings[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    return np.asarray(labels)[d2.argmin(axis=1)]


def loss_file_tag(loss_name: str) -> str:
    return loss_name.replace("+", "_").replace("-", "_")


def write_toy_artifacts(results: Dict[str, ToyRunResult], cfg: ToyStudyConfig,
                        out_dir, config_hash: str = "") -> dict:
    """Label-map CSV per loss, the training trace, and a summary JSON.
    Returns the summary dictionary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = f"# config_sha256={config_hash} seed={cfg.seed}\n"
    summary = {
        "config_sha256": config_hash,
        "seed": cfg.seed,
        "losses": {},
    }
    toy = data.make_toy_set(cfg.seed)
    data.export_toy_csv(toy, out / "training_points.csv")
    _prepend(out / "training_points.csv", header)
    for loss_name, res in results.items():
        tag = loss_file_tag(loss_name)
        map_path = out / f"label_map_{tag}.csv"
        res.label_map.write_csv(map_path)
        _prepend(map_path, header)
        trace_path = out / f"trace_{tag}.csv"
        optim.write_trace_csv(res.trace, trace_path)
        _prepend(trace_path, header)
        summary["losses"][loss_name] = {
            "clean_accuracy": res.clean_accuracy,
            "train_accuracy": res.train_accuracy,
            "final_mean_loss": res.trace[-1].mean_loss,
            "label_map": map_path.name,
        }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _prepend(path: Path, text: str) -> None:
    path.write_text(text + path.read_text())
