"""Loss functions over network outputs, with exact analytic gradients.

Six losses are provided: the pairwise embedding and pairwise similarity
baselines, the triplet ratio loss, the two global batch-statistics losses
(embedding distances and similarity scores), and the combined
triplet-plus-global loss. Each returns a LossResult carrying the scalar
value, gradients with respect to every network output involved, and the
batch statistics (means/variances of the matching and non-matching
distance or similarity distributions) where they are defined.

Conventions, fixed deliberately per loss:
  - triplet loss uses unsquared Euclidean distances;
  - global embedding loss uses squared distances divided by 4, so unit-norm
    embeddings keep them in [0, 1];
  - hinge terms max(0, x) are active iff x > 0 (subgradient 0 at x = 0), and
    indicator functions use the matching strict inequality;
  - per-pair/per-triplet losses are averaged over the batch, while the
    combined loss sums the per-triplet terms and weights them by gamma.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError, UsageError


@dataclass
class LossConfig:
    """Hyperparameters shared by all losses; defaults follow the training recipe."""

    triplet_margin: float = 0.01     # m in the triplet ratio loss
    global_margin: float = 0.4       # t, embedding-mean gap margin
    similarity_margin: float = 1.0   # m, similarity-mean gap margin
    lam: float = 0.8                 # lambda, hinge balance weight
    gamma: float = 1.0               # combined-loss weight on the triplet sum
    kappa: float = 0.01              # small constant in the pairwise similarity loss

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise UsageError("lambda and gamma must be nonnegative")
        if self.kappa <= 0:
            raise UsageError("kappa must be positive")
        if min(self.triplet_margin, self.global_margin, self.similarity_margin) < 0:
            raise UsageError("margins must be nonnegative")


@dataclass
class BatchStats:
    mu_plus: float
    mu_minus: float
    var_plus: float
    var_minus: float
    d_plus: np.ndarray
    d_minus: np.ndarray


@dataclass
class LossResult:
    value: float
    grad_anchor: Optional[np.ndarray] = None
    grad_positive: Optional[np.ndarray] = None
    grad_negative: Optional[np.ndarray] = None
    grad_scores_plus: Optional[np.ndarray] = None
    grad_scores_minus: Optional[np.ndarray] = None
    stats: Optional[BatchStats] = None


def _check_same_shape(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"embedding batches must share a shape, got {sorted(shapes)}")


def pairwise_embedding_loss(e_i: np.ndarray, e_j: np.ndarray,
                            same_class: np.ndarray) -> LossResult:
    """Signed-distance pairwise loss: +||ei - ej|| for matching pairs,
    -||ei - ej|| for non-matching, averaged over the batch.

    Unbounded below for non-matching pairs; provided as a baseline.
    """
    _check_same_shape(e_i, e_j)
    n = e_i.shape[0]
    diff = e_i - e_j
    dist = np.linalg.norm(diff, axis=1)
    sign = np.where(same_class, 1.0, -1.0)
    value = float(np.mean(sign * dist))
    # Subgradient 0 at coincident pairs.
    safe = np.where(dist > 0, dist, 1.0)
    unit = np.where(dist[:, None] > 0, diff / safe[:, None], 0.0)
    grad_i = sign[:, None] * unit / n
    return LossResult(value=value, grad_anchor=grad_i, grad_positive=-grad_i)


def pairwise_similarity_loss(scores: np.ndarray, same_class: np.ndarray,
                             cfg: LossConfig) -> LossResult:
    """Pairwise similarity baseline: 1/(kappa+g) for matching pairs, g for
    non-matching, averaged over the batch."""
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    denom = cfg.kappa + scores
    if np.any(same_class & (denom <= 0)):
        raise UsageError("kappa + score <= 0 on a matching pair; similarity head diverged")
    per = np.where(same_class, 1.0 / np.where(same_class, denom, 1.0), scores)
    grad = np.where(same_class, -1.0 / np.where(same_class, denom, 1.0) ** 2, 1.0) / n
    return LossResult(value=float(per.mean()), grad_scores_plus=grad)


def _triplet_terms(a, p, n_emb, margin):
    """Per-triplet hinge values and gradients, without batch averaging."""
    diff_n = a - n_emb
    diff_p = a - p
    dist_n = np.linalg.norm(diff_n, axis=1)
    dist_p = np.linalg.norm(diff_p, axis=1)
    denom = dist_p + margin
    values = np.maximum(0.0, 1.0 - dist_n / denom)
    active = values > 0
    # d/dDn = -1/denom, d/dDp = Dn/denom^2 where the hinge is active.
    dn_safe = np.where(dist_n > 0, dist_n, 1.0)
    dp_safe = np.where(dist_p > 0, dist_p, 1.0)
    unit_n = diff_n / dn_safe[:, None]
    unit_p = diff_p / dp_safe[:, None]
    coef_n = np.where(active, -1.0 / denom, 0.0)[:, None]
    coef_p = np.where(active, dist_n / denom ** 2, 0.0)[:, None]
    grad_a = coef_n * unit_n + coef_p * unit_p
    grad_p = -coef_p * unit_p
    grad_n = -coef_n * unit_n
    return values, grad_a, grad_p, grad_n


def triplet_loss(a: np.ndarray, p: np.ndarray, n_emb: np.ndarray,
                 cfg: LossConfig) -> LossResult:
    """Ratio triplet loss max(0, 1 - ||a-n|| / (||a-p|| + m)), batch mean."""
    _check_same_shape(a, p, n_emb)
    n = a.shape[0]
    values, ga, gp, gn = _triplet_terms(a, p, n_emb, cfg.triplet_margin)
    return LossResult(value=float(values.mean()),
                      grad_anchor=ga / n, grad_positive=gp / n, grad_negative=gn / n)


def _moments(d: np.ndarray):
    mu = float(d.mean())
    var = float(((d - mu) ** 2).mean())
    return mu, var


def global_embedding_loss(a: np.ndarray, p: np.ndarray, n_emb: np.ndarray,
                          cfg: LossConfig) -> LossResult:
    """Global batch-statistics loss over embedding distances.

    d+ = ||a-p||^2/4 and d- = ||a-n||^2/4; the loss is the sum of the two
    distance-distribution variances plus a hinge on the mean gap:
    (var+ + var-) + lambda * max(0, mu+ - mu- + t).
    """
    _check_same_shape(a, p, n_emb)
    n = a.shape[0]
    if n < 2:
        raise UsageError("global embedding loss needs a batch of at least 2 triplets")
    d_plus = ((a - p) ** 2).sum(axis=1) / 4.0
    d_minus = ((a - n_emb) ** 2).sum(axis=1) / 4.0
    mu_p, var_p = _moments(d_plus)
    mu_m, var_m = _moments(d_minus)
    hinge_arg = mu_p - mu_m + cfg.global_margin
    value = var_p + var_m + cfg.lam * max(0.0, hinge_arg)
    ind = 1.0 if hinge_arg > 0 else 0.0  # == 1((mu- - mu+) < t) away from the boundary
    cp = (2.0 * (d_plus - mu_p) + cfg.lam * ind)[:, None]   # dJ/dd+ * N
    cm = (2.0 * (d_minus - mu_m) - cfg.lam * ind)[:, None]  # dJ/dd- * N
    # dd+/da = (a-p)/2, dd+/dp = (p-a)/2, and similarly for d-.
    grad_a = (cp * (a - p) + cm * (a - n_emb)) / (2.0 * n)
    grad_p = cp * (p - a) / (2.0 * n)
    grad_n = cm * (n_emb - a) / (2.0 * n)
    stats = BatchStats(mu_p, mu_m, var_p, var_m, d_plus, d_minus)
    return LossResult(value=float(value), grad_anchor=grad_a,
                      grad_positive=grad_p, grad_negative=grad_n, stats=stats)


def global_similarity_loss(g_plus: np.ndarray, g_minus: np.ndarray,
                           cfg: LossConfig) -> LossResult:
    """Global batch-statistics loss over similarity scores:
    (var+ + var-) + lambda * max(0, m - (mu+ - mu-)).

    The gradient carries lambda/2 in the indicator terms, reducing to the
    plain +-1/2 form at lambda = 1.
    """
    g_plus = np.asarray(g_plus, dtype=float)
    g_minus = np.asarray(g_minus, dtype=float)
    if g_plus.shape != g_minus.shape or g_plus.ndim != 1:
        raise ShapeError("g_plus and g_minus must be 1-d arrays of equal length")
    n = g_plus.shape[0]
    if n < 2:
        raise UsageError("global similarity loss needs a batch of at least 2 pairs of scores")
    mu_p, var_p = _moments(g_plus)
    mu_m, var_m = _moments(g_minus)
    hinge_arg = cfg.similarity_margin - (mu_p - mu_m)
    value = var_p + var_m + cfg.lam * max(0.0, hinge_arg)
    ind = 1.0 if hinge_arg > 0 else 0.0
    grad_plus = (2.0 / n) * ((g_plus - mu_p) - 0.5 * cfg.lam * ind)
    grad_minus = (2.0 / n) * ((g_minus - mu_m) + 0.5 * cfg.lam * ind)
    stats = BatchStats(mu_p, mu_m, var_p, var_m, g_plus.copy(), g_minus.copy())
    return LossResult(value=float(value), grad_scores_plus=grad_plus,
                      grad_scores_minus=grad_minus, stats=stats)


def combined_loss(a: np.ndarray, p: np.ndarray, n_emb: np.ndarray,
                  cfg: LossConfig) -> LossResult:
    """gamma * sum of per-triplet ratio losses + global embedding loss."""
    _check_same_shape(a, p, n_emb)
    g = global_embedding_loss(a, p, n_emb, cfg)
    values, ga, gp, gn = _triplet_terms(a, p, n_emb, cfg.triplet_margin)
    value = cfg.gamma * float(values.sum()) + g.value
    return LossResult(value=value,
                      grad_anchor=cfg.gamma * ga + g.grad_anchor,
                      grad_positive=cfg.gamma * gp + g.grad_positive,
                      grad_negative=cfg.gamma * gn + g.grad_negative,
                      stats=g.stats)


EMBEDDING_LOSSES = ("pairwise-embed", "triplet", "global-embed", "triplet+global")
SIMILARITY_LOSSES = ("pairwise-sim", "global-sim")
ALL_LOSSES = EMBEDDING_LOSSES + SIMILARITY_LOSSES
