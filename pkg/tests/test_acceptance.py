"""Acceptance suite.

One test per acceptance criterion, each with the tolerance and runtime budget
stated in its docstring.  These tests intentionally repeat some coverage from
the per-module suites; they are the single place where every headline claim
of the package is exercised end to end.
"""

import json
import time

import numpy as np
import pytest

from patchmetric import cli, data, evaluate, losses, toy
from patchmetric.arch import (CS_FUSION_ARCH, CS_STREAM_ARCH, SNET_ARCH,
                              TNET_ARCH, TOY_ARCH, parse_arch,
                              propagate_shapes)
from patchmetric.evaluate import RECALL_TARGET, ScoredPairs, roc_and_fpr95
from patchmetric.layers import (LayerParams, batchnorm_backward,
                                batchnorm_forward, conv_backward,
                                conv_forward, l2_normalize,
                                l2_normalize_backward, maxpool_backward,
                                maxpool_forward, relu, relu_backward)
from patchmetric.losses import LossConfig
from patchmetric.model import EmbeddingNet, SimilarityNet, embedding_loss_by_name


def unit_rows(rng, n, dim):
    return l2_normalize(rng.standard_normal((n, dim)))[0]


def finite_diff(fn, point, step=1e-5):
    """Max relative error of the analytic gradient returned by
    ``fn(point) -> (value, grad)`` against central differences."""
    return evaluate.gradient_check(fn, point, step)


# ---------------------------------------------------------------------------
# Criterion 1: loss gradient fidelity
# ---------------------------------------------------------------------------

N_BATCH = 8
DIM = 16


def _embedding_point(rng, loss_name, cfg):
    """Random unit embeddings resampled until no hinge argument is within
    1e-2 of its boundary (non-boundary points only)."""
    for _ in range(200):
        a = unit_rows(rng, N_BATCH, DIM)
        p = unit_rows(rng, N_BATCH, DIM)
        n = unit_rows(rng, N_BATCH, DIM)
        dp = np.linalg.norm(a - p, axis=1)
        dn = np.linalg.norm(a - n, axis=1)
        hinge_triplet = 1.0 - dn / (dp + cfg.triplet_margin)
        d_plus = (np.linalg.norm(a - p, axis=1) ** 2) / 4
        d_minus = (np.linalg.norm(a - n, axis=1) ** 2) / 4
        hinge_global = d_plus.mean() - d_minus.mean() + cfg.global_margin
        ok = True
        if loss_name in ("triplet", "triplet+global"):
            ok &= bool(np.all(np.abs(hinge_triplet) > 1e-2))
        if loss_name in ("global-embed", "triplet+global"):
            ok &= abs(hinge_global) > 1e-2
        if loss_name == "pairwise-embed":
            ok &= bool(np.all(dp > 1e-2) and np.all(dn > 1e-2))
        if ok:
            return a, p, n
    raise AssertionError("could not sample a non-boundary point")


def _embedding_loss_fn(loss_name, cfg):
    def fn(stacked):
        a, p, n = stacked[:N_BATCH], stacked[N_BATCH:2 * N_BATCH], stacked[2 * N_BATCH:]
        res = embedding_loss_by_name(loss_name, a, p, n, cfg)
        grad = np.concatenate([res.grad_anchor, res.grad_positive,
                               res.grad_negative], axis=0)
        return res.value, grad
    return fn


def test_criterion_1_loss_gradient_fidelity():
    """All six losses: analytic gradient vs central differences at 50
    non-boundary points each, N=8, 16-dim, max relative error < 1e-4."""
    start = time.monotonic()
    rng = np.random.default_rng(20260826)
    cfg = LossConfig()
    worst = {}
    for loss_name in losses.EMBEDDING_LOSSES:
        errs = []
        for _ in range(50):
            a, p, n = _embedding_point(rng, loss_name, cfg)
            stacked = np.concatenate([a, p, n], axis=0)
            errs.append(finite_diff(_embedding_loss_fn(loss_name, cfg), stacked))
        worst[loss_name] = max(errs)

    errs = []
    while len(errs) < 50:
        g_plus = rng.uniform(0.2, 1.2, N_BATCH)
        g_minus = rng.uniform(-1.2, 0.3, N_BATCH)
        if abs(cfg.similarity_margin - (g_plus.mean() - g_minus.mean())) < 1e-2:
            continue

        def fn(scores):
            res = losses.global_similarity_loss(scores[:N_BATCH],
                                                scores[N_BATCH:], cfg)
            return res.value, np.concatenate([res.grad_scores_plus,
                                              res.grad_scores_minus])
        errs.append(finite_diff(fn, np.concatenate([g_plus, g_minus])))
    worst["global-sim"] = max(errs)

    errs = []
    for _ in range(50):
        scores = rng.uniform(0.1, 1.5, 2 * N_BATCH)
        same = np.arange(2 * N_BATCH) < N_BATCH

        def fn(values):
            res = losses.pairwise_similarity_loss(values, same, cfg)
            return res.value, res.grad_scores_plus
        errs.append(finite_diff(fn, scores))
    worst["pairwise-sim"] = max(errs)

    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"runtime budget exceeded: {elapsed:.1f}s"
    for loss_name, err in worst.items():
        assert err < 1e-4, f"{loss_name}: max relative error {err:.2e}"


# ---------------------------------------------------------------------------
# Criterion 2: layer fidelity
# ---------------------------------------------------------------------------

def test_criterion_2_layer_gradient_fidelity():
    """conv, maxpool, batchnorm, relu and unit-norm backward passes on 20
    random small shapes each, < 1e-5 relative error."""
    start = time.monotonic()
    rng = np.random.default_rng(4242)
    worst = dict.fromkeys(("conv", "maxpool", "batchnorm", "relu", "l2norm"), 0.0)
    for trial in range(20):
        b = int(rng.integers(1, 4))
        c = int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        h = k + int(rng.integers(0, 5))
        out_c = int(rng.integers(1, 5))

        x = rng.standard_normal((b, c, h, h))
        params = LayerParams(weights=rng.standard_normal((out_c, c, k, k)),
                             biases=rng.standard_normal(out_c))
        probe_out, _ = conv_forward(x, params, stride)
        r = rng.standard_normal(probe_out.shape)

        def conv_fn(inp):
            out, cache = conv_forward(inp, params, stride)
            gx, _, _ = conv_backward(r, params.weights, cache)
            return float((out * r).sum()), gx
        worst["conv"] = max(worst["conv"], finite_diff(conv_fn, x))

        pool = int(rng.integers(1, 4))
        hp = pool + int(rng.integers(0, 4))
        xp = rng.standard_normal((b, c, hp, hp))
        out_probe, _ = maxpool_forward(xp, pool, pool)
        rp = rng.standard_normal(out_probe.shape)

        def pool_fn(inp):
            out, argmax = maxpool_forward(inp, pool, pool)
            gx = maxpool_backward(argmax, rp, inp.shape, pool, pool)
            return float((out * rp).sum()), gx
        worst["maxpool"] = max(worst["maxpool"], finite_diff(pool_fn, xp))

        xb = rng.standard_normal((b + 1, c, h, h))
        bn = LayerParams(weights=None, biases=None,
                         bn_gain=rng.uniform(0.5, 1.5, c),
                         bn_bias=rng.standard_normal(c))
        rb = rng.standard_normal(xb.shape)

        def bn_fn(inp):
            out, cache, _, _ = batchnorm_forward(inp, bn, mode="train")
            gx, _, _ = batchnorm_backward(rb, cache)
            return float((out * rb).sum()), gx
        worst["batchnorm"] = max(worst["batchnorm"], finite_diff(bn_fn, xb))

        xr = rng.standard_normal((b, 6))
        xr = np.where(np.abs(xr) < 0.05, xr + 0.2, xr)
        rr = rng.standard_normal(xr.shape)

        def relu_fn(inp):
            out, mask = relu(inp)
            return float((out * rr).sum()), relu_backward(rr, mask)
        worst["relu"] = max(worst["relu"], finite_diff(relu_fn, xr))

        xn = rng.standard_normal((b, int(rng.integers(2, 8))))
        rn = rng.standard_normal(xn.shape)

        def norm_fn(inp):
            out, cache = l2_normalize(inp)
            return float((out * rn).sum()), l2_normalize_backward(rn, cache)
        worst["l2norm"] = max(worst["l2norm"], finite_diff(norm_fn, xn))

    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"runtime budget exceeded: {elapsed:.1f}s"
    for layer, err in worst.items():
        assert err < 1e-5, f"{layer}: max relative error {err:.2e}"


# ---------------------------------------------------------------------------
# Criterion 3: end-to-end parameter gradients
# ---------------------------------------------------------------------------

def _sampled_param_error(net, step_fn, rng, coords=3, step=1e-5):
    """Relative error of analytic parameter gradients on sampled coordinates.
    Coordinates where the finite difference itself is unstable (a ReLU kink
    inside the stencil) and exactly-zero gradients (biases feeding batch
    norm) are skipped."""
    _, grads = step_fn()
    worst = 0.0
    for name, arr in net.parameters().items():
        flat = arr.ravel()
        picks = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
        for i in picks:
            def central(h):
                orig = flat[i]
                flat[i] = orig + h
                up, _ = step_fn()
                flat[i] = orig - h
                down, _ = step_fn()
                flat[i] = orig
                return (up.value - down.value) / (2 * h)
            coarse, fine = central(step), central(step / 2)
            if abs(coarse - fine) > 1e-3 * max(1e-8, abs(fine)):
                continue
            analytic = grads[name].ravel()[i]
            if abs(analytic) < 1e-7 and abs(fine) < 1e-7:
                continue
            worst = max(worst, abs(analytic - fine) / max(1e-8, abs(fine)))
    return worst


def test_criterion_3_end_to_end_parameter_gradients():
    """Toy tower + every embedding loss and a 2-channel similarity tower +
    every similarity loss: parameter gradients < 1e-4 relative error."""
    start = time.monotonic()
    rng = np.random.default_rng(99)
    cfg = LossConfig()
    failures = []

    toy_spec = parse_arch(TOY_ARCH, input_shape=(2, 1, 1))
    for loss_name in losses.EMBEDDING_LOSSES:
        net = EmbeddingNet(toy_spec, seed=11)
        a, p, n = (rng.standard_normal((6, 2, 1, 1)) for _ in range(3))

        def step_fn():
            return net.training_step(a, p, n, loss_name, cfg)
        err = _sampled_param_error(net, step_fn, rng)
        if err >= 1e-4:
            failures.append(f"toy+{loss_name}: {err:.2e}")

    sim_spec = parse_arch("B(6,3,2)-P(2,2)-B(8,2,1)-C(1,1,1)",
                          input_shape=(2, 11, 11))
    for loss_name in losses.SIMILARITY_LOSSES:
        net = SimilarityNet(sim_spec, seed=11)
        params = net.parameters()
        head_bias = sorted(k for k in params if k.endswith(".b"))[-1]
        params[head_bias] += 2.0  # keep matching scores inside the 1/(kappa+g) domain
        a, p, n = (rng.standard_normal((6, 11, 11)) for _ in range(3))

        def step_fn():
            return net.training_step(a, p, n, loss_name, cfg)
        err = _sampled_param_error(net, step_fn, rng)
        if err >= 1e-4:
            failures.append(f"similarity+{loss_name}: {err:.2e}")

    elapsed = time.monotonic() - start
    assert elapsed < 300.0, f"runtime budget exceeded: {elapsed:.1f}s"
    assert not failures, "; ".join(failures)


# ---------------------------------------------------------------------------
# Criterion 4: toy reproduction
# ---------------------------------------------------------------------------

def test_criterion_4_toy_outlier_robustness():
    """On 5 seeds of the 80-point/4-flip dataset: clean-boundary accuracy of
    global >= triplet in at least 4 of 5 seeds, and combined >= triplet in at
    least 4 of 5 seeds."""
    start = time.monotonic()
    global_wins = 0
    combined_wins = 0
    for seed in range(5):
        results = toy.run_toy_study(toy.ToyStudyConfig(seed=seed))
        acc = {name: res.clean_accuracy for name, res in results.items()}
        global_wins += acc["global-embed"] >= acc["triplet"]
        combined_wins += acc["triplet+global"] >= acc["triplet"]
    elapsed = time.monotonic() - start
    assert elapsed < 900.0, f"runtime budget exceeded: {elapsed:.1f}s"
    assert global_wins >= 4, f"global beat triplet in only {global_wins}/5 seeds"
    assert combined_wins >= 4, f"combined beat triplet in only {combined_wins}/5 seeds"


# ---------------------------------------------------------------------------
# Criterion 5: desk-scale descriptor learning
# ---------------------------------------------------------------------------

def test_criterion_5_desk_scale_descriptor_learning(tmp_path):
    """TNet+triplet and SNet+global-sim on 20,000 synthetic-fixture triplets
    for 5 epochs; on 2,000 held-out balanced pairs each model's FPR95 is
    strictly below the raw-pixel baseline and below 0.5."""
    start = time.monotonic()
    runs = {
        "tnet_triplet": {"model": "embedding", "loss": "triplet"},
        "snet_global": {"model": "similarity", "loss": "global-sim"},
    }
    reports = {}
    for tag, overrides in runs.items():
        out = tmp_path / tag
        train_cfg = cli.load_config(cli.TRAIN_DEFAULTS, "", dict(
            overrides, out=str(out / "train")))
        assert cli.cmd_train(train_cfg) == 0
        eval_cfg = cli.load_config(cli.EVAL_DEFAULTS, "", {
            "checkpoint": str(out / "train" / "checkpoint.npz"),
            "out": str(out / "eval")})
        assert cli.cmd_eval(eval_cfg) == 0
        reports[tag] = json.loads((out / "eval" / "report.json").read_text())
    elapsed = time.monotonic() - start
    assert elapsed < 7200.0, f"runtime budget exceeded: {elapsed:.1f}s"
    for tag, report in reports.items():
        assert report["pairs"] == 2000
        assert report["fpr95"] < report["baseline_fpr95"], (
            f"{tag}: fpr95 {report['fpr95']:.3f} not below baseline "
            f"{report['baseline_fpr95']:.3f}")
        assert report["fpr95"] < 0.5, f"{tag}: fpr95 {report['fpr95']:.3f}"


# ---------------------------------------------------------------------------
# Criterion 6: FPR95 oracle equivalence
# ---------------------------------------------------------------------------

def brute_force_fpr95(scores, labels):
    """Frozen exhaustive oracle: every distinct threshold via plain loops,
    linear interpolation between real operating points only."""
    s = np.asarray(scores, float)
    labels = np.asarray(labels, bool)
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    points = [(0.0, 0.0)]
    for thr in sorted(set(s), reverse=True):
        tp = sum(1 for v, l in zip(s, labels) if l and v >= thr)
        fp = sum(1 for v, l in zip(s, labels) if not l and v >= thr)
        points.append((fp / n_neg, tp / n_pos))
    for i, (fpr, tpr) in enumerate(points):
        if tpr >= RECALL_TARGET:
            if tpr == RECALL_TARGET or i <= 1:
                return fpr
            f0, t0 = points[i - 1]
            frac = (RECALL_TARGET - t0) / (tpr - t0)
            return f0 + (fpr - f0) * frac
    raise AssertionError("target recall unreachable")


def test_criterion_6_fpr95_matches_brute_force():
    """roc_and_fpr95 equals the exhaustive threshold enumeration exactly on
    100 random scored-pair sets of size <= 50."""
    start = time.monotonic()
    rng = np.random.default_rng(606)
    for trial in range(100):
        size = int(rng.integers(4, 51))
        labels = np.zeros(size, bool)
        labels[:max(1, int(rng.integers(1, size)))] = True
        rng.shuffle(labels)
        if labels.all():
            labels[0] = False
        scores = np.round(rng.normal(size=size), int(rng.integers(0, 3)))
        report = roc_and_fpr95(ScoredPairs(scores=scores, labels=labels))
        assert report.fpr95 == brute_force_fpr95(scores, labels), (
            f"trial {trial} diverged from the oracle")
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"runtime budget exceeded: {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# Criterion 7: closed-form loss spot checks
# ---------------------------------------------------------------------------

def pair_at_distance(dist):
    """Two exactly-unit 2-d vectors at the requested Euclidean distance."""
    cos = 1.0 - dist ** 2 / 2.0
    sin = np.sqrt(1.0 - cos ** 2)
    return np.array([1.0, 0.0]), np.array([cos, sin])


def test_criterion_7_closed_form_spot_checks():
    """Inactive triplet hinge -> 0; fully overlapped distance batch ->
    lambda * t; fully overlapped similarity batch -> lambda * m, all to
    1e-12."""
    cfg = LossConfig()

    a1, p1 = pair_at_distance(0.5)
    _, n1 = pair_at_distance(1.0)
    res = losses.triplet_loss(np.tile(a1, (4, 1)), np.tile(p1, (4, 1)),
                              np.tile(n1, (4, 1)), cfg)
    assert abs(res.value) <= 1e-12

    # d+ = d- = 0.5 for every triplet: orthogonal positive and negative.
    a = np.tile([1.0, 0.0], (4, 1))
    p = np.tile([0.0, 1.0], (4, 1))
    n = np.tile([0.0, -1.0], (4, 1))
    res = losses.global_embedding_loss(a, p, n, cfg)
    assert abs(res.value - cfg.lam * cfg.global_margin) <= 1e-12
    assert abs(res.value - 0.32) <= 1e-12

    overlap_cfg = LossConfig(lam=1.0, similarity_margin=1.0)
    g = np.full(6, 0.37)
    res = losses.global_similarity_loss(g, g.copy(), overlap_cfg)
    assert abs(res.value - 1.0) <= 1e-12


# ---------------------------------------------------------------------------
# Criterion 8: parser round-trip of the published architectures
# ---------------------------------------------------------------------------

def test_criterion_8_published_architectures_round_trip():
    """The four published architecture strings parse, shape-propagate on
    their declared inputs, and render back to themselves."""
    cases = [
        (TNET_ARCH, (1, 64, 64), True, (256, 1, 1)),
        (SNET_ARCH, (2, 64, 64), True, (1, 1, 1)),
        (CS_STREAM_ARCH, (2, 32, 32), False, (192, 2, 2)),
        (TOY_ARCH, (2, 1, 1), True, (128, 1, 1)),
    ]
    for text, shape, terminal, expected_out in cases:
        spec = parse_arch(text, input_shape=shape, terminal=terminal)
        shapes = propagate_shapes(spec, shape)
        assert shapes[-1] == expected_out, f"{text}: output {shapes[-1]}"
        assert spec.render() == text

    fusion = parse_arch(CS_FUSION_ARCH, input_shape=(384, 2, 2))
    assert propagate_shapes(fusion, (384, 2, 2))[-1] == (1, 1, 1)
    assert fusion.render() == CS_FUSION_ARCH


# ---------------------------------------------------------------------------
# Criterion 9: byte-identical reproducibility
# ---------------------------------------------------------------------------

def test_criterion_9_toy_runs_are_byte_identical(tmp_path):
    """Two full toy runs with identical config and seed produce byte-identical
    artifacts."""
    study = toy.ToyStudyConfig()
    names = ("label_map_triplet.csv", "label_map_triplet_global.csv",
             "label_map_global_embed.csv", "trace_triplet.csv",
             "training_points.csv", "summary.json")
    snapshots = []
    for _ in range(2):
        results = toy.run_toy_study(study)
        toy.write_toy_artifacts(results, study, tmp_path, "fixedhash")
        snapshots.append({n: (tmp_path / n).read_bytes() for n in names})
    assert snapshots[0] == snapshots[1]
