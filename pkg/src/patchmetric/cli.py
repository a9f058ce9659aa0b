"""Command-line experiment runner.

Subcommands: ``toy`` (two-dimensional outlier study), ``train`` (descriptor
training), ``eval`` (ROC / FPR95 report plus the raw-pixel baseline),
``gradcheck`` (finite-difference verification suite) and ``parse-arch``
(architecture string inspection).  Settings come from a flat JSON config file;
command-line flags override individual keys.  Unknown config keys are
rejected.  Every artifact records the hash of the effective config and the
seed that produced it.

Exit codes: 0 success, 2 configuration error, 3 ingestion error, 4 numerical
failure.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import data, evaluate, losses, optim
from . import toy as toy_study
from .arch import parse_arch, propagate_shapes
from .arch import CS_FUSION_ARCH, CS_STREAM_ARCH, SNET_ARCH, TNET_ARCH
from .errors import (ConfigError, DegenerateInputError, IngestionError,
                     NumericalError, ParseError, ShapeError, UsageError)
from .layers import (LayerParams, batchnorm_backward, batchnorm_forward,
                     conv_backward, conv_forward, l2_normalize,
                     l2_normalize_backward, maxpool_backward, maxpool_forward,
                     relu, relu_backward)
from .losses import EMBEDDING_LOSSES, SIMILARITY_LOSSES, LossConfig
from .model import (CentralSurroundNet, EmbeddingNet, SimilarityNet,
                    load_checkpoint_into, load_checkpoint_meta,
                    save_checkpoint)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGESTION = 3
EXIT_NUMERICAL = 4

_CONFIG_ERRORS = (ConfigError, ParseError, ShapeError, UsageError)


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

TOY_DEFAULTS = {
    "seed": 0,
    "epochs": 300,
    "batch_size": 80,
    "triplets_per_epoch": 160,
    "lr_start": 0.2,
    "lr_end": 0.02,
    "momentum": 0.9,
    "weight_decay": 0.0,
    "resolution": 64,
    "grid_margin": 0.0,
    "gamma": 1.0 / 320,
    "out": "toy_out",
}

TRAIN_DEFAULTS = {
    "model": "embedding",          # embedding | similarity | central-surround
    "arch": "",                    # empty selects the published default
    "stream_arch": CS_STREAM_ARCH,
    "fusion_arch": CS_FUSION_ARCH,
    "loss": "triplet",
    "data": "synthetic",           # directory with a UBC-layout set, or "synthetic"
    "set": "",
    "triplets": 20000,
    "epochs": 5,
    "batch_size": 250,
    "lr_start": 0.01,
    "lr_end": 0.001,
    "momentum": 0.9,
    "weight_decay": 0.0005,
    "seed": 0,
    "init_from": "",
    "out": "train_out",
    "float32": True,
}

EVAL_DEFAULTS = {
    "checkpoint": "",
    "data": "synthetic",
    "set": "",
    "pairs": "",                   # m50-style pair file name inside the data dir
    "pairs_count": 2000,
    "seed": 0,
    "out": "eval_out",
    "debug_oracle_scores": False,
    "float32": True,
}

GRADCHECK_DEFAULTS = {
    "seed": 0,
    "filter": "",
    "out": "gradcheck_out",
    "debug_corrupt_gradient": False,
}

PARSE_DEFAULTS = {
    "arch": TNET_ARCH,
    "input_shape": [1, 64, 64],
    "terminal": True,
}

# Synthetic fixture shape shared by train and eval; the last fifth of the
# classes is held out for evaluation pairs.
SYNTH_CLASSES = 300
SYNTH_PER_CLASS = 8
SYNTH_SEED = 1
SYNTH_HOLDOUT_FRACTION = 0.2


def load_config(defaults: dict, config_path, overrides: dict) -> dict:
    cfg = dict(defaults)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _stamp(path: Path, cfg_hash: str, seed) -> None:
    path.write_text(f"# config_sha256={cfg_hash} seed={seed}\n" + path.read_text())


# ---------------------------------------------------------------------------
# toy
# ---------------------------------------------------------------------------

def cmd_toy(cfg: dict) -> int:
    study = toy_study.ToyStudyConfig(
        seed=int(cfg["seed"]), epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        triplets_per_epoch=int(cfg["triplets_per_epoch"]),
        lr_start=float(cfg["lr_start"]), lr_end=float(cfg["lr_end"]),
        momentum=float(cfg["momentum"]),
        weight_decay=float(cfg["weight_decay"]),
        resolution=int(cfg["resolution"]),
        grid_margin=float(cfg["grid_margin"]),
        loss=LossConfig(gamma=float(cfg["gamma"])),
    )
    results = toy_study.run_toy_study(study)
    summary = toy_study.write_toy_artifacts(results, study, cfg["out"],
                                            config_hash(cfg))
    print(json.dumps(summary["losses"], indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _default_arch(model: str) -> str:
    return TNET_ARCH if model == "embedding" else SNET_ARCH


def build_network(cfg: dict):
    model = cfg["model"]
    dtype = np.float32 if cfg.get("float32") else np.float64
    seed = int(cfg["seed"])
    if model == "embedding":
        spec = parse_arch(cfg["arch"] or _default_arch(model), (1, 64, 64))
        return EmbeddingNet(spec, seed=seed, dtype=dtype)
    if model == "similarity":
        spec = parse_arch(cfg["arch"] or _default_arch(model), (2, 64, 64))
        return SimilarityNet(spec, seed=seed, dtype=dtype)
    if model == "central-surround":
        return CentralSurroundNet(cfg["stream_arch"], cfg["fusion_arch"],
                                  seed=seed, dtype=dtype)
    raise ConfigError(f"unknown model kind {model!r}")


def validate_pairing(model: str, loss: str) -> None:
    if loss in EMBEDDING_LOSSES:
        if model != "embedding":
            raise ConfigError(
                f"loss {loss!r} needs an embedding model, got {model!r}")
    elif loss in SIMILARITY_LOSSES:
        if model not in ("similarity", "central-surround"):
            raise ConfigError(
                f"loss {loss!r} needs a similarity model, got {model!r}")
    else:
        raise ConfigError(f"unknown loss {loss!r}")


def _load_train_patches(cfg: dict) -> data.PatchSet:
    if cfg["data"] == "synthetic":
        full = data.make_synthetic_patchset(SYNTH_CLASSES, SYNTH_PER_CLASS,
                                            seed=SYNTH_SEED)
        cut = int(SYNTH_CLASSES * (1 - SYNTH_HOLDOUT_FRACTION))
        keep = full.class_ids < cut
        return data.PatchSet(patches=full.patches[keep],
                             class_ids=full.class_ids[keep],
                             source="synthetic-train")
    directory = Path(cfg["data"])
    if cfg["set"]:
        directory = directory / cfg["set"]
    ps = data.load_ubc(str(directory), cfg["set"])
    patches = data.preprocess(ps.patches.astype(np.float64))
    return data.PatchSet(patches=patches, class_ids=ps.class_ids,
                         source=ps.source)


def _model_inputs(network, patches: np.ndarray):
    """Map raw (n, 64, 64) patches to the network's input convention."""
    if isinstance(network, EmbeddingNet):
        return patches[:, None, :, :]
    return patches


def cmd_train(cfg: dict) -> int:
    validate_pairing(cfg["model"], cfg["loss"])
    network = build_network(cfg)
    if cfg["init_from"]:
        load_checkpoint_into(network, cfg["init_from"])
    patch_set = _load_train_patches(cfg)
    dtype = np.float32 if cfg.get("float32") else np.float64
    patches = patch_set.patches.astype(dtype)
    is_cs = isinstance(network, CentralSurroundNet)
    batch_size = int(cfg["batch_size"])

    def batches(epoch, seed):
        idx = data.sample_triplets(patch_set, int(cfg["triplets"]),
                                   seed + 7919 * epoch)
        out = []
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            a = patches[chunk[:, 0]]
            p = patches[chunk[:, 1]]
            n = patches[chunk[:, 2]]
            if is_cs:
                pair = np.concatenate([np.stack([a, p], axis=1),
                                       np.stack([a, n], axis=1)], axis=0)
                central, surround = data.central_surround_split(pair)
                out.append((central, surround))
            else:
                out.append((_model_inputs(network, a),
                            _model_inputs(network, p),
                            _model_inputs(network, n)))
        return out

    train_cfg = optim.TrainConfig(
        lr_start=float(cfg["lr_start"]), lr_end=float(cfg["lr_end"]),
        momentum=float(cfg["momentum"]),
        weight_decay=float(cfg["weight_decay"]), epochs=int(cfg["epochs"]),
        batch_size=batch_size, seed=int(cfg["seed"]),
        init_from=cfg["init_from"] or None)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = config_hash(cfg)
    try:
        trace = optim.train(network, batches, cfg["loss"], LossConfig(),
                            train_cfg)
    except NumericalError:
        (out / "error.json").write_text(json.dumps(
            {"config_sha256": cfg_hash, "seed": cfg["seed"],
             "error": "training diverged"}) + "\n")
        raise
    optim.write_trace_csv(trace, out / "trace.csv")
    _stamp(out / "trace.csv", cfg_hash, cfg["seed"])
    save_checkpoint(network, out / "checkpoint.npz",
                    meta={"config_sha256": cfg_hash, "seed": cfg["seed"],
                          "loss": cfg["loss"], "model": cfg["model"]})
    print(f"final mean loss {trace[-1].mean_loss:.6f} "
          f"-> {out / 'checkpoint.npz'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def network_from_checkpoint(path, dtype):
    header = load_checkpoint_meta(path)
    kind = header["kind"]
    if kind == "triplet":
        spec = parse_arch(header["arch"]["tower"],
                          tuple(header["input_shape"]["tower"]))
        net = EmbeddingNet(spec, dtype=dtype)
    elif kind == "siamese-similarity":
        spec = parse_arch(header["arch"]["tower"],
                          tuple(header["input_shape"]["tower"]))
        net = SimilarityNet(spec, dtype=dtype)
    elif kind == "central-surround":
        c, h, w = header["input_shape"]["central"]
        net = CentralSurroundNet(header["arch"]["central"],
                                 header["arch"]["fusion"],
                                 patch_hw=2 * h, dtype=dtype)
    else:
        raise ConfigError(f"checkpoint has unknown network kind {kind!r}")
    load_checkpoint_into(net, path)
    return net


def _load_eval_pairs(cfg: dict):
    """Return (left, right, labels) patch tensors for scoring."""
    if cfg["data"] == "synthetic":
        full = data.make_synthetic_patchset(SYNTH_CLASSES, SYNTH_PER_CLASS,
                                            seed=SYNTH_SEED)
        cut = int(SYNTH_CLASSES * (1 - SYNTH_HOLDOUT_FRACTION))
        keep = full.class_ids >= cut
        held = data.PatchSet(patches=full.patches[keep],
                             class_ids=full.class_ids[keep])
        pairs = data.sample_eval_pairs(held, int(cfg["pairs_count"]),
                                       seed=int(cfg["seed"]) + 104729)
        return (held.patches[pairs.left], held.patches[pairs.right],
                pairs.labels)
    directory = Path(cfg["data"])
    if cfg["set"]:
        directory = directory / cfg["set"]
    if not cfg["pairs"]:
        raise ConfigError("eval on a dataset directory needs a pairs file")
    ps = data.load_ubc(str(directory), cfg["set"])
    patches = data.preprocess(ps.patches.astype(np.float64))
    pairs = data.load_eval_pairs(str(directory), cfg["pairs"])
    return patches[pairs.left], patches[pairs.right], pairs.labels


def score_pairs(network, left, right) -> evaluate.ScoredPairs:
    if isinstance(network, EmbeddingNet):
        sp = evaluate.embedding_pair_scores(
            lambda b: network.embed(b), left[:, None], right[:, None])
        return sp
    if isinstance(network, CentralSurroundNet):
        pair = np.stack([left, right], axis=1)
        central, surround = data.central_surround_split(pair)
        scores = network.score(central, surround)
        return evaluate.ScoredPairs(scores=scores,
                                    labels=np.zeros(len(scores), bool))
    scores = network.score(left, right)
    return evaluate.ScoredPairs(scores=scores,
                                labels=np.zeros(len(scores), bool))


def cmd_eval(cfg: dict) -> int:
    if not cfg["checkpoint"]:
        raise ConfigError("eval needs a checkpoint")
    dtype = np.float32 if cfg.get("float32") else np.float64
    network = network_from_checkpoint(cfg["checkpoint"], dtype)
    left, right, labels = _load_eval_pairs(cfg)
    left = left.astype(dtype)
    right = right.astype(dtype)
    if cfg["debug_oracle_scores"]:
        sp = evaluate.ScoredPairs(scores=labels.astype(np.float64),
                                  labels=labels)
    else:
        sp = score_pairs(network, left, right)
        sp.labels = labels
    report = evaluate.roc_and_fpr95(sp)
    base = evaluate.raw_pixel_baseline(left, right)
    base.labels = labels
    base_report = evaluate.roc_and_fpr95(base)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = config_hash(cfg)
    report.write_roc_csv(out / "roc.csv")
    _stamp(out / "roc.csv", cfg_hash, cfg["seed"])
    base_report.write_roc_csv(out / "baseline_roc.csv")
    _stamp(out / "baseline_roc.csv", cfg_hash, cfg["seed"])
    payload = {
        "config_sha256": cfg_hash,
        "seed": cfg["seed"],
        "fpr95": report.fpr95,
        "threshold95": report.threshold95,
        "baseline_fpr95": base_report.fpr95,
        "pairs": int(len(labels)),
    }
    (out / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _layer_checks(rng):
    """(name, fn, point, tolerance) tuples; each fn maps an input tensor to a
    scalar via a fixed random projection and returns the analytic gradient."""
    checks = []

    x = rng.standard_normal((3, 2, 6, 6))
    params = LayerParams(weights=rng.standard_normal((4, 2, 3, 3)) * 0.5,
                         biases=rng.standard_normal(4) * 0.1)
    r_conv = rng.standard_normal((3, 4, 4, 4))

    def conv_fn(inp):
        out, cache = conv_forward(inp, params, stride=1)
        gx, _, _ = conv_backward(r_conv, params.weights, cache)
        return float((out * r_conv).sum()), gx
    checks.append(("layer/conv/input", conv_fn, x, 1e-5))

    xp = rng.standard_normal((2, 3, 6, 6))
    r_pool = rng.standard_normal((2, 3, 3, 3))

    def pool_fn(inp):
        out, argmax = maxpool_forward(inp, pool=2, stride=2)
        gx = maxpool_backward(argmax, r_pool, inp.shape, pool=2, stride=2)
        return float((out * r_pool).sum()), gx
    checks.append(("layer/maxpool/input", pool_fn, xp, 1e-5))

    xb = rng.standard_normal((4, 3, 5, 5))
    bn = LayerParams(weights=None, biases=None,
                     bn_gain=rng.uniform(0.5, 1.5, 3),
                     bn_bias=rng.standard_normal(3))
    r_bn = rng.standard_normal(xb.shape)

    def bn_fn(inp):
        out, cache, _, _ = batchnorm_forward(inp, bn, mode="train")
        gx, _, _ = batchnorm_backward(r_bn, cache)
        return float((out * r_bn).sum()), gx
    checks.append(("layer/batchnorm/input", bn_fn, xb, 1e-5))

    xr = rng.standard_normal((5, 7))
    xr = np.where(np.abs(xr) < 0.05, xr + 0.2, xr)  # keep clear of the kink
    r_relu = rng.standard_normal(xr.shape)

    def relu_fn(inp):
        out, mask = relu(inp)
        return float((out * r_relu).sum()), relu_backward(r_relu, mask)
    checks.append(("layer/relu/input", relu_fn, xr, 1e-5))

    xn = rng.standard_normal((4, 6))
    r_norm = rng.standard_normal(xn.shape)

    def norm_fn(inp):
        out, cache = l2_normalize(inp)
        return float((out * r_norm).sum()), l2_normalize_backward(r_norm, cache)
    checks.append(("layer/l2norm/input", norm_fn, xn, 1e-5))
    return checks


def _loss_checks(rng):
    n, dim = 6, 8
    cfg = LossConfig()
    a = l2_normalize(rng.standard_normal((n, dim)))[0]
    p = l2_normalize(rng.standard_normal((n, dim)))[0]
    neg = l2_normalize(rng.standard_normal((n, dim)))[0]

    def embed_fn(loss_name):
        from .model import embedding_loss_by_name

        def fn(anchor):
            res = embedding_loss_by_name(loss_name, anchor, p, neg, cfg)
            return res.value, res.grad_anchor
        return fn

    checks = [(f"loss/{name}/anchor", embed_fn(name), a.copy(), 1e-4)
              for name in EMBEDDING_LOSSES]

    g_plus = rng.uniform(0.2, 1.0, n)
    g_minus = rng.uniform(-1.0, 0.4, n)

    def global_sim_fn(scores):
        res = losses.global_similarity_loss(scores, g_minus, cfg)
        return res.value, res.grad_scores_plus
    checks.append(("loss/global-sim/scores", global_sim_fn, g_plus.copy(), 1e-4))

    same = rng.random(2 * n) < 0.5
    sim = rng.uniform(0.1, 1.0, 2 * n)

    def pairwise_sim_fn(scores):
        res = losses.pairwise_similarity_loss(scores, same, cfg)
        return res.value, res.grad_scores_plus
    checks.append(("loss/pairwise-sim/scores", pairwise_sim_fn, sim.copy(), 1e-4))
    return checks


def _network_param_checks(rng):
    """End-to-end parameter gradient checks on small networks; each check
    perturbs a handful of coordinates per parameter array."""
    checks = []
    cfg = LossConfig()

    def make_embed(loss_name):
        spec = parse_arch("B(6,3,2)-C(8,1,1)", input_shape=(1, 7, 7))
        net = EmbeddingNet(spec, seed=3)
        a, p, n = (rng.standard_normal((4, 1, 7, 7)) for _ in range(3))

        def fn():
            return net.training_step(a, p, n, loss_name, cfg)
        return net, fn

    for name in EMBEDDING_LOSSES:
        checks.append((f"network/embedding/{name}",) + make_embed(name))

    def make_sim(loss_name):
        spec = parse_arch("B(4,3,2)-P(3,3)-C(1,1,1)", input_shape=(2, 7, 7))
        net = SimilarityNet(spec, seed=3)
        params = net.parameters()
        head_bias = sorted(k for k in params if k.endswith(".b"))[-1]
        params[head_bias] += 2.0  # keep scores in the similarity loss domain
        a, p, n = (rng.standard_normal((4, 7, 7)) for _ in range(3))

        def fn():
            return net.training_step(a, p, n, loss_name, cfg)
        return net, fn

    for name in SIMILARITY_LOSSES:
        checks.append((f"network/similarity/{name}",) + make_sim(name))
    return checks


def _param_grad_error(net, step_fn, rng, coords=2, step=1e-5):
    _, grads = step_fn()
    worst = 0.0
    for name, arr in net.parameters().items():
        flat = arr.ravel()
        picks = rng.choice(flat.size, size=min(coords, flat.size),
                           replace=False)
        for i in picks:
            def central(h):
                orig = flat[i]
                flat[i] = orig + h
                up, _ = step_fn()
                flat[i] = orig - h
                down, _ = step_fn()
                flat[i] = orig
                return (up.value - down.value) / (2 * h)
            numeric = central(step)
            refined = central(step / 2)
            if abs(numeric - refined) > 1e-3 * max(1e-8, abs(refined)):
                continue  # a ReLU kink sits inside the stencil; skip
            analytic = grads[name].ravel()[i]
            if abs(analytic) < 1e-7 and abs(refined) < 1e-7:
                continue  # zero gradient (e.g. a bias ahead of batch norm)
            err = abs(analytic - refined) / max(1e-8, abs(refined))
            worst = max(worst, err)
    return worst


def cmd_gradcheck(cfg: dict) -> int:
    rng = np.random.default_rng(int(cfg["seed"]))
    selection = cfg["filter"]
    rows = []

    for name, fn, point, tol in _layer_checks(rng) + _loss_checks(rng):
        if selection and selection not in name:
            continue
        if cfg["debug_corrupt_gradient"]:
            clean_fn = fn

            def fn(inp, _clean=clean_fn):
                value, grad = _clean(inp)
                return value, grad * 1.01 + 0.01
        err = evaluate.gradient_check(fn, point)
        rows.append({"name": name, "max_rel_err": err, "tolerance": tol,
                     "passed": bool(err < tol)})
        if cfg["debug_corrupt_gradient"]:
            break

    if not cfg["debug_corrupt_gradient"]:
        for name, net, step_fn in _network_param_checks(rng):
            if selection and selection not in name:
                continue
            err = _param_grad_error(net, step_fn, rng)
            rows.append({"name": name, "max_rel_err": err, "tolerance": 1e-4,
                         "passed": bool(err < 1e-4)})

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "config_sha256": config_hash(cfg),
        "seed": cfg["seed"],
        "checks": rows,
        "all_passed": all(r["passed"] for r in rows),
    }
    (out / "gradcheck.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if not rows:
        print("warning: 0 checks run (filter matched nothing)")
        return EXIT_OK
    for row in rows:
        status = "pass" if row["passed"] else "FAIL"
        print(f"{status}  {row['name']}  max_rel_err={row['max_rel_err']:.3e}")
    return EXIT_OK if payload["all_passed"] else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# parse-arch
# ---------------------------------------------------------------------------

def cmd_parse_arch(cfg: dict) -> int:
    shape = tuple(int(v) for v in cfg["input_shape"])
    if len(shape) != 3:
        raise ConfigError("input_shape must have three entries (c, h, w)")
    spec = parse_arch(cfg["arch"], input_shape=shape,
                      terminal=bool(cfg["terminal"]))
    shapes = propagate_shapes(spec, shape)
    print(json.dumps({
        "canonical": spec.render(),
        "output_kind": spec.output_kind,
        "shapes": [list(s) for s in shapes],
    }, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", default="")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out", default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchmetric")
    commands = parser.add_subparsers(dest="command", required=True)

    toy = commands.add_parser("toy", help="two-dimensional outlier study")
    _add_common(toy)

    train = commands.add_parser("train", help="train a descriptor model")
    _add_common(train)
    train.add_argument("--set", dest="set_name", default=None,
                       choices=["liberty", "notredame", "yosemite"])
    train.add_argument("--arch", default=None)
    train.add_argument("--loss", default=None)
    train.add_argument("--checkpoint", dest="init_from", default=None,
                       help="warm-start from this checkpoint")

    ev = commands.add_parser("eval", help="score pairs and report FPR95")
    _add_common(ev)
    ev.add_argument("--set", dest="set_name", default=None,
                    choices=["liberty", "notredame", "yosemite"])
    ev.add_argument("--checkpoint", default=None)
    ev.add_argument("--pairs", default=None)
    ev.add_argument("--debug-oracle-scores", action="store_true",
                    default=None)

    gc = commands.add_parser("gradcheck", help="finite-difference suite")
    _add_common(gc)
    gc.add_argument("--filter", default=None)
    gc.add_argument("--debug-corrupt-gradient", action="store_true",
                    default=None)

    pa = commands.add_parser("parse-arch", help="inspect an architecture string")
    pa.add_argument("--config", default="")
    pa.add_argument("--arch", default=None)
    pa.add_argument("--input-shape", default=None,
                    help="comma-separated c,h,w")
    pa.add_argument("--non-terminal", action="store_true", default=None)
    return parser


def _dispatch(args) -> int:
    if args.command == "toy":
        cfg = load_config(TOY_DEFAULTS, args.config,
                          {"seed": args.seed, "out": args.out})
        return cmd_toy(cfg)
    if args.command == "train":
        cfg = load_config(TRAIN_DEFAULTS, args.config, {
            "seed": args.seed, "out": args.out, "set": args.set_name,
            "arch": args.arch, "loss": args.loss,
            "init_from": args.init_from})
        return cmd_train(cfg)
    if args.command == "eval":
        cfg = load_config(EVAL_DEFAULTS, args.config, {
            "seed": args.seed, "out": args.out, "set": args.set_name,
            "checkpoint": args.checkpoint, "pairs": args.pairs,
            "debug_oracle_scores": args.debug_oracle_scores})
        return cmd_eval(cfg)
    if args.command == "gradcheck":
        cfg = load_config(GRADCHECK_DEFAULTS, args.config, {
            "seed": args.seed, "out": args.out, "filter": args.filter,
            "debug_corrupt_gradient": args.debug_corrupt_gradient})
        return cmd_gradcheck(cfg)
    if args.command == "parse-arch":
        overrides = {"arch": args.arch}
        if args.input_shape is not None:
            overrides["input_shape"] = args.input_shape.split(",")
        if args.non_terminal:
            overrides["terminal"] = False
        cfg = load_config(PARSE_DEFAULTS, args.config, overrides)
        return cmd_parse_arch(cfg)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGESTION
    except (NumericalError, DegenerateInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
