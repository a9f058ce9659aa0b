"""Tower assembly and the siamese / triplet / central-surround networks.

A Tower is a parameterised layer stack built from an ArchSpec. All towers of
one network share a single parameter set; tying is realised by running every
input of a training step through the same tower in one concatenated batch, so
gradients from all towers accumulate into the shared parameters naturally
(batch-norm statistics are then computed over the whole concatenated batch).

Parameters and gradients travel as flat ``{name: array}`` dicts so the
optimizer stays agnostic of network structure.
"""

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import layers, losses
from .arch import ArchSpec, effective_kernel, parse_arch, propagate_shapes
from .errors import ConfigError, ShapeError, UsageError
from .layers import LayerParams

CHECKPOINT_VERSION = 1


def _he_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / fan_in))


@dataclass
class _Unit:
    """One executable layer inside a tower."""

    kind: str                      # "conv", "bn", "relu", "pool"
    params: Optional[LayerParams] = None
    stride: int = 1
    pool: int = 0
    kernel: int = 0
    name: str = ""


class Tower:
    """A parameterised layer stack with cached forward state for backward."""

    def __init__(self, spec: ArchSpec, rng: np.random.Generator, *,
                 normalize_output: Optional[bool] = None, prefix: str = "",
                 dtype=np.float64):
        self.spec = spec
        self.prefix = prefix
        self.dtype = dtype
        if normalize_output is None:
            normalize_output = spec.output_kind == "embedding"
        self.normalize_output = normalize_output
        self.units: List[_Unit] = []
        self._build(rng)
        self._cache = None

    def _build(self, rng: np.random.Generator) -> None:
        c, h, w = self.spec.input_shape
        conv_idx = 0
        for d in self.spec.layers:
            if d.kind == "P":
                self.units.append(_Unit(kind="pool", pool=d.pool, stride=d.stride))
                h = (h - d.pool) // d.stride + 1
                w = (w - d.pool) // d.stride + 1
                continue
            k = effective_kernel(d.kernel, min(h, w))
            fan_in = c * k * k
            p = LayerParams(
                weights=rng.normal(0.0, _he_std(fan_in),
                                   size=(d.filters, c, k, k)).astype(self.dtype),
                biases=np.zeros(d.filters, dtype=self.dtype),
            )
            name = f"{self.prefix}conv{conv_idx}"
            self.units.append(_Unit(kind="conv", params=p, stride=d.stride,
                                    kernel=k, name=name))
            if d.kind == "B":
                p.bn_gain = np.ones(d.filters, dtype=self.dtype)
                p.bn_bias = np.zeros(d.filters, dtype=self.dtype)
                self.units.append(_Unit(kind="bn", params=p, name=name))
            if not d.final:
                self.units.append(_Unit(kind="relu"))
            h = (h - k) // d.stride + 1
            w = (w - k) // d.stride + 1
            c = d.filters
            conv_idx += 1
        self.output_shape = (c, h, w)

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for u in self.units:
            if u.kind == "conv":
                out[f"{u.name}.w"] = u.params.weights
                out[f"{u.name}.b"] = u.params.biases
            elif u.kind == "bn":
                out[f"{u.name}.gain"] = u.params.bn_gain
                out[f"{u.name}.bias"] = u.params.bn_bias
        return out

    def set_parameters(self, values: Dict[str, np.ndarray]) -> None:
        for name, arr in self.parameters().items():
            if values[name].shape != arr.shape:
                raise ShapeError(f"parameter {name}: shape {values[name].shape} != {arr.shape}")
            arr[...] = values[name]

    def running_stats(self) -> Dict[str, np.ndarray]:
        out = {}
        for u in self.units:
            if u.kind == "bn" and u.params.bn_running_mean is not None:
                out[f"{u.name}.run_mean"] = u.params.bn_running_mean
                out[f"{u.name}.run_var"] = u.params.bn_running_var
        return out

    def set_running_stats(self, values: Dict[str, np.ndarray]) -> None:
        for u in self.units:
            if u.kind == "bn" and f"{u.name}.run_mean" in values:
                u.params.bn_running_mean = values[f"{u.name}.run_mean"].copy()
                u.params.bn_running_var = values[f"{u.name}.run_var"].copy()

    # -- forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray, mode: str = "eval") -> np.ndarray:
        """Run the stack; flattens a trailing (c, 1, 1) map to (batch, c) and
        applies the unit-norm layer for embedding towers."""
        if x.ndim != 4:
            raise ShapeError(f"tower input must be 4-d, got shape {x.shape}")
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise ShapeError(
                f"tower expects input shape {self.spec.input_shape}, got {x.shape[1:]}"
            )
        x = np.asarray(x, dtype=self.dtype)
        record = []
        for u in self.units:
            if u.kind == "conv":
                x, cache = layers.conv_forward(x, u.params, u.stride)
            elif u.kind == "bn":
                x, cache, rm, rv = layers.batchnorm_forward(x, u.params, mode)
                if mode == "train":
                    u.params.bn_running_mean = rm
                    u.params.bn_running_var = rv
            elif u.kind == "relu":
                x, cache = layers.relu(x)
            elif u.kind == "pool":
                in_shape = x.shape
                x, cache = layers.maxpool_forward(x, u.pool, u.stride)
                cache = (cache, in_shape)
            record.append(cache)
        pre_flat_shape = x.shape
        out = x.reshape(x.shape[0], -1)
        norm_cache = None
        if self.normalize_output:
            out, norm_cache = layers.l2_normalize(out)
        self._cache = (record, pre_flat_shape, norm_cache, mode)
        return out

    def backward(self, grad_out: np.ndarray) -> Dict[str, np.ndarray]:
        """Backpropagate through the cached forward; returns parameter grads
        and stores d(loss)/d(input) in ``self.grad_input``."""
        if self._cache is None:
            raise UsageError("backward called before forward")
        record, pre_flat_shape, norm_cache, mode = self._cache
        if mode != "train":
            raise UsageError("backward requires a train-mode forward")
        g = np.asarray(grad_out, dtype=self.dtype)
        if self.normalize_output:
            g = layers.l2_normalize_backward(g, norm_cache)
        g = g.reshape(pre_flat_shape)
        grads: Dict[str, np.ndarray] = {}
        for u, cache in zip(reversed(self.units), reversed(record)):
            if u.kind == "conv":
                g, gw, gb = layers.conv_backward(g, u.params.weights, cache)
                grads[f"{u.name}.w"] = gw
                grads[f"{u.name}.b"] = gb
            elif u.kind == "bn":
                g, ggain, gbias = layers.batchnorm_backward(g, cache)
                grads[f"{u.name}.gain"] = ggain
                grads[f"{u.name}.bias"] = gbias
            elif u.kind == "relu":
                g = layers.relu_backward(g, cache)
            elif u.kind == "pool":
                argmax, in_shape = cache
                g = layers.maxpool_backward(argmax, g, in_shape, u.pool, u.stride)
        self.grad_input = g
        self._cache = None
        return grads


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

NETWORK_KINDS = ("siamese-embedding", "siamese-similarity", "triplet",
                 "central-surround")


class EmbeddingNet:
    """Weight-tied embedding network (siamese or triplet use the same tower)."""

    kind = "triplet"

    def __init__(self, spec: ArchSpec, seed: int = 0, dtype=np.float64):
        if spec.output_kind != "embedding":
            raise ConfigError("embedding network requires an embedding architecture")
        rng = np.random.default_rng(seed)
        self.tower = Tower(spec, rng, dtype=dtype)

    def embed(self, batch: np.ndarray, mode: str = "eval") -> np.ndarray:
        return self.tower.forward(batch, mode)

    def parameters(self):
        return self.tower.parameters()

    def training_step(self, anchors, positives, negatives, loss_name: str,
                      cfg: losses.LossConfig):
        """Forward all three towers (one concatenated batch), evaluate the
        loss, and backpropagate into the shared parameters."""
        n = anchors.shape[0]
        stacked = np.concatenate([anchors, positives, negatives], axis=0)
        emb = self.tower.forward(stacked, mode="train")
        a, p, neg = emb[:n], emb[n:2 * n], emb[2 * n:]
        res = embedding_loss_by_name(loss_name, a, p, neg, cfg)
        grad = np.concatenate([res.grad_anchor, res.grad_positive, res.grad_negative], axis=0)
        grads = self.tower.backward(grad)
        return res, grads


def embedding_loss_by_name(name: str, a, p, n, cfg: losses.LossConfig) -> losses.LossResult:
    if name == "triplet":
        return losses.triplet_loss(a, p, n, cfg)
    if name == "global-embed":
        return losses.global_embedding_loss(a, p, n, cfg)
    if name == "triplet+global":
        return losses.combined_loss(a, p, n, cfg)
    if name == "pairwise-embed":
        # A triplet carries one matching and one non-matching pair.
        e_i = np.concatenate([a, a], axis=0)
        e_j = np.concatenate([p, n], axis=0)
        same = np.concatenate([np.ones(len(a), bool), np.zeros(len(a), bool)])
        res = losses.pairwise_embedding_loss(e_i, e_j, same)
        ga = res.grad_anchor[:len(a)] + res.grad_anchor[len(a):]
        return losses.LossResult(value=res.value, grad_anchor=ga,
                                 grad_positive=res.grad_positive[:len(a)],
                                 grad_negative=res.grad_positive[len(a):])
    raise ConfigError(f"{name!r} is not an embedding loss")


class SimilarityNet:
    """Siamese pairwise-similarity network: a pair enters one tower stacked as
    a 2-channel input; the tower ends in a scalar head."""

    kind = "siamese-similarity"

    def __init__(self, spec: ArchSpec, seed: int = 0, dtype=np.float64):
        if spec.output_kind != "similarity":
            raise ConfigError("similarity network requires a scalar-head architecture")
        if spec.input_shape[0] != 2:
            raise ConfigError("pairwise similarity tower expects a 2-channel input shape")
        rng = np.random.default_rng(seed)
        self.tower = Tower(spec, rng, normalize_output=False, dtype=dtype)
        if self.tower.output_shape != (1, 1, 1):
            raise ConfigError(
                f"similarity tower must reduce to a single scalar, got {self.tower.output_shape}"
            )

    def parameters(self):
        return self.tower.parameters()

    def score(self, left: np.ndarray, right: np.ndarray, mode: str = "eval") -> np.ndarray:
        pair = np.stack([left, right], axis=1)
        return self.tower.forward(pair, mode)[:, 0]

    def training_step(self, anchors, positives, negatives, loss_name: str,
                      cfg: losses.LossConfig):
        n = anchors.shape[0]
        pairs = np.concatenate([np.stack([anchors, positives], axis=1),
                                np.stack([anchors, negatives], axis=1)], axis=0)
        scores = self.tower.forward(pairs, mode="train")[:, 0]
        g_plus, g_minus = scores[:n], scores[n:]
        if loss_name == "global-sim":
            res = losses.global_similarity_loss(g_plus, g_minus, cfg)
            grad_scores = np.concatenate([res.grad_scores_plus, res.grad_scores_minus])
        elif loss_name == "pairwise-sim":
            same = np.concatenate([np.ones(n, bool), np.zeros(n, bool)])
            res = losses.pairwise_similarity_loss(scores, same, cfg)
            grad_scores = res.grad_scores_plus
        else:
            raise ConfigError(f"{loss_name!r} is not a similarity loss")
        grads = self.tower.backward(grad_scores[:, None])
        return res, grads


class CentralSurroundNet:
    """Two-stream similarity network: a half-resolution whole-patch stream and
    a central-crop stream, fused by a final block into one scalar score."""

    kind = "central-surround"

    def __init__(self, stream_arch: str, fusion_arch: str, patch_hw: int = 64,
                 seed: int = 0, fix_95: bool = False, dtype=np.float64):
        half = patch_hw // 2
        self.stream_spec = parse_arch(stream_arch, (2, half, half),
                                      terminal=False, fix_95=fix_95)
        rng = np.random.default_rng(seed)
        self.central = Tower(self.stream_spec, rng, normalize_output=False,
                             prefix="central.", dtype=dtype)
        self.surround = Tower(self.stream_spec, rng, normalize_output=False,
                              prefix="surround.", dtype=dtype)
        c, h, w = self.central.output_shape
        self.fusion_spec = parse_arch(fusion_arch, (2 * c, h, w))
        if self.fusion_spec.output_kind != "similarity":
            raise ConfigError("central-surround fusion must end in a scalar head")
        self.fusion = Tower(self.fusion_spec, rng, normalize_output=False,
                            prefix="fusion.", dtype=dtype)
        self._split_c = c

    def parameters(self):
        out = {}
        for t in (self.central, self.surround, self.fusion):
            out.update(t.parameters())
        return out

    def _forward(self, central_pairs, surround_pairs, mode):
        fc = self.central.forward(central_pairs, mode)
        fs = self.surround.forward(surround_pairs, mode)
        c, h, w = self.central.output_shape
        fused = np.concatenate([fc.reshape(-1, c, h, w), fs.reshape(-1, c, h, w)], axis=1)
        return self.fusion.forward(fused, mode)[:, 0]

    def score(self, central_pairs, surround_pairs, mode: str = "eval") -> np.ndarray:
        """central_pairs/surround_pairs: (batch, 2, 32, 32) two-channel stacks
        built by the central-surround decomposition of each patch of the pair."""
        return self._forward(central_pairs, surround_pairs, mode)

    def training_step(self, central_triples, surround_triples, loss_name: str,
                      cfg: losses.LossConfig):
        """``central_triples``/``surround_triples`` are ((a,p) pairs, (a,n)
        pairs) concatenated: shape (2N, 2, h, w)."""
        n = central_triples.shape[0] // 2
        scores = self._forward(central_triples, surround_triples, mode="train")
        g_plus, g_minus = scores[:n], scores[n:]
        if loss_name == "global-sim":
            res = losses.global_similarity_loss(g_plus, g_minus, cfg)
            grad_scores = np.concatenate([res.grad_scores_plus, res.grad_scores_minus])
        elif loss_name == "pairwise-sim":
            same = np.concatenate([np.ones(n, bool), np.zeros(n, bool)])
            res = losses.pairwise_similarity_loss(scores, same, cfg)
            grad_scores = res.grad_scores_plus
        else:
            raise ConfigError(f"{loss_name!r} is not a similarity loss")
        grads = self.fusion.backward(grad_scores[:, None])
        gfused = self.fusion.grad_input
        c = self._split_c
        cc, hh, ww = self.central.output_shape
        grads.update(self.central.backward(gfused[:, :c].reshape(-1, cc * hh * ww)))
        grads.update(self.surround.backward(gfused[:, c:].reshape(-1, cc * hh * ww)))
        return res, grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _towers_of(network) -> Dict[str, Tower]:
    if isinstance(network, CentralSurroundNet):
        return {"central": network.central, "surround": network.surround,
                "fusion": network.fusion}
    return {"tower": network.tower}


def save_checkpoint(network, path, meta: Optional[dict] = None) -> None:
    """Write architecture, parameters and batch-norm running statistics to a
    single .npz container with a JSON metadata entry."""
    towers = _towers_of(network)
    arrays = {}
    for tname, tower in towers.items():
        for k, v in tower.parameters().items():
            arrays[f"param/{k}"] = v
        for k, v in tower.running_stats().items():
            arrays[f"stat/{k}"] = v
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": network.kind,
        "arch": {t: tower.spec.source for t, tower in towers.items()},
        "input_shape": {t: list(tower.spec.input_shape) for t, tower in towers.items()},
        "meta": meta or {},
    }
    np.savez(path, __meta__=np.frombuffer(json.dumps(header, sort_keys=True).encode(),
                                          dtype=np.uint8), **arrays)


def load_checkpoint_meta(path) -> dict:
    with np.load(path) as z:
        return json.loads(bytes(z["__meta__"]).decode())


def load_checkpoint_into(network, path) -> dict:
    """Load parameters and running stats into an existing network; the
    architecture recorded in the file must match the network's."""
    header = load_checkpoint_meta(path)
    towers = _towers_of(network)
    recorded = header["arch"]
    for tname, tower in towers.items():
        if recorded.get(tname) != tower.spec.source:
            raise ConfigError(
                f"checkpoint tower {tname!r} has architecture {recorded.get(tname)!r}, "
                f"expected {tower.spec.source!r}"
            )
        propagate_shapes(tower.spec, tower.spec.input_shape)
    with np.load(path) as z:
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        stats = {k[len("stat/"):]: z[k] for k in z.files if k.startswith("stat/")}
    for tower in towers.values():
        tower.set_parameters({k: params[k] for k in tower.parameters()})
        tower.set_running_stats(stats)
    return header
