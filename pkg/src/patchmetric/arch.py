"""Parser for compact tower-architecture strings.

Grammar: hyphen-separated tokens `B(n,k,s)`, `C(n,k,s)`, `P(p,q)`.
A `B` block expands to convolution + batch norm + ReLU, a `C` token is a bare
convolution + ReLU, and `P` is max pooling. The ReLU after the final `B`/`C`
token of a terminal spec is suppressed.

On a 1x1 spatial input (the toy fully-connected interpretation) a kernel
larger than the spatial extent is clamped to it, so `B(256,2,1)` on a
(d, 1, 1) input acts as a dense map over all d channels.
"""

import re
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .errors import ParseError, ShapeError

Shape = Tuple[int, int, int]  # (channels, height, width)

_TOKEN_RE = re.compile(r"^([BCP])\((.*)\)$")


@dataclass
class LayerDescriptor:
    """One parsed token: a conv block, bare conv, or pooling layer."""

    kind: str                      # "B", "C", or "P"
    filters: Optional[int] = None  # n for B/C
    kernel: Optional[int] = None   # k for B/C
    stride: int = 1                # s for B/C, q for P
    pool: Optional[int] = None     # p for P
    final: bool = False            # suppress the trailing ReLU

    def render(self) -> str:
        if self.kind == "P":
            return f"P({self.pool},{self.stride})"
        return f"{self.kind}({self.filters},{self.kernel},{self.stride})"


@dataclass
class ArchSpec:
    """Validated layer sequence plus its declared input shape."""

    layers: List[LayerDescriptor]
    input_shape: Shape
    output_kind: str               # "embedding", "similarity", or "features"
    source: str = field(default="")

    def render(self) -> str:
        return "-".join(d.render() for d in self.layers)


def _parse_int(text: str, token_idx: int, arg_idx: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ParseError(
            f"argument {arg_idx} of token {token_idx} is not an integer: {text!r}"
        ) from None
    if value <= 0:
        raise ParseError(f"argument {arg_idx} of token {token_idx} must be positive, got {value}")
    return value


def parse_arch(text: str, input_shape: Shape = (1, 64, 64), *,
               terminal: bool = True, fix_95: bool = False) -> ArchSpec:
    """Parse an architecture string and validate it against an input shape.

    ``terminal=False`` keeps the ReLU after the last block, for specs that
    form a stream feeding further layers. ``fix_95`` rewrites the literal
    filter count 95 (almost certainly a typo for 96 in the published
    central-surround stream) to 96.
    """
    tokens = [t.strip() for t in text.strip().split("-")]
    if not tokens or tokens == [""]:
        raise ParseError("empty architecture string")
    layers: List[LayerDescriptor] = []
    for idx, token in enumerate(tokens, start=1):
        m = _TOKEN_RE.match(token)
        if m is None:
            raise ParseError(f"malformed token {idx}: {token!r}")
        kind, argstr = m.group(1), m.group(2)
        args = [a.strip() for a in argstr.split(",")]
        if kind == "P":
            if len(args) != 2:
                raise ParseError(f"token {idx} ({token!r}): P takes 2 arguments, got {len(args)}")
            p = _parse_int(args[0], idx, 1)
            q = _parse_int(args[1], idx, 2)
            layers.append(LayerDescriptor(kind="P", pool=p, stride=q))
        else:
            if len(args) != 3:
                raise ParseError(
                    f"token {idx} ({token!r}): {kind} takes 3 arguments, got {len(args)}"
                )
            n = _parse_int(args[0], idx, 1)
            k = _parse_int(args[1], idx, 2)
            s = _parse_int(args[2], idx, 3)
            if fix_95 and n == 95:
                n = 96
            layers.append(LayerDescriptor(kind=kind, filters=n, kernel=k, stride=s))
    if terminal:
        for d in reversed(layers):
            if d.kind in ("B", "C"):
                d.final = True
                break
    output_kind = _infer_output_kind(layers, terminal)
    spec = ArchSpec(layers=layers, input_shape=input_shape,
                    output_kind=output_kind, source=text.strip())
    propagate_shapes(spec, input_shape)  # reject specs that underflow
    return spec


def _infer_output_kind(layers: List[LayerDescriptor], terminal: bool) -> str:
    if not terminal:
        return "features"
    last_conv = next((d for d in reversed(layers) if d.kind in ("B", "C")), None)
    if last_conv is not None and last_conv.filters == 1:
        return "similarity"
    return "embedding"


def effective_kernel(kernel: int, spatial: int) -> int:
    """Kernels on a 1x1 spatial input act as dense maps (kernel 1); any other
    kernel/extent mismatch is a genuine shape error handled by the caller."""
    return 1 if spatial == 1 else kernel


def propagate_shapes(spec: ArchSpec, input_shape: Shape) -> List[Shape]:
    """Output shape after each layer; raises ShapeError on spatial underflow."""
    c, h, w = input_shape
    shapes: List[Shape] = []
    for idx, d in enumerate(spec.layers, start=1):
        if d.kind == "P":
            if h < d.pool or w < d.pool:
                raise ShapeError(
                    f"layer {idx} ({d.render()}): pool {d.pool} exceeds spatial extent {h}x{w}"
                )
            h = (h - d.pool) // d.stride + 1
            w = (w - d.pool) // d.stride + 1
        else:
            k = effective_kernel(d.kernel, min(h, w))
            if h < k or w < k:
                raise ShapeError(
                    f"layer {idx} ({d.render()}): kernel {k} exceeds spatial extent {h}x{w}"
                )
            h = (h - k) // d.stride + 1
            w = (w - k) // d.stride + 1
            c = d.filters
        if h <= 0 or w <= 0:
            raise ShapeError(f"layer {idx} ({d.render()}): spatial extent underflows to {h}x{w}")
        shapes.append((c, h, w))
    return shapes


def render(spec: ArchSpec) -> str:
    """Canonical string form; inverse of parse_arch modulo whitespace."""
    return spec.render()


# Architecture strings published for the four network families.
TNET_ARCH = "B(96,7,3)-P(2,2)-B(192,5,1)-P(2,2)-B(256,3,1)-B(256,1,1)-B(256,1,1)"
SNET_ARCH = "B(96,7,3)-P(2,2)-B(192,5,1)-P(2,2)-B(256,3,1)-B(256,1,1)-C(1,1,1)"
CS_STREAM_ARCH = "B(95,5,1)-P(2,2)-B(96,3,1)-P(2,2)-B(192,3,1)-B(192,3,1)"
CS_FUSION_ARCH = "B(768,2,1)-C(1,1,1)"
TOY_ARCH = "B(256,2,1)-B(512,1,1)-C(128,1,1)"
