# -*- coding: utf-8 -*-
"""
Declarative construction of the four UNet variants.

Every variant shares the encoder / bridge / decoder skeleton:
- encoder: `depth` blocks, each followed by a downsampling (3x3 stride 2
  conv, or 2x2 max-pooling for unet_original); the block output feeds the
  skip connection of the same resolution;
- bridge: 2 convs and a residual block (2 convs and an identity skip);
- decoder: per level, nearest 2x upsampling, concatenation with the skip,
  then convs (the first one fuses the concatenation); a final 1x1 conv
  produces the class logits.
Every 3x3 conv is conv -> batch norm -> PReLU with padding D.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from progDilUNet.exceptions import ConstructionError, ShapeError
from progDilUNet.layers import (
    BatchNorm2d,
    BNParams,
    Conv2d,
    ConvParams,
    Layer,
    MaxPool2x2,
    PReLU,
    PReLUParams,
    Upsample2x,
    concat_channels,
    split_channels,
    arrayLike,
    _arr,
)
from progDilUNet.optim import glorot_init
from progDilUNet.pduConstantes import HEAD_DILATIONS, MODEL_NAMES, PROGRESSIVE_DILATIONS
from progDilUNet.pdu_types import blockKindT, downKindT, modelT
from progDilUNet.settings import BASE_WIDTH_DFT, CLASSES_DFT, DEPTH_DFT, INPUT_SIZE_DFT
from progDilUNet.tensor import Tensor, wrap
from progDilUNet.utils import parse_kv, read_kv

logger = logging.getLogger(__name__)


# #### Specs ####
@dataclass
class BlockSpec:
    kind: blockKindT
    width: int
    dilations: Tuple[int, ...] = (1, 1, 1)

    @property
    def conv_count(self) -> int:
        return len(self.dilations)

    @classmethod
    def standard(cls, width: int, conv_count: int = 3) -> "BlockSpec":
        return cls("standard", width, (1,) * conv_count)

    @classmethod
    def dilated_head(cls, width: int, dilation: int) -> "BlockSpec":
        return cls("dilated_head", width, (dilation, 1, 1))

    @classmethod
    def progressive(cls, width: int) -> "BlockSpec":
        return cls("progressive", width, PROGRESSIVE_DILATIONS)


@dataclass
class NetSpec:
    name: modelT = "unet_progressive"
    base_width: int = BASE_WIDTH_DFT
    classes: int = CLASSES_DFT
    input_size: int = INPUT_SIZE_DFT
    depth: int = DEPTH_DFT
    in_channels: int = 1

    def __post_init__(self):
        if self.name not in MODEL_NAMES:
            raise ConstructionError(f"unknown model {self.name!r}, use one of {MODEL_NAMES}")
        if self.base_width < 1 or self.depth < 1 or self.classes < 2 or self.in_channels < 1:
            raise ConstructionError(f"invalid spec {self}")
        if self.input_size % self.factor:
            raise ConstructionError(
                f"input_size {self.input_size} not divisible by {self.factor}"
            )
        if self.name == "unet_dilated" and self.depth > len(HEAD_DILATIONS):
            raise ConstructionError(f"unet_dilated defines {len(HEAD_DILATIONS)} levels")

    @property
    def factor(self) -> int:
        """Spatial extents must be multiples of this."""
        return 2 ** self.depth

    @property
    def down(self) -> downKindT:
        return "maxpool" if self.name == "unet_original" else "strided"

    @property
    def residual_bridge(self) -> bool:
        return self.name != "unet_original"

    @property
    def decoder_convs(self) -> int:
        return 2 if self.name == "unet_original" else 4

    def widths(self) -> List[int]:
        return [self.base_width * 2 ** d for d in range(self.depth)]

    @property
    def bridge_width(self) -> int:
        return self.base_width * 2 ** self.depth

    def blocks(self) -> List[BlockSpec]:
        """Encoder block specs, from shallow to deep."""
        ws = self.widths()
        if self.name == "unet_progressive":
            return [BlockSpec.progressive(w) for w in ws]
        if self.name == "unet_dilated":
            return [BlockSpec.dilated_head(w, d) for w, d in zip(ws, HEAD_DILATIONS)]
        if self.name == "unet_baseline":
            return [BlockSpec.standard(w) for w in ws]
        return [BlockSpec.standard(w, conv_count=2) for w in ws]

    def to_text(self) -> str:
        keys = ("name", "base_width", "classes", "input_size", "depth")
        return "".join(f"{k} = {getattr(self, k)}\n" for k in keys)

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> "NetSpec":
        kv = parse_kv(text, source)
        unknown = set(kv) - {"name", "base_width", "classes", "input_size", "depth"}
        if unknown:
            raise ConstructionError(f"{source}: unknown keys {sorted(unknown)}")
        return cls(**kv)


def read_netspec(fname) -> NetSpec:
    kv = read_kv(fname)
    return NetSpec.from_text("".join(f"{k} = {v}\n" for k, v in kv.items()), str(fname))


# #### Composite layers ####
class Composite(Layer):
    """Layer made of named children."""

    def __init__(self):
        self.children: List[Tuple[str, Layer]] = []

    def add(self, name: str, layer: Layer) -> Layer:
        self.children.append((name, layer))
        return layer

    def named_params(self, prefix=""):
        for name, child in self.children:
            yield from child.named_params(f"{prefix}.{name}" if prefix else name)

    def named_buffers(self, prefix=""):
        for name, child in self.children:
            yield from child.named_buffers(f"{prefix}.{name}" if prefix else name)

    def train(self, mode: bool = True) -> None:
        self.training = mode
        for _, child in self.children:
            child.train(mode)

    def clear(self) -> None:
        for _, child in self.children:
            child.clear()

    def layers(self) -> Iterator[Tuple[str, Layer]]:
        """Leaf layers with their full names, in execution order."""
        for name, child in self.children:
            if isinstance(child, Composite):
                for sub, leaf in child.layers():
                    yield f"{name}.{sub}", leaf
            else:
                yield name, child


class Sequential(Composite):
    def forward(self, x):
        for _, child in self.children:
            x = child.forward(x)
        return x

    def backward(self, grad_y):
        for _, child in reversed(self.children):
            grad_y = child.backward(grad_y)
        return grad_y


class ConvUnit(Sequential):
    """conv -> batch norm -> PReLU."""

    def __init__(self, conv: ConvParams):
        super().__init__()
        self.conv = self.add("conv", Conv2d(conv))
        self.add("bn", BatchNorm2d(BNParams(conv.out_channels)))
        self.add("act", PReLU(PReLUParams(conv.out_channels)))


class ResidualBlock(Composite):
    """Two conv units plus an identity skip (1x1 projection if widths differ)."""

    def __init__(self, body: Sequential, projection: Optional[Conv2d] = None):
        super().__init__()
        self.body = self.add("body", body)
        self.projection = self.add("proj", projection) if projection is not None else None

    def forward(self, x):
        skip = x if self.projection is None else self.projection.forward(x)
        return self.body.forward(x) + skip

    def backward(self, grad_y):
        gx = self.body.backward(grad_y)
        if self.projection is None:
            return gx + grad_y
        return gx + self.projection.backward(grad_y)


class DecoderStage(Composite):
    """upsample (-> up-conv) -> concat skip -> convs."""

    def __init__(self, convs: Sequential, upconv: Optional[ConvUnit] = None):
        super().__init__()
        self.up = self.add("up", Upsample2x())
        self.upconv = self.add("upconv", upconv) if upconv is not None else None
        self.convs = self.add("convs", convs)
        self._split = None

    def forward(self, x, skip=None):
        u = self.up.forward(x)
        if self.upconv is not None:
            u = self.upconv.forward(u)
        if skip.shape[2:] != u.shape[2:]:
            raise ShapeError(f"skip {skip.shape} does not match upsampled {u.shape}")
        self._split = u.shape[1]
        return self.convs.forward(concat_channels(u, skip).data)

    def backward(self, grad_y):
        g = self.convs.backward(grad_y)
        gu, gskip = (t.data for t in split_channels(g, self._split))
        if self.upconv is not None:
            gu = self.upconv.backward(gu)
        return self.up.backward(gu), gskip


class Model(Composite):
    """Ordered layer graph with skip edges and a parameter registry."""

    def __init__(self, spec: NetSpec):
        super().__init__()
        self.spec = spec
        self.encoder: List[Tuple[Sequential, Layer]] = []
        self.decoder: List[DecoderStage] = []
        self.bridge: Optional[Sequential] = None
        self.head: Optional[Conv2d] = None

    # forward / backward
    def check_input(self, x: np.ndarray) -> None:
        f = self.spec.factor
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected (N, {self.spec.in_channels}, H, W), got {x.shape}")
        if x.shape[2] % f or x.shape[3] % f:
            raise ShapeError(f"H and W must be divisible by {f}, got {x.shape[2:]}")

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        self.check_input(x)
        skips = []
        for block, down in self.encoder:
            x = block.forward(x)
            skips.append(x)
            x = down.forward(x)
        x = self.bridge.forward(x)
        for stage, skip in zip(self.decoder, reversed(skips)):
            x = stage.forward(x, skip)
        return self.head.forward(x)

    def backward(self, grad_y):
        g = self.head.backward(grad_y)
        gskips = []
        for stage in reversed(self.decoder):
            g, gs = stage.backward(g)
            gskips.append(gs)
        g = self.bridge.backward(g)
        for (block, down), gs in zip(reversed(self.encoder), reversed(gskips)):
            g = block.backward(down.backward(g) + gs)
        return g

    def eval(self) -> "Model":
        self.train(False)
        self.clear()
        return self

    # registries
    def parameters(self) -> Dict[str, Tensor]:
        return _registry(self.named_params())

    def buffers(self) -> Dict[str, Tensor]:
        return _registry(self.named_buffers())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    @property
    def dtype(self):
        return self.head.p.weight.data.dtype

    def astype(self, dtype) -> "Model":
        """Cast every parameter and buffer in place (64-bit for gradient checks)."""
        for t in list(self.parameters().values()) + list(self.buffers().values()):
            t.data = t.data.astype(dtype)
            t.grad = None
        return self

    # introspection
    def conv_counts(self) -> Dict[str, int]:
        counts = {"encoder": 0, "bridge": 0, "decoder": 0}
        for name, layer in self.layers():
            if isinstance(layer, Conv2d):
                counts[_section(name)] += 1
        return counts

    def layer_summary(self) -> List[dict]:
        """Conv and resampling layers, in execution order."""
        rows = []
        for name, layer in self.layers():
            if isinstance(layer, Conv2d):
                p = layer.p
                kind = "conv" if p.stride == 1 else "strided"
                rows.append(
                    dict(name=name, kind=kind, k=p.kernel, D=p.dilation, s=p.stride,
                         p=p.padding, cin=p.in_channels, cout=p.out_channels)
                )
            elif isinstance(layer, MaxPool2x2):
                rows.append(dict(name=name, kind="maxpool", k=2, D=1, s=2, p=0, cin=None, cout=None))
            elif isinstance(layer, Upsample2x):
                rows.append(dict(name=name, kind="upsample", k=1, D=1, s=Fraction(1, 2), p=0,
                                 cin=None, cout=None))
        return rows

    def dilation_schedule(self) -> List[List[int]]:
        """Dilations of every encoder block, from shallow to deep."""
        return [[u.conv.p.dilation for _, u in block.children] for block, _ in self.encoder]


def _section(name: str) -> str:
    if name.startswith(("enc", "down", "pool")):
        return "encoder"
    return "bridge" if name.startswith("bridge") else "decoder"


def _registry(named) -> Dict[str, Tensor]:
    reg = OrderedDict()
    for name, t in named:
        if name in reg:
            raise ConstructionError(f"parameter {name} registered twice")
        reg[name] = t
    return reg


# #### Building ####
class _Builder:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def conv(self, cin, cout, k=3, dilation=1, stride=1, padding=None) -> ConvParams:
        padding = dilation * (k // 2) if padding is None else padding
        w = glorot_init((cout, cin, k, k), self.rng)
        return ConvParams(cin, cout, k, dilation, stride, padding, weight=w)

    def unit(self, cin, cout, dilation=1, stride=1) -> ConvUnit:
        pad = 1 if stride > 1 else None
        return ConvUnit(self.conv(cin, cout, 3, dilation, stride, pad))

    def units(self, cin, cout, dilations: Sequence[int]) -> Sequential:
        seq = Sequential()
        for i, d in enumerate(dilations):
            seq.add(f"conv{i}", self.unit(cin if i == 0 else cout, cout, d))
        return seq


def build(spec: NetSpec, seed: int = 0) -> Model:
    """Assemble the network of spec, Glorot initialised from seed."""
    b = _Builder(seed)
    model = Model(spec)
    cin = spec.in_channels
    for d, block in enumerate(spec.blocks(), 1):
        seq = model.add(f"enc{d}", b.units(cin, block.width, block.dilations))
        if spec.down == "maxpool":
            down = model.add(f"pool{d}", MaxPool2x2())
            cin = block.width
        else:
            down = model.add(f"down{d}", b.unit(block.width, 2 * block.width, stride=2))
            cin = 2 * block.width
        model.encoder.append((seq, down))

    bw = spec.bridge_width
    bridge = Sequential()
    bridge.add("conv0", b.unit(cin, bw))
    bridge.add("conv1", b.unit(bw, bw))
    if spec.residual_bridge:
        bridge.add("res", ResidualBlock(b.units(bw, bw, (1, 1))))
    model.bridge = model.add("bridge", bridge)

    cin = bw
    for d, block in reversed(list(enumerate(spec.blocks(), 1))):
        w = block.width
        upconv = None
        if spec.name == "unet_original":
            upconv = b.unit(cin, w)
            cin = w
        convs = b.units(cin + w, w, (1,) * spec.decoder_convs)
        stage = model.add(f"dec{d}", DecoderStage(convs, upconv))
        model.decoder.append(stage)
        cin = w

    model.head = model.add("head", Conv2d(b.conv(cin, spec.classes, k=1)))
    _check_widths(model)
    logger.info(f"Built {spec.name}: {parameter_count(model)} parameters, {model.conv_counts()}")
    return model


def _check_widths(model: Model) -> None:
    """Dry run on the smallest legal input: widths and skip resolutions must chain."""
    f = model.spec.factor
    blank = np.zeros((1, model.spec.in_channels, f, f), dtype=model.dtype)
    model.train(False)
    try:
        out = model.forward(blank)
    except ShapeError as e:
        raise ConstructionError(f"inconsistent network {model.spec.name}: {e}") from e
    finally:
        model.train(True)
    if out.shape != (1, model.spec.classes, f, f):
        raise ConstructionError(f"{model.spec.name} maps {blank.shape} to {out.shape}")


def forward(model: Model, x: arrayLike) -> Tensor:
    """Logits (N, classes, H, W) for x (N, 1, H, W)."""
    return wrap(model.forward(_arr(x)))


def parameter_count(model: Layer) -> int:
    """Total number of scalar parameters of a model or layer."""
    return int(sum(t.data.size for _, t in model.named_params()))
