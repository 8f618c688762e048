# -*- coding: utf-8 -*-
"""Types used in the packages."""
from typing import Literal, Optional, Sequence, Tuple

modelT = Literal["unet_original", "unet_baseline", "unet_dilated", "unet_progressive"]
blockKindT = Literal["standard", "dilated_head", "progressive"]
downKindT = Literal["strided", "maxpool"]
elementwiseT = Literal["add", "sub", "mul"]
reduceT = Literal["sum", "mean", "max"]
bnModeT = Literal["train", "infer"]
splitT = Literal["train", "val", "test"]
accountingT = Literal["encoder", "encoder+bridge", "encoder+bridge+residual"]
alternativeT = Literal["greater", "less"]
wilcoxonMethodT = Literal["auto", "exact", "approx"]

shapeT = Tuple[int, ...]
spacingT = Tuple[float, float]
# (k, D, s) per layer, as consumed by the receptive-field analyzer
rfLayerT = Tuple[int, int, int]
rfLayersT = Sequence[rfLayerT]  # (kernel, dilation, stride)
oFloatT = Optional[float]
