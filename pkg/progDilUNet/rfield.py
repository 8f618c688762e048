# -*- coding: utf-8 -*-
"""
Receptive field calculator and gridding coverage analyzer.

A composition is an ordered list of (k, D, s) per layer.  The cumulative
receptive field follows RF_l = RF_{l-1} + (k_l - 1) * D_l * jump_{l-1} with
jump_l = jump_{l-1} * s_l, RF_0 = jump_0 = 1.  Upsampling enters with
s = Fraction(1, 2).  Coverage traces the set of tap offsets reachable from
one output unit, so it counts the input positions that actually contribute.
"""
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from pandas import DataFrame

from progDilUNet.arch import Model, build
from progDilUNet.exceptions import DomainError, UnsupportedConfiguration
from progDilUNet.layers import effective_extent
from progDilUNet.pduConstantes import HEAD_DILATIONS
from progDilUNet.pdu_types import accountingT, rfLayersT
from progDilUNet.settings import REPORTED_RF, RF_ACCOUNTING_DFT, RF_TOLERANCE

logger = logging.getLogger(__name__)

ACCOUNTINGS = ("encoder", "encoder+bridge", "encoder+bridge+residual")
UPSAMPLE = Fraction(1, 2)
PAIRED = ("unet_progressive", "unet_dilated")


def effective_kernel(k: int, D: int) -> int:
    """k + (k - 1)(D - 1)."""
    if k < 1 or D < 1:
        raise DomainError(f"kernel and dilation must be >= 1, got k={k}, D={D}")
    return effective_extent(k, D)


@dataclass
class RFRow:
    name: str
    k: int
    D: int
    s: Union[int, Fraction]
    effective: int
    rf: int
    jump: Union[int, Fraction]


@dataclass
class RFReport:
    rows: List[RFRow] = field(default_factory=list)
    contributing: Optional[int] = None
    window: Optional[int] = None
    accounting: str = ""

    @property
    def rf(self) -> int:
        return self.rows[-1].rf if self.rows else 1

    @property
    def jump(self):
        return self.rows[-1].jump if self.rows else 1

    @property
    def density(self) -> Optional[float]:
        if self.contributing is None:
            return None
        return self.contributing / self.window

    def to_frame(self) -> DataFrame:
        df = DataFrame([r.__dict__ for r in self.rows])
        return df.rename(columns={"name": "layer", "effective": "eff_kernel", "rf": "cum_rf"})

    def to_text(self) -> str:
        lines = [self.to_frame().to_string(index=False)]
        if self.contributing is not None:
            lines.append(
                f"coverage: {self.contributing} of {self.window} positions"
                f" (density {self.density:.4f})"
            )
        return "\n".join(lines)


def _layer(entry):
    k, D, s = entry
    effective_kernel(k, D)
    if s <= 0:
        raise DomainError(f"stride must be > 0, got {s}")
    return int(k), int(D), s


def compose_rf(layers: rfLayersT, names: Optional[Sequence[str]] = None) -> RFReport:
    """Compose the receptive field over an ordered list of (k, D, s)."""
    if not layers:
        raise DomainError("compose_rf needs at least one layer")
    names = names or [f"L{i}" for i in range(1, len(layers) + 1)]
    rf, jump = 1, 1
    report = RFReport()
    for name, entry in zip(names, layers):
        k, D, s = _layer(entry)
        rf = rf + (k - 1) * D * jump
        jump = jump * s
        if isinstance(jump, Fraction) and jump.denominator == 1:
            jump = int(jump)
        report.rows.append(RFRow(name, k, D, s, effective_kernel(k, D), int(rf), jump))

    offsets = _offsets(layers)
    if offsets is not None:
        report.contributing = len(offsets) ** 2
        report.window = report.rf ** 2
    return report


def _offsets(layers: rfLayersT) -> Optional[Set[int]]:
    """1D input offsets reachable from one output unit, None past an upsampling."""
    reach, jump = {0}, 1
    for k, D, s in layers:
        if isinstance(s, Fraction) and s.denominator != 1:
            return None
        taps = [u * D * jump for u in range(k)]
        reach = {o + t for o in reach for t in taps}
        jump *= int(s)
    return reach


def gridding_coverage(layers: rfLayersT):
    """(contributing, window) for a stride 1 stack; window = RF ** 2."""
    if any(s != 1 for _, _, s in layers):
        raise UnsupportedConfiguration("coverage is defined at full resolution (stride 1)")
    report = compose_rf(layers)
    return report.contributing, report.window


def gridding_map(layers: rfLayersT) -> np.ndarray:
    """Boolean RF x RF map of the input positions feeding the centre unit."""
    if any(s != 1 for _, _, s in layers):
        raise UnsupportedConfiguration("coverage is defined at full resolution (stride 1)")
    reach = sorted(_offsets(layers))
    line = np.zeros(reach[-1] - reach[0] + 1, dtype=bool)
    line[np.array(reach) - reach[0]] = True
    return np.outer(line, line)


def schedule(dilations: Sequence[int], k: int = 3) -> List[tuple]:
    """Stride 1 composition of k x k convs with the given dilations."""
    return [(k, int(d), 1) for d in dilations]


def _in_accounting(name: str, accounting: accountingT) -> bool:
    if name.startswith(("enc", "down", "pool")):
        return True
    if name.startswith("bridge.res"):
        return accounting == "encoder+bridge+residual"
    if name.startswith("bridge"):
        return accounting != "encoder"
    return False


def network_rf(spec, accounting: accountingT = RF_ACCOUNTING_DFT) -> RFReport:
    """Receptive field of a NetSpec or built Model over the context path.

    The `encoder` accounting counts the encoder blocks and their
    downsamplings; the others add the bridge convs (and the residual block).
    """
    if accounting not in ACCOUNTINGS:
        raise DomainError(f"unknown accounting {accounting!r}, use one of {ACCOUNTINGS}")
    # geometry does not depend on widths
    model = spec if isinstance(spec, Model) else build(replace(spec, base_width=1))
    rows = [r for r in model.layer_summary() if _in_accounting(r["name"], accounting)]
    report = compose_rf([(r["k"], r["D"], r["s"]) for r in rows], [r["name"] for r in rows])
    report.accounting = accounting
    return report


def dilation_pair(spec) -> Optional[Tuple[int, int]]:
    """Headline rf of the progressive and dilated variants of spec, None for other models."""
    if spec.name not in PAIRED or spec.depth > len(HEAD_DILATIONS):
        return None
    prog, dil = (network_rf(replace(spec, name=n)).rf for n in PAIRED)
    return prog, dil


def rf_summary(spec) -> str:
    """Text report: headline table, every accounting and the reference comparison."""
    head = network_rf(spec)
    lo, hi = REPORTED_RF * (1 - RF_TOLERANCE), REPORTED_RF * (1 + RF_TOLERANCE)
    lines = [f"model: {spec.name}", head.to_text(), ""]
    for acc in ACCOUNTINGS:
        rf = head.rf if acc == head.accounting else network_rf(spec, acc).rf
        mark = "  <- headline" if acc == head.accounting else ""
        lines.append(f"rf[{acc}] = {rf}{mark}")
    inside = lo <= head.rf <= hi
    lines.append(
        f"headline rf {head.rf} vs reported {REPORTED_RF}: "
        f"{'inside' if inside else 'outside'} [{lo:.0f}, {hi:.0f}]"
    )
    lines.append(
        "assumption: headline counts encoder blocks and strided convs,"
        " bridge convs excluded"
    )
    pair = dilation_pair(spec)
    if pair is not None:
        same = "same" if pair[0] == pair[1] else "differ"
        lines.append(f"progressive vs dilated: {pair[0]} vs {pair[1]} ({same})")
    return "\n".join(lines)
