# -*- coding: utf-8 -*-
"""
Segmentation metrics: Dice overlap, average symmetric surface distance and
the one-tailed Wilcoxon signed-rank test used to compare two models.

A metric that is not defined (structure absent from both maps, empty
surface, no non-zero paired difference) is returned as None.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np
from pandas import DataFrame
from scipy import ndimage
from scipy.spatial import cKDTree
from scipy.stats import norm, rankdata

from progDilUNet.exceptions import DomainError, LabelError, ShapeError
from progDilUNet.pduConstantes import CLASS_NAMES, FOREGROUND, N_CLASSES
from progDilUNet.pdu_types import alternativeT, oFloatT, spacingT, wilcoxonMethodT
from progDilUNet.settings import FLOAT_FMT, SPACING_DFT
from progDilUNet.utils import fmt_mean_std

logger = logging.getLogger(__name__)

EXACT_MAX_N = 12  # auto mode enumerates up to this many differences
ENUM_LIMIT = 20
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class LabelMap:
    """Per-pixel class codes with the physical pixel size in mm (rows, cols)."""

    grid: np.ndarray
    spacing: spacingT = SPACING_DFT

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.ndim == 4 and grid.shape[:2] == (1, 1):
            grid = grid[0, 0]
        if grid.ndim != 2:
            raise ShapeError(f"label map must be 2D, got {grid.shape}")
        if grid.size and (grid.min() < 0 or grid.max() >= N_CLASSES):
            raise LabelError(f"codes must lie in [0, {N_CLASSES}), got [{grid.min()}, {grid.max()}]")
        self.grid = grid.astype(np.uint8)
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 2 or min(self.spacing) <= 0:
            raise ShapeError(f"spacing must be two positive values, got {self.spacing}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape

    def mask(self, cls: int) -> np.ndarray:
        return self.grid == cls


@dataclass
class MetricReport:
    dsc: Dict[int, oFloatT] = field(default_factory=dict)
    assd: Dict[int, oFloatT] = field(default_factory=dict)


def _same_grid(a: LabelMap, b: LabelMap) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"label maps differ in extent: {a.shape} vs {b.shape}")


def dsc(a: LabelMap, b: LabelMap, cls: int) -> oFloatT:
    """2|A n B| / (|A| + |B|), None when the class is absent from both."""
    _same_grid(a, b)
    ma, mb = a.mask(cls), b.mask(cls)
    total = int(ma.sum()) + int(mb.sum())
    if total == 0:
        return None
    return 2.0 * int(np.logical_and(ma, mb).sum()) / total


def surface(a: LabelMap, cls: int) -> np.ndarray:
    """(K, 2) row/col coordinates of the 4-connected inner border of cls.

    A pixel is on the surface if one of its 4 neighbours is another class or
    lies outside the image.
    """
    m = a.mask(cls)
    inner = ndimage.binary_erosion(m, structure=_FOUR, border_value=0)
    return np.argwhere(m & ~inner)


def assd(a: LabelMap, b: LabelMap, cls: int) -> oFloatT:
    """Average symmetric surface distance in mm, None if a surface is empty."""
    _same_grid(a, b)
    if not np.allclose(a.spacing, b.spacing):
        raise ShapeError(f"spacings differ: {a.spacing} vs {b.spacing}")
    sa, sb = surface(a, cls), surface(b, cls)
    if len(sa) == 0 or len(sb) == 0:
        return None
    scale = np.asarray(a.spacing)
    pa, pb = sa * scale, sb * scale
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    return float((da.sum() + db.sum()) / (len(pa) + len(pb)))


def evaluate(truth: LabelMap, pred: LabelMap, classes: Sequence[int] = FOREGROUND) -> MetricReport:
    rep = MetricReport()
    for c in classes:
        rep.dsc[c] = dsc(truth, pred, c)
        rep.assd[c] = assd(truth, pred, c)
    return rep


# #### Reports ####
def slice_report(
    items: Iterable[Tuple[str, LabelMap, LabelMap]], classes: Sequence[int] = FOREGROUND
) -> DataFrame:
    """One row per (patient_id, class): dsc and assd_mm, NaN when undefined."""
    rows = []
    for patient_id, truth, pred in items:
        rep = evaluate(truth, pred, classes)
        for c in classes:
            rows.append(
                {
                    "patient_id": patient_id,
                    "class": CLASS_NAMES[c],
                    "dsc": rep.dsc[c],
                    "assd_mm": rep.assd[c],
                }
            )
    df = DataFrame(rows, columns=["patient_id", "class", "dsc", "assd_mm"])
    return df.astype({"dsc": float, "assd_mm": float})


def per_patient(df: DataFrame, patient_of=None) -> DataFrame:
    """Average slice rows per patient; patient_of maps a slice id to its patient."""
    df = df.copy()
    if patient_of is not None:
        df["patient_id"] = df["patient_id"].map(patient_of)
    return df.groupby(["patient_id", "class"], sort=False, as_index=False)[["dsc", "assd_mm"]].mean()


def pooled_report(
    patient_id: str,
    truths: Sequence[LabelMap],
    preds: Sequence[LabelMap],
    classes: Sequence[int] = FOREGROUND,
) -> DataFrame:
    """Per-volume variant: intersections and surface distances pooled over slices."""
    rows = []
    for c in classes:
        inter = size = 0
        dist_sum, n_pts = 0.0, 0
        for t, p in zip(truths, preds):
            _same_grid(t, p)
            mt, mp = t.mask(c), p.mask(c)
            inter += int((mt & mp).sum())
            size += int(mt.sum() + mp.sum())
            st, sp = surface(t, c), surface(p, c)
            if len(st) and len(sp):
                scale = np.asarray(t.spacing)
                dist_sum += cKDTree(sp * scale).query(st * scale)[0].sum()
                dist_sum += cKDTree(st * scale).query(sp * scale)[0].sum()
                n_pts += len(st) + len(sp)
        rows.append(
            {
                "patient_id": patient_id,
                "class": CLASS_NAMES[c],
                "dsc": 2.0 * inter / size if size else math.nan,
                "assd_mm": dist_sum / n_pts if n_pts else math.nan,
            }
        )
    return DataFrame(rows)


def summary(df: DataFrame, fmt: str = FLOAT_FMT) -> DataFrame:
    """Per class 'mean ± std' of dsc and assd_mm over the defined rows."""
    rows = []
    for cls, grp in df.groupby("class", sort=False):
        rows.append(
            {
                "class": cls,
                "dsc": fmt_mean_std(grp["dsc"].tolist(), fmt),
                "assd_mm": fmt_mean_std(grp["assd_mm"].tolist(), fmt),
                "n_undefined": int(grp["dsc"].isna().sum() + grp["assd_mm"].isna().sum()),
            }
        )
    return DataFrame(rows, columns=["class", "dsc", "assd_mm", "n_undefined"])


# #### Statistics ####
def _exact_upper_tail(ranks: np.ndarray, w_plus: float) -> float:
    """P(W+ >= w_plus) over all 2**n equally likely sign assignments."""
    n = ranks.size
    if n > ENUM_LIMIT:
        raise DomainError(f"exact enumeration limited to n <= {ENUM_LIMIT}, got {n}")
    patterns = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    sums = patterns @ ranks
    return float(np.count_nonzero(sums >= w_plus - 1e-9) / 2 ** n)


def _normal_upper_tail(absd: np.ndarray, w_plus: float) -> float:
    n = absd.size
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(absd, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (counts ** 3 - counts).sum() / 48.0
    z = (w_plus - mean - 0.5) / math.sqrt(var)
    return float(norm.sf(z))


def wilcoxon_one_tailed(
    x: Sequence[float],
    y: Sequence[float],
    alternative: alternativeT = "greater",
    method: wilcoxonMethodT = "auto",
) -> oFloatT:
    """p-value of the one-tailed signed-rank test on the pairs (x_i, y_i).

    alternative="greater" tests x > y (DSC of the better model), "less"
    tests x < y (ASSD).  Zero differences are dropped, tied |differences|
    get average ranks.  auto enumerates when at most 12 differences remain
    and uses the continuity corrected normal approximation otherwise.
    Returns None when every difference is zero.
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"paired samples must be 1D of equal length: {x.shape} vs {y.shape}")
    if x.size < 5:
        raise DomainError(f"need at least 5 pairs, got {x.size}")
    if alternative not in ("greater", "less"):
        raise DomainError(f"unknown alternative {alternative!r}")
    d = x - y if alternative == "greater" else y - x
    d = d[d != 0]
    if d.size == 0:
        return None
    absd = np.abs(d)
    ranks = rankdata(absd)
    w_plus = float(ranks[d > 0].sum())
    if method == "exact" or (method == "auto" and d.size <= EXACT_MAX_N):
        return _exact_upper_tail(ranks, w_plus)
    if method not in ("auto", "approx"):
        raise DomainError(f"unknown method {method!r}")
    return _normal_upper_tail(absd, w_plus)


def compare(df_a: DataFrame, df_b: DataFrame) -> DataFrame:
    """Wilcoxon p-values of model a better than model b, per class and metric.

    Both frames come from slice_report on the same samples; rows where
    either side is undefined are dropped pairwise.
    """
    merged = df_a.merge(df_b, on=["patient_id", "class"], suffixes=("_a", "_b"))
    rows = []
    for cls, grp in merged.groupby("class", sort=False):
        for metric, alt in (("dsc", "greater"), ("assd_mm", "less")):
            g = grp[[f"{metric}_a", f"{metric}_b"]].dropna()
            p = None
            if len(g) >= 5:
                p = wilcoxon_one_tailed(g[f"{metric}_a"], g[f"{metric}_b"], alt)
            rows.append({"class": cls, "metric": metric, "n": len(g), "p_value": p})
    return DataFrame(rows, columns=["class", "metric", "n", "p_value"])
