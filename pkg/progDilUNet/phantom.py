# -*- coding: utf-8 -*-
"""
Synthetic bladder-like phantoms with exact label maps.

A sample is a rotated elliptic lumen (bright) surrounded by a dark wall ring
whose thickness grows toward the ends of the long axis, with 0 to 2 tumors
either attached to the inner wall or floating in the lumen.  The image is
the label intensities, softened at the boundaries, multiplied by a smooth
quadratic bias field and corrupted by clipped additive gaussian noise.

Sample `index` of a dataset is fully determined by (seed, index).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from progDilUNet.exceptions import ConfigError
from progDilUNet.metrics import LabelMap
from progDilUNet.pduConstantes import BACKGROUND, LUMEN, TUMOR, WALL
from progDilUNet.settings import (
    APEX_GAIN_DFT,
    BIAS_AMPLITUDE_DFT,
    BOUNDARY_BLUR_DFT,
    CENTER_JITTER_DFT,
    INTENSITY_DFT,
    LUMEN_AXIS_RANGE_DFT,
    NOISE_SIGMA_DFT,
    PHANTOM_SIZE_DFT,
    SEED_DFT,
    SPACING_DFT,
    SPLIT_RATIOS_DFT,
    TUMOR_ATTACHED_DFT,
    TUMOR_COUNT_RANGE_DFT,
    TUMOR_RADIUS_RANGE_DFT,
    WALL_THICKNESS_RANGE_DFT,
)
from progDilUNet.tensor import DTYPE, Tensor
from progDilUNet.utils import derive_seed, parse_kv

logger = logging.getLogger(__name__)

MARGIN = 2  # px kept free between the outer wall and the image border


def _range(name, value, lo=0.0) -> Tuple[float, float]:
    try:
        a, b = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a pair of numbers, got {value!r}") from None
    if not lo <= a <= b:
        raise ConfigError(f"{name} must satisfy {lo} <= min <= max, got {value!r}")
    return a, b


@dataclass
class PhantomConfig:
    """Phantom generator knobs; lengths are fractions of `size` unless in px."""

    size: int = PHANTOM_SIZE_DFT
    lumen_axis_range: Tuple[float, float] = LUMEN_AXIS_RANGE_DFT
    center_jitter: float = CENTER_JITTER_DFT
    wall_thickness_range: Tuple[float, float] = WALL_THICKNESS_RANGE_DFT
    apex_gain: float = APEX_GAIN_DFT
    tumor_count_range: Tuple[int, int] = TUMOR_COUNT_RANGE_DFT
    tumor_radius_range: Tuple[float, float] = TUMOR_RADIUS_RANGE_DFT
    tumor_attached: bool = TUMOR_ATTACHED_DFT
    background_intensity: float = INTENSITY_DFT["background"]
    lumen_intensity: float = INTENSITY_DFT["lumen"]
    wall_intensity: float = INTENSITY_DFT["wall"]
    tumor_intensity: float = INTENSITY_DFT["tumor"]
    bias_amplitude: float = BIAS_AMPLITUDE_DFT
    noise_sigma: float = NOISE_SIGMA_DFT
    blur: float = BOUNDARY_BLUR_DFT
    spacing: Tuple[float, float] = SPACING_DFT
    seed: int = SEED_DFT

    def __post_init__(self):
        self.size = int(self.size)
        if self.size < 16:
            raise ConfigError(f"size must be >= 16, got {self.size}")
        self.lumen_axis_range = _range("lumen_axis_range", self.lumen_axis_range)
        self.wall_thickness_range = _range("wall_thickness_range", self.wall_thickness_range, 1.0)
        self.tumor_radius_range = _range("tumor_radius_range", self.tumor_radius_range, 1.0)
        lo, hi = _range("tumor_count_range", self.tumor_count_range)
        self.tumor_count_range = (int(lo), int(hi))
        self.spacing = _range("spacing", self.spacing)
        if min(self.spacing) <= 0:
            raise ConfigError(f"spacing must be > 0, got {self.spacing}")
        if self.lumen_axis_range[0] <= 0:
            raise ConfigError("lumen axes must be > 0")
        for name in ("background", "lumen", "wall", "tumor"):
            v = getattr(self, f"{name}_intensity")
            if not 0 <= v <= 1:
                raise ConfigError(f"{name}_intensity must lie in [0, 1], got {v}")
        if self.lumen_intensity <= self.wall_intensity:
            raise ConfigError("lumen must be brighter than the wall")
        if not 0 <= self.bias_amplitude < 1:
            raise ConfigError(f"bias_amplitude must lie in [0, 1), got {self.bias_amplitude}")
        if self.noise_sigma < 0 or self.blur < 0 or self.apex_gain < 0 or self.center_jitter < 0:
            raise ConfigError("noise_sigma, blur, apex_gain and center_jitter must be >= 0")
        self._check_fits()

    def _check_fits(self) -> None:
        """Every structure the sampler can draw must stay inside the image."""
        n = self.size
        a_max = self.lumen_axis_range[1] * n
        b_min = self.lumen_axis_range[0] * n
        wall_max = self.wall_thickness_range[1] * (1 + self.apex_gain)
        reach = a_max + wall_max + self.center_jitter * n + MARGIN
        if reach >= n / 2:
            raise ConfigError(
                f"lumen + wall + jitter reach {reach:.1f} px, image half size is {n / 2}"
            )
        if self.tumor_count_range[1] and self.tumor_radius_range[1] + MARGIN >= b_min:
            raise ConfigError(
                f"tumor radius {self.tumor_radius_range[1]} does not fit a lumen"
                f" semi-axis of {b_min:.1f} px"
            )

    @property
    def intensities(self) -> np.ndarray:
        """Mean intensity per label code."""
        lut = np.zeros(4, dtype=np.float64)
        lut[BACKGROUND] = self.background_intensity
        lut[LUMEN] = self.lumen_intensity
        lut[WALL] = self.wall_intensity
        lut[TUMOR] = self.tumor_intensity
        return lut

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            v = ",".join(str(x) for x in v) if isinstance(v, (tuple, list)) else v
            lines.append(f"{k} = {v}\n")
        return "".join(lines)

    @classmethod
    def from_kv(cls, kv: dict) -> "PhantomConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(kv) - known
        if unknown:
            raise ConfigError(f"unknown phantom keys {sorted(unknown)}")
        return cls(**kv)

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> "PhantomConfig":
        return cls.from_kv(parse_kv(text, source))


@dataclass
class Tumor:
    center: Tuple[float, float]  # (row, col)
    radius: float
    attached: bool


@dataclass
class Geometry:
    """Sampled shape parameters of one phantom, in px and radians."""

    center: Tuple[float, float]
    axes: Tuple[float, float]  # long, short semi-axis
    angle: float
    wall: float
    tumors: List[Tumor] = field(default_factory=list)

    @property
    def lumen_area(self) -> float:
        return math.pi * self.axes[0] * self.axes[1]


@dataclass
class Sample:
    id: str
    index: int
    seed: int
    image: Tensor
    labels: LabelMap
    geometry: Optional[Geometry] = None


def sample_id(index: int) -> str:
    return f"{index:04d}"


# #### geometry ####
def _ellipse_point(g: Geometry, u: float, v: float) -> Tuple[float, float]:
    """Image (row, col) of the point (u, v) given in the ellipse frame."""
    c, s = math.cos(g.angle), math.sin(g.angle)
    return g.center[0] + u * s + v * c, g.center[1] + u * c - v * s


def sample_geometry(cfg: PhantomConfig, rng: np.random.Generator) -> Geometry:
    n = cfg.size
    lo, hi = cfg.lumen_axis_range
    a, b = sorted(rng.uniform(lo * n, hi * n, size=2), reverse=True)
    angle = rng.uniform(0, math.pi)
    jitter = rng.uniform(-cfg.center_jitter * n, cfg.center_jitter * n, size=2)
    center = (n / 2 - 0.5 + jitter[0], n / 2 - 0.5 + jitter[1])
    wall = rng.uniform(*cfg.wall_thickness_range)
    g = Geometry(center=center, axes=(float(a), float(b)), angle=float(angle), wall=float(wall))

    count = rng.integers(cfg.tumor_count_range[0], cfg.tumor_count_range[1] + 1)
    for _ in range(count):
        r = rng.uniform(*cfg.tumor_radius_range)
        psi = rng.uniform(0, 2 * math.pi)
        if cfg.tumor_attached:
            u, v = a * math.cos(psi), b * math.sin(psi)
        else:
            rho = rng.uniform(0, 0.8)
            u = rho * (a - r - MARGIN) * math.cos(psi)
            v = rho * (b - r - MARGIN) * math.sin(psi)
        g.tumors.append(Tumor(_ellipse_point(g, u, v), float(r), cfg.tumor_attached))
    return g


def rasterize(g: Geometry, cfg: PhantomConfig) -> np.ndarray:
    """Label grid (uint8) of a geometry."""
    n = cfg.size
    rows, cols = np.ogrid[:n, :n]
    dy, dx = rows - g.center[0], cols - g.center[1]
    c, s = math.cos(g.angle), math.sin(g.angle)
    u = dx * c + dy * s
    v = dy * c - dx * s
    a, b = g.axes
    lumen = (u / a) ** 2 + (v / b) ** 2 <= 1.0

    # thicker wall toward the apex and the base (ends of the long axis)
    phi = np.arctan2(v / b, u / a)
    thickness = g.wall * (1 + cfg.apex_gain * np.cos(phi) ** 2)
    dist = ndimage.distance_transform_edt(~lumen)
    wall = ~lumen & (dist <= thickness)

    grid = np.full((n, n), BACKGROUND, dtype=np.uint8)
    grid[wall] = WALL
    grid[lumen] = LUMEN
    for t in g.tumors:
        disk = (rows - t.center[0]) ** 2 + (cols - t.center[1]) ** 2 <= t.radius ** 2
        grid[disk & lumen] = TUMOR
    return grid


def bias_field(cfg: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    """1 + amplitude * p(x, y), p a random quadratic scaled to max |p| = 1."""
    n = cfg.size
    y, x = np.meshgrid(np.linspace(-1, 1, n), np.linspace(-1, 1, n), indexing="ij")
    coef = rng.uniform(-1, 1, size=6)
    poly = coef[0] + coef[1] * x + coef[2] * y + coef[3] * x * x + coef[4] * x * y + coef[5] * y * y
    peak = np.abs(poly).max()
    if peak > 0:
        poly = poly / peak
    return 1 + cfg.bias_amplitude * poly


def render(grid: np.ndarray, cfg: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    img = cfg.intensities[grid]
    if cfg.blur > 0:
        img = ndimage.gaussian_filter(img, sigma=cfg.blur, mode="nearest")
    img = img * bias_field(cfg, rng)
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0, cfg.noise_sigma, size=img.shape)
    return np.clip(img, 0, 1)


def make_sample(cfg: PhantomConfig, index: int) -> Sample:
    seed = derive_seed(cfg.seed, index)
    rng = np.random.default_rng(seed)
    g = sample_geometry(cfg, rng)
    grid = rasterize(g, cfg)
    img = render(grid, cfg, rng)
    n = cfg.size
    return Sample(
        id=sample_id(index),
        index=index,
        seed=seed,
        image=Tensor(img.reshape(1, 1, n, n), dtype=DTYPE),
        labels=LabelMap(grid, cfg.spacing),
        geometry=g,
    )


def generate(cfg: PhantomConfig, count: int, workers: int = 1, start: int = 0) -> List[Sample]:
    """Samples start .. start + count - 1, in index order.

    With workers > 1 the indices are generated by a thread pool; the result
    does not depend on the number of workers.
    """
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    indices = range(start, start + count)
    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(lambda i: make_sample(cfg, i), indices))
    else:
        samples = [make_sample(cfg, i) for i in indices]
    logger.info(f"Generated {count} phantoms of {cfg.size}x{cfg.size} (seed {cfg.seed})")
    return samples


# #### splits ####
def split_counts(n: int, ratios: Sequence[float] = SPLIT_RATIOS_DFT) -> Tuple[int, ...]:
    """Scale ratios to n items with the largest remainder method."""
    r = np.asarray(ratios, dtype=float)
    if r.ndim != 1 or r.size == 0 or (r < 0).any() or r.sum() <= 0:
        raise ConfigError(f"invalid split ratios {ratios}")
    quota = n * r / r.sum()
    counts = np.floor(quota).astype(int)
    # ties go to the earlier split
    order = sorted(range(r.size), key=lambda i: (-(quota[i] - counts[i]), i))
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return tuple(int(c) for c in counts)


def split(
    dataset: Sequence,
    ratios: Sequence[float] = SPLIT_RATIOS_DFT,
    seed: int = SEED_DFT,
    counts: Optional[Sequence[int]] = None,
) -> Tuple[list, list, list]:
    """Seeded disjoint train/val/test partition of dataset.

    counts, when given, overrides the scaled ratios and must add up to the
    dataset size.  Each part keeps the dataset order.
    """
    n = len(dataset)
    if counts is None:
        counts = split_counts(n, ratios)
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or min(counts) < 0:
        raise ConfigError(f"need three non negative split counts, got {counts}")
    if sum(counts) != n:
        kind = "overflow" if sum(counts) > n else "underflow"
        raise ConfigError(f"split {kind}: counts {counts} for {n} samples")

    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum((0,) + counts)
    parts = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        chosen = np.sort(perm[lo:hi])
        parts.append([dataset[i] for i in chosen])
    return tuple(parts)
