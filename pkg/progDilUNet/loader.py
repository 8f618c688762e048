# -*- coding: utf-8 -*-
"""
Files of the engine: the tensor container, phantom dataset directories and
their manifest, and 8-bit PGM previews.

Tensor container: magic "DLS1", u8 rank, rank x u32 little-endian extents,
u8 element code (0x01 float32, 0x02 uint8, 0x03 float64), then the
row-major payload.

A dataset directory holds `NNNN_img.dls`, `NNNN_lbl.dls` and `manifest.txt`
(one line per sample: id seed split).
"""
import logging
import struct
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from progDilUNet.exceptions import FormatError, ShapeError
from progDilUNet.metrics import LabelMap
from progDilUNet.pduConstantes import (
    CODE_DTYPES,
    CODE_F32,
    CODE_F64,
    CODE_U8,
    IMG_SUFFIX,
    LBL_SUFFIX,
    MANIFEST_COLS,
    MANIFEST_NAME,
    N_CLASSES,
    TENSOR_MAGIC,
)
from progDilUNet.pdu_types import splitT
from progDilUNet.settings import SPACING_DFT
from progDilUNet.tensor import DTYPE, RANK, Shape, Tensor

logger = logging.getLogger(__name__)

pathT = Union[str, Path]
_CODES = {np.dtype("<f4"): CODE_F32, np.dtype("u1"): CODE_U8, np.dtype("<f8"): CODE_F64}


# #### tensor container ####
def encode_tensor(t: Union[Tensor, np.ndarray, LabelMap]) -> bytes:
    arr = t.grid if isinstance(t, LabelMap) else t.data if isinstance(t, Tensor) else np.asarray(t)
    arr = np.ascontiguousarray(arr.reshape(Shape(arr.shape).dims))
    code = _CODES.get(arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype)
    if code is None:
        raise FormatError(f"no container code for dtype {arr.dtype}")
    head = TENSOR_MAGIC + struct.pack(f"<B{RANK}I", RANK, *arr.shape) + struct.pack("<B", code)
    return head + arr.astype(CODE_DTYPES[code], copy=False).tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """Array stored at buf[offset:] and the offset just past it."""
    if buf[offset:offset + 4] != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {bytes(buf[offset:offset + 4])!r}")
    pos = offset + 4
    try:
        (rank,) = struct.unpack_from("<B", buf, pos)
        dims = struct.unpack_from(f"<{rank}I", buf, pos + 1)
        (code,) = struct.unpack_from("<B", buf, pos + 1 + 4 * rank)
    except struct.error as e:
        raise FormatError(f"truncated tensor header: {e}") from None
    if rank != RANK:
        raise FormatError(f"container rank {rank}, expected {RANK}")
    if code not in CODE_DTYPES:
        raise FormatError(f"unknown element code 0x{code:02x}")
    pos += 2 + 4 * rank
    dtype = np.dtype(CODE_DTYPES[code])
    count = int(np.prod(dims))
    end = pos + count * dtype.itemsize
    if end > len(buf):
        raise FormatError(f"payload truncated: need {end - pos} bytes, have {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True), end


def save_tensor(fname: pathT, t) -> Path:
    fname = Path(fname)
    fname.write_bytes(encode_tensor(t))
    logger.debug(f"Wrote {fname}")
    return fname


def load_tensor(fname: pathT) -> np.ndarray:
    arr, _ = decode_tensor(Path(fname).read_bytes())
    return arr


def load_image(fname: pathT) -> Tensor:
    arr = load_tensor(fname)
    if arr.dtype.kind != "f":
        raise FormatError(f"{fname}: image payload must be float, got {arr.dtype}")
    return Tensor(arr, dtype=DTYPE)


def load_labels(fname: pathT, spacing=SPACING_DFT) -> LabelMap:
    arr = load_tensor(fname)
    if arr.dtype != np.uint8:
        raise FormatError(f"{fname}: label payload must be u8, got {arr.dtype}")
    return LabelMap(arr, spacing)


# #### PGM ####
def to_gray(arr: np.ndarray, labels: bool = False) -> np.ndarray:
    arr = np.asarray(arr)
    while arr.ndim > 2:
        arr = arr[0]
    if labels:
        return (arr.astype(np.uint16) * (255 // (N_CLASSES - 1))).astype(np.uint8)
    return np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)


def write_pgm(fname: pathT, arr, labels: bool = False) -> Path:
    """Binary (P5) 8-bit grayscale image; labels are spread over 0..255."""
    gray = to_gray(arr, labels)
    h, w = gray.shape
    fname = Path(fname)
    with open(fname, "wb") as fd:
        fd.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fd.write(gray.tobytes())
    return fname


def read_pgm(fname: pathT) -> np.ndarray:
    raw = Path(fname).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{fname} is not a binary PGM")
    w, h, maxval = (int(p) for p in parts[1:4])
    if maxval != 255:
        raise FormatError(f"{fname}: only 8-bit PGM is supported")
    data = raw[len(raw) - w * h:]
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


# #### dataset directory ####
def sample_paths(folder: pathT, sid: str) -> Tuple[Path, Path]:
    folder = Path(folder)
    return folder / f"{sid}{IMG_SUFFIX}", folder / f"{sid}{LBL_SUFFIX}"


def write_manifest(folder: pathT, df: pd.DataFrame) -> Path:
    fname = Path(folder) / MANIFEST_NAME
    df[MANIFEST_COLS].to_csv(fname, sep=" ", header=False, index=False)
    return fname


def read_manifest(folder: pathT) -> pd.DataFrame:
    fname = Path(folder) / MANIFEST_NAME
    if not fname.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {folder}, is it a dataset directory?")
    df = pd.read_csv(fname, sep=" ", names=MANIFEST_COLS, dtype={"id": str, "seed": "int64", "split": str})
    bad = set(df.split) - {"train", "val", "test"}
    if bad:
        raise FormatError(f"{fname}: unknown splits {sorted(bad)}")
    return df


def write_dataset(folder: pathT, samples: Sequence, split_of: Dict[str, str], preview: bool = False) -> Path:
    """Write samples, their manifest and optionally PGM previews to folder."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        img, lbl = sample_paths(folder, s.id)
        save_tensor(img, s.image)
        save_tensor(lbl, s.labels)
        if preview:
            write_pgm(folder / f"{s.id}_img.pgm", s.image.data)
            write_pgm(folder / f"{s.id}_lbl.pgm", s.labels.grid, labels=True)
        rows.append({"id": s.id, "seed": s.seed, "split": split_of[s.id]})
    write_manifest(folder, pd.DataFrame(rows, columns=MANIFEST_COLS))
    logger.warning(f"Wrote {len(rows)} samples to {folder}")
    return folder


class Dataset:
    """Lazy view of a dataset directory, optionally restricted to one split."""

    def __init__(self, folder: pathT, split: Optional[splitT] = None, spacing=SPACING_DFT):
        self.folder = Path(folder)
        if not self.folder.is_dir():
            raise FileNotFoundError(f"dataset directory {self.folder} not found")
        manifest = read_manifest(self.folder)
        if split is not None:
            manifest = manifest.loc[manifest.split == split]
        self.manifest = manifest.reset_index(drop=True)
        self.split = split
        self.spacing = spacing

    def __len__(self) -> int:
        return len(self.manifest)

    @property
    def ids(self) -> List[str]:
        return self.manifest.id.tolist()

    def load(self, sid: str) -> Tuple[Tensor, LabelMap]:
        img, lbl = sample_paths(self.folder, sid)
        image, labels = load_image(img), load_labels(lbl, self.spacing)
        if image.shape.dims[2:] != labels.shape:
            raise ShapeError(f"sample {sid}: image {image.shape} vs labels {labels.shape}")
        return image, labels

    def __getitem__(self, i: int) -> Tuple[Tensor, LabelMap]:
        return self.load(self.ids[i])

    def __iter__(self) -> Iterator[Tuple[str, Tensor, LabelMap]]:
        for sid in self.ids:
            yield (sid,) + self.load(sid)

    def arrays(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """Stacked images (B, 1, H, W) and label grids (B, H, W)."""
        pairs = [self[i] for i in indices]
        x = np.concatenate([p[0].data for p in pairs], axis=0)
        y = np.stack([p[1].grid for p in pairs], axis=0)
        return x, y


def open_split(folder: pathT, split: splitT) -> Dataset:
    ds = Dataset(folder, split)
    if len(ds) == 0:
        raise FileNotFoundError(f"split {split!r} of {folder} is empty")
    return ds
