# -*- coding: utf-8 -*-
"""
Checkpoint files.

Layout: magic "DLCK", u32 version, u32-length-prefixed network spec text,
parameter and buffer records (u16 name length, name, tensor container),
an empty name, optimizer moment records (`adam.m.*`, `adam.v.*`), an empty
name, u32 epoch, f32 best validation DSC (NaN when none), then a
u32-length-prefixed JSON document holding the random generator state, the
plateau schedule state and the Adam step counter.
"""
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np

from progDilUNet.arch import Model, NetSpec, build
from progDilUNet.exceptions import FormatError
from progDilUNet.loader import decode_tensor, encode_tensor
from progDilUNet.optim import Adam, PlateauSchedule
from progDilUNet.pduConstantes import CKPT_MAGIC, CKPT_VERSION
from progDilUNet.tensor import Tensor
from progDilUNet.utils import checksum

logger = logging.getLogger(__name__)

pathT = Union[str, Path]


@dataclass
class Checkpoint:
    spec: NetSpec
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    moments: Dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    best_dsc: float = math.nan
    state: dict = field(default_factory=dict)
    version: int = CKPT_VERSION

    def checksum(self) -> str:
        """Digest of the parameters and buffers."""
        return checksum(self.tensors.items())


def snapshot(
    model: Model,
    optimizer: Optional[Adam] = None,
    schedule: Optional[PlateauSchedule] = None,
    epoch: int = 0,
    best_dsc: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> Checkpoint:
    """Copy of everything needed to resume training of model."""
    tensors = {n: t.data.copy() for n, t in model.parameters().items()}
    tensors.update({n: t.data.copy() for n, t in model.buffers().items()})
    state = {}
    moments = {}
    if optimizer is not None:
        moments = {n: m.copy() for n, m in optimizer.moments()}
        state["adam_t"] = optimizer.t
        state["lr"] = optimizer.lr
    if schedule is not None:
        state["schedule"] = schedule.state()
    if rng is not None:
        state["rng"] = rng.bit_generator.state
    state["best_dsc"] = best_dsc
    return Checkpoint(
        spec=model.spec,
        tensors=tensors,
        moments=moments,
        epoch=epoch,
        best_dsc=math.nan if best_dsc is None else float(best_dsc),
        state=state,
    )


# #### encoding ####
def _records(named: Iterable[Tuple[str, np.ndarray]]) -> bytes:
    out = []
    for name, arr in named:
        raw = name.encode("utf-8")
        if not 0 < len(raw) < 2 ** 16:
            raise FormatError(f"record name {name!r} cannot be stored")
        out.append(struct.pack("<H", len(raw)) + raw + encode_tensor(arr))
    out.append(struct.pack("<H", 0))
    return b"".join(out)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    spec = ckpt.spec.to_text().encode("utf-8")
    state = json.dumps(ckpt.state, sort_keys=True).encode("utf-8")
    return b"".join(
        [
            CKPT_MAGIC,
            struct.pack("<II", ckpt.version, len(spec)),
            spec,
            _records(ckpt.tensors.items()),
            _records(ckpt.moments.items()),
            struct.pack("<If", ckpt.epoch, ckpt.best_dsc),
            struct.pack("<I", len(state)),
            state,
        ]
    )


def _read_records(buf: bytes, pos: int) -> Tuple[Dict[str, np.ndarray], int]:
    res = {}
    while True:
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if n == 0:
            return res, pos
        name = buf[pos:pos + n].decode("utf-8")
        arr, pos = decode_tensor(buf, pos + n)
        res[name] = arr


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"not a checkpoint, magic {bytes(buf[:4])!r}")
    try:
        version, n = struct.unpack_from("<II", buf, 4)
        if version != CKPT_VERSION:
            raise FormatError(f"checkpoint version {version}, expected {CKPT_VERSION}")
        pos = 12
        spec = NetSpec.from_text(buf[pos:pos + n].decode("utf-8"), "checkpoint")
        tensors, pos = _read_records(buf, pos + n)
        moments, pos = _read_records(buf, pos)
        epoch, best = struct.unpack_from("<If", buf, pos)
        (n,) = struct.unpack_from("<I", buf, pos + 8)
        state = json.loads(buf[pos + 12:pos + 12 + n].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt checkpoint: {e}") from None
    return Checkpoint(spec, tensors, moments, epoch, float(best), state, version)


def save_checkpoint(fname: pathT, ckpt: Checkpoint) -> Path:
    """Write through a temporary file so an interrupted save keeps the old one."""
    fname = Path(fname)
    fname.parent.mkdir(parents=True, exist_ok=True)
    tmp = fname.with_name(fname.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, fname)
    logger.info(f"Saved checkpoint {fname} (epoch {ckpt.epoch})")
    return fname


def load_checkpoint(fname: pathT) -> Checkpoint:
    fname = Path(fname)
    if not fname.exists():
        raise FileNotFoundError(f"checkpoint {fname} not found")
    return decode_checkpoint(fname.read_bytes())


# #### restoring ####
def _copy_into(dst: Dict, src: Dict[str, np.ndarray], what: str) -> None:
    missing = set(dst) - set(src)
    if missing:
        raise FormatError(f"checkpoint lacks {what} {sorted(missing)[:3]}")
    for name, t in dst.items():
        arr = src[name]
        target = t.data if isinstance(t, Tensor) else t
        if arr.shape != target.shape:
            raise FormatError(f"{what} {name}: stored {arr.shape}, model {target.shape}")
        target[...] = arr


def restore_model(ckpt: Checkpoint) -> Model:
    """Model of the checkpoint spec holding the stored parameters and buffers."""
    model = build(ckpt.spec)
    dtype = next(iter(ckpt.tensors.values())).dtype if ckpt.tensors else None
    if dtype is not None and dtype != model.dtype:
        model.astype(dtype)
    _copy_into(model.parameters(), ckpt.tensors, "parameter")
    _copy_into(model.buffers(), ckpt.tensors, "buffer")
    return model


def restore_training(
    ckpt: Checkpoint, model: Model, optimizer: Adam, schedule: PlateauSchedule
) -> np.random.Generator:
    """Load optimizer and schedule state in place, return the generator."""
    moments = {n: m for n, m in optimizer.moments()}
    _copy_into(moments, ckpt.moments, "optimizer moment")
    st = ckpt.state
    if "adam_t" in st:
        optimizer.t = int(st["adam_t"])
    if "lr" in st:
        optimizer.lr = float(st["lr"])
    if "schedule" in st:
        schedule.load_state(st["schedule"])
    rng = np.random.default_rng()
    if "rng" in st:
        rng.bit_generator.state = st["rng"]
    return rng
