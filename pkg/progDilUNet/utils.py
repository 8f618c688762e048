# -*- coding: utf-8 -*-
"""Bibliothèque d'utilitaires: config files, seeds, checksums, files."""
import hashlib
import logging
import math
import re
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from progDilUNet.exceptions import ConfigError

logger = logging.getLogger(__name__)

pathT = Union[str, Path]

_KV = re.compile(r"^\s*(?P<key>[A-Za-z_][\w\-]*)\s*=\s*(?P<value>.*?)\s*$")
_BOOLS = {"true": True, "yes": True, "on": True, "false": False, "no": False, "off": False}


def parse_value(raw: str):
    """'4' -> 4, '1e-4' -> 1e-4, 'true' -> True, '1,2,4' -> [1, 2, 4], else str."""
    raw = raw.strip()
    if "," in raw:
        return [parse_value(r) for r in raw.split(",") if r.strip()]
    if raw.lower() in _BOOLS:
        return _BOOLS[raw.lower()]
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    return raw


def parse_kv(text: str, source: str = "<text>") -> Dict[str, object]:
    """Parse `key = value` lines, `#` starts a comment."""
    res = {}
    for i, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0]
        if not line.strip():
            continue
        m = _KV.match(line)
        if m is None:
            raise ConfigError(f"{source}:{i}: expected 'key = value', got {line!r}")
        res[m["key"].replace("-", "_")] = parse_value(m["value"])
    return res


def read_kv(fname: pathT) -> Dict[str, object]:
    fname = Path(fname)
    try:
        text = fname.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file {fname} not found") from None
    return parse_kv(text, source=str(fname))


def derive_seed(seed: int, index: int) -> int:
    """Per-sample seed, independent of how the index range is partitioned."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def checksum(named: Iterable[Tuple[str, np.ndarray]]) -> str:
    """sha256 over names, dtypes, shapes and raw bytes, in the given order."""
    h = hashlib.sha256()
    for name, arr in named:
        arr = np.ascontiguousarray(arr)
        h.update(name.encode())
        h.update(str(arr.dtype).encode() + str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def mean_std(values: Sequence[Optional[float]]) -> Tuple[float, float, int]:
    """Mean and sample std over the defined values, with their count."""
    vals = np.array([v for v in values if v is not None and not math.isnan(v)], float)
    if vals.size == 0:
        return math.nan, math.nan, 0
    std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return float(vals.mean()), std, int(vals.size)


def fmt_mean_std(values: Sequence[Optional[float]], fmt: str = "{:.4f}") -> str:
    """'0.6856 ± 0.0827', or 'undefined' when no value is defined."""
    mean, std, n = mean_std(values)
    if n == 0:
        return "undefined"
    return f"{fmt.format(mean)} ± {fmt.format(std)}"


def get_recent_file(srcdir: pathT, pattern: str = "*") -> Path:
    """Most recently modified file of srcdir matching the glob pattern."""
    files = [f for f in Path(srcdir).glob(pattern) if f.is_file()]
    if not files:
        logger.warning(f"srcdir={srcdir} et pattern={pattern}")
        raise FileNotFoundError(f"no file matching {pattern} in {srcdir}")
    return max(files, key=lambda f: f.stat().st_mtime)
