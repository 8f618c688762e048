# -*- coding: utf-8 -*-
import struct

import numpy as np
import pandas as pd
import pytest

from progDilUNet.exceptions import FormatError
from progDilUNet.loader import (
    Dataset,
    decode_tensor,
    encode_tensor,
    load_image,
    load_labels,
    open_split,
    read_manifest,
    read_pgm,
    save_tensor,
    write_dataset,
    write_manifest,
    write_pgm,
)
from progDilUNet.metrics import LabelMap
from progDilUNet.phantom import PhantomConfig, generate
from progDilUNet.tensor import Tensor


@pytest.fixture(scope="module")
def samples():
    cfg = PhantomConfig(size=32, wall_thickness_range=(1.5, 2.5), apex_gain=0.4,
                        tumor_radius_range=(1.0, 2.0), seed=2)
    return generate(cfg, 6)


def test_container_layout():
    buf = encode_tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert buf[:4] == b"DLS1"
    assert buf[4] == 4
    assert struct.unpack_from("<4I", buf, 5) == (1, 1, 2, 3)
    assert buf[21] == 0x01
    assert len(buf) == 22 + 6 * 4


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.uint8])
def test_container_roundtrip(rng, dtype):
    arr = (rng.random((2, 3, 4, 5)) * 200).astype(dtype)
    got, end = decode_tensor(encode_tensor(arr))
    assert got.dtype == dtype
    assert np.array_equal(got, arr)
    assert end == len(encode_tensor(arr))


def test_container_sequence():
    a, b = np.ones((1, 1, 2, 2), np.float32), np.zeros((1, 1, 3, 1), np.uint8)
    buf = encode_tensor(a) + encode_tensor(b)
    got_a, pos = decode_tensor(buf)
    got_b, end = decode_tensor(buf, pos)
    assert np.array_equal(got_a, a) and np.array_equal(got_b, b)
    assert end == len(buf)


def test_container_errors():
    buf = encode_tensor(np.ones((1, 1, 2, 2), np.float32))
    with pytest.raises(FormatError):
        decode_tensor(b"XXXX" + buf[4:])
    with pytest.raises(FormatError):
        decode_tensor(buf[:-1])
    with pytest.raises(FormatError):
        decode_tensor(buf[:21] + b"\x09" + buf[22:])
    with pytest.raises(FormatError):
        encode_tensor(np.ones(3, dtype=np.int64))


def test_image_and_label_files(tmp_path, samples):
    s = samples[0]
    save_tensor(tmp_path / "img.dls", s.image)
    save_tensor(tmp_path / "lbl.dls", s.labels)
    img = load_image(tmp_path / "img.dls")
    lbl = load_labels(tmp_path / "lbl.dls")
    assert isinstance(img, Tensor) and np.array_equal(img.data, s.image.data)
    assert isinstance(lbl, LabelMap) and np.array_equal(lbl.grid, s.labels.grid)
    with pytest.raises(FormatError):
        load_labels(tmp_path / "img.dls")
    with pytest.raises(FormatError):
        load_image(tmp_path / "lbl.dls")


def test_pgm_roundtrip(tmp_path, rng):
    img = rng.random((5, 7))
    write_pgm(tmp_path / "a.pgm", img)
    got = read_pgm(tmp_path / "a.pgm")
    assert got.shape == (5, 7)
    assert np.array_equal(got, np.round(img * 255).astype(np.uint8))
    lbl = np.array([[0, 1], [2, 3]], np.uint8)
    write_pgm(tmp_path / "l.pgm", lbl, labels=True)
    assert read_pgm(tmp_path / "l.pgm").tolist() == [[0, 85], [170, 255]]
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "bad.pgm")


def test_manifest_roundtrip(tmp_path):
    df = pd.DataFrame({"id": ["0000", "0001"], "seed": [2 ** 40, 7], "split": ["train", "test"]})
    write_manifest(tmp_path, df)
    assert (tmp_path / "manifest.txt").read_text().splitlines() == [
        f"0000 {2 ** 40} train",
        "0001 7 test",
    ]
    back = read_manifest(tmp_path)
    assert back.id.tolist() == ["0000", "0001"]
    assert back.seed.tolist() == [2 ** 40, 7]
    (tmp_path / "manifest.txt").write_text("0000 1 holdout\n")
    with pytest.raises(FormatError):
        read_manifest(tmp_path)


def test_dataset_directory(tmp_path, samples):
    split_of = {s.id: "train" if s.index < 4 else "val" for s in samples}
    write_dataset(tmp_path, samples, split_of, preview=True)
    assert (tmp_path / "0000_img.dls").exists() and (tmp_path / "0000_lbl.pgm").exists()

    ds = Dataset(tmp_path)
    assert len(ds) == 6
    train = open_split(tmp_path, "train")
    assert train.ids == ["0000", "0001", "0002", "0003"]
    img, lbl = train[1]
    assert np.array_equal(img.data, samples[1].image.data)
    assert np.array_equal(lbl.grid, samples[1].labels.grid)
    assert [sid for sid, _, _ in open_split(tmp_path, "val")] == ["0004", "0005"]

    x, y = train.arrays([0, 2])
    assert x.shape == (2, 1, 32, 32) and x.dtype == np.float32
    assert y.shape == (2, 32, 32) and y.dtype == np.uint8
    assert np.array_equal(y[1], samples[2].labels.grid)

    with pytest.raises(FileNotFoundError):
        open_split(tmp_path, "test")
    with pytest.raises(FileNotFoundError):
        Dataset(tmp_path / "missing")
