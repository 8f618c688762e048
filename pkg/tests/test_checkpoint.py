# -*- coding: utf-8 -*-
import math
import struct

import numpy as np
import pytest

from progDilUNet.arch import NetSpec, build
from progDilUNet.checkpoint import (
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    restore_model,
    restore_training,
    save_checkpoint,
    snapshot,
)
from progDilUNet.exceptions import FormatError
from progDilUNet.layers import softmax_xent
from progDilUNet.optim import Adam, PlateauSchedule, schedule_update


@pytest.fixture
def trained():
    """Small model after one optimizer step, with its training state."""
    model = build(NetSpec("unet_progressive", base_width=2, input_size=32), seed=1)
    opt = Adam(model.parameters(), lr=1e-3)
    sched = PlateauSchedule(lr=1e-3, patience=2)
    rng = np.random.default_rng(8)
    x = rng.random((2, 1, 32, 32))
    y = rng.integers(0, 4, (2, 32, 32))
    model.zero_grad()
    _, g = softmax_xent(model.forward(x), y)
    model.backward(g.data)
    opt.step()
    schedule_update(sched, 0.4)
    schedule_update(sched, 0.3)
    return model, opt, sched, rng


def test_roundtrip_is_bit_exact(trained):
    model, opt, sched, rng = trained
    ckpt = snapshot(model, opt, sched, epoch=3, best_dsc=0.75, rng=rng)
    back = decode_checkpoint(encode_checkpoint(ckpt))
    assert back.spec == model.spec
    assert back.epoch == 3 and back.best_dsc == 0.75
    assert back.tensors.keys() == ckpt.tensors.keys()
    assert all(np.array_equal(back.tensors[k], v) and back.tensors[k].dtype == v.dtype
               for k, v in ckpt.tensors.items())
    assert all(np.array_equal(back.moments[k], v) for k, v in ckpt.moments.items())
    assert back.state == ckpt.state
    assert back.checksum() == ckpt.checksum()


def test_layout_head(trained):
    model, opt, sched, rng = trained
    buf = encode_checkpoint(snapshot(model, opt, sched, 1, None, rng))
    assert buf[:4] == b"DLCK"
    version, n = struct.unpack_from("<II", buf, 4)
    assert version == 1
    assert buf[12:12 + n].decode().startswith("name = unet_progressive\n")


def test_missing_best_is_nan(trained):
    model = trained[0]
    back = decode_checkpoint(encode_checkpoint(snapshot(model)))
    assert math.isnan(back.best_dsc)
    assert back.moments == {}


def test_restore_model_and_training(tmp_path, trained):
    model, opt, sched, rng = trained
    fname = save_checkpoint(tmp_path / "ck" / "last.dlck", snapshot(model, opt, sched, 2, 0.4, rng))
    assert not list(fname.parent.glob("*.tmp"))
    ckpt = load_checkpoint(fname)

    clone = restore_model(ckpt)
    for k, t in model.parameters().items():
        assert np.array_equal(clone.parameters()[k].data, t.data)
    for k, t in model.buffers().items():
        assert np.array_equal(clone.buffers()[k].data, t.data)

    opt2 = Adam(clone.parameters(), lr=1.0)
    sched2 = PlateauSchedule()
    rng2 = restore_training(ckpt, clone, opt2, sched2)
    assert opt2.t == opt.t == 1
    assert opt2.lr == opt.lr
    assert sched2.state() == sched.state()
    assert rng2.random() == rng.random()
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(opt2.moments(), opt.moments()))


def test_restored_model_predicts_the_same(trained):
    model = trained[0].eval()
    clone = restore_model(decode_checkpoint(encode_checkpoint(snapshot(model)))).eval()
    x = np.random.default_rng(0).random((1, 1, 32, 32))
    assert np.array_equal(clone.forward(x), model.forward(x))


def test_corrupt_files(tmp_path, trained):
    buf = encode_checkpoint(snapshot(trained[0]))
    with pytest.raises(FormatError):
        decode_checkpoint(b"NOPE" + buf[4:])
    with pytest.raises(FormatError):
        decode_checkpoint(buf[:4] + struct.pack("<I", 99) + buf[8:])
    with pytest.raises(FormatError):
        decode_checkpoint(buf[: len(buf) // 2])
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none.dlck")
