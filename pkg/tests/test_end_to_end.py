# -*- coding: utf-8 -*-
"""Phantom training runs, enabled with --runslow."""
import numpy as np
import pytest

from progDilUNet.checkpoint import load_checkpoint, restore_model
from progDilUNet.loader import open_split, write_dataset
from progDilUNet.phantom import PhantomConfig, generate, split
from progDilUNet.trainer import RunConfig, class_means, evaluate_split, read_log, time_inference, train

pytestmark = pytest.mark.slow

EPOCHS = 40
BASE_WIDTH = 8


@pytest.fixture(scope="module")
def phantoms(tmp_path_factory):
    folder = tmp_path_factory.mktemp("e2e")
    samples = generate(PhantomConfig(seed=0), 200, workers=4)
    parts = split([s.id for s in samples], seed=0, counts=(140, 20, 40))
    split_of = {sid: name for name, part in zip(("train", "val", "test"), parts) for sid in part}
    write_dataset(folder, samples, split_of)
    return folder


@pytest.fixture(scope="module")
def results(phantoms, tmp_path_factory):
    res = {}
    for name in ("unet_progressive", "unet_baseline"):
        cfg = RunConfig(model=name, dataset=str(phantoms), epochs=EPOCHS, seed=0,
                        base_width=BASE_WIDTH, checkpoint_dir=str(tmp_path_factory.mktemp(name)))
        train(cfg)
        model = restore_model(load_checkpoint(cfg.best_file))
        test = open_split(phantoms, "test")
        val_dsc = np.nanmean(list(class_means(evaluate_split(model, open_split(phantoms, "val"))).values()))
        logged = read_log(cfg.log_file).mean_dsc.max()
        timing = np.mean(time_inference(model, test))
        res[name] = (class_means(evaluate_split(model, test)), timing, val_dsc, logged)
    return res


def test_progressive_reaches_dsc_thresholds(results):
    means = results["unet_progressive"][0]
    assert means["lumen"] >= 0.90
    assert means["wall"] >= 0.75
    assert means["tumor"] >= 0.60


def test_progressive_not_worse_on_tumors(results):
    assert results["unet_progressive"][0]["tumor"] >= results["unet_baseline"][0]["tumor"]


def test_inference_time_same_order(results):
    assert results["unet_progressive"][1] < 2 * results["unet_baseline"][1]


def test_best_checkpoint_matches_its_log(results):
    for name, (_, _, val_dsc, logged) in results.items():
        assert val_dsc >= logged - 0.05, name
