# -*- coding: utf-8 -*-
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from progDilUNet.arch import NetSpec, build
from progDilUNet.exceptions import DomainError, UnsupportedConfiguration
from progDilUNet.rfield import (
    ACCOUNTINGS,
    compose_rf,
    effective_kernel,
    gridding_coverage,
    gridding_map,
    dilation_pair,
    network_rf,
    rf_summary,
    schedule,
)
from progDilUNet.settings import REPORTED_RF, RF_TOLERANCE


@pytest.mark.parametrize("k,D,eff", [(3, 1, 3), (3, 2, 5), (3, 4, 9), (3, 8, 17), (1, 8, 1)])
def test_effective_kernel(k, D, eff):
    assert effective_kernel(k, D) == eff


@pytest.mark.parametrize("k,D", [(0, 1), (3, 0), (-1, 2)])
def test_effective_kernel_domain(k, D):
    with pytest.raises(DomainError):
        effective_kernel(k, D)


@pytest.mark.parametrize(
    "layers,rf",
    [
        (schedule((1, 2, 4)), 15),
        (schedule((2, 2, 2)), 13),
        ([(3, 8, 1)], 17),
        ([(3, 1, 2), (3, 1, 1)], 7),
    ],
)
def test_compose_rf(layers, rf):
    assert compose_rf(layers).rf == rf


def test_compose_rf_upsampling_jump():
    rep = compose_rf([(3, 1, 2), (1, 1, Fraction(1, 2))])
    assert rep.jump == 1
    assert rep.contributing is None


def test_compose_rf_empty():
    with pytest.raises(DomainError):
        compose_rf([])


def test_report_frame():
    df = compose_rf(schedule((1, 2, 4)), ["a", "b", "c"]).to_frame()
    assert df.layer.tolist() == ["a", "b", "c"]
    assert df.cum_rf.tolist() == [3, 7, 15]
    assert df.eff_kernel.tolist() == [3, 5, 9]


@pytest.mark.parametrize(
    "dilations,contributing,window",
    [((2, 2, 2), 49, 169), ((1, 2, 4), 225, 225), ((1,), 9, 9)],
)
def test_gridding_coverage(dilations, contributing, window):
    assert gridding_coverage(schedule(dilations)) == (contributing, window)


def test_gridding_map_even_offsets():
    m = gridding_map(schedule((2, 2, 2)))
    assert m.shape == (13, 13)
    assert m[::2, ::2].all()
    assert not m[1::2, :].any()


def test_coverage_needs_stride_one():
    with pytest.raises(UnsupportedConfiguration):
        gridding_coverage([(3, 1, 2)])


def _impulse_reach(dilations):
    """Offsets from the origin reached by repeated dilated 1D box filters."""
    size = 2 * sum(dilations) + 1
    line = np.zeros(size)
    line[size // 2] = 1.0
    for d in dilations:
        out = np.zeros_like(line)
        for u in (-d, 0, d):
            out += np.roll(line, u)
        line = out
    return int(np.count_nonzero(line))


@given(st.lists(st.integers(1, 6), min_size=1, max_size=4))
def test_coverage_matches_impulse(dilations):
    contributing, window = gridding_coverage(schedule(dilations))
    reach = _impulse_reach(dilations)
    assert contributing == reach ** 2
    assert window == (2 * sum(dilations) + 1) ** 2


@pytest.mark.parametrize("name", ["unet_progressive", "unet_dilated"])
def test_network_rf_near_reported(name):
    rf = network_rf(NetSpec(name)).rf
    assert REPORTED_RF * (1 - RF_TOLERANCE) <= rf <= REPORTED_RF * (1 + RF_TOLERANCE)


def test_network_rf_values():
    rf = {n: network_rf(NetSpec(n)).rf for n in ("unet_progressive", "unet_dilated", "unet_baseline")}
    assert rf == {"unet_progressive": 241, "unet_dilated": 261, "unet_baseline": 121}
    assert rf["unet_baseline"] < rf["unet_progressive"]


def test_accountings_are_monotone():
    spec = NetSpec("unet_progressive")
    values = [network_rf(spec, acc).rf for acc in ACCOUNTINGS]
    assert values == sorted(values)
    assert values == [241, 305, 369]


def test_network_rf_accepts_built_model():
    spec = NetSpec("unet_baseline", base_width=1)
    assert network_rf(build(spec)).rf == network_rf(spec).rf


def test_network_rf_unknown_accounting():
    with pytest.raises(DomainError):
        network_rf(NetSpec("unet_progressive"), "everything")


def test_rf_summary_text():
    text = rf_summary(NetSpec("unet_progressive"))
    assert "rf[encoder] = 241" in text
    assert "inside" in text


@pytest.mark.parametrize("name", ["unet_progressive", "unet_dilated"])
def test_progressive_and_dilated_headlines_reported(name):
    assert dilation_pair(NetSpec(name)) == (241, 261)
    assert "progressive vs dilated: 241 vs 261 (differ)" in rf_summary(NetSpec(name))


def test_dilation_pair_only_for_dilated_models():
    assert dilation_pair(NetSpec("unet_baseline")) is None
    assert dilation_pair(NetSpec("unet_progressive", depth=5, input_size=64)) is None
    assert "progressive vs dilated" not in rf_summary(NetSpec("unet_original"))
