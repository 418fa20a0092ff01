import math

import pytest

from backend.cache import rate_cache
from core_model import Cell, Rect
from radio_model import (
    MIN_DISTANCE, Conservatism, RadioError, RadioParams, bits_per_rb_at, bits_per_rb_down, bits_per_rb_up,
    link_distance, noise_power_dbm, path_loss, precompute_rate_tables, snr_db,
)


def test_path_loss_reference_values():
    params = RadioParams()
    # only beta remains at 1 m and 1 GHz
    assert path_loss(1.0, 1.0, params) == pytest.approx(7.6)
    # 36*2 + 7.6 + 20*log10(2.6)
    assert path_loss(100.0, 2.6, params) == pytest.approx(72 + 7.6 + 20 * math.log10(2.6))


def test_path_loss_rejects_non_positive_inputs():
    with pytest.raises(RadioError):
        path_loss(0.0, 2.6, RadioParams())
    with pytest.raises(RadioError):
        path_loss(10.0, -1.0, RadioParams())


def test_noise_power_for_200khz():
    assert noise_power_dbm(RadioParams()) == pytest.approx(-174 + 10 * math.log10(0.2e6))


def test_bits_per_rb_downlink_at_100m():
    params = RadioParams()
    snr = 43 + 15 + 3 - path_loss(100.0, 2.6, params) - noise_power_dbm(params)
    assert snr_db(100.0, "down", params) == pytest.approx(snr)
    expected = 0.2e6 * math.log2(1 + 10 ** (snr / 10))
    assert bits_per_rb_at(100.0, "down", params) == pytest.approx(expected)


def test_uplink_budget_is_smaller_than_downlink():
    params = RadioParams()
    # 23 + 3 + 15 dB up against 43 + 15 + 3 dB down
    assert snr_db(250.0, "down", params) - snr_db(250.0, "up", params) == pytest.approx(20.0)
    assert bits_per_rb_at(250.0, "up", params) < bits_per_rb_at(250.0, "down", params)


def test_rate_decreases_with_distance():
    params = RadioParams()
    rates = [bits_per_rb_at(d, "down", params) for d in (10.0, 100.0, 1000.0)]
    assert rates[0] > rates[1] > rates[2] > 0


def test_unknown_direction():
    with pytest.raises(RadioError):
        snr_db(10.0, "sideways", RadioParams())


def test_distance_is_clamped_when_rrh_stands_on_the_cell_center():
    cell = Cell(0, Rect(0, 0, 90, 103))
    assert link_distance((45.0, 51.5), cell, RadioParams()) == MIN_DISTANCE


def test_worst_corner_uses_the_farthest_corner():
    cell = Cell(0, Rect(0, 0, 90, 103))
    params = RadioParams(conservatism=Conservatism.WORST_CORNER)
    assert link_distance((0.0, 0.0), cell, params) == pytest.approx(math.hypot(90, 103))
    center = RadioParams()
    assert bits_per_rb_down((0.0, 0.0), cell, params) < bits_per_rb_down((0.0, 0.0), cell, center)


def test_radio_params_validation():
    with pytest.raises(RadioError):
        RadioParams(rb_bandwidth=0)
    with pytest.raises(RadioError):
        RadioParams(carrier_freq=0)
    with pytest.raises(ValueError):
        RadioParams(conservatism="average")


def test_rate_cache_reuses_entries():
    params = RadioParams()
    cell = Cell(0, Rect(0, 0, 90, 103))
    bits_per_rb_up((500.0, 0.0), cell, params)
    hits = rate_cache.hits
    bits_per_rb_up((500.0, 0.0), cell, params)
    assert rate_cache.hits == hits + 1


def test_precompute_rate_tables(tiny_infra, tiny_slice_list):
    tables = precompute_rate_tables(tiny_infra, tiny_slice_list, RadioParams())
    assert tables.rrh_ids == ("rrh0", "rrh1")
    assert tables.covers(tiny_slice_list)
    video = tiny_slice_list[0]
    assert tables.table("down", "video").shape == (2, len(video.cells))
    # rrh0 stands on cell 0, rrh1 on cell 3
    assert tables.rate("down", "video", "rrh0", 0) > tables.rate("down", "video", "rrh0", 3)
    assert tables.rate("up", "video", "rrh1", 3) == pytest.approx(bits_per_rb_at(MIN_DISTANCE, "up", RadioParams()))
    with pytest.raises(RadioError):
        tables.table("up", "unknown")
