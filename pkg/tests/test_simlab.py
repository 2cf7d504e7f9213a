import numpy as np
import pytest

from vlcloc.geometry import RoomPolygon, default_room, grid_layout
from vlcloc.simlab import (Lamp, Protocol, SensorModel, SimulationError, default_lamps,
                           generate_corpus, noiseless_array, noiseless_reading, sample_reading,
                           sample_readings)
from vlcloc.spectra import ADC_MAX, FLICKER, Position, save_csv

AMBIENT = tuple(float(i) for i in range(11))


def unit_f1_lamp(x=0.0, y=0.0, z=250.0, m=1.0):
    return Lamp((x, y, z), (1.0,) + (0.0,) * 10, m)


def test_overhead_lamp_inverse_square():
    h = 250.0
    sensor = SensorModel(height_cm=0.0, noise_rel=0.0, ambient=AMBIENT)
    s = noiseless_reading([unit_f1_lamp(z=h)], sensor, Position(0, 0))
    assert s["F1"] == pytest.approx(AMBIENT[0] + 1 / h ** 2, rel=1e-15)
    assert s.channels[1:] == AMBIENT[1:]


def test_zero_emission_gives_ambient():
    sensor = SensorModel(ambient=AMBIENT)
    dark = Lamp((100, 100, 280), (0.0,) * 11)
    assert noiseless_reading([dark], sensor, Position(300, 20)).channels == AMBIENT


def test_off_axis_lambertian_gain():
    # theta with cos = 3/5: gain = cos^m * cos / d^2
    sensor = SensorModel(noise_rel=0.0, ambient=(0.0,) * 11)
    lamp = unit_f1_lamp(z=300.0, m=2.0)
    val = noiseless_array([lamp], sensor, (400.0, 0.0))[0]
    assert val == pytest.approx(0.6 ** 3 / 500.0 ** 2, rel=1e-12)


def test_symmetric_lamps_swap_invariance():
    sensor = SensorModel(ambient=AMBIENT)
    em_a = tuple(float(v) for v in range(1, 12))
    em_b = tuple(float(v) for v in range(11, 0, -1))
    axis = 300.0
    a = [Lamp((axis - 120, 400, 280), em_a), Lamp((axis + 120, 400, 280), em_b)]
    b = [Lamp((axis + 120, 400, 280), em_a), Lamp((axis - 120, 400, 280), em_b)]
    ra = noiseless_array(a, sensor, (axis, 250.0))
    rb = noiseless_array(b, sensor, (axis, 250.0))
    np.testing.assert_allclose(ra, rb, rtol=1e-12)


def test_flicker_is_location_independent():
    lamps, sensor = default_lamps(), SensorModel()
    vals = {noiseless_array(lamps, sensor, p)[FLICKER] for p in default_room()[1].points}
    assert len(vals) == 1


def test_monotonic_radial_falloff():
    sensor = SensorModel(noise_rel=0.0)
    lamp = Lamp((0.0, 0.0, 280.0), tuple(float(v) for v in range(1, 12)) , 1.0)
    prev = None
    for r in np.linspace(0, 1000, 201):
        cur = noiseless_array([lamp], sensor, (r * 0.6, r * 0.8))[:8]
        if prev is not None:
            assert np.all(cur <= prev)
        prev = cur


def test_reading_errors():
    sensor = SensorModel(height_cm=100.0)
    with pytest.raises(SimulationError, match="coincides"):
        noiseless_reading([Lamp((5, 5, 100), (1.0,) * 11)], sensor, (5, 5))
    with pytest.raises(SimulationError):
        noiseless_reading([], sensor, (5, 5))
    with pytest.raises(SimulationError):
        Lamp((0, 0, 0), (1.0,) * 11)
    with pytest.raises(SimulationError):
        SensorModel(noise_rel=1.0)


def test_adc_clamp():
    sensor = SensorModel(noise_rel=0.0)
    bright = Lamp((0, 0, 10), (1e12,) * 11)
    assert noiseless_array([bright], sensor, (0, 0)).max() == ADC_MAX


def test_noise_free_sample_is_rounded_noiseless():
    lamps, sensor = default_lamps(), SensorModel(noise_rel=0.0)
    p = Position(123.4, 56.7)
    assert sample_reading(lamps, sensor, p, 3).to_array().tolist() == \
        np.rint(noiseless_array(lamps, sensor, p)).tolist()


def test_sample_determinism():
    lamps, sensor = default_lamps(), SensorModel()
    p = Position(50, 50)
    assert sample_reading(lamps, sensor, p, 42) == sample_reading(lamps, sensor, p, 42)
    assert sample_reading(lamps, sensor, p, 42) != sample_reading(lamps, sensor, p, 43)


def test_sample_mean_matches_noiseless():
    lamps, sensor = default_lamps(), SensorModel(noise_rel=0.02)
    p = Position(150, 475)
    clean = noiseless_array(lamps, sensor, p)[8]
    draws = sample_readings(lamps, sensor, p, 10_000, rng_seed=9)[:, 8]
    assert abs(draws.mean() - clean) <= 3 * 0.02 * clean / np.sqrt(10_000)


def test_corpus_sizes(room, default_corpus):
    poly, layout = room
    assert len(default_corpus) == 42 * 30 * 4 == 5040
    rps = default_corpus.rp_ids()
    assert all(rps.count(i) == 120 for i in range(42))
    one = generate_corpus(poly, layout.__class__(layout.points[:1]), default_lamps(),
                          SensorModel(), Protocol(1, 1), seed=0)
    assert len(one) == 1


@pytest.mark.parametrize("dwell,rate", [(30, 4), (10, 2), (3, 1)])
def test_corpus_size_law(dwell, rate):
    rect = RoomPolygon(((0, 0), (400, 0), (400, 300), (0, 300)))
    layout = grid_layout(rect, 50, 50, 100, 100)
    ds = generate_corpus(rect, layout, default_lamps(), SensorModel(), Protocol(dwell, rate), 0)
    assert len(ds) == len(layout) * dwell * rate
    X = ds.features()
    assert X.min() >= 0 and X.max() <= ADC_MAX


def test_protocol_requires_integer_count():
    with pytest.raises(SimulationError):
        Protocol(2.5, 1).samples_per_point


def test_corpus_determinism(tmp_path, room, default_corpus):
    poly, layout = room
    again = generate_corpus(poly, layout, default_lamps(), SensorModel(), Protocol(), seed=1)
    save_csv(default_corpus, tmp_path / "a.csv")
    save_csv(again, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
