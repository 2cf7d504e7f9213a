import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlcloc.simlab import (Protocol, SensorModel, default_lamps, dimmed, generate_corpus,
                           noiseless_array, sample_readings)
from vlcloc.spectra import (CHANNELS, CSV_HEADER, Dataset, LabeledSample, Position, Provenance,
                            Spectrum, SpectrumError, canonical_order, load_csv, mean_spectrum,
                            normalize_to_anchor, pattern_distinctness, save_csv,
                            strip_coordinates)

from conftest import make_spectrum

counts = st.floats(min_value=0, max_value=65535, allow_nan=False)
spectra_st = st.lists(counts, min_size=11, max_size=11).map(lambda v: Spectrum(tuple(v)))
samples_st = st.builds(
    LabeledSample, spectra_st,
    st.builds(Position, st.floats(-1e4, 1e4), st.floats(-1e4, 1e4)),
    st.one_of(st.none(), st.integers(0, 41)), st.integers(0, 200))


def test_spectrum_invariants():
    with pytest.raises(SpectrumError):
        Spectrum((1.0,) * 10)
    with pytest.raises(SpectrumError, match="F3"):
        make_spectrum(1, 2, -0.5)
    with pytest.raises(SpectrumError, match="Clear"):
        make_spectrum(*([0] * 8), float("nan"))
    with pytest.raises(SpectrumError):
        make_spectrum(70000)


def _csv(rows, header=",".join(CSV_HEADER)):
    return header + "\n" + "\n".join(rows) + "\n"


def test_load_sorts_rows(tmp_path):
    rows = ["1,1,1,1,1,1,1,1,1,1,1,300,10,2,0",
            "2,2,2,2,2,2,2,2,2,2,2,50,700,0,1",
            "3,3,3,3,3,3,3,3,3,3,3,50,700,0,0",
            "4,4,4,4,4,4,4,4,4,4,4,50,100,1,0"]
    p = tmp_path / "c.csv"
    p.write_text(_csv(rows))
    ds = load_csv(p)
    keys = [(s.position.x, s.position.y, s.rp_id, s.seq) for s in ds]
    assert keys == [(50, 100, 1, 0), (50, 700, 0, 0), (50, 700, 0, 1), (300, 10, 2, 0)]
    assert ds.samples[1].spectrum["F1"] == 3.0


def test_load_corpus_count(tmp_path, default_corpus):
    save_csv(default_corpus, tmp_path / "corpus.csv")
    assert len(load_csv(tmp_path / "corpus.csv")) == 5040


def test_load_negative_value_names_row_and_channel(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text(_csv(["1,1,1,1,1,1,1,1,1,1,1,0,0,0,0",
                       "1,1,1,1,-3,1,1,1,1,1,1,0,0,0,1"]))
    with pytest.raises(SpectrumError, match=r"row 3, column F5"):
        load_csv(p)


@pytest.mark.parametrize("header,row,pattern", [
    (",".join(CSV_HEADER[:-5] + ("x", "y", "rp_id", "seq")), "1,1,1,1,1,1,1,1,1,1,0,0,0,0",
     "missing header"),
    (",".join(CSV_HEADER + ("colour",)), "1,1,1,1,1,1,1,1,1,1,1,0,0,0,0,red", "unknown header"),
    (",".join(CSV_HEADER), "1,1,1,abc,1,1,1,1,1,1,1,0,0,0,0", r"row 2, column F4: non-numeric"),
    (",".join(CSV_HEADER), "1,1,1,1,1,1,1,1,1,inf,1,0,0,0,0", r"row 2, column NIR"),
])
def test_load_errors(tmp_path, header, row, pattern):
    p = tmp_path / "bad.csv"
    p.write_text(_csv([row], header))
    with pytest.raises(SpectrumError, match=pattern):
        load_csv(p)


def test_save_load_roundtrip(tmp_path, default_corpus):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    save_csv(default_corpus, a)
    ds = load_csv(a, Provenance.SIMULATED)
    assert ds == default_corpus
    save_csv(ds, b)
    assert a.read_bytes() == b.read_bytes()


def test_save_empty_writes_header_only(tmp_path):
    p = tmp_path / "e.csv"
    save_csv(Dataset(()), p)
    assert p.read_text() == ",".join(CSV_HEADER) + "\n"
    assert len(load_csv(p)) == 0


def test_save_single_sample(tmp_path):
    p = tmp_path / "one.csv"
    save_csv(Dataset((LabeledSample(make_spectrum(5), Position(0, 0), 0, 0),)), p)
    data = p.read_bytes()
    assert b"\r" not in data
    lines = data.decode().splitlines()
    assert len(lines) == 2
    assert len(lines[0].split(",")) == 15
    assert len(lines[1].split(",")) == 15


def test_empty_rp_id_roundtrip(tmp_path):
    p = tmp_path / "s.csv"
    ds = Dataset((LabeledSample(make_spectrum(1.5), Position(10.25, 3), None, 7),),
                 Provenance.SYNTHETIC)
    save_csv(ds, p)
    assert p.read_text().splitlines()[1].endswith(",10.25,3.0,,7")
    assert load_csv(p, Provenance.SYNTHETIC) == ds


@settings(max_examples=30, deadline=None)
@given(st.lists(samples_st, max_size=20))
def test_roundtrip_property(tmp_path_factory, samples):
    d = tmp_path_factory.mktemp("rt")
    ds = Dataset(tuple(samples))
    save_csv(ds, d / "a.csv")
    again = load_csv(d / "a.csv")
    assert again == ds
    save_csv(again, d / "b.csv")
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()


@given(st.lists(samples_st, max_size=30))
def test_canonical_order_idempotent(samples):
    once = canonical_order(samples)
    assert canonical_order(once) == once
    keys = [(s.position.x, s.position.y) for s in once]
    assert keys == sorted(keys)


def test_strip_coordinates(default_corpus, small_dataset):
    assert len(strip_coordinates(default_corpus)) == 5040
    assert strip_coordinates(Dataset(())) == []
    one = Dataset(small_dataset.samples[:1])
    assert strip_coordinates(one)[0].channels == one.samples[0].spectrum.channels
    assert strip_coordinates(small_dataset) == [s.spectrum for s in small_dataset]


def test_mean_spectrum_examples():
    s = make_spectrum(*range(11))
    assert mean_spectrum([s] * 100) == s
    a = make_spectrum(*([0] * 8), 100)
    b = make_spectrum(*([0] * 8), 300)
    assert mean_spectrum([a, b])["Clear"] == 200.0
    with pytest.raises(SpectrumError):
        mean_spectrum([])


def test_mean_spectrum_of_simulated_draws(room):
    _, layout = room
    lamps, sensor = default_lamps(), SensorModel()
    p = layout.points[10]
    clean = noiseless_array(lamps, sensor, p)
    rows = sample_readings(lamps, sensor, p, 100, rng_seed=11)
    mean = mean_spectrum([Spectrum.from_array(r) for r in rows]).to_array()
    se = sensor.noise_rel * clean / np.sqrt(100)
    assert np.all(np.abs(mean - clean) <= 3 * se + 0.5)  # 0.5 allows for integer rounding


@given(st.lists(spectra_st, min_size=1, max_size=12), st.randoms())
def test_mean_spectrum_permutation_invariant(spectra, rnd):
    shuffled = list(spectra)
    rnd.shuffle(shuffled)
    assert mean_spectrum(shuffled) == mean_spectrum(spectra)


def test_pattern_distinctness_examples():
    a = make_spectrum(3, 1, 4, 1, 5, 9, 2, 6, 100, 7, 3)
    assert pattern_distinctness(a, a) == pytest.approx(0.0, abs=1e-15)
    assert pattern_distinctness(make_spectrum(1), make_spectrum(0, 1)) == 1.0
    assert pattern_distinctness(make_spectrum(), a) == 0.0


@given(spectra_st, spectra_st)
def test_pattern_distinctness_symmetric_bounded(a, b):
    d = pattern_distinctness(a, b)
    assert d == pattern_distinctness(b, a)
    assert 0.0 <= d <= 2.0


def test_pattern_distinctness_separates_locations(room):
    _, layout = room
    lamps, sensor = default_lamps(), SensorModel()
    pa = next(p for p in layout.points if (p.x, p.y) == (50.0, 730.0))
    pb = next(p for p in layout.points if (p.x, p.y) == (550.0, 730.0))
    assert pa.distance(pb) >= 200
    wins = 0
    for seed in range(100):
        a1, a2 = sample_readings(lamps, sensor, pa, 2, rng_seed=seed)
        (b1,) = sample_readings(lamps, sensor, pb, 1, rng_seed=10_000 + seed)
        same = pattern_distinctness(Spectrum.from_array(a1), Spectrum.from_array(a2))
        apart = pattern_distinctness(Spectrum.from_array(a1), Spectrum.from_array(b1))
        wins += apart > same
    assert wins >= 95


def test_normalize_identity_and_doubling(small_dataset):
    anchor = make_spectrum(*range(1, 12))
    assert normalize_to_anchor(small_dataset, anchor, anchor) == small_dataset
    half = Spectrum.from_array(anchor.to_array() / 2)
    small = Dataset(tuple(LabeledSample(Spectrum.from_array(np.minimum(s.spectrum.to_array(), 30000)),
                                        s.position, s.rp_id, s.seq) for s in small_dataset))
    out = normalize_to_anchor(small, anchor, half)
    for before, after in zip(small, out):
        b, a = before.spectrum.to_array(), after.spectrum.to_array()
        assert np.array_equal(a[:10], 2 * b[:10])
        assert a[10] == b[10]  # Flicker passes through


def test_normalize_errors(small_dataset):
    anchor = make_spectrum(*range(1, 12))
    with pytest.raises(SpectrumError, match="F1"):
        normalize_to_anchor(small_dataset, anchor, make_spectrum(0, *range(2, 12)))
    # a zero Flicker anchor is fine: Flicker is not scaled
    normalize_to_anchor(small_dataset, anchor, make_spectrum(*range(1, 11), 0))
    big = Spectrum.from_array(anchor.to_array() * 1000)
    with pytest.raises(SpectrumError, match="out of range"):
        normalize_to_anchor(small_dataset, big, anchor)


@given(st.lists(samples_st, max_size=10), spectra_st.filter(lambda s: min(s.channels[:10]) > 0))
def test_normalize_identity_property(samples, anchor):
    ds = Dataset(tuple(samples))
    assert normalize_to_anchor(ds, anchor, anchor) == ds


def test_normalize_recovers_dimmed_session(room):
    poly, layout = room
    lamps, sensor = default_lamps(), SensorModel()
    day1 = generate_corpus(poly, layout, lamps, sensor, Protocol(), seed=5)
    day2 = generate_corpus(poly, layout, dimmed(lamps, 0.8), sensor, Protocol(), seed=6)
    anchor = layout.points[20]
    ref = Spectrum.from_array(sample_readings(lamps, sensor, anchor, 200, 7).mean(axis=0))
    now = Spectrum.from_array(sample_readings(dimmed(lamps, 0.8), sensor, anchor, 200, 8).mean(axis=0))
    fixed = normalize_to_anchor(day2, ref, now)
    m1 = day1.features().mean(axis=0)
    rel = np.abs(fixed.features().mean(axis=0) - m1) / m1
    raw = np.abs(day2.features().mean(axis=0) - m1) / m1
    assert rel.mean() < 0.01
    assert raw[:10].mean() > 0.1
