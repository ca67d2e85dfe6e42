import numpy as np
import pytest

from knocknet.dataset import labels_from_votes
from knocknet.exceptions import ConfigurationError, ParseError
from knocknet.reference import mapo
from knocknet.signals import EngineGeometry, acoustic_mode_frequencies, sample_rate
from knocknet.synthetic import (
    SyntheticConfig,
    synthesize_cycles,
    synthesize_dataset,
    synthesize_study,
    three_engine_configs,
)


def cfg(**kw):
    base = dict(geometry=EngineGeometry(145.0), n_cycles=200, seed=3)
    base.update(kw)
    return SyntheticConfig(**base)


def test_deterministic():
    a = synthesize_dataset(cfg())
    b = synthesize_dataset(cfg())
    np.testing.assert_array_equal(a.windows, b.windows)
    np.testing.assert_array_equal(a.votes, b.votes)
    assert a.fingerprint() == b.fingerprint()
    assert synthesize_dataset(cfg(seed=4)).fingerprint() != a.fingerprint()


def test_shapes_and_physical_range():
    cycles, votes, targets, severity = synthesize_cycles(cfg(n_cycles=50))
    assert cycles.shape == (50, 7200) and votes.shape == (50, 5)
    assert np.all(np.isfinite(cycles)) and np.all(cycles >= 0)
    ds = synthesize_dataset(cfg(n_cycles=50))
    assert ds.windows.shape == (50, 600)
    # the pressure peak lies after TDC within the window
    peak_angle = 0.1 * np.argmax(ds.windows.mean(axis=0))
    assert 5.0 <= peak_angle <= 30.0


def test_votes_consistent_with_labels():
    ds = synthesize_dataset(cfg())
    for cyc in ds:
        rel, scaled, binary = labels_from_votes(cyc.votes)
        assert rel == cyc.relative_label and binary == cyc.binary_label


def test_all_normal_weights():
    c = cfg(class_weights=(1, 0, 0, 0, 0, 0), noise_level=0.05)
    ds = synthesize_dataset(c)
    assert np.all(ds.binary_labels == 0) and np.all(ds.votes == 0)
    _, _, targets, severity = synthesize_cycles(c)
    assert np.all(severity == 0)
    # nothing above the noise floor in the judging band
    assert np.max(mapo(ds.windows)) < 5 * c.noise_level


def test_severe_knock_has_larger_mapo():
    ds_hi = synthesize_dataset(cfg(class_weights=(0, 0, 0, 0, 0, 1), n_cycles=1000, seed=5))
    ds_lo = synthesize_dataset(cfg(class_weights=(1, 0, 0, 0, 0, 0), n_cycles=1000, seed=6))
    hi, lo = mapo(ds_hi.windows), mapo(ds_lo.windows)
    se = np.sqrt(hi.var() / len(hi) + lo.var() / len(lo))
    assert hi.mean() - lo.mean() > 5 * se


def test_knock_spectrum_peaks_at_first_mode():
    ds = synthesize_dataset(cfg(n_cycles=600, seed=8))
    knock = ds.windows[ds.binary_labels == 1]
    normal_mean = ds.windows[ds.binary_labels == 0].mean(axis=0)
    diff = knock - normal_mean
    diff = diff - diff.mean(axis=1, keepdims=True)
    n = 4096
    power = (np.abs(np.fft.rfft(diff, n)) ** 2).mean(axis=0)
    freqs = np.fft.rfftfreq(n, 1 / sample_rate())
    ok = freqs > 1000
    f_peak = freqs[ok][np.argmax(power[ok])]
    f1 = acoustic_mode_frequencies(EngineGeometry(145.0))[0].frequency_hz
    assert abs(f_peak - f1) <= 0.1 * f1


def test_class_frequencies_converge():
    w = np.array([3.0, 1, 1, 1, 1, 3])
    _, _, targets, _ = synthesize_cycles(cfg(class_weights=tuple(w), n_cycles=2000, seed=9))
    p = w / w.sum()
    freq = np.bincount(targets, minlength=6) / len(targets)
    se = np.sqrt(p * (1 - p) / len(targets))
    assert np.all(np.abs(freq - p) <= 3 * se)


def test_relative_labels_track_targets():
    _, votes, targets, _ = synthesize_cycles(cfg(n_cycles=2000, seed=10))
    rel = votes.sum(axis=1)
    for t in range(6):
        assert abs(rel[targets == t].mean() - t) < 0.5


@pytest.mark.parametrize("kw", [dict(n_cycles=0), dict(class_weights=(0,) * 6), dict(class_weights=(1, 2)),
                                dict(noise_level=-1), dict(knock_onset_range=(20, 8)), dict(n_modes=4)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        cfg(**kw)


def test_config_text_round_trip():
    c = cfg(knock_amplitude=1.7, subset_tag="C", class_weights=(1, 2, 3, 4, 5, 6))
    back = SyntheticConfig.from_text(c.to_text())
    assert back == c


def test_config_text_requires_bore():
    with pytest.raises(ConfigurationError):
        SyntheticConfig.from_text("n_cycles = 10\n")
    with pytest.raises(ParseError):
        SyntheticConfig.from_text("geometry.bore_mm = 145\nbogus = 1\n")


def test_study_layout():
    cfgs = three_engine_configs(seed=0)
    assert [c.subset_tag for c in cfgs] == ["A", "B", "C"]
    assert sum(c.n_cycles for c in cfgs) == 2880
    assert [c.geometry.bore_mm for c in cfgs] == [145.0, 145.0, 190.0]
    ds = synthesize_study(three_engine_configs(seed=0, scale=0.05))
    assert ds.tags == ["A", "B", "C"]
