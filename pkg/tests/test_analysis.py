import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import naive_dft_magnitude

from knocknet.analysis import (
    consensus_peak,
    dominant_peak,
    fft_radix2,
    first_layer_kernels,
    first_layer_spectrum,
    format_peak_table,
    hypothesis_check,
    kernel_spectrum,
    rfft_magnitude,
)
from knocknet.exceptions import ConfigurationError, ShapeError
from knocknet.nn import CROSS_CHANNEL, build_model
from knocknet.signals import EngineGeometry, acoustic_mode_frequencies, sample_rate

FS = sample_rate()
BIN = FS / 1024


def test_fft_matches_numpy(rng):
    x = rng.normal(size=(3, 256)) + 1j * rng.normal(size=(3, 256))
    np.testing.assert_allclose(fft_radix2(x), np.fft.fft(x), atol=1e-10)


@pytest.mark.parametrize("k", [1, 11, 30, 61])
def test_magnitudes_match_naive_dft(rng, k):
    x = rng.normal(size=k)
    np.testing.assert_allclose(rfft_magnitude(x, 1024), naive_dft_magnitude(x, 1024), rtol=0, atol=1e-9)


def test_non_power_of_two_rejected():
    with pytest.raises(ConfigurationError):
        fft_radix2(np.zeros(100))
    with pytest.raises(ConfigurationError):
        kernel_spectrum(np.zeros((2, 30)), zero_pad_length=16)
    with pytest.raises(ShapeError):
        kernel_spectrum(np.zeros((2, 3, 4)))


def test_spectrum_shape_and_axis(rng):
    spec = kernel_spectrum(rng.normal(size=(4, 11)))
    assert spec.magnitudes.shape == (4, 513)
    assert spec.frequencies[-1] == pytest.approx(FS / 2)
    assert spec.frequencies[1] == pytest.approx(BIN)
    assert np.all(spec.magnitudes >= 0)


def test_impulse_spectrum():
    impulse = np.zeros(11)
    impulse[0] = 1.0
    # raw transform is flat
    np.testing.assert_allclose(rfft_magnitude(impulse, 1024), 1.0, atol=1e-12)
    # the analysed spectrum removes the mean first
    centred = impulse - impulse.mean()
    np.testing.assert_allclose(kernel_spectrum(impulse).magnitudes[0], naive_dft_magnitude(centred, 1024), atol=1e-9)
    assert kernel_spectrum(impulse).magnitudes[0, 0] == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("k", [30, 90])
def test_tone_kernel_peaks_at_its_frequency(k):
    kernel = np.sin(2 * np.pi * 8000 * np.arange(k) / FS)
    f, _ = dominant_peak(kernel_spectrum(kernel), 0)
    assert abs(f - 8000) <= BIN


def test_zero_kernel_gives_zero_spectrum():
    spec = kernel_spectrum(np.zeros((2, 11)))
    np.testing.assert_array_equal(spec.magnitudes, 0)
    assert np.isnan(consensus_peak(spec)[0])


@given(arrays(np.float64, st.integers(1, 64), elements=st.floats(-10, 10)))
def test_parseval(kernel):
    centred = kernel - kernel.mean()
    full = np.abs(fft_radix2(np.concatenate([centred, np.zeros(1024 - len(centred))])))
    energy = np.sum(centred ** 2)
    assert np.sum(full ** 2) == pytest.approx(1024 * energy, rel=1e-9, abs=1e-9)
    # the one-sided spectrum holds the same energy
    half = kernel_spectrum(kernel).magnitudes[0]
    one_sided = half[0] ** 2 + half[-1] ** 2 + 2 * np.sum(half[1:-1] ** 2)
    assert one_sided == pytest.approx(1024 * energy, rel=1e-9, abs=1e-9)


@given(arrays(np.float64, 11, elements=st.floats(-5, 5)), st.floats(0.01, 100), st.floats(-50, 50))
def test_amplitude_scaling_and_offset(kernel, c, offset):
    a = kernel_spectrum(kernel).magnitudes
    b = kernel_spectrum(c * kernel + offset).magnitudes
    np.testing.assert_allclose(b, c * a, rtol=1e-9, atol=1e-9)


def mainlobe_width(k):
    kernel = np.sin(2 * np.pi * 8000 * np.arange(k) / FS)
    mags = kernel_spectrum(kernel, zero_pad_length=8192).magnitudes[0]
    peak = int(np.argmax(mags))
    lo = peak
    while lo > 0 and mags[lo - 1] < mags[lo]:
        lo -= 1
    hi = peak
    while hi < len(mags) - 1 and mags[hi + 1] < mags[hi]:
        hi += 1
    return (hi - lo) * FS / 8192


def test_mainlobe_width_scales_inversely_with_kernel_size():
    # first nulls of a rectangular window lie at +-fs/k; kernels hold whole
    # cycles so the negative-frequency image does not shift them
    for k in (45, 90, 135):
        assert mainlobe_width(k) == pytest.approx(2 * FS / k, abs=BIN)
    assert mainlobe_width(11) > mainlobe_width(30) > mainlobe_width(90)


def test_first_layer_views():
    shared = build_model(11, seed=0)
    cross = build_model(11, mode=CROSS_CHANNEL, seed=0)
    assert first_layer_kernels(shared).shape == (4, 11)
    assert first_layer_kernels(cross).shape == (4, 11)
    spec = first_layer_spectrum(shared)
    assert spec.kernel_size == 11 and spec.n_channels == 4
    text = spec.to_csv()
    assert text.splitlines()[0] == "frequency_hz,channel_0,channel_1,channel_2,channel_3,channel_mean"
    assert len(text.splitlines()) == 514
    assert len(format_peak_table(spec).splitlines()) == 5


def test_consensus_is_magnitude_weighted():
    k = 30
    t = np.arange(k) / FS
    kernels = np.array([np.sin(2 * np.pi * 5000 * t), 3 * np.sin(2 * np.pi * 8000 * t)])
    c, peaks = consensus_peak(kernel_spectrum(kernels))
    assert c == pytest.approx((peaks[:, 0] @ peaks[:, 1]) / peaks[:, 1].sum())
    assert peaks[0, 0] < c < peaks[1, 0]


def _net_with_tone(freq, k=30):
    net = build_model(k, seed=0)
    tone = np.sin(2 * np.pi * freq * np.arange(k) / FS)
    net.params["conv1"][...] = tone - tone.mean()
    return net


def test_hypothesis_check_on_planted_mode():
    geom = EngineGeometry(145)
    mode = acoustic_mode_frequencies(geom)[0].frequency_hz
    res = hypothesis_check(_net_with_tone(mode), geom, tolerance_fraction=0.15)
    assert res.passed and res.nearest_mode_hz == pytest.approx(mode)
    assert res.summary().startswith("PASS")
    miss = hypothesis_check(_net_with_tone(20000), geom, tolerance_fraction=0.15, n_modes=1)
    assert not miss.passed


@given(st.floats(600, 2 * 11000))
def test_tolerance_one_passes_below_twice_the_top_mode(freq):
    geom = EngineGeometry(145)
    top = acoustic_mode_frequencies(geom)[-1].frequency_hz
    res = hypothesis_check(_net_with_tone(freq), geom, tolerance_fraction=1.0)
    assert res.consensus_hz <= 2 * top
    assert res.passed


def test_tolerance_one_is_not_vacuous_far_above_the_modes():
    # |c - m| <= 1.0 * m fails once the consensus exceeds twice every mode
    res = hypothesis_check(_net_with_tone(30000), EngineGeometry(145), tolerance_fraction=1.0)
    assert res.consensus_hz > 2 * max(res.mode_frequencies_hz)
    assert not res.passed


def test_several_geometries():
    mode190 = acoustic_mode_frequencies(EngineGeometry(190))[0].frequency_hz
    res = hypothesis_check(_net_with_tone(mode190), [EngineGeometry(145), EngineGeometry(190)], n_modes=1)
    assert res.nearest_mode_hz == pytest.approx(mode190)
    with pytest.raises(ConfigurationError):
        hypothesis_check(_net_with_tone(mode190), [])
