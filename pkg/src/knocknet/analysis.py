"""Frequency content of learned first-layer kernels.

Each first-layer kernel is a short FIR filter; its magnitude response shows
which frequency band it passes. The consensus over channels is compared with
the combustion-chamber resonance modes of an engine geometry.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, ShapeError
from .signals import DEFAULT_RESOLUTION, DEFAULT_RPM, EngineGeometry, acoustic_mode_frequencies, sample_rate

DEFAULT_PAD = 1024
DEFAULT_MIN_FREQ = 500.0


def fft_radix2(x):
    """Complex DFT along the last axis; the length must be a power of two.

    Iterative decimation-in-time: bit-reversal permutation, then log2(n)
    butterfly stages, each vectorised over all butterflies of the stage.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ConfigurationError(f"radix-2 transform needs a power-of-two length, got {n}")
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=int)
    for b in range(bits):
        rev |= ((np.arange(n) >> b) & 1) << (bits - 1 - b)
    a = x[..., rev].copy()
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(a.shape[:-1] + (n // size, size))
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * tw
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    return a


def rfft_magnitude(x, n):
    """Magnitudes of bins 0..n/2 of the length-``n`` zero-padded transform."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] > n:
        raise ConfigurationError(f"zero-pad length {n} is shorter than the signal ({x.shape[-1]})")
    padded = np.zeros(x.shape[:-1] + (n,))
    padded[..., : x.shape[-1]] = x
    return np.abs(fft_radix2(padded)[..., : n // 2 + 1])


@dataclass
class KernelSpectrum:
    frequencies: np.ndarray
    magnitudes: np.ndarray  # (channels, zero_pad_length // 2 + 1)
    kernel_size: int
    zero_pad_length: int

    @property
    def n_channels(self):
        return len(self.magnitudes)

    @property
    def mean_magnitude(self):
        return self.magnitudes.mean(axis=0)

    def to_csv(self):
        cols = [f"channel_{c}" for c in range(self.n_channels)] + ["channel_mean"]
        out = io.StringIO()
        out.write(",".join(["frequency_hz"] + cols) + "\n")
        table = np.column_stack([self.frequencies, self.magnitudes.T, self.mean_magnitude])
        for row in table:
            out.write(",".join(repr(float(v)) for v in row) + "\n")
        return out.getvalue()


def kernel_spectrum(kernels, zero_pad_length=DEFAULT_PAD, fs=None):
    """Spectrum of each row of ``kernels`` after mean removal and zero padding."""
    w = np.asarray(kernels, dtype=float)
    if w.ndim == 1:
        w = w[None, :]
    if w.ndim != 2:
        raise ShapeError(f"kernels must be 2-D (channels, taps), got shape {w.shape}")
    if zero_pad_length < w.shape[1]:
        raise ConfigurationError(f"zero_pad_length {zero_pad_length} < kernel size {w.shape[1]}")
    fs = sample_rate() if fs is None else fs
    centred = w - w.mean(axis=1, keepdims=True)
    mags = rfft_magnitude(centred, zero_pad_length)
    freqs = np.arange(zero_pad_length // 2 + 1) * fs / zero_pad_length
    return KernelSpectrum(freqs, mags, w.shape[1], int(zero_pad_length))


def first_layer_kernels(net):
    w = net.params["conv1"]
    return w.reshape(w.shape[0], -1) if w.ndim == 2 else w[:, 0, :]


def first_layer_spectrum(net, zero_pad_length=DEFAULT_PAD, rpm=DEFAULT_RPM, resolution=DEFAULT_RESOLUTION):
    return kernel_spectrum(first_layer_kernels(net), zero_pad_length, sample_rate(rpm, resolution))


def dominant_peak(spectrum, channel, min_freq=DEFAULT_MIN_FREQ):
    """``(frequency, magnitude)`` of the largest bin above ``min_freq``; ties go to the lower bin."""
    eligible = np.flatnonzero(spectrum.frequencies > min_freq)
    if len(eligible) == 0:
        raise ConfigurationError(f"no spectrum bins above {min_freq} Hz")
    mags = spectrum.magnitudes[channel, eligible]
    i = eligible[int(np.argmax(mags))]
    return float(spectrum.frequencies[i]), float(spectrum.magnitudes[channel, i])


def consensus_peak(spectrum, min_freq=DEFAULT_MIN_FREQ):
    """Magnitude-weighted mean of the per-channel dominant peak frequencies."""
    peaks = np.array([dominant_peak(spectrum, c, min_freq) for c in range(spectrum.n_channels)])
    total = peaks[:, 1].sum()
    if total <= 0:
        return float("nan"), peaks
    return float(peaks[:, 0] @ peaks[:, 1] / total), peaks


@dataclass
class HypothesisResult:
    passed: bool
    consensus_hz: float
    nearest_mode_hz: float
    relative_error: float
    tolerance_fraction: float
    peaks: np.ndarray
    mode_frequencies_hz: tuple

    def summary(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: consensus peak {self.consensus_hz:.0f} Hz, nearest mode "
                f"{self.nearest_mode_hz:.0f} Hz ({100 * self.relative_error:.1f}% off, "
                f"tolerance {100 * self.tolerance_fraction:g}%)")


def hypothesis_check(net, geometry, tolerance_fraction=0.15, n_modes=None, zero_pad_length=DEFAULT_PAD,
                     min_freq=DEFAULT_MIN_FREQ, resolution=DEFAULT_RESOLUTION):
    """Does the first layer's consensus peak sit near a resonance mode?

    ``geometry`` may be one `EngineGeometry` or several (a mode of any of
    them counts). ``n_modes`` limits each geometry to its lowest modes,
    e.g. to the ones present in synthetic data.
    """
    geometries = [geometry] if isinstance(geometry, EngineGeometry) else list(geometry)
    if not geometries:
        raise ConfigurationError("at least one geometry is required")
    modes = []
    for g in geometries:
        freqs = [m.frequency_hz for m in acoustic_mode_frequencies(g)]
        modes.extend(freqs if n_modes is None else freqs[:n_modes])
    spectrum = first_layer_spectrum(net, zero_pad_length, geometries[0].rpm, resolution)
    consensus, peaks = consensus_peak(spectrum, min_freq)
    modes_arr = np.array(modes)
    if np.isnan(consensus):
        return HypothesisResult(False, consensus, float("nan"), float("inf"), tolerance_fraction, peaks, tuple(modes))
    rel = np.abs(consensus - modes_arr) / modes_arr
    i = int(np.argmin(rel))
    return HypothesisResult(bool(rel[i] <= tolerance_fraction), consensus, float(modes_arr[i]), float(rel[i]),
                            tolerance_fraction, peaks, tuple(modes))


def format_peak_table(spectrum, min_freq=DEFAULT_MIN_FREQ):
    lines = ["channel  peak_hz  magnitude"]
    for c in range(spectrum.n_channels):
        f, m = dominant_peak(spectrum, c, min_freq)
        lines.append(f"{c:7d}  {f:7.0f}  {m:9.4f}")
    return "\n".join(lines) + "\n"
