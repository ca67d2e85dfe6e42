"""Crank-angle signals, combustion-chamber resonance physics and filtering.

Everything here is a pure function of its inputs. Pressures are in bar,
angles in degrees crank angle (deg CA) and frequencies in Hz unless a name
says otherwise (``frequency_khz``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .exceptions import CoverageError, InvalidGeometryError, OutOfBandError

DEFAULT_RPM = 1500.0
DEFAULT_RESOLUTION = 0.1
DEFAULT_SPEED_OF_SOUND = 966.0
CYCLE_START_ANGLE = -360.0
CYCLE_LENGTH = 7200
WINDOW_SPAN = 60.0
WINDOW_LENGTH = 600

# Bessel-derived mode factors of a cylindrical chamber, ascending.
MODE_FACTORS = (
    ("1st circ.", 1.841),
    ("2nd circ.", 3.054),
    ("1st rad.", 3.831),
    ("3rd circ.", 4.201),
    ("1st comb.", 5.318),
)


def sample_rate(rpm=DEFAULT_RPM, resolution=DEFAULT_RESOLUTION):
    """Equivalent time-domain sampling rate (Hz) of a crank-angle signal."""
    if rpm <= 0 or resolution <= 0:
        raise ValueError("rpm and resolution must be positive")
    return rpm * 360.0 / 60.0 / resolution


@dataclass(frozen=True)
class EngineGeometry:
    bore_mm: float
    rpm: float = DEFAULT_RPM
    speed_of_sound: float = DEFAULT_SPEED_OF_SOUND

    def __post_init__(self):
        for name in ("bore_mm", "rpm", "speed_of_sound"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidGeometryError(f"{name} must be a positive number, got {value!r}")


@dataclass(frozen=True)
class AcousticMode:
    name: str
    bessel_factor: float
    frequency_khz: float

    @property
    def frequency_hz(self):
        return 1e3 * self.frequency_khz


def acoustic_mode_frequencies(geometry):
    """Resonance modes of the combustion chamber, lowest frequency first.

    ``f[kHz] = a[m/s] * B / (pi * D_b[mm])``; the mm/kHz pairing makes the
    unit conversion factors cancel.
    """
    if not isinstance(geometry, EngineGeometry):
        raise InvalidGeometryError(f"expected EngineGeometry, got {type(geometry).__name__}")
    scale = geometry.speed_of_sound / (math.pi * geometry.bore_mm)
    modes = [AcousticMode(name, b, scale * b) for name, b in MODE_FACTORS]
    return sorted(modes, key=lambda m: m.frequency_khz)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def kernel_size_for_frequency(f_target, rpm=DEFAULT_RPM, resolution=DEFAULT_RESOLUTION):
    """Number of samples spanning one period of ``f_target`` (Hz)."""
    if f_target <= 0 or rpm <= 0 or resolution <= 0:
        raise ValueError("f_target, rpm and resolution must be positive")
    fs = sample_rate(rpm, resolution)
    if f_target > fs / 2:
        raise OutOfBandError(f"{f_target} Hz is above the Nyquist frequency {fs / 2} Hz")
    degrees_per_second = rpm * 360.0 / 60.0
    return max(1, _round_half_up(degrees_per_second / f_target / resolution))


def frequency_range_for_kernel(k, rpm=DEFAULT_RPM, resolution=DEFAULT_RESOLUTION):
    """Frequencies (f_low, f_high] that map onto kernel size ``k``.

    The upper end is capped at Nyquist, so k=1 (no in-band frequency) is
    rejected.
    """
    k = int(k)
    if k < 2:
        raise OutOfBandError("kernel sizes below 2 have no in-band frequency")
    fs = sample_rate(rpm, resolution)
    f_low = fs / (k + 0.5)
    f_high = min(fs / (k - 0.5), fs / 2)
    return f_low, f_high


@dataclass
class CrankAngleSignal:
    samples: np.ndarray
    start_angle: float
    resolution: float = DEFAULT_RESOLUTION
    cycle_id: str = ""
    source_tag: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def angles(self):
        return self.start_angle + self.resolution * np.arange(len(self.samples))

    @property
    def end_angle(self):
        return self.start_angle + (len(self.samples) - 1) * self.resolution


@dataclass
class PressureCycle(CrankAngleSignal):
    """One thermodynamic cycle, by default -360.0 .. 359.9 deg CA."""

    start_angle: float = CYCLE_START_ANGLE

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.samples < 0):
            raise ValueError("pressure must be non-negative")


@dataclass
class AnalysisWindow(CrankAngleSignal):
    start_angle: float = 0.0


def extract_window(cycle, start=0.0, span=WINDOW_SPAN):
    """Slice the half-open interval [start, start + span) out of a signal.

    No scaling or filtering is applied.
    """
    res = cycle.resolution
    n = _round_half_up(span / res)
    first = _round_half_up((start - cycle.start_angle) / res)
    if first < 0 or first + n > len(cycle):
        raise CoverageError(
            f"signal covers [{cycle.start_angle}, {cycle.end_angle}] deg CA, "
            f"window needs [{start}, {start + span})"
        )
    return AnalysisWindow(
        samples=cycle.samples[first:first + n].copy(),
        start_angle=cycle.start_angle + first * res,
        resolution=res,
        cycle_id=cycle.cycle_id,
        source_tag=cycle.source_tag,
    )


def extract_windows(cycles, start_angle=CYCLE_START_ANGLE, resolution=DEFAULT_RESOLUTION,
                    start=0.0, span=WINDOW_SPAN):
    """Vectorised `extract_window` over the rows of a 2-D array."""
    cycles = np.asarray(cycles, dtype=float)
    n = _round_half_up(span / resolution)
    first = _round_half_up((start - start_angle) / resolution)
    if first < 0 or first + n > cycles.shape[-1]:
        raise CoverageError(f"rows of length {cycles.shape[-1]} do not cover [{start}, {start + span})")
    return cycles[..., first:first + n].copy()


def _band_sos(f_low, f_high, fs, order):
    nyq = fs / 2
    if not 0 < f_low < f_high < nyq:
        raise OutOfBandError(f"band ({f_low}, {f_high}) Hz must satisfy 0 < low < high < {nyq} Hz")
    return sps.butter(order, [f_low, f_high], btype="bandpass", fs=fs, output="sos")


def band_pass(x, f_low, f_high, fs=None, order=4):
    """Zero-phase (forward-backward) Butterworth band-pass along the last axis.

    ``x`` may be an `AnalysisWindow`/`PressureCycle` (an `AnalysisWindow`
    over the same angles is returned, sample rate taken from its resolution
    at 1500 rpm unless ``fs`` is given) or an array of one or more signals.
    """
    if isinstance(x, CrankAngleSignal):
        rate = fs if fs is not None else sample_rate(DEFAULT_RPM, x.resolution)
        sos = _band_sos(f_low, f_high, rate, order)
        filtered = sps.sosfiltfilt(sos, x.samples)
        return AnalysisWindow(filtered, x.start_angle, x.resolution, x.cycle_id, x.source_tag)
    rate = fs if fs is not None else sample_rate()
    sos = _band_sos(f_low, f_high, rate, order)
    return sps.sosfiltfilt(sos, np.asarray(x, dtype=float), axis=-1)
