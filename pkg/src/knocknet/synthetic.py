"""Physics-flavoured synthetic in-cylinder pressure cycles with simulated expert votes.

A cycle is the sum of

* a polytropic compression/expansion trace plus a Vibe-shaped heat-release
  pressure rise that peaks 10-20 deg CA after TDC,
* white measurement noise, plus optional high-frequency interference above
  ``hf_noise_cutoff_hz`` whose strength varies from cycle to cycle,
* for knocking-severity targets L >= 1, exponentially damped oscillations at
  the first chamber resonance modes of the engine bore, starting inside
  ``knock_onset_range``,
* optionally, a short combustion-excited ringing right after TDC that is not
  knock (pre-chamber jets, sensor passage resonance).

Five simulated judges each compare the band-passed peak amplitude of the
knock oscillation (in units of ``knock_amplitude``) with their own noisy
threshold; judge j sits at j - 0.5, so the vote count reproduces L in
expectation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .dataset import N_EXPERTS, KnockDataset
from .exceptions import ConfigurationError, ParseError
from .signals import (
    CYCLE_LENGTH,
    CYCLE_START_ANGLE,
    DEFAULT_RESOLUTION,
    EngineGeometry,
    acoustic_mode_frequencies,
    band_pass,
    extract_windows,
    sample_rate,
)

# Relative-label histogram of a 2,880-cycle expert-rated campaign (0..5 votes).
REFERENCE_LABEL_COUNTS = (803, 250, 232, 137, 325, 1123)
DEFAULT_JUDGE_BAND = (3000.0, 9000.0)
MODE_WEIGHTS = (1.0, 0.6, 0.4)

_CONROD_RATIO = 4.0
_POLYTROPIC = 1.33
_CHUNK = 256


@dataclass
class SyntheticConfig:
    geometry: EngineGeometry
    n_cycles: int = 1000
    class_weights: tuple = REFERENCE_LABEL_COUNTS
    noise_level: float = 0.05
    hf_noise_level: float = 0.0
    hf_noise_cutoff_hz: float = 15000.0
    knock_onset_range: tuple = (8.0, 20.0)
    seed: int = 0
    subset_tag: str = "A"
    knock_amplitude: float = 0.5
    knock_decay_ms: float = 1.0
    n_modes: int = 3
    severity_spread: float = 0.15
    judge_noise: float = 0.15
    background_ringing: float = 0.0
    ringing_onset_range: tuple = (0.0, 5.0)
    ringing_decay_ms: float = 0.3
    peak_pressure: float = 60.0
    intake_pressure: float = 2.5
    compression_ratio: float = 12.0
    combustion_variability: float = 0.08
    combustion_start_range: tuple = (-10.0, -5.0)
    burn_duration_range: tuple = (36.0, 44.0)
    judge_band: tuple = DEFAULT_JUDGE_BAND
    resolution: float = DEFAULT_RESOLUTION

    def __post_init__(self):
        self.class_weights = tuple(float(w) for w in self.class_weights)
        if len(self.class_weights) != N_EXPERTS + 1 or min(self.class_weights) < 0 or sum(self.class_weights) <= 0:
            raise ConfigurationError("class_weights needs 6 non-negative weights with a positive sum")
        if int(self.n_cycles) <= 0:
            raise ConfigurationError("n_cycles must be positive")
        self.n_cycles = int(self.n_cycles)
        lo, hi = self.knock_onset_range
        if not lo <= hi:
            raise ConfigurationError("knock_onset_range must be (low, high)")
        if self.hf_noise_level < 0 or self.hf_noise_cutoff_hz <= 0:
            raise ConfigurationError("hf_noise_level >= 0 and hf_noise_cutoff_hz > 0 required")
        if self.noise_level < 0 or self.knock_amplitude <= 0 or self.background_ringing < 0:
            raise ConfigurationError("noise_level, background_ringing >= 0 and knock_amplitude > 0 required")
        if not 1 <= self.n_modes <= len(MODE_WEIGHTS):
            raise ConfigurationError(f"n_modes must lie in 1..{len(MODE_WEIGHTS)}")

    # -- key = value text form -------------------------------------------

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "geometry":
                for k, v in asdict(value).items():
                    lines.append(f"geometry.{k} = {v!r}")
            elif isinstance(value, tuple):
                lines.append(f"{f.name} = " + ", ".join(repr(v) for v in value))
            else:
                lines.append(f"{f.name} = {value!r}" if not isinstance(value, str) else f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, source="<config>"):
        geometry, kwargs = {}, {}
        types = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected 'key = value'", source, lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                if key.startswith("geometry."):
                    geometry[key.split(".", 1)[1]] = float(value)
                elif key not in types:
                    raise ParseError(f"unknown key {key!r}", source, lineno)
                elif isinstance(getattr(cls, key, None), tuple) or key in ("class_weights",):
                    kwargs[key] = tuple(float(v) for v in value.split(","))
                elif key in ("n_cycles", "seed", "n_modes"):
                    kwargs[key] = int(value)
                elif key == "subset_tag":
                    kwargs[key] = value.strip("'\"")
                else:
                    kwargs[key] = float(value)
            except ValueError as exc:
                raise ParseError(f"bad value for {key}: {exc}", source, lineno) from None
        if "bore_mm" not in geometry:
            raise ConfigurationError(f"{source}: geometry.bore_mm is required")
        return cls(geometry=EngineGeometry(**geometry), **kwargs)


def _chamber_volume(theta_deg, compression_ratio):
    """Cylinder volume over displacement volume for a slider-crank."""
    r = np.radians(theta_deg)
    stroke = 0.5 * (_CONROD_RATIO + 1 - np.cos(r) - np.sqrt(_CONROD_RATIO ** 2 - np.sin(r) ** 2))
    return 1.0 / (compression_ratio - 1.0) + stroke


def _base_pressure(theta, params, cfg):
    """Motored trace plus heat-release pressure rise, one row per cycle."""
    v = _chamber_volume(theta, cfg.compression_ratio)
    v_tdc = _chamber_volume(0.0, cfg.compression_ratio)
    v_bdc = _chamber_volume(180.0, cfg.compression_ratio)
    p_in = params["intake"][:, None]
    closed = np.abs(theta) <= 180.0
    motored = np.where(closed, p_in * (v_bdc / v) ** _POLYTROPIC, p_in)
    progress = np.clip((theta - params["soc"][:, None]) / params["duration"][:, None], 0.0, None)
    burned = 1.0 - np.exp(-6.9 * progress ** 3)
    # exhaust blowdown after the exhaust valve opens
    blowdown = np.where(theta > 140.0, np.exp(-((theta - 140.0) / 15.0) ** 2), 1.0)
    rise = params["heat"][:, None] * burned * (v_tdc / v) ** _POLYTROPIC * blowdown
    return motored + rise * closed


def _damped_modes(theta, onset, decay_ms, freqs_hz, weights, phases, rpm):
    """Sum of damped sinusoids that start smoothly at ``onset`` (deg CA)."""
    dt = (theta[None, :] - onset[:, None]) / (rpm * 6.0)  # seconds after onset
    active = dt >= 0
    dt = np.where(active, dt, 0.0)
    tau = decay_ms[:, None] * 1e-3
    envelope = np.exp(-dt / tau) * (1.0 - np.exp(-dt / 5e-5)) * active
    out = np.zeros_like(dt)
    for m, (f, w) in enumerate(zip(freqs_hz, weights)):
        out += w[:, None] * np.sin(2 * np.pi * f * dt + phases[:, m:m + 1])
    return envelope * out


def _high_passed_noise(rng, shape, cutoff_hz, fs):
    """Unit-variance Gaussian noise with its content below ``cutoff_hz`` removed."""
    sos = butter(4, cutoff_hz, btype="highpass", fs=fs, output="sos")
    noise = sosfiltfilt(sos, rng.standard_normal(shape), axis=-1)
    return noise / noise.std()


def _draw_parameters(cfg, rng):
    n = cfg.n_cycles
    w = np.asarray(cfg.class_weights) / sum(cfg.class_weights)
    targets = rng.choice(N_EXPERTS + 1, size=n, p=w)
    severity = np.where(targets > 0, np.clip(targets + rng.normal(0.0, cfg.severity_spread, n), 0.05, None), 0.0)
    m = cfg.n_modes
    return {
        "targets": targets,
        "severity": severity,
        "soc": rng.uniform(*cfg.combustion_start_range, n),
        "duration": rng.uniform(*cfg.burn_duration_range, n),
        "heat": cfg.peak_pressure * np.clip(1.0 + cfg.combustion_variability * rng.standard_normal(n), 0.3, None),
        "intake": cfg.intake_pressure * (1.0 + 0.01 * rng.standard_normal(n)),
        "knock_onset": rng.uniform(*cfg.knock_onset_range, n),
        "knock_decay": cfg.knock_decay_ms * rng.uniform(0.7, 1.3, n),
        "knock_weights": np.asarray(MODE_WEIGHTS[:m])[None, :] * rng.uniform(0.7, 1.3, (n, m)),
        "knock_phase": rng.uniform(0, 2 * np.pi, (n, m)),
        "ring_amp": cfg.background_ringing * rng.exponential(1.0, n),
        "ring_onset": rng.uniform(*cfg.ringing_onset_range, n),
        "ring_decay": cfg.ringing_decay_ms * rng.uniform(0.7, 1.3, n),
        "ring_weights": rng.uniform(0.3, 1.0, (n, m)),
        "ring_phase": rng.uniform(0, 2 * np.pi, (n, m)),
        "hf_amp": rng.exponential(1.0, n),
        "judge_offsets": rng.normal(0.0, cfg.judge_noise, (n, N_EXPERTS)),
    }


def synthesize_cycles(cfg):
    """Generate full cycles (-360.0 .. 359.9 deg CA).

    Returns ``(cycles, votes, targets, severity)`` where ``cycles`` has shape
    (n_cycles, 7200) and ``severity`` is the judges' common statistic.
    """
    rng = np.random.default_rng(cfg.seed)
    params = _draw_parameters(cfg, rng)
    noise_rng = np.random.default_rng([cfg.seed, 1])
    geometry = cfg.geometry
    fs = sample_rate(geometry.rpm, cfg.resolution)
    freqs = [m.frequency_hz for m in acoustic_mode_frequencies(geometry)[: cfg.n_modes]]
    theta = CYCLE_START_ANGLE + cfg.resolution * np.arange(CYCLE_LENGTH)
    window = slice(int(round(-CYCLE_START_ANGLE / cfg.resolution)),
                   int(round((60.0 - CYCLE_START_ANGLE) / cfg.resolution)))

    n = cfg.n_cycles
    cycles = np.empty((n, CYCLE_LENGTH))
    severity = np.zeros(n)
    for start in range(0, n, _CHUNK):
        sl = slice(start, min(start + _CHUNK, n))
        p = {k: v[sl] for k, v in params.items()}
        trace = _base_pressure(theta, p, cfg)
        trace += cfg.noise_level * noise_rng.standard_normal(trace.shape)
        if cfg.hf_noise_level > 0:
            hf = _high_passed_noise(noise_rng, trace.shape, cfg.hf_noise_cutoff_hz, fs)
            trace += (cfg.hf_noise_level * p["hf_amp"])[:, None] * hf

        knock = _damped_modes(theta, p["knock_onset"], p["knock_decay"], freqs,
                              p["knock_weights"].T, p["knock_phase"], geometry.rpm)
        peak = np.max(np.abs(band_pass(knock[:, window], *cfg.judge_band, fs=fs)), axis=1)
        gain = np.divide(cfg.knock_amplitude * p["severity"], peak, out=np.zeros_like(peak), where=peak > 0)
        knock *= gain[:, None]
        severity[sl] = np.max(np.abs(band_pass(knock[:, window], *cfg.judge_band, fs=fs)), axis=1) / cfg.knock_amplitude
        trace += knock

        if cfg.background_ringing > 0:
            ring = _damped_modes(theta, p["ring_onset"], p["ring_decay"], freqs,
                                 p["ring_weights"].T, p["ring_phase"], geometry.rpm)
            ring /= np.max(np.abs(ring), axis=1, keepdims=True)
            trace += p["ring_amp"][:, None] * ring
        cycles[sl] = np.clip(trace, 0.0, None)

    thresholds = np.arange(1, N_EXPERTS + 1) - 0.5 + params["judge_offsets"]
    votes = (severity[:, None] > thresholds).astype(np.int8)
    return cycles, votes, params["targets"], severity


def synthesize_dataset(cfg):
    """Generate a labelled set of analysis windows for one engine/operating regime."""
    cycles, votes, targets, _ = synthesize_cycles(cfg)
    windows = extract_windows(cycles, CYCLE_START_ANGLE, cfg.resolution)
    ids = [f"{cfg.subset_tag}{i:05d}" for i in range(cfg.n_cycles)]
    return KnockDataset(windows, votes, [cfg.subset_tag] * cfg.n_cycles, ids, cfg.resolution, targets)


def class_weights_for(n_knocking, n_normal):
    """Spread a knock/no-knock count over the six classes of the reference histogram."""
    normal = np.array(REFERENCE_LABEL_COUNTS[:3], float)
    knock = np.array(REFERENCE_LABEL_COUNTS[3:], float)
    return tuple(np.concatenate([normal / normal.sum() * n_normal, knock / knock.sum() * n_knocking]))


def three_engine_configs(seed=0, scale=1.0):
    """Three engines shaped like a large-bore test campaign.

    A and B share a 145 mm bore (B with pre-chamber ringing); C has a
    190 mm bore, stronger and later ringing, higher noise and a lower knock
    share. All three carry cycle-varying interference above 12 kHz.
    ``scale`` multiplies every cycle count (for quick runs).
    """
    spec = [
        # tag, bore, cycles, knock, normal, knock amp, ringing, noise, peak, ringing onset, ringing decay
        ("A", 145.0, 840, 306, 534, 1.35, 2.0, 0.04, 60.0, (0.0, 5.0), 0.3),
        ("B", 145.0, 1500, 1077, 423, 1.95, 4.9, 0.05, 75.0, (0.0, 5.0), 0.3),
        ("C", 190.0, 540, 202, 338, 2.10, 7.3, 0.08, 55.0, (4.0, 10.0), 0.5),
    ]
    seeds = np.random.SeedSequence(seed).generate_state(len(spec))
    out = []
    for (tag, bore, n, nk, nn, amp, ring, noise, peak, onset, decay), s in zip(spec, seeds):
        out.append(SyntheticConfig(
            geometry=EngineGeometry(bore),
            n_cycles=max(1, int(round(n * scale))),
            class_weights=class_weights_for(nk, nn),
            subset_tag=tag,
            knock_amplitude=amp,
            background_ringing=ring,
            ringing_onset_range=onset,
            ringing_decay_ms=decay,
            noise_level=noise,
            hf_noise_level=4.0,
            hf_noise_cutoff_hz=12000.0,
            peak_pressure=peak,
            seed=int(s),
        ))
    return out


def synthesize_study(configs):
    return KnockDataset.concatenate([synthesize_dataset(c) for c in configs])
