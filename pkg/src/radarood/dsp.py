"""Raw-frame to range-doppler-image DSP chain.

One frame of ADC data is shaped [n_rx, n_chirps, n_samples] ("slow time" runs over
chirps, "fast time" over samples within a chirp).  The chain is

    range FFT (fast time) -> MTI (static-return removal) -> doppler FFT (slow time)
    -> per-channel magnitude -> mean over rx channels

and yields one non-negative [n_doppler_bins, n_range_bins] image per frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError, ShapeError

SPEED_OF_LIGHT = 299_792_458.0

_WINDOWS = ("hann", "rect")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class RadarConfig:
    """FMCW front-end geometry and timing.

    Defaults describe a 60 GHz short-range sensor: 1 Tx / 3 Rx, 64 chirps per
    frame, 128 samples per chirp, 50 ms frame period, 391.55 us chirp-to-chirp
    time, 1 GHz sweep bandwidth.  ``window`` selects the fast-time window applied
    before the range FFT ("rect" exists so FFT outputs can be compared against a
    plain DFT oracle).
    """

    n_tx: int = 1
    n_rx: int = 3
    n_chirps: int = 64
    n_samples: int = 128
    frame_period: float = 0.050
    chirp_time: float = 391.55e-6
    bandwidth: float = 1e9
    carrier_freq: float = 60e9
    window: str = "hann"

    def __post_init__(self) -> None:
        for name in ("n_tx", "n_rx", "n_chirps", "n_samples"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("frame_period", "chirp_time", "bandwidth", "carrier_freq"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0, got {getattr(self, name)}")
        if not _is_pow2(self.n_chirps) or not _is_pow2(self.n_samples):
            raise ConfigurationError(
                f"n_chirps ({self.n_chirps}) and n_samples ({self.n_samples}) "
                "must be powers of two"
            )
        if self.window not in _WINDOWS:
            raise ConfigurationError(f"window must be one of {_WINDOWS}, got {self.window!r}")

    @property
    def n_range_bins(self) -> int:
        return self.n_samples // 2

    @property
    def n_doppler_bins(self) -> int:
        return self.n_chirps

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def range_bin_m(self) -> float:
        """Range extent of one FFT bin: c / (2B)."""
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth)

    @property
    def max_unambiguous_range_m(self) -> float:
        return self.n_range_bins * self.range_bin_m

    @property
    def doppler_bin_hz(self) -> float:
        """Doppler extent of one FFT bin: 1 / (N_c * T_c)."""
        return 1.0 / (self.n_chirps * self.chirp_time)

    @property
    def velocity_bin_ms(self) -> float:
        return self.doppler_bin_hz * self.wavelength / 2.0

    @property
    def max_unambiguous_speed_ms(self) -> float:
        return (self.n_chirps // 2) * self.velocity_bin_ms

    def range_to_bin(self, range_m: float) -> float:
        """Fractional range-FFT bin of a target at ``range_m`` (beat bin 2BR/c)."""
        return 2.0 * self.bandwidth * range_m / SPEED_OF_LIGHT

    def velocity_to_doppler_bin(self, velocity_ms: float) -> float:
        """Fractional doppler bin offset from center for a radial velocity.

        Positive velocity = target receding; lands above the center bin.
        """
        doppler_hz = 2.0 * velocity_ms * self.carrier_freq / SPEED_OF_LIGHT
        return doppler_hz / self.doppler_bin_hz


@dataclass
class RawFrameCube:
    """One frame of real ADC samples, shape [n_rx, n_chirps, n_samples]."""

    data: np.ndarray
    frame_index: int = 0

    def validate(self, cfg: RadarConfig) -> None:
        expected = (cfg.n_rx, cfg.n_chirps, cfg.n_samples)
        if self.data.shape != expected:
            raise ConfigurationError(
                f"frame shape {self.data.shape} does not match config {expected}"
            )
        if not np.isfinite(self.data).all():
            raise DataError(f"frame {self.frame_index} contains non-finite samples")


@dataclass
class RangeProfileFrame:
    """Range-FFT output, complex [n_rx, n_chirps, n_range_bins]."""

    data: np.ndarray


@dataclass
class RangeDopplerImage:
    """Non-negative magnitude image, [n_doppler_bins, n_range_bins]."""

    data: np.ndarray
    frame_index: int = 0


@dataclass
class MtiState:
    """Carrier for MTI filters that need history.

    The default filter (per-frame mean subtraction across slow time) is stateless;
    the state only counts frames so stateful variants can slot in later.
    """

    frames_seen: int = 0


@lru_cache(maxsize=8)
def fast_time_window(n_samples: int, kind: str) -> np.ndarray:
    if kind == "hann":
        return np.hanning(n_samples)
    if kind == "rect":
        return np.ones(n_samples)
    raise ConfigurationError(f"unknown window {kind!r}")


def range_fft(frame: RawFrameCube, cfg: RadarConfig) -> RangeProfileFrame:
    """Windowed FFT over fast time; keeps the positive-frequency half.

    Output shape is [n_rx, n_chirps, n_samples // 2].
    """
    frame.validate(cfg)
    win = fast_time_window(cfg.n_samples, cfg.window)
    spectrum = np.fft.rfft(frame.data * win, axis=-1)
    return RangeProfileFrame(data=spectrum[..., : cfg.n_range_bins])


def mti_frame(data: np.ndarray) -> np.ndarray:
    """Remove static returns from one frame: subtract the slow-time mean per range bin."""
    return data - data.mean(axis=-2, keepdims=True)


def mti_filter(profiles: Sequence[RangeProfileFrame]) -> list[RangeProfileFrame]:
    """Moving-target indication over a sequence of range profiles.

    Static targets produce identical rows across slow time; subtracting each
    frame's per-range-bin mean over chirps nulls them exactly.  Output length
    equals input length.
    """
    if len(profiles) == 0:
        raise ValueError("mti_filter requires a non-empty sequence")
    shape = profiles[0].data.shape
    for p in profiles:
        if p.data.shape != shape:
            raise ShapeError(f"non-uniform profile shapes: {p.data.shape} vs {shape}")
    return [RangeProfileFrame(data=mti_frame(p.data)) for p in profiles]


def doppler_fft(profile: RangeProfileFrame) -> np.ndarray:
    """FFT over slow time per range bin, shifted so zero doppler is centered.

    Returns complex [n_rx, n_doppler_bins, n_range_bins].
    """
    if not np.isfinite(profile.data).all():
        raise DataError("range profile contains non-finite values")
    spectrum = np.fft.fft(profile.data, axis=-2)
    return np.fft.fftshift(spectrum, axes=-2)


def make_rdi(
    frame: RawFrameCube, prev_state: MtiState, cfg: RadarConfig
) -> tuple[RangeDopplerImage, MtiState]:
    """Full per-frame chain: range FFT -> MTI -> doppler FFT -> rx-mean magnitude."""
    profile = range_fft(frame, cfg)
    filtered = RangeProfileFrame(data=mti_frame(profile.data))
    spectrum = doppler_fft(filtered)
    image = np.abs(spectrum).mean(axis=0)
    return (
        RangeDopplerImage(data=image, frame_index=frame.frame_index),
        MtiState(frames_seen=prev_state.frames_seen + 1),
    )
