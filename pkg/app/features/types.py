"""Value objects for the acoustic feature chain.

Waveform -> MelSpectrogram (speaker encoder input)
Waveform -> McepSequence (spectrum converter)
Waveform -> F0Contour -> LogF0Cwt (prosody converter)
"""

from dataclasses import dataclass, field

import numpy as np

from app.utils.config import (
    SAMPLE_RATE,
    FRAME_MS,
    HOP_MS,
    N_MELS,
    N_MCEP,
    N_CWT_SCALES,
    LOG_FLOOR,
    F0_MIN_HZ,
    F0_MAX_HZ,
)
from app.utils.errors import DimensionError


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if samples.size == 0:
            raise ValueError("waveform is empty")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if np.max(np.abs(samples)) > 1.0:
            raise ValueError("waveform samples must lie in [-1, 1]")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate_hz

    def scaled(self, gain):
        return Waveform(self.samples * gain, self.sample_rate_hz)


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray
    frame_ms: float = FRAME_MS
    hop_ms: float = HOP_MS

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] != N_MELS:
            raise DimensionError(f"dimension error: mel spectrogram must be T x {N_MELS}, got {frames.shape}")
        if np.any(frames < np.log(LOG_FLOOR) - 1e-9):
            raise ValueError("mel energies below the log floor")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class McepSequence:
    coeffs: np.ndarray
    frame_ms: float = FRAME_MS
    hop_ms: float = HOP_MS

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.ndim != 2 or coeffs.shape[1] != N_MCEP or coeffs.shape[0] < 1:
            raise DimensionError(f"dimension error: mcep must be T x {N_MCEP}, got {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("mcep contains non-finite values")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def num_frames(self):
        return self.coeffs.shape[0]


@dataclass(frozen=True)
class F0Contour:
    f0_hz: np.ndarray
    voiced: np.ndarray
    hop_ms: float = HOP_MS

    def __post_init__(self):
        f0 = np.asarray(self.f0_hz, dtype=np.float64).reshape(-1)
        voiced = np.asarray(self.voiced, dtype=bool).reshape(-1)
        if f0.shape != voiced.shape:
            raise DimensionError("dimension error: f0 and voicing mask differ in length")
        if not np.array_equal(f0 > 0, voiced):
            raise ValueError("f0 must be positive exactly on voiced frames")
        if np.any(f0[voiced] < F0_MIN_HZ) or np.any(f0[voiced] > F0_MAX_HZ):
            raise ValueError(f"voiced f0 outside [{F0_MIN_HZ}, {F0_MAX_HZ}] Hz")
        object.__setattr__(self, "f0_hz", f0)
        object.__setattr__(self, "voiced", voiced)

    @property
    def num_frames(self):
        return self.f0_hz.size

    @classmethod
    def from_hz(cls, f0_hz, hop_ms=HOP_MS):
        """Build a contour from an f0 track where 0 marks unvoiced frames"""
        f0 = np.asarray(f0_hz, dtype=np.float64)
        return cls(f0, f0 > 0, hop_ms)


@dataclass(frozen=True)
class LogF0Cwt:
    coeffs: np.ndarray
    norm_mean: float
    norm_std: float
    scale_means: np.ndarray
    scale_stds: np.ndarray
    recon_gain: float = 1.0
    voiced: np.ndarray = field(default=None)

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.ndim != 2 or coeffs.shape[0] != N_CWT_SCALES:
            raise DimensionError(f"dimension error: CWT coefficients must be {N_CWT_SCALES} x T, got {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("CWT coefficients must be finite")
        if not self.norm_std > 0:
            raise ValueError("norm_std must be positive")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "scale_means", np.asarray(self.scale_means, dtype=np.float64).reshape(N_CWT_SCALES))
        object.__setattr__(self, "scale_stds", np.asarray(self.scale_stds, dtype=np.float64).reshape(N_CWT_SCALES))
        if self.voiced is not None:
            object.__setattr__(self, "voiced", np.asarray(self.voiced, dtype=bool).reshape(-1))

    @property
    def num_frames(self):
        return self.coeffs.shape[1]

    def normalized(self):
        """Per-scale z-normalized coefficients, shape (T, 10)"""
        return ((self.coeffs - self.scale_means[:, None]) / self.scale_stds[:, None]).T

    def with_normalized(self, frames):
        """Inverse of normalized(): new coefficients from (T, 10) z-scores, same statistics"""
        coeffs = np.asarray(frames, dtype=np.float64).T * self.scale_stds[:, None] + self.scale_means[:, None]
        return LogF0Cwt(coeffs, self.norm_mean, self.norm_std, self.scale_means, self.scale_stds,
                        self.recon_gain, self.voiced)
