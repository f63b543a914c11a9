"""F0 estimation and the wavelet representation of log-F0.

estimate_f0 picks periods from the normalized cross-correlation function
(NCCF) of each frame against the signal that follows it. The CWT stream is
what the prosody converter learns on; its level and spread are carried
separately by a log-Gaussian transform.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal
from scipy.fft import rfft, irfft, next_fast_len

from app.features.types import F0Contour, LogF0Cwt
from app.features.spectral import ms_to_samples, num_frames
from app.utils.config import (
    FRAME_MS,
    F0_HOP_MS,
    F0_MIN_HZ,
    F0_MAX_HZ,
    VOICING_THRESHOLD,
    PEAK_FRACTION,
    N_CWT_SCALES,
)
from app.utils.errors import UtteranceTooShortError, NoVoicedFramesError

# Reconstruction weight per dyadic scale k
CWT_WEIGHTS = (np.arange(N_CWT_SCALES) + 2.5) ** -2.5
CWT_SCALES = 2.0 ** np.arange(N_CWT_SCALES)


def nccf_frames(samples, frame_len, hop, lags):
    """NCCF of every frame against the signal shifted by each lag, shape (T, len(lags))"""
    count = num_frames(samples.size, frame_len, hop)
    reach = int(lags.max()) + 1
    padded = np.concatenate([samples, np.zeros(reach)])
    segments = sliding_window_view(padded, frame_len + reach)[::hop][:count]
    heads = segments[:, :frame_len]

    n_fft = next_fast_len(frame_len + reach)
    spectrum = np.conj(rfft(heads, n=n_fft, axis=1)) * rfft(segments, n=n_fft, axis=1)
    corr = irfft(spectrum, n=n_fft, axis=1)[:, lags]

    energy = np.concatenate([np.zeros((count, 1)), np.cumsum(segments ** 2, axis=1)], axis=1)
    lag_energy = energy[:, lags + frame_len] - energy[:, lags]
    head_energy = energy[:, frame_len][:, None]
    denom = np.sqrt(np.maximum(head_energy * lag_energy, 0.0))
    return np.where(denom > 0, corr / np.where(denom > 0, denom, 1.0), 0.0)


def _pick_period(row, lags, sample_rate):
    """Smallest-lag strong peak of one NCCF row; returns f0 in Hz or 0 when unvoiced"""
    inner = row[1:-1]
    best = inner.max()
    if best < VOICING_THRESHOLD:
        return 0.0

    is_peak = (inner > row[:-2]) & (inner >= row[2:]) & (inner >= PEAK_FRACTION * best)
    peaks = np.flatnonzero(is_peak)
    i = int(peaks[0]) if peaks.size else int(np.argmax(inner))

    left, centre, right = row[i], row[i + 1], row[i + 2]
    curvature = left - 2.0 * centre + right
    offset = 0.5 * (left - right) / curvature if curvature < 0 else 0.0
    lag = lags[i + 1] + float(np.clip(offset, -0.5, 0.5))
    return float(np.clip(sample_rate / lag, F0_MIN_HZ, F0_MAX_HZ))


def estimate_f0(w, hop_ms=F0_HOP_MS, frame_ms=FRAME_MS):
    """Per-frame F0 from NCCF peak picking over the 50-600 Hz lag range"""
    frame_len = ms_to_samples(frame_ms, w.sample_rate_hz)
    hop = ms_to_samples(hop_ms, w.sample_rate_hz)
    if w.samples.size < frame_len:
        raise UtteranceTooShortError(
            f"utterance too short: {w.samples.size} samples, one frame needs {frame_len}"
        )

    min_lag = int(np.ceil(w.sample_rate_hz / F0_MAX_HZ))
    max_lag = int(np.floor(w.sample_rate_hz / F0_MIN_HZ))
    # One extra lag on each side so the range ends can be judged as peaks
    lags = np.arange(min_lag - 1, max_lag + 2)

    nccf = nccf_frames(w.samples, frame_len, hop, lags)
    f0 = np.array([_pick_period(row, lags, w.sample_rate_hz) for row in nccf])
    return F0Contour(f0, f0 > 0, hop_ms)


def interpolate_log_f0(c):
    """Log-F0 with unvoiced gaps linearly bridged and the ends held"""
    if not c.voiced.any():
        raise NoVoicedFramesError()
    frames = np.arange(c.num_frames)
    return np.interp(frames, frames[c.voiced], np.log(c.f0_hz[c.voiced]))


def mexican_hat(scale, half_width):
    t = np.arange(-half_width, half_width + 1) / scale
    norm = 2.0 / (np.sqrt(3.0) * np.pi ** 0.25)
    return norm * (1.0 - t ** 2) * np.exp(-0.5 * t ** 2) / np.sqrt(scale)


def _cwt(z):
    length = z.size
    mirrored = np.pad(z, length, mode="symmetric")
    rows = []
    for scale in CWT_SCALES:
        half_width = int(min(np.ceil(5 * scale), length))
        filtered = signal.fftconvolve(mirrored, mexican_hat(scale, half_width), mode="same")
        rows.append(filtered[length:2 * length])
    return np.stack(rows)


def cwt_decompose(c):
    """10-scale Mexican-hat CWT of the interpolated, z-normalized log-F0"""
    log_f0 = interpolate_log_f0(c)

    norm_mean = float(np.mean(log_f0))
    norm_std = float(np.std(log_f0))
    if norm_std <= 1e-12 * max(1.0, abs(norm_mean)):
        # Flat contour
        norm_mean, norm_std = float(log_f0[0]), 1.0
        z = np.zeros_like(log_f0)
    else:
        z = (log_f0 - norm_mean) / norm_std

    coeffs = _cwt(z)

    weighted = CWT_WEIGHTS @ coeffs
    energy = float(weighted @ weighted)
    recon_gain = float(weighted @ z) / energy if energy > 1e-12 else 1.0
    if recon_gain <= 0:
        recon_gain = 1.0

    scale_means = coeffs.mean(axis=1)
    scale_stds = np.maximum(coeffs.std(axis=1), 1.0)
    return LogF0Cwt(coeffs, norm_mean, norm_std, scale_means, scale_stds, recon_gain, c.voiced.copy())


def cwt_reconstruct(x):
    """Continuous log-F0 from weighted scale sum, de-normalized"""
    return x.norm_mean + x.norm_std * x.recon_gain * (CWT_WEIGHTS @ x.coeffs)


def contour_from_log_f0(log_f0, voiced, hop_ms=F0_HOP_MS):
    """F0Contour that keeps the given voicing mask and clips voiced F0 to the valid range"""
    voiced = np.asarray(voiced, dtype=bool)
    f0 = np.clip(np.exp(np.asarray(log_f0, dtype=np.float64)), F0_MIN_HZ, F0_MAX_HZ)
    return F0Contour(np.where(voiced, f0, 0.0), voiced, hop_ms)


def log_f0_stats(contours):
    """Mean and std of voiced log-F0 pooled over contours"""
    voiced = [np.log(c.f0_hz[c.voiced]) for c in contours if c.voiced.any()]
    if not voiced:
        raise NoVoicedFramesError()
    pooled = np.concatenate(voiced)
    return float(pooled.mean()), float(max(pooled.std(), 1e-6))


def log_gaussian_f0_transform(norm_mean, norm_std, source_stats, target_stats):
    """Move an utterance's log-F0 mean/std from source domain statistics to target ones"""
    source_mean, source_std = source_stats
    target_mean, target_std = target_stats
    mean = (norm_mean - source_mean) / source_std * target_std + target_mean
    std = norm_std * target_std / source_std
    return float(mean), float(std)
