"""Short-time spectral analysis and source-filter resynthesis.

Mel-spectrograms feed the speaker encoder; mel-cepstra feed the spectrum
converter and come back out through synthesize().
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal
from scipy.fft import rfft, irfft, dct, idct

from app.features.types import Waveform, MelSpectrogram, McepSequence, F0Contour
from app.utils.config import (
    SAMPLE_RATE,
    FRAME_MS,
    HOP_MS,
    N_FFT,
    N_MELS,
    MEL_FMIN_HZ,
    MEL_FMAX_HZ,
    N_MCEP,
    LOG_FLOOR,
    SYNTH_PEAK,
)
from app.utils.errors import UtteranceTooShortError, FeatureLengthMismatchError


def ms_to_samples(ms, sample_rate):
    return int(round(sample_rate * ms / 1000.0))


def num_frames(num_samples, frame_len, hop):
    if num_samples < frame_len:
        return 0
    return (num_samples - frame_len) // hop + 1


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(w, frame_ms=FRAME_MS, hop_ms=HOP_MS):
    """Split a waveform into Hann-windowed frames, shape (T, frame_len)"""
    if not frame_ms >= hop_ms > 0:
        raise ValueError(f"need frame_ms >= hop_ms > 0, got {frame_ms}/{hop_ms}")

    frame_len = ms_to_samples(frame_ms, w.sample_rate_hz)
    hop = ms_to_samples(hop_ms, w.sample_rate_hz)
    count = num_frames(w.samples.size, frame_len, hop)
    if count < 1:
        raise UtteranceTooShortError(
            f"utterance too short: {w.samples.size} samples, one frame needs {frame_len}"
        )

    frames = sliding_window_view(w.samples, frame_len)[::hop][:count]
    window = signal.get_window("hann", frame_len)
    return frames * window


def mel_filterbank(n_fft=N_FFT, sample_rate=SAMPLE_RATE, n_mels=N_MELS, fmin=MEL_FMIN_HZ, fmax=MEL_FMAX_HZ):
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft // 2 + 1)"""
    fmax = min(fmax, sample_rate / 2.0)
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_hz = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)

    lower = edges_hz[:-2, None]
    centre = edges_hz[1:-1, None]
    upper = edges_hz[2:, None]
    rising = (bin_hz[None, :] - lower) / (centre - lower)
    falling = (upper - bin_hz[None, :]) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_band_centres(sample_rate=SAMPLE_RATE, n_mels=N_MELS, fmin=MEL_FMIN_HZ, fmax=MEL_FMAX_HZ):
    fmax = min(fmax, sample_rate / 2.0)
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


def _log_mel(w, frame_ms, hop_ms):
    frames = frame_signal(w, frame_ms, hop_ms)
    power = np.abs(rfft(frames, n=N_FFT, axis=1)) ** 2
    energies = power @ mel_filterbank(N_FFT, w.sample_rate_hz).T
    return np.log(energies + LOG_FLOOR)


def mel_spectrogram(w, frame_ms=FRAME_MS, hop_ms=HOP_MS):
    return MelSpectrogram(_log_mel(w, frame_ms, hop_ms), frame_ms, hop_ms)


def mcep_analyze(w, frame_ms=FRAME_MS, hop_ms=HOP_MS):
    """Mel-cepstrum: DCT-II of the log-mel spectrum, first 24 coefficients (0 = energy)"""
    cepstrum = dct(_log_mel(w, frame_ms, hop_ms), type=2, norm="ortho", axis=1)
    return McepSequence(cepstrum[:, :N_MCEP], frame_ms, hop_ms)


def mcep_to_envelope(coeffs, sample_rate=SAMPLE_RATE):
    """Invert mcep frames to per-bin magnitude envelopes, shape (T, N_FFT // 2 + 1)"""
    coeffs = np.atleast_2d(coeffs)
    padded = np.zeros((coeffs.shape[0], N_MELS))
    padded[:, :coeffs.shape[1]] = coeffs
    band_energy = np.exp(idct(padded, type=2, norm="ortho", axis=1))

    # Energy per bin: a band collects sum(filter) bins of a flat spectrum
    band_weight = mel_filterbank(N_FFT, sample_rate).sum(axis=1)
    band_power = band_energy / np.maximum(band_weight, 1e-12)

    centres = mel_band_centres(sample_rate)
    bin_hz = np.fft.rfftfreq(N_FFT, d=1.0 / sample_rate)
    bin_power = np.stack([np.interp(bin_hz, centres, row) for row in band_power])
    return np.sqrt(bin_power)


def align_contour(contour, target_frames):
    """Resample an F0 contour to target_frames when it is off by at most 2 frames"""
    if contour.num_frames == target_frames:
        return contour
    if abs(contour.num_frames - target_frames) > 2:
        raise FeatureLengthMismatchError(
            f"feature length mismatch: {contour.num_frames} f0 frames vs {target_frames} spectral frames"
        )

    source_pos = np.arange(contour.num_frames)
    target_pos = np.linspace(0, contour.num_frames - 1, target_frames)
    voiced = contour.voiced[np.rint(target_pos).astype(int)]
    if not contour.voiced.any():
        return F0Contour(np.zeros(target_frames), voiced, contour.hop_ms)

    voiced_idx = source_pos[contour.voiced]
    f0 = np.interp(target_pos, voiced_idx, contour.f0_hz[contour.voiced])
    return F0Contour(np.where(voiced, f0, 0.0), voiced, contour.hop_ms)


def _excitation(f0_frames, voiced_frames, length, hop, frame_len, sample_rate, rng):
    """Band-limited harmonic source on voiced samples, white noise elsewhere"""
    centres = np.arange(f0_frames.size) * hop + frame_len / 2.0
    t = np.arange(length)
    nearest = np.clip(np.rint((t - frame_len / 2.0) / hop).astype(int), 0, f0_frames.size - 1)
    voiced = voiced_frames[nearest]

    excitation = rng.standard_normal(length)
    if not voiced_frames.any():
        return excitation

    filled = np.interp(centres, centres[voiced_frames], f0_frames[voiced_frames])
    f0 = np.interp(t, centres, filled)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate

    nyquist = sample_rate / 2.0
    max_harmonics = int(nyquist // f0.min())
    harmonic = np.zeros(length)
    count = np.zeros(length)
    for k in range(1, max_harmonics + 1):
        below = k * f0 < nyquist
        harmonic += np.where(below, np.cos(k * phase), 0.0)
        count += below
    harmonic /= np.sqrt(np.maximum(count, 1.0) / 2.0)

    return np.where(voiced, harmonic, excitation)


def synthesize(m, c, seed=0, sample_rate=SAMPLE_RATE):
    """Source-filter resynthesis of a mel-cepstrum sequence driven by an F0 contour"""
    contour = align_contour(c, m.num_frames)
    frame_len = ms_to_samples(m.frame_ms, sample_rate)
    hop = ms_to_samples(m.hop_ms, sample_rate)
    length = (m.num_frames - 1) * hop + frame_len

    rng = np.random.default_rng(seed)
    source = _excitation(contour.f0_hz, contour.voiced, length, hop, frame_len, sample_rate, rng)

    window = signal.get_window("hann", frame_len)
    frames = sliding_window_view(source, frame_len)[::hop][:m.num_frames] * window
    spectra = rfft(frames, n=N_FFT, axis=1) * mcep_to_envelope(m.coeffs, sample_rate)
    shaped = irfft(spectra, n=N_FFT, axis=1)[:, :frame_len] * window

    output = np.zeros(length)
    norm = np.zeros(length)
    for i in range(m.num_frames):
        start = i * hop
        output[start:start + frame_len] += shaped[i]
        norm[start:start + frame_len] += window ** 2
    output = np.where(norm > 1e-8, output / np.maximum(norm, 1e-8), 0.0)

    peak = np.max(np.abs(output))
    if peak > 0:
        output = output * (SYNTH_PEAK / peak)
    return Waveform(output, sample_rate)
