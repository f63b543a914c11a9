import os

import numpy as np
from scipy.io import wavfile

from app.features.types import Waveform
from app.utils.config import SAMPLE_RATE
from app.utils.errors import MissingAudioError, DimensionError
from app.utils.logger import logger


def resample_linear(samples, src_rate, dst_rate):
    """Resample by linear interpolation on the time axis"""
    samples = np.asarray(samples, dtype=np.float64)
    if src_rate == dst_rate or samples.size == 0:
        return samples.copy()
    duration = samples.size / float(src_rate)
    n_out = max(1, int(round(duration * dst_rate)))
    t_src = np.arange(samples.size) / float(src_rate)
    t_dst = np.arange(n_out) / float(dst_rate)
    return np.interp(t_dst, t_src, samples)


def read_wav(path, target_rate=SAMPLE_RATE):
    """Read a mono PCM WAV file as a Waveform at target_rate"""
    if not os.path.exists(path):
        raise MissingAudioError(f"missing audio: {path}")

    rate, data = wavfile.read(path)
    if data.ndim > 1:
        raise DimensionError(f"dimension error: {path} has {data.shape[1]} channels, expected mono")

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)

    if rate != target_rate:
        logger.debug(f"Resampling {path} from {rate} Hz to {target_rate} Hz")
        samples = resample_linear(samples, rate, target_rate)

    return Waveform(np.clip(samples, -1.0, 1.0), target_rate)


def write_wav(path, waveform):
    """Write a Waveform as 16-bit PCM"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    pcm = np.round(np.clip(waveform.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    wavfile.write(path, int(waveform.sample_rate_hz), pcm)
