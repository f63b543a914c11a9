import sys
import os
import shutil
import tempfile
import unittest

import numpy as np
from scipy.fft import dct

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.features.types import Waveform, McepSequence, F0Contour, LogF0Cwt
from app.features.audio_io import read_wav, write_wav, resample_linear
from app.features.spectral import frame_signal, mel_spectrogram, mcep_analyze, synthesize
from app.features.prosody import (
    estimate_f0,
    cwt_decompose,
    cwt_reconstruct,
    log_gaussian_f0_transform,
)
from app.utils.errors import UtteranceTooShortError, NoVoicedFramesError, FeatureLengthMismatchError, MissingAudioError


def sine(freq_hz, seconds=1.0, amplitude=0.5, sample_rate=16000):
    t = np.arange(int(seconds * sample_rate)) / sample_rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq_hz * t), sample_rate)


def noise(seed=0, seconds=1.0, sample_rate=16000):
    rng = np.random.default_rng(seed)
    return Waveform(np.clip(0.2 * rng.standard_normal(int(seconds * sample_rate)), -1, 1), sample_rate)


def smooth_contour(seed, frames=200):
    rng = np.random.default_rng(seed)
    t = np.arange(frames)
    p1, p2 = rng.uniform(60, 150), rng.uniform(25, 50)
    log_f0 = (np.log(rng.uniform(110, 220))
              + 0.15 * np.sin(2 * np.pi * t / p1 + rng.uniform(0, 2 * np.pi))
              + 0.06 * np.sin(2 * np.pi * t / p2 + rng.uniform(0, 2 * np.pi))
              - 0.1 * t / frames)
    return F0Contour.from_hz(np.exp(log_f0))


class TestFraming(unittest.TestCase):
    """Framing and mel analysis"""

    def test_frame_count(self):
        """One second at 16 kHz with 25/10 ms framing gives 98 frames"""
        frames = frame_signal(Waveform(np.zeros(16000)), 25.0, 10.0)
        self.assertEqual(frames.shape, (98, 400))

    def test_single_frame(self):
        """A waveform of exactly one frame yields one frame"""
        self.assertEqual(frame_signal(Waveform(np.zeros(400)), 25.0, 10.0).shape[0], 1)

    def test_too_short(self):
        """Fewer samples than one frame is rejected"""
        with self.assertRaises(UtteranceTooShortError) as ctx:
            frame_signal(Waveform(np.zeros(100)), 25.0, 10.0)
        self.assertIn("utterance too short", str(ctx.exception))

    def test_mel_dimensions(self):
        """Mel spectrogram has 40 bands per frame"""
        mel = mel_spectrogram(sine(300))
        self.assertEqual(mel.frames.shape, (98, 40))

    def test_mel_silence_is_log_floor(self):
        """Digital silence maps to log(1e-10) everywhere"""
        mel = mel_spectrogram(Waveform(np.zeros(16000)))
        np.testing.assert_array_equal(mel.frames, np.full((98, 40), np.log(1e-10)))

    def test_mel_monotonic_in_frequency(self):
        """A higher tone peaks in a higher mel band"""
        low = np.argmax(mel_spectrogram(sine(220)).frames.mean(axis=0))
        high = np.argmax(mel_spectrogram(sine(440)).frames.mean(axis=0))
        self.assertGreater(high, low)

    def test_deterministic(self):
        """Identical input produces identical bytes"""
        w = noise(3)
        self.assertEqual(mel_spectrogram(w).frames.tobytes(), mel_spectrogram(w).frames.tobytes())
        self.assertEqual(mcep_analyze(w).coeffs.tobytes(), mcep_analyze(w).coeffs.tobytes())


class TestPitch(unittest.TestCase):
    """NCCF pitch estimation"""

    def test_sine_pitch(self):
        """A 220 Hz sine is tracked within 5 Hz with at least 90% voiced frames"""
        contour = estimate_f0(sine(220))
        self.assertGreaterEqual(contour.voiced.mean(), 0.9)
        self.assertLess(abs(np.median(contour.f0_hz[contour.voiced]) - 220.0), 5.0)

    def test_noise_mostly_unvoiced(self):
        """White noise is at least 80% unvoiced"""
        contour = estimate_f0(noise(11))
        self.assertGreaterEqual(1.0 - contour.voiced.mean(), 0.8)

    def test_silence_unvoiced(self):
        """Silence is entirely unvoiced with zero F0"""
        contour = estimate_f0(Waveform(np.zeros(8000)))
        self.assertFalse(contour.voiced.any())
        np.testing.assert_array_equal(contour.f0_hz, np.zeros(contour.num_frames))

    def test_voiced_range(self):
        """Voiced F0 lies in [50, 600] and unvoiced frames are exactly zero"""
        rng = np.random.default_rng(5)
        mixed = Waveform(0.5 * sine(180).samples + 0.2 * np.clip(rng.standard_normal(16000), -2, 2))
        contour = estimate_f0(mixed)
        self.assertTrue(np.all(contour.f0_hz[contour.voiced] >= 50))
        self.assertTrue(np.all(contour.f0_hz[contour.voiced] <= 600))
        self.assertTrue(np.all(contour.f0_hz[~contour.voiced] == 0))

    def test_amplitude_invariance(self):
        """Halving the amplitude leaves the contour bit-identical"""
        w = sine(150, amplitude=0.8)
        full = estimate_f0(w)
        half = estimate_f0(w.scaled(0.5))
        np.testing.assert_array_equal(full.voiced, half.voiced)
        np.testing.assert_array_equal(full.f0_hz, half.f0_hz)

    def test_other_gain(self):
        """Non-dyadic gain keeps the mask and values up to rounding"""
        w = sine(150, amplitude=0.8)
        full = estimate_f0(w)
        scaled = estimate_f0(w.scaled(0.37))
        np.testing.assert_array_equal(full.voiced, scaled.voiced)
        np.testing.assert_allclose(full.f0_hz, scaled.f0_hz, rtol=1e-9)

    def test_shorter_hop(self):
        """A 10 ms hop matches the mel/mcep frame grid"""
        w = sine(200)
        self.assertEqual(estimate_f0(w, hop_ms=10.0).num_frames, mcep_analyze(w).num_frames)


class TestWavelet(unittest.TestCase):
    """CWT decomposition of log-F0"""

    def test_ten_scales(self):
        """Any valid contour yields 10 rows"""
        cwt = cwt_decompose(smooth_contour(0))
        self.assertEqual(cwt.coeffs.shape, (10, 200))

    def test_constant_contour(self):
        """Constant F0 gives all-zero coefficients"""
        cwt = cwt_decompose(F0Contour.from_hz(np.full(120, 200.0)))
        np.testing.assert_array_equal(cwt.coeffs, np.zeros((10, 120)))

    def test_unvoiced_rejected(self):
        """Fully unvoiced contour is rejected"""
        with self.assertRaises(NoVoicedFramesError):
            cwt_decompose(F0Contour.from_hz(np.zeros(50)))

    def test_round_trip_correlation(self):
        """Decompose then reconstruct correlates at least 0.95 with the contour"""
        worst = 1.0
        for seed in range(20):
            contour = smooth_contour(seed)
            recon = cwt_reconstruct(cwt_decompose(contour))
            worst = min(worst, np.corrcoef(recon, np.log(contour.f0_hz))[0, 1])
        self.assertGreaterEqual(worst, 0.95)

    def test_round_trip_with_gaps(self):
        """Unvoiced gaps are bridged so reconstruction keeps the full length"""
        hz = smooth_contour(4).f0_hz.copy()
        hz[40:60] = 0.0
        cwt = cwt_decompose(F0Contour.from_hz(hz))
        self.assertEqual(cwt_reconstruct(cwt).shape, (200,))
        np.testing.assert_array_equal(cwt.voiced, hz > 0)

    def test_zero_coefficients(self):
        """Zero coefficients reconstruct to the stored mean"""
        cwt = cwt_decompose(smooth_contour(1))
        zeroed = LogF0Cwt(np.zeros((10, 200)), cwt.norm_mean, cwt.norm_std, cwt.scale_means,
                          cwt.scale_stds, cwt.recon_gain)
        np.testing.assert_array_equal(cwt_reconstruct(zeroed), np.full(200, cwt.norm_mean))

    def test_linearity(self):
        """Scaling the coefficients scales the deviation from the mean"""
        cwt = cwt_decompose(smooth_contour(2))
        scaled = LogF0Cwt(2.5 * cwt.coeffs, cwt.norm_mean, cwt.norm_std, cwt.scale_means,
                          cwt.scale_stds, cwt.recon_gain)
        np.testing.assert_allclose(cwt_reconstruct(scaled) - cwt.norm_mean,
                                   2.5 * (cwt_reconstruct(cwt) - cwt.norm_mean), atol=1e-12)

    def test_log_gaussian_transform(self):
        """Level and spread move between domain statistics"""
        mean, std = log_gaussian_f0_transform(5.0, 0.1, (5.0, 0.2), (5.3, 0.3))
        self.assertAlmostEqual(mean, 5.3)
        self.assertAlmostEqual(std, 0.15)


class TestCepstrum(unittest.TestCase):
    """Mel-cepstral analysis and resynthesis"""

    def setUp(self):
        """Flat-envelope cepstrum to drive synthesis"""
        self.mcep = mcep_analyze(noise(1))

    def test_dimensions(self):
        """24 coefficients per frame"""
        self.assertEqual(self.mcep.coeffs.shape, (98, 24))

    def test_silence(self):
        """Silence gives the DCT of the constant log-floor vector"""
        mcep = mcep_analyze(Waveform(np.zeros(16000)))
        expected = dct(np.full(40, np.log(1e-10)), type=2, norm="ortho")[0]
        np.testing.assert_allclose(mcep.coeffs[:, 0], expected, rtol=1e-12)
        np.testing.assert_allclose(mcep.coeffs[:, 1:], 0.0, atol=1e-9)

    def test_sine_vs_noise(self):
        """Tone and noise have clearly different mean cepstra"""
        distance = np.linalg.norm(mcep_analyze(sine(300)).coeffs.mean(axis=0) - self.mcep.coeffs.mean(axis=0))
        self.assertGreater(distance, 0.1)

    def test_length_mismatch(self):
        """100 spectral frames against 105 F0 frames is rejected"""
        mcep = McepSequence(np.zeros((100, 24)))
        contour = F0Contour.from_hz(np.full(105, 120.0), hop_ms=10.0)
        with self.assertRaises(FeatureLengthMismatchError):
            synthesize(mcep, contour)

    def test_small_mismatch_resampled(self):
        """Off-by-two contours are resampled to the spectral frame count"""
        contour = F0Contour.from_hz(np.full(self.mcep.num_frames + 2, 120.0), hop_ms=10.0)
        out = synthesize(self.mcep, contour)
        self.assertEqual(out.samples.size, (self.mcep.num_frames - 1) * 160 + 400)

    def test_pitch_round_trip(self):
        """Resynthesized speech carries the requested F0 within 10%"""
        for f0 in (110.0, 160.0, 230.0):
            contour = F0Contour.from_hz(np.full(self.mcep.num_frames, f0), hop_ms=10.0)
            out = synthesize(self.mcep, contour, seed=3)
            tracked = estimate_f0(out)
            self.assertLess(abs(np.median(tracked.f0_hz[tracked.voiced]) - f0) / f0, 0.10)

    def test_unvoiced_synthesis(self):
        """An all-unvoiced contour gives noise that tracks as unvoiced"""
        contour = F0Contour.from_hz(np.zeros(self.mcep.num_frames), hop_ms=10.0)
        tracked = estimate_f0(synthesize(self.mcep, contour, seed=4))
        self.assertGreaterEqual(1.0 - tracked.voiced.mean(), 0.8)

    def test_peak_and_determinism(self):
        """Output peaks at 0.9 and is reproducible for a seed"""
        contour = F0Contour.from_hz(np.full(self.mcep.num_frames, 150.0), hop_ms=10.0)
        a = synthesize(self.mcep, contour, seed=9)
        b = synthesize(self.mcep, contour, seed=9)
        self.assertAlmostEqual(np.max(np.abs(a.samples)), 0.9)
        np.testing.assert_array_equal(a.samples, b.samples)


class TestAudioIO(unittest.TestCase):
    """WAV reading and writing"""

    def setUp(self):
        """Scratch directory"""
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_write_then_read(self):
        """16-bit PCM keeps samples within quantization error"""
        path = os.path.join(self.tmp, "tone.wav")
        w = sine(200, seconds=0.5)
        write_wav(path, w)
        back = read_wav(path)
        self.assertEqual(back.sample_rate_hz, 16000)
        np.testing.assert_allclose(back.samples, w.samples, atol=1e-4)

    def test_resampled_on_read(self):
        """An 8 kHz file comes back at 16 kHz"""
        path = os.path.join(self.tmp, "low.wav")
        write_wav(path, sine(200, seconds=0.5, sample_rate=8000))
        self.assertEqual(read_wav(path).samples.size, 8000)

    def test_resample_linear(self):
        """Linear resampling keeps a ramp a ramp"""
        out = resample_linear(np.arange(4.0), 4, 8)
        np.testing.assert_allclose(out, [0, 0.5, 1, 1.5, 2, 2.5, 3, 3])

    def test_missing_file(self):
        """Missing paths raise a missing-audio error"""
        with self.assertRaises(MissingAudioError):
            read_wav(os.path.join(self.tmp, "absent.wav"))


if __name__ == '__main__':
    unittest.main()
