"""
This module generates a parametric toy-speaker corpus.

Each speaker is a harmonic source shaped by three formant resonators; emotions
move F0 level and range, energy, speaking rate and formant positions. The
output is a directory of 16-bit WAV files plus a manifest, byte-identical for
a fixed seed.
"""

import os
from dataclasses import dataclass, asdict

import numpy as np
from scipy import signal

from app.data.manifest import Manifest, UtteranceRecord, save_manifest
from app.features.audio_io import write_wav
from app.features.types import Waveform
from app.models.neural import SeededRng
from app.utils.config import SAMPLE_RATE, EMOTIONS, DEFAULT_EMOTION_MIX, DEFAULT_EMOTION_TRANSFORMS
from app.utils.errors import InvalidEmotionError, SplitInfeasibleError
from app.utils.logger import logger
from app.utils.parallel import parallel_map
from app.utils.serialization import dump_json

BASE_F0_RANGE = (90.0, 260.0)
GENDER_F0_RANGES = {"m": (90.0, 150.0), "f": (165.0, 260.0)}
GENDER_TRACT_SCALES = {"m": (0.88, 1.0), "f": (1.05, 1.2)}
NEUTRAL_FORMANTS = (500.0, 1500.0, 2500.0)
FORMANT_BANDWIDTHS = (80.0, 120.0, 160.0)
SYLLABLE_RATE_HZ = 4.0
VOICED_SHARE = 0.7
BASE_PEAK = 0.25
MAX_PEAK = 0.95
NOISE_LEVEL = 0.004

DEFAULT_CONVERTER_UTTS = {"neutral": 20, "angry": 20, "happy": 20}
DEFAULT_MEDIA_UTTS = {"neutral": 8, "angry": 4, "happy": 4, "sad": 2, "calm": 2}


@dataclass(frozen=True)
class SyntheticSpeakerSpec:
    speaker_id: str
    base_f0_hz: float
    formants_hz: tuple
    f0_jitter: float
    gender: str

    def __post_init__(self):
        if not BASE_F0_RANGE[0] <= self.base_f0_hz <= BASE_F0_RANGE[1]:
            raise ValueError(f"base_f0_hz {self.base_f0_hz} outside {BASE_F0_RANGE}")
        formants = tuple(float(f) for f in self.formants_hz)
        if len(formants) != 3 or not formants[0] < formants[1] < formants[2]:
            raise ValueError(f"formants must be 3 strictly increasing frequencies, got {formants}")
        if formants[2] * 1.2 >= SAMPLE_RATE / 2:
            raise ValueError("formants too close to Nyquist")
        if self.f0_jitter < 0:
            raise ValueError("f0_jitter must be non-negative")
        if self.gender not in GENDER_F0_RANGES:
            raise ValueError(f"unknown gender tag {self.gender!r}")
        object.__setattr__(self, "formants_hz", formants)

    @classmethod
    def sample(cls, speaker_id, rng, gender=None):
        gender = gender or ("f" if rng.uniform(0.0, 1.0) < 0.5 else "m")
        scale = rng.uniform(*GENDER_TRACT_SCALES[gender])
        spread = ((0.92, 1.08), (0.9, 1.1), (0.93, 1.07))
        formants = tuple(float(f * scale * rng.uniform(*s)) for f, s in zip(NEUTRAL_FORMANTS, spread))
        return cls(
            speaker_id=speaker_id,
            base_f0_hz=float(rng.uniform(*GENDER_F0_RANGES[gender])),
            formants_hz=formants,
            f0_jitter=float(rng.uniform(0.01, 0.03)),
            gender=gender,
        )

    def to_dict(self):
        row = asdict(self)
        row["formants_hz"] = list(self.formants_hz)
        return row


@dataclass(frozen=True)
class EmotionTransform:
    emotion: str
    f0_shift_factor: float = 1.0
    f0_range_scale: float = 1.0
    energy_scale: float = 1.0
    rate_scale: float = 1.0
    formant_shift: float = 1.0

    def __post_init__(self):
        if self.emotion not in EMOTIONS:
            raise InvalidEmotionError(f"invalid emotion: {self.emotion!r}")
        factors = (self.f0_shift_factor, self.f0_range_scale, self.energy_scale, self.rate_scale, self.formant_shift)
        if not all(f > 0 for f in factors):
            raise ValueError(f"emotion transform factors must be positive, got {factors}")

    @classmethod
    def default(cls, emotion):
        if emotion not in DEFAULT_EMOTION_TRANSFORMS:
            raise InvalidEmotionError(f"invalid emotion: {emotion!r}")
        return cls(emotion, **DEFAULT_EMOTION_TRANSFORMS[emotion])


def allocate_mix(total, mix=None):
    """Split total utterances over emotions by largest remainder; counts sum to total exactly"""
    mix = DEFAULT_EMOTION_MIX if mix is None else mix
    unknown = set(mix) - set(EMOTIONS)
    if unknown:
        raise InvalidEmotionError(f"invalid emotion: {sorted(unknown)}")
    weight = float(sum(mix.values()))
    if total < 0 or weight <= 0:
        raise ValueError("allocate_mix needs total >= 0 and a positive mix")

    emotions = [e for e in EMOTIONS if e in mix]
    quotas = np.array([total * mix[e] / weight for e in emotions])
    counts = np.floor(quotas).astype(int)
    # Stable sort keeps EMOTIONS order among equal remainders
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:total - counts.sum()]] += 1
    return {e: int(c) for e, c in zip(emotions, counts)}


def _phrase_log_f0(spec, transform, num_syllables, samples_per_syllable, rng):
    """Per-sample log-F0: declination plus one accent per syllable plus jitter"""
    length = num_syllables * samples_per_syllable
    t = np.linspace(0.0, 1.0, length)
    declination = 0.12 - 0.24 * t

    accents = rng.normal(0.0, 0.08, num_syllables)
    accent_track = np.repeat(accents, samples_per_syllable)
    smooth = signal.windows.hann(max(3, samples_per_syllable // 2))
    accent_track = np.convolve(accent_track, smooth / smooth.sum(), mode="same")

    jitter = np.repeat(rng.normal(0.0, spec.f0_jitter, num_syllables * 4), int(np.ceil(length / (num_syllables * 4))))
    contour = transform.f0_range_scale * (declination + accent_track) + jitter[:length]
    log_f0 = np.log(spec.base_f0_hz * transform.f0_shift_factor) + contour
    return np.clip(log_f0, np.log(60.0), np.log(500.0))


def _harmonic_source(log_f0, sample_rate):
    f0 = np.exp(log_f0)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    nyquist = sample_rate / 2.0
    source = np.zeros_like(f0)
    for k in range(1, int(nyquist // f0.min()) + 1):
        # 1/k roll-off, harmonics above Nyquist dropped per sample
        source += np.where(k * f0 < nyquist, np.cos(k * phase) / k, 0.0)
    return source


def _resonator(freq, bandwidth, sample_rate):
    r = np.exp(-np.pi * bandwidth / sample_rate)
    a = [1.0, -2.0 * r * np.cos(2.0 * np.pi * freq / sample_rate), r * r]
    return [1.0 - r], a


def _formant_filter(x, formants, sample_rate):
    for freq, bandwidth in zip(formants, FORMANT_BANDWIDTHS):
        b, a = _resonator(freq, bandwidth, sample_rate)
        x = signal.lfilter(b, a, x)
    return x


def render_utterance(spec, transform, rng, duration_s, sample_rate=SAMPLE_RATE):
    """One utterance as alternating voiced syllables and low-level noise gaps"""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    duration_s = duration_s / transform.rate_scale
    syllable_rate = SYLLABLE_RATE_HZ * transform.rate_scale
    num_syllables = max(2, int(round(duration_s * syllable_rate)))
    samples_per_syllable = int(round(sample_rate / syllable_rate))
    voiced_len = int(VOICED_SHARE * samples_per_syllable)

    log_f0 = _phrase_log_f0(spec, transform, num_syllables, samples_per_syllable, rng)
    source = _harmonic_source(log_f0, sample_rate)
    envelope = signal.windows.tukey(voiced_len, alpha=0.4)

    output = rng.normal(0.0, NOISE_LEVEL, num_syllables * samples_per_syllable)
    for i in range(num_syllables):
        start = i * samples_per_syllable
        # Vowel quality varies per syllable around the speaker's formants
        vowel = rng.uniform(0.9, 1.1, 3)
        formants = np.sort(np.asarray(spec.formants_hz) * transform.formant_shift * vowel)
        segment = _formant_filter(source[start:start + voiced_len], formants, sample_rate) * envelope
        output[start:start + voiced_len] += segment

    peak = np.max(np.abs(output))
    target = min(MAX_PEAK, BASE_PEAK * transform.energy_scale)
    return Waveform(output * (target / peak), sample_rate)


def _render_job(job):
    spec, transform, seed, utterance_id, duration_s, path = job
    rng = SeededRng(seed).child("utterance", utterance_id)
    write_wav(path, render_utterance(spec, transform, rng, duration_s))
    return path


def _speaker_counts(num_speakers, utts_per_emotion, utterances_per_speaker, mix):
    """speaker index -> {emotion: count}"""
    if utts_per_emotion is not None:
        counts = {e: int(n) for e, n in utts_per_emotion.items()}
        unknown = set(counts) - set(EMOTIONS)
        if unknown:
            raise InvalidEmotionError(f"invalid emotion: {sorted(unknown)}")
        if any(n < 0 for n in counts.values()):
            raise ValueError("utterance counts must be non-negative")
        return [dict(counts) for _ in range(num_speakers)]

    # Corpus-level mix dealt round-robin so rare emotions spread across speakers
    totals = allocate_mix(num_speakers * utterances_per_speaker, mix)
    per_speaker = [{e: 0 for e in totals} for _ in range(num_speakers)]
    cursor = 0
    for emotion in EMOTIONS:
        for _ in range(totals.get(emotion, 0)):
            per_speaker[cursor % num_speakers][emotion] += 1
            cursor += 1
    return per_speaker


def _speaker_group(prefix, count, split, per_speaker_counts, seed, out_dir, duration_range):
    root = SeededRng(seed)
    specs, records, jobs = [], [], []
    for index in range(count):
        speaker_id = f"{prefix}{index:03d}"
        gender = "f" if index % 2 else "m"
        spec = SyntheticSpeakerSpec.sample(speaker_id, root.child("speaker", speaker_id), gender)
        specs.append(spec)
        durations = root.child("durations", speaker_id)
        for emotion in EMOTIONS:
            for k in range(per_speaker_counts[index].get(emotion, 0)):
                utterance_id = f"{speaker_id}_{emotion}_{k:03d}"
                rel_path = f"wavs/{speaker_id}/{utterance_id}.wav"
                records.append(UtteranceRecord(utterance_id, speaker_id, emotion, rel_path, split))
                jobs.append((spec, EmotionTransform.default(emotion), seed, utterance_id,
                             float(durations.uniform(*duration_range)), os.path.join(out_dir, rel_path)))
    return specs, records, jobs


def gen_corpus(out_dir, num_speakers, seed=0, utts_per_emotion=None, utterances_per_speaker=60, mix=None,
               converter_speakers=0, converter_utts_per_emotion=None, media_speakers=0,
               media_utts_per_emotion=None, duration_range=(1.0, 2.0), jobs=1):
    """Write WAVs, speakers.json and manifest.jsonl under out_dir; returns the Manifest.

    Verification-pool speakers land in the train split (split_speakers assigns
    validation and eval later); converter and media speakers are disjoint extra
    groups for converter training and the spoofing check.
    """
    if num_speakers < 2:
        raise SplitInfeasibleError(f"split infeasible: need at least 2 speakers, got {num_speakers}")
    if not 0 < duration_range[0] <= duration_range[1]:
        raise ValueError(f"invalid duration range {duration_range}")

    groups = [
        ("spk", num_speakers, "train",
         _speaker_counts(num_speakers, utts_per_emotion, utterances_per_speaker, mix)),
        ("conv", converter_speakers, "converter",
         [dict(converter_utts_per_emotion or DEFAULT_CONVERTER_UTTS)] * converter_speakers),
        ("media", media_speakers, "media",
         [dict(media_utts_per_emotion or DEFAULT_MEDIA_UTTS)] * media_speakers),
    ]

    specs, records, jobs_list = [], [], []
    for prefix, count, split, counts in groups:
        group_specs, group_records, group_jobs = _speaker_group(prefix, count, split, counts, seed, out_dir,
                                                                duration_range)
        specs += group_specs
        records += group_records
        jobs_list += group_jobs

    logger.info(f"Generating {len(records)} utterances for {len(specs)} speakers in {out_dir}")
    parallel_map(_render_job, jobs_list, jobs=jobs, desc="gen-corpus")

    manifest = Manifest(records, os.path.abspath(out_dir))
    dump_json(os.path.join(out_dir, "speakers.json"), [s.to_dict() for s in specs])
    save_manifest(os.path.join(out_dir, "manifest.jsonl"), manifest)
    return manifest
