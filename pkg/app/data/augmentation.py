"""
Augmentation plans: per-speaker recipes mixing real neutral utterances with
converted emotional ones, written as "50n+10a+10h".
"""

import os
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.data.manifest import UtteranceRecord
from app.features.audio_io import read_wav, write_wav
from app.models.neural import SeededRng
from app.utils.errors import ConfigError, NotEnoughNeutralError
from app.utils.logger import logger
from app.utils.parallel import parallel_map

PLAN_TOKEN = re.compile(r"^(\d+)([nah])$")
TOKEN_FIELDS = {"n": "n_neutral", "a": "n_synth_angry", "h": "n_synth_happy"}


@dataclass(frozen=True)
class AugmentationPlan:
    """n_neutral=None keeps every authentic neutral utterance of a speaker"""

    n_neutral: Optional[int] = None
    n_synth_angry: int = 0
    n_synth_happy: int = 0
    keep_authentic_emotional: bool = True
    label: Optional[str] = None

    def __post_init__(self):
        counts = (self.n_synth_angry, self.n_synth_happy) + (() if self.n_neutral is None else (self.n_neutral,))
        if any(int(c) != c or c < 0 for c in counts):
            raise ValueError(f"plan counts must be non-negative integers, got {counts}")

    @property
    def synthetic_counts(self):
        return {"angry": self.n_synth_angry, "happy": self.n_synth_happy}

    @property
    def is_baseline(self):
        return self.n_synth_angry == 0 and self.n_synth_happy == 0

    @property
    def name(self):
        if self.label:
            return self.label
        parts = [f"{self.n_neutral}n" if self.n_neutral is not None else "alln"]
        if self.n_synth_angry:
            parts.append(f"{self.n_synth_angry}a")
        if self.n_synth_happy:
            parts.append(f"{self.n_synth_happy}h")
        return "+".join(parts)

    def describe(self):
        """Human-readable form, e.g. "50 neutral + 10 angry + 10 happy" """
        neutral = f"{self.n_neutral} neutral" if self.n_neutral is not None else "all neutral"
        if self.label == "baseline":
            return f"Baseline ({neutral})"
        parts = [neutral]
        if self.n_synth_angry:
            parts.append(f"{self.n_synth_angry} angry")
        if self.n_synth_happy:
            parts.append(f"{self.n_synth_happy} happy")
        return " + ".join(parts)


def parse_plan(text, default_neutral=None, keep_authentic_emotional=True):
    """Parse "baseline" or tokens like "50n+10a+10h"; a missing n uses default_neutral"""
    text = text.strip()
    if text == "baseline":
        return AugmentationPlan(default_neutral, 0, 0, keep_authentic_emotional, label="baseline")

    fields = {}
    for token in text.split("+"):
        match = PLAN_TOKEN.match(token.strip())
        if not match or TOKEN_FIELDS[match.group(2)] in fields:
            raise ConfigError(f"invalid augmentation plan: {text!r}")
        fields[TOKEN_FIELDS[match.group(2)]] = int(match.group(1))
    fields.setdefault("n_neutral", default_neutral)
    return AugmentationPlan(keep_authentic_emotional=keep_authentic_emotional, **fields)


def _draw_sources(pool, count, rng):
    """count sources from pool: permutations concatenated, so no repeat before exhaustion"""
    drawn = []
    while len(drawn) < count:
        drawn.extend(pool[i] for i in rng.permutation(len(pool)))
    return drawn[:count]


def _convert_job(job):
    converter, source_path, out_path, seed = job
    write_wav(out_path, converter.convert(read_wav(source_path), seed=seed))
    return out_path


def build_augmented_set(manifest, plan, converters, seed, out_dir, jobs=1):
    """Training records per plan; other splits pass through unchanged.

    converters maps a target emotion to an object with ``convert(waveform, seed)``.
    Synthetic WAVs are written under out_dir/wavs/<speaker>/.
    """
    root = SeededRng(seed)
    for emotion, count in plan.synthetic_counts.items():
        if count and emotion not in converters:
            raise ConfigError(f"invalid configuration: plan {plan.name} needs a {emotion} converter")

    kept, synthetic, conversions = set(), [], []
    for speaker, neutral in manifest.by_speaker(split="train", emotion="neutral", synthetic=False).items():
        if plan.n_neutral is None:
            selected = neutral
        else:
            if len(neutral) < plan.n_neutral:
                raise NotEnoughNeutralError(
                    f"not enough neutral utterances for plan {plan.name}: "
                    f"speaker {speaker} has {len(neutral)}, needs {plan.n_neutral}"
                )
            picked = root.child("neutral", speaker).choice(len(neutral), size=plan.n_neutral, replace=False)
            selected = [neutral[i] for i in np.sort(picked)]
        kept.update(r.utterance_id for r in selected)

        for emotion, count in plan.synthetic_counts.items():
            if not count:
                continue
            if not selected:
                raise NotEnoughNeutralError(
                    f"not enough neutral utterances for plan {plan.name}: speaker {speaker} has no sources"
                )
            sources = _draw_sources(selected, count, root.child("sources", speaker, emotion))
            for k, source in enumerate(sources):
                utterance_id = f"{source.utterance_id}__{emotion}_{k:03d}"
                out_path = os.path.abspath(os.path.join(out_dir, "wavs", speaker, f"{utterance_id}.wav"))
                synthetic.append(UtteranceRecord(utterance_id, speaker, emotion, out_path, "train",
                                                 synthetic=True, source_utterance_id=source.utterance_id))
                job_seed = int(root.child("convert", utterance_id).integers(0, 2 ** 31 - 1))
                conversions.append((converters[emotion], manifest.resolve(source), out_path, job_seed))

    train_speakers = set(manifest.speakers("train"))
    records = [
        r for r in manifest
        if r.speaker_id not in train_speakers
        or r.utterance_id in kept
        or (r.emotion != "neutral" and not r.synthetic and plan.keep_authentic_emotional)
    ]

    if conversions:
        logger.info(f"Converting {len(conversions)} neutral utterances for plan {plan.name}")
        parallel_map(_convert_job, conversions, jobs=jobs, desc=f"augment {plan.name}")

    augmented = manifest.with_records(records + synthetic)
    logger.info(
        f"Plan {plan.name}: {len(augmented.select(split='train'))} training utterances, "
        f"{len(augmented.select(synthetic=True))} synthetic"
    )
    return augmented
