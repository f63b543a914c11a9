"""
Utterance manifests: one JSON Lines record per utterance.

A manifest is the only thing the pipeline stages hand each other about the
corpus. Every speaker belongs to exactly one split, so train and eval speaker
sets can never overlap.
"""

import hashlib
import json
import os
from dataclasses import dataclass, asdict, replace
from typing import Optional

import numpy as np
import pandas as pd

from app.models.neural import SeededRng
from app.utils.config import EMOTIONS
from app.utils.errors import (
    DuplicateUtteranceError,
    InvalidEmotionError,
    ManifestError,
    MissingAudioError,
    SplitInfeasibleError,
)
from app.utils.logger import logger
from app.utils.serialization import atomic_write_bytes

SPLITS = ("train", "validation", "eval", "converter", "media")
# Splits drawn from the speaker-verification pool
POOL_SPLITS = ("train", "validation", "eval")
REQUIRED_FIELDS = ("utterance_id", "speaker_id", "emotion", "path")


@dataclass(frozen=True)
class UtteranceRecord:
    utterance_id: str
    speaker_id: str
    emotion: str
    path: str
    split: str = "train"
    synthetic: bool = False
    source_utterance_id: Optional[str] = None

    def __post_init__(self):
        if not self.utterance_id or not self.speaker_id:
            raise ManifestError("malformed manifest: utterance_id and speaker_id must be non-empty")
        if self.emotion not in EMOTIONS:
            raise InvalidEmotionError(f"invalid emotion: {self.emotion!r} ({self.utterance_id})")
        if self.split not in SPLITS:
            raise ManifestError(f"malformed manifest: unknown split {self.split!r} ({self.utterance_id})")
        if self.synthetic and not self.source_utterance_id:
            raise ManifestError(f"malformed manifest: synthetic {self.utterance_id} has no source utterance")

    def to_dict(self):
        return asdict(self)


class Manifest:
    """Ordered, validated collection of utterance records"""

    def __init__(self, records, root=None):
        self.records = tuple(records)
        self.root = root
        self._split_of = {}

        seen = set()
        for record in self.records:
            if record.utterance_id in seen:
                raise DuplicateUtteranceError(f"duplicate utterance id: {record.utterance_id}")
            seen.add(record.utterance_id)

            split = self._split_of.setdefault(record.speaker_id, record.split)
            if split != record.split:
                raise ManifestError(
                    f"malformed manifest: speaker {record.speaker_id} appears in both {split} and {record.split}"
                )

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, record):
        """Absolute audio path of a record"""
        if os.path.isabs(record.path) or self.root is None:
            return record.path
        return os.path.join(self.root, record.path)

    def speakers(self, split=None):
        return sorted(s for s, sp in self._split_of.items() if split is None or sp == split)

    def split_of(self, speaker_id):
        return self._split_of[speaker_id]

    def select(self, split=None, speaker=None, emotion=None, synthetic=None):
        """Records matching every given filter; emotion may be a label or a collection"""
        emotions = {emotion} if isinstance(emotion, str) else (set(emotion) if emotion is not None else None)
        return [
            r for r in self.records
            if (split is None or r.split == split)
            and (speaker is None or r.speaker_id == speaker)
            and (emotions is None or r.emotion in emotions)
            and (synthetic is None or r.synthetic == synthetic)
        ]

    def by_speaker(self, split=None, emotion=None, synthetic=None):
        """speaker -> records, speakers sorted, records in manifest order"""
        grouped = {}
        for record in self.select(split=split, emotion=emotion, synthetic=synthetic):
            grouped.setdefault(record.speaker_id, []).append(record)
        return dict(sorted(grouped.items()))

    def with_records(self, records):
        return Manifest(records, self.root)

    def to_frame(self):
        columns = ["utterance_id", "speaker_id", "emotion", "path", "split", "synthetic", "source_utterance_id"]
        return pd.DataFrame([r.to_dict() for r in self.records], columns=columns)

    def emotion_counts(self, split=None):
        """emotion -> utterance count, every label present"""
        counts = {e: 0 for e in EMOTIONS}
        for record in self.select(split=split):
            counts[record.emotion] += 1
        return counts

    def to_jsonl(self, base_dir=None):
        lines = []
        for record in self.records:
            row = record.to_dict()
            row["path"] = _relative_path(self.resolve(record), base_dir) if base_dir else record.path
            lines.append(json.dumps(row, sort_keys=True, ensure_ascii=False))
        return "".join(line + "\n" for line in lines)

    def content_hash(self):
        return hashlib.sha256(self.to_jsonl().encode("utf-8")).hexdigest()


def _relative_path(path, base_dir):
    path = os.path.abspath(path)
    base_dir = os.path.abspath(base_dir)
    if os.path.commonpath([path, base_dir]) == base_dir:
        return os.path.relpath(path, base_dir).replace(os.sep, "/")
    return path


def _is_wav(path):
    with open(path, "rb") as f:
        header = f.read(12)
    return header[:4] == b"RIFF" and header[8:12] == b"WAVE"


def _parse_row(row, line_no):
    if not isinstance(row, dict):
        raise ManifestError(f"malformed manifest: line {line_no} is not an object")
    missing = [k for k in REQUIRED_FIELDS if k not in row]
    if missing:
        raise ManifestError(f"malformed manifest: line {line_no} lacks {', '.join(missing)}")
    unknown = set(row) - {f for f in UtteranceRecord.__dataclass_fields__}
    if unknown:
        raise ManifestError(f"malformed manifest: line {line_no} has unknown fields {sorted(unknown)}")
    return UtteranceRecord(
        utterance_id=str(row["utterance_id"]),
        speaker_id=str(row["speaker_id"]),
        emotion=row["emotion"],
        path=str(row["path"]),
        split=row.get("split", "train"),
        synthetic=bool(row.get("synthetic", False)),
        source_utterance_id=row.get("source_utterance_id"),
    )


def load_manifest(path, check_audio=True):
    """Read and validate a JSON Lines manifest; relative paths resolve against its directory"""
    if not os.path.exists(path):
        raise ManifestError(f"malformed manifest: {path} does not exist")
    root = os.path.dirname(os.path.abspath(path))

    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"malformed manifest: line {line_no}: {e}")
            record = _parse_row(row, line_no)
            if record.utterance_id in seen:
                raise DuplicateUtteranceError(f"duplicate utterance id: {record.utterance_id}")
            seen.add(record.utterance_id)
            records.append(record)

    manifest = Manifest(records, root)
    if check_audio:
        for record in manifest:
            audio = manifest.resolve(record)
            if not os.path.isfile(audio):
                raise MissingAudioError(f"missing audio: {audio}")
            if not _is_wav(audio):
                raise MissingAudioError(f"missing audio: {audio} is not a WAV file")

    logger.info(f"Loaded manifest {path}: {len(manifest)} utterances, {len(manifest.speakers())} speakers")
    return manifest


def save_manifest(path, manifest):
    """JSON Lines with sorted keys; paths under the manifest directory are stored relative.

    Returns the SHA-256 of the written file.
    """
    base_dir = os.path.dirname(os.path.abspath(path))
    payload = manifest.to_jsonl(base_dir).encode("utf-8")
    atomic_write_bytes(path, payload)
    return hashlib.sha256(payload).hexdigest()


def split_counts(num_speakers, eval_fraction, validation_fraction):
    """(n_eval, n_validation) for a pool of speakers; raises when a split would be empty"""
    if not 0 < eval_fraction < 1 or not 0 <= validation_fraction < 1:
        raise SplitInfeasibleError(
            f"split infeasible: fractions must lie in (0, 1), got eval {eval_fraction}, validation {validation_fraction}"
        )
    n_eval = max(1, int(np.floor(eval_fraction * num_speakers + 0.5)))
    pool = num_speakers - n_eval
    n_validation = max(1, int(np.floor(validation_fraction * pool + 0.5))) if validation_fraction > 0 else 0
    if pool - n_validation < 1:
        raise SplitInfeasibleError(
            f"split infeasible: {num_speakers} speakers cannot fill train, validation and eval"
        )
    return n_eval, n_validation


def split_speakers(manifest, eval_fraction=0.2, validation_fraction=0.05, seed=0):
    """Speaker-level train/validation/eval assignment of the verification pool.

    Eval speakers are drawn first; validation_fraction then applies to the
    remaining training pool. Converter and media speakers keep their split.
    """
    pool = sorted(s for s in manifest.speakers() if manifest.split_of(s) in POOL_SPLITS)
    n_eval, n_validation = split_counts(len(pool), eval_fraction, validation_fraction)

    order = SeededRng(seed).child("split_speakers").permutation(len(pool))
    shuffled = [pool[i] for i in order]
    assignment = {s: "eval" for s in shuffled[:n_eval]}
    assignment.update({s: "validation" for s in shuffled[n_eval:n_eval + n_validation]})
    assignment.update({s: "train" for s in shuffled[n_eval + n_validation:]})

    records = [replace(r, split=assignment[r.speaker_id]) if r.speaker_id in assignment else r
               for r in manifest]
    logger.info(
        f"Split {len(pool)} speakers: {len(pool) - n_eval - n_validation} train, "
        f"{n_validation} validation, {n_eval} eval"
    )
    return manifest.with_records(records)
