"""
Experiment configuration: a tree of dataclasses loaded from JSON.

Values are resolved in order: defaults, then the named preset, then the config
file, then ``--set section.key=value`` overrides. Unknown keys are rejected
with their dotted path before any work starts.
"""

import copy
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field, asdict
from typing import Optional

from app.data.augmentation import parse_plan
from app.data.synthetic_corpus import DEFAULT_CONVERTER_UTTS, DEFAULT_MEDIA_UTTS
from app.models.emotion_converter import CycleGanConfig, CONVERSION_TARGETS
from app.models.speaker_encoder import SvTrainConfig
from app.utils.config import EMOTIONS, LARGE_CORPUS_SCHEDULE
from app.utils.errors import ConfigError, EvsvError
from app.utils.serialization import load_json


@dataclass
class CorpusSection:
    # External JSON Lines manifest; when unset the toy corpus is generated
    manifest: Optional[str] = None
    speakers: int = 24
    # Per-speaker counts; null deals utterances_per_speaker out by the default emotion mix
    utts_per_emotion: Optional[dict] = field(
        default_factory=lambda: {"neutral": 40, "angry": 6, "happy": 6, "sad": 4, "calm": 4}
    )
    utterances_per_speaker: int = 60
    converter_speakers: int = 6
    converter_utts_per_emotion: dict = field(default_factory=lambda: dict(DEFAULT_CONVERTER_UTTS))
    media_speakers: int = 4
    media_utts_per_emotion: dict = field(default_factory=lambda: dict(DEFAULT_MEDIA_UTTS))
    min_duration_s: float = 1.0
    max_duration_s: float = 2.0
    eval_fraction: float = 0.25
    validation_fraction: float = 0.05

    def __post_init__(self):
        if not 0 < self.min_duration_s <= self.max_duration_s:
            raise ValueError("need 0 < min_duration_s <= max_duration_s")
        for name in ("utts_per_emotion", "converter_utts_per_emotion", "media_utts_per_emotion"):
            counts = getattr(self, name) or {}
            unknown = set(counts) - set(EMOTIONS)
            if unknown:
                raise ValueError(f"{name} has unknown emotions {sorted(unknown)}")


@dataclass
class ConverterSection:
    emotions: list = field(default_factory=lambda: list(CONVERSION_TARGETS))
    # Neutral utterances converted to score the prosody model during training
    validation_utterances: int = 6
    model: CycleGanConfig = field(default_factory=CycleGanConfig)

    def __post_init__(self):
        unknown = set(self.emotions) - set(CONVERSION_TARGETS)
        if unknown or not self.emotions:
            raise ValueError(f"converter emotions must be a non-empty subset of {list(CONVERSION_TARGETS)}")


@dataclass
class SvSection:
    model: SvTrainConfig = field(default_factory=SvTrainConfig)


@dataclass
class AugmentationSection:
    plans: list = field(default_factory=lambda: ["baseline", "30n+6a+6h"])
    # Neutral utterances per speaker for "baseline" and plans without an n token
    n_neutral: Optional[int] = 30
    keep_authentic_emotional: bool = True

    def __post_init__(self):
        if not self.plans:
            raise ValueError("at least one plan is required")
        names = [p.name for p in self.parsed()]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate plans {names}")

    def parsed(self):
        return [parse_plan(p, self.n_neutral, self.keep_authentic_emotional) for p in self.plans]


@dataclass
class EvaluationSection:
    enroll_utterances: int = 5
    max_impostor_trials: Optional[int] = None
    target_far: float = 0.03
    # Emotion whose neutral-vs-authentic/synthetic cosines are reported
    cosine_emotion: str = "angry"
    cosine_utterances: int = 5
    # Speaker whose converted utterances join the baseline projection; null picks the first eval speaker
    projection_speaker: Optional[str] = None

    def __post_init__(self):
        if not 0 < self.target_far < 1:
            raise ValueError("target_far must lie in (0, 1)")
        if self.cosine_emotion not in CONVERSION_TARGETS:
            raise ValueError(f"cosine_emotion must be one of {list(CONVERSION_TARGETS)}")
        if self.enroll_utterances < 1 or self.cosine_utterances < 2:
            raise ValueError("need enroll_utterances >= 1 and cosine_utterances >= 2")


@dataclass
class ExperimentConfig:
    seed: int = 0
    preset: Optional[str] = None
    corpus: CorpusSection = field(default_factory=CorpusSection)
    converter: ConverterSection = field(default_factory=ConverterSection)
    sv: SvSection = field(default_factory=SvSection)
    augmentation: AugmentationSection = field(default_factory=AugmentationSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def to_dict(self):
        return asdict(self)

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def corpus_hash(self):
        """Hash of what determines the corpus: the corpus section and the seed"""
        payload = json.dumps({"corpus": asdict(self.corpus), "seed": self.seed}, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


PRESETS = {
    "toy": {
        "corpus": {
            "speakers": 12,
            "utts_per_emotion": {"neutral": 20, "angry": 5, "happy": 5, "sad": 3, "calm": 3},
            "converter_speakers": 4,
            "converter_utts_per_emotion": {"neutral": 12, "angry": 12, "happy": 12},
            "media_speakers": 2,
            "eval_fraction": 0.25,
            "validation_fraction": 0.1,
        },
        "converter": {
            "validation_utterances": 4,
            "model": {"iterations": 300, "head_start_k": 50, "hidden_width": 32, "context": 2,
                      "validate_every": 100, "log_every": 50},
        },
        "sv": {"model": {"speakers_per_batch": 4, "utterances_per_speaker": 4, "hidden_size": 48,
                         "dvector_dim": 32, "max_iterations": 150, "crop_frames": 60,
                         "validate_every": 50, "log_every": 50}},
        "augmentation": {"plans": ["baseline", "15n+3a+3h"], "n_neutral": 15},
    },
    "paper-schedule": {
        "sv": {"model": {
            "base_lr": LARGE_CORPUS_SCHEDULE["base_lr"],
            "decay_rate": LARGE_CORPUS_SCHEDULE["decay_rate"],
            "decay_every": LARGE_CORPUS_SCHEDULE["decay_every"],
            "speakers_per_batch": LARGE_CORPUS_SCHEDULE["speakers_per_batch"],
            "utterances_per_speaker": LARGE_CORPUS_SCHEDULE["utterances_per_speaker"],
        }},
        "augmentation": {"plans": ["baseline", "50n+10a+10h"], "n_neutral": 50},
    },
}


def _is_section(annotation):
    return dataclasses.is_dataclass(annotation)


def _merge(cls, base, update, path=""):
    """Overlay update onto base (both plain dicts shaped like cls), checking every key"""
    if not isinstance(update, dict):
        raise ConfigError(f"invalid configuration: {path.rstrip('.') or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    merged = dict(base)
    for key, value in update.items():
        if key not in fields:
            raise ConfigError(f"unknown config key: {path}{key}")
        annotation = fields[key].type
        if _is_section(annotation):
            merged[key] = _merge(annotation, base[key], value, f"{path}{key}.")
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _coerce(value, annotation, path):
    origin = typing.get_origin(annotation)
    if origin is typing.Union:
        if value is None:
            return None
        inner = [a for a in typing.get_args(annotation) if a is not type(None)][0]
        return _coerce(value, inner, path)

    expected = origin or annotation
    if expected is bool:
        ok = isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, expected)
    if not ok:
        raise ConfigError(f"invalid configuration: {path} expects {getattr(expected, '__name__', expected)}, "
                          f"got {value!r}")
    return value


def _build(cls, data, path=""):
    kwargs = {}
    for f in dataclasses.fields(cls):
        value = data[f.name]
        if _is_section(f.type):
            kwargs[f.name] = _build(f.type, value, f"{path}{f.name}.")
        else:
            kwargs[f.name] = _coerce(value, f.type, f"{path}{f.name}")
    try:
        return cls(**kwargs)
    except (ValueError, EvsvError) as e:
        raise ConfigError(f"invalid configuration: {path.rstrip('.') or 'config'}: {e}")


def parse_override(text):
    """"sv.model.max_iterations=50" -> {"sv": {"model": {"max_iterations": 50}}}; values parse as JSON when they can"""
    if "=" not in text:
        raise ConfigError(f"invalid configuration: override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    tree = value
    for part in reversed(key.strip().split(".")):
        tree = {part: tree}
    return tree


def resolve_config(file_values=None, preset=None, overrides=()):
    """Build an ExperimentConfig from file contents, a preset name and override trees"""
    file_values = file_values or {}
    preset = preset if preset is not None else file_values.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"invalid configuration: unknown preset {preset!r} (choose from {sorted(PRESETS)})")

    data = asdict(ExperimentConfig())
    if preset is not None:
        data = _merge(ExperimentConfig, data, PRESETS[preset])
    data = _merge(ExperimentConfig, data, file_values)
    for override in overrides:
        data = _merge(ExperimentConfig, data, override)
    data["preset"] = preset
    return _build(ExperimentConfig, data)


def load_config(path=None, preset=None, seed=None, overrides=()):
    """Config from an optional JSON file; flags (preset, seed, --set) win over the file"""
    file_values = {}
    if path is not None:
        try:
            file_values = load_json(path)
        except FileNotFoundError:
            raise ConfigError(f"invalid configuration: {path} does not exist")
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid configuration: {path}: {e}")
    trees = [parse_override(o) for o in overrides]
    if seed is not None:
        trees.append({"seed": seed})
    return resolve_config(file_values, preset, trees)
