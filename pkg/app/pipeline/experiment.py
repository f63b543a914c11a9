"""
Pipeline stages behind the CLI subcommands.

Artifacts land under ``<workdir>/runs/<config-hash[:12]>/``; the generated
corpus is shared between runs under ``<workdir>/corpus/<corpus-hash[:12]>/``.
Every stage reuses outputs that already exist for the same configuration, so
re-running a subcommand is cheap and reproduces the same hashes.
"""

import contextlib
import os
import shutil
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from app.data.augmentation import parse_plan, build_augmented_set
from app.data.data_manager import DataManager
from app.data.manifest import load_manifest, save_manifest, split_speakers, split_counts
from app.data.synthetic_corpus import gen_corpus
from app.features.audio_io import read_wav, write_wav
from app.features.prosody import cwt_decompose, log_f0_stats
from app.features.spectral import mel_spectrogram
from app.models.emotion_converter import (
    CycleGanModel,
    EmotionConverter,
    EmotionPair,
    convert_utterance,
    train_cyclegan,
)
from app.models.neural import SeededRng
from app.models.scoring import (
    build_trials,
    calibrate_threshold,
    cosine_similarity_report,
    det_points,
    media_far_check,
    per_emotion_breakdown,
    project_embeddings_2d,
)
from app.models.speaker_encoder import SpeakerEncoder, enroll, train_sv
from app.pipeline import reports
from app.utils.config import CACHE_DIR
from app.utils.errors import CheckpointError, ConfigError, StageError
from app.utils.logger import logger
from app.utils.serialization import atomic_write_bytes, dump_json, file_hash, load_json

SPLIT_MANIFEST = "split_manifest.jsonl"


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "artifacts": dict(sorted(self.artifacts.items())),
            "timings": dict(self.timings),
        }


def write_csv(path, frame):
    atomic_write_bytes(path, frame.to_csv(index=False).encode("utf-8"))


def derive_seed(seed, *keys):
    return int(SeededRng(seed).child(*keys).integers(0, 2 ** 31 - 1))


def cosine_sources(neutral, n):
    """Split neutral records into (reference, conversion sources), disjoint.

    The reference keeps up to n records and leaves at least two for conversion,
    so no converted utterance is ever scored against its own source.
    """
    pool = list(neutral[:2 * n])
    count = max(0, min(n, len(pool) - 2))
    return pool[:count], pool[count:count + n]


class Experiment:
    """One configuration's corpus, converters, speaker models and reports"""

    def __init__(self, config, workdir, jobs=1, cache_dir=None):
        self.config = config
        self.workdir = os.path.abspath(workdir)
        self.jobs = max(1, int(jobs))
        self.config_hash = config.config_hash()
        self.run_dir = os.path.join(self.workdir, "runs", self.config_hash[:12])
        self.corpus_dir = os.path.join(self.workdir, "corpus", config.corpus_hash()[:12])
        if cache_dir is None:
            cache_dir = CACHE_DIR if os.getenv("EVSV_CACHE_DIR") else os.path.join(self.workdir, "cache")
        self.data = DataManager(cache_dir, self.jobs)
        self.timings = {}
        os.makedirs(self.run_dir, exist_ok=True)
        dump_json(os.path.join(self.run_dir, "config.json"), config.to_dict())

    # Paths

    @property
    def manifest_path(self):
        return self.config.corpus.manifest or os.path.join(self.corpus_dir, SPLIT_MANIFEST)

    def converter_paths(self, emotion):
        directory = os.path.join(self.run_dir, "converters")
        return (os.path.join(directory, f"{emotion}_spectrum.evck"),
                os.path.join(directory, f"{emotion}_prosody.evck"))

    def sv_path(self, plan):
        return os.path.join(self.run_dir, "sv", f"{plan.name}.evck")

    @property
    def reports_dir(self):
        return os.path.join(self.run_dir, "reports")

    @contextlib.contextmanager
    def stage(self, name):
        logger.info(f"[{name}] starting")
        start = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as e:
            logger.error(f"[{name}] failed: {e}")
            raise StageError(name, e) from e
        self.timings[name] = round(time.perf_counter() - start, 3)
        logger.info(f"[{name}] done in {self.timings[name]:.1f}s")

    # Corpus and features

    def prepare_corpus(self):
        """Split manifest, generating the toy corpus on first use"""
        corpus = self.config.corpus
        with self.stage("gen-corpus"):
            if corpus.manifest:
                manifest = load_manifest(corpus.manifest)
                if not manifest.speakers("eval"):
                    manifest = split_speakers(manifest, corpus.eval_fraction, corpus.validation_fraction,
                                              self.config.seed)
                return manifest

            if os.path.exists(self.manifest_path):
                logger.info(f"Using cached corpus in {self.corpus_dir}")
                return load_manifest(self.manifest_path)

            # Fail before writing any audio
            split_counts(corpus.speakers, corpus.eval_fraction, corpus.validation_fraction)
            manifest = gen_corpus(
                self.corpus_dir,
                corpus.speakers,
                seed=self.config.seed,
                utts_per_emotion=corpus.utts_per_emotion,
                utterances_per_speaker=corpus.utterances_per_speaker,
                converter_speakers=corpus.converter_speakers,
                converter_utts_per_emotion=corpus.converter_utts_per_emotion,
                media_speakers=corpus.media_speakers,
                media_utts_per_emotion=corpus.media_utts_per_emotion,
                duration_range=(corpus.min_duration_s, corpus.max_duration_s),
                jobs=self.jobs,
            )
            manifest = split_speakers(manifest, corpus.eval_fraction, corpus.validation_fraction, self.config.seed)
            save_manifest(self.manifest_path, manifest)
            return manifest

    def extract_features(self, manifest):
        with self.stage("extract-features"):
            return self.data.extract([manifest.resolve(r) for r in manifest])

    def _paths(self, manifest, records):
        return [manifest.resolve(r) for r in records]

    def _mels(self, manifest, records):
        return [self.data.mel(p).frames for p in self._paths(manifest, records)]

    def _speaker_mels(self, manifest, split):
        return {speaker: self._mels(manifest, records)
                for speaker, records in manifest.by_speaker(split=split).items()}

    # Speaker verification

    def baseline_plan(self):
        for plan in self.config.augmentation.parsed():
            if plan.label == "baseline":
                return plan
        augmentation = self.config.augmentation
        return parse_plan("baseline", augmentation.n_neutral, augmentation.keep_authentic_emotional)

    def augment(self, manifest, plan, converters):
        out_dir = os.path.join(self.run_dir, "augmented", plan.name)
        with self.stage(f"augment:{plan.name}"):
            augmented = build_augmented_set(manifest, plan, converters, self.config.seed, out_dir, self.jobs)
            save_manifest(os.path.join(out_dir, "manifest.jsonl"), augmented)
            return augmented

    def train_speaker_model(self, manifest, plan, converters=None):
        """SV model for a plan, reused when its checkpoint exists"""
        path = self.sv_path(plan)
        if os.path.exists(path):
            logger.info(f"Using cached speaker model {path}")
            return SpeakerEncoder.load(path)

        converters = converters if converters is not None else {}
        augmented = self.augment(manifest, plan, converters)
        with self.stage(f"train-sv:{plan.name}"):
            self.data.require(self._paths(augmented, augmented.select(split="train", synthetic=False)), ("mel",))
            self.data.extract(self._paths(augmented, augmented.select(synthetic=True)), ("mel",))
            validation = self._speaker_mels(augmented, "validation") or None
            encoder, log = train_sv(self._speaker_mels(augmented, "train"), self.config.sv.model,
                                    self.config.seed, validation)
            encoder.save(path)
            write_csv(os.path.splitext(path)[0] + "_log.csv", log)
            return encoder

    def baseline_encoder(self, manifest):
        return self.train_speaker_model(manifest, self.baseline_plan())

    # Converters

    def _converter_records(self, manifest, emotion):
        source = manifest.select(split="converter", emotion="neutral")
        target = manifest.select(split="converter", emotion=emotion)
        if not source or not target:
            logger.warning(f"No converter split for {emotion}; training on authentic training-split utterances")
            source = manifest.select(split="train", emotion="neutral", synthetic=False)
            target = manifest.select(split="train", emotion=emotion, synthetic=False)
        return source, target

    def _prosody_validator(self, manifest, records, spectrum, encoder):
        """Mean cosine between source d-vectors and those of their conversions"""
        count = self.config.converter.validation_utterances
        waveforms = [read_wav(p) for p in self._paths(manifest, records[:count])]
        references = encoder.embed_many([mel_spectrogram(w) for w in waveforms])

        def validator(prosody):
            converted = [convert_utterance(w, spectrum, prosody, seed=i).waveform for i, w in enumerate(waveforms)]
            vectors = encoder.embed_many([mel_spectrogram(w) for w in converted])
            return float(np.mean([a.values @ b.values for a, b in zip(references, vectors)]))

        return validator

    def train_converter(self, manifest, emotion, encoder):
        spectrum_path, prosody_path = self.converter_paths(emotion)
        if os.path.exists(spectrum_path) and os.path.exists(prosody_path):
            logger.info(f"Using cached {emotion} converters")
            return EmotionConverter.load(spectrum_path, prosody_path)

        with self.stage(f"train-converter:{emotion}"):
            source, target = self._converter_records(manifest, emotion)
            self.data.require(self._paths(manifest, source + target), ("mcep", "f0"))
            config = self.config.converter.model
            pair = EmotionPair(emotion)

            seed = derive_seed(self.config.seed, "converter", emotion, "spectrum")
            spectrum, log = train_cyclegan(
                [self.data.mcep(p).coeffs for p in self._paths(manifest, source)],
                [self.data.mcep(p).coeffs for p in self._paths(manifest, target)],
                config, seed, feature_kind="mcep24", pair=pair,
            )
            spectrum.save(spectrum_path, config, seed)
            write_csv(os.path.splitext(spectrum_path)[0] + "_log.csv", log)

            source_f0 = [c for c in (self.data.f0(p) for p in self._paths(manifest, source)) if c.voiced.any()]
            target_f0 = [c for c in (self.data.f0(p) for p in self._paths(manifest, target)) if c.voiced.any()]
            seed = derive_seed(self.config.seed, "converter", emotion, "prosody")
            prosody, log = train_cyclegan(
                [cwt_decompose(c).normalized() for c in source_f0],
                [cwt_decompose(c).normalized() for c in target_f0],
                config, seed, feature_kind="cwtf0_10", pair=pair,
                f0_stats=(log_f0_stats(source_f0), log_f0_stats(target_f0)),
                validator=self._prosody_validator(manifest, source, spectrum, encoder),
            )
            prosody.save(prosody_path, config, seed)
            write_csv(os.path.splitext(prosody_path)[0] + "_log.csv", log)
            return EmotionConverter(spectrum, prosody)

    def train_converters(self, manifest, emotions=None):
        """Baseline SV model first (the prosody monitor embeds with it), then each emotion"""
        emotions = emotions or self.config.converter.emotions
        encoder = self.baseline_encoder(manifest)
        return {emotion: self.train_converter(manifest, emotion, encoder) for emotion in emotions}

    def load_converters(self, emotions):
        converters = {}
        for emotion in emotions:
            spectrum_path, prosody_path = self.converter_paths(emotion)
            if not (os.path.exists(spectrum_path) and os.path.exists(prosody_path)):
                raise CheckpointError(f"missing {emotion} converter checkpoints; run train-converter first")
            converters[emotion] = EmotionConverter.load(spectrum_path, prosody_path)
        return converters

    # Evaluation

    def _enrollment(self, manifest, encoder):
        """Eval-speaker profiles from their first neutral utterances; everything else becomes a test item"""
        k = self.config.evaluation.enroll_utterances
        profiles, tests = {}, []
        for speaker, records in manifest.by_speaker(split="eval").items():
            neutral = [r for r in records if r.emotion == "neutral"]
            enrolled = {r.utterance_id for r in neutral[:k]}
            profiles[speaker] = enroll(self._mels(manifest, neutral[:k]), encoder, speaker)
            rest = [r for r in records if r.utterance_id not in enrolled]
            vectors = encoder.embed_many(self._mels(manifest, rest))
            tests.extend((speaker, r.emotion, d) for r, d in zip(rest, vectors))
        return profiles, tests

    def evaluate(self, manifest, encoder, plan):
        """EER breakdown on the eval split; returns (EerReport, trials, profiles)"""
        evaluation = self.config.evaluation
        with self.stage(f"evaluate:{plan.name}"):
            profiles, tests = self._enrollment(manifest, encoder)
            trials = build_trials(profiles, tests, evaluation.max_impostor_trials, self.config.seed)
            report = per_emotion_breakdown(trials)
            logger.info(f"{plan.name}: overall EER {report.overall_eer:.4f}, gap {report.neutral_vs_emotional_gap}")
            return report, trials, profiles

    def media_check(self, manifest, encoder, trials, profiles):
        """FAR of media-proxy utterances at the threshold calibrated on eval impostors"""
        records = manifest.select(split="media")
        if not records:
            logger.warning("No media speakers in the manifest; skipping the media FAR check")
            return None
        vectors = encoder.embed_many(self._mels(manifest, records))
        media = build_trials(profiles, [(r.speaker_id, r.emotion, d) for r, d in zip(records, vectors)])
        threshold = calibrate_threshold(trials, self.config.evaluation.target_far)
        return media_far_check(media, threshold, self.config.evaluation.target_far)

    def cosine_report(self, manifest, encoder, converters):
        evaluation = self.config.evaluation
        emotion = evaluation.cosine_emotion
        if emotion not in converters:
            logger.warning(f"No {emotion} converter; skipping the cosine similarity report")
            return None

        n = evaluation.cosine_utterances
        speakers = {}
        for speaker, records in manifest.by_speaker(split="eval").items():
            neutral, sources = cosine_sources([r for r in records if r.emotion == "neutral"], n)
            authentic = [r for r in records if r.emotion == emotion][:n]
            if len(neutral) < 2 or len(authentic) < 2:
                continue
            speakers[speaker] = {
                "neutral": self._mels(manifest, neutral),
                "authentic": self._mels(manifest, authentic),
                "synthetic": self._converted_mels(manifest, sources, converters[emotion], "cosine"),
            }
        if not speakers:
            logger.warning(f"No eval speaker has enough neutral and {emotion} utterances for the cosine report")
            return None
        return cosine_similarity_report(encoder, speakers)

    def _converted_mels(self, manifest, records, converter, purpose):
        return [
            mel_spectrogram(converter.convert(read_wav(manifest.resolve(r)),
                                              seed=derive_seed(self.config.seed, purpose, r.utterance_id))).frames
            for r in records
        ]

    def _projection_converted(self, manifest, converters):
        """(mels, labels) of one eval speaker's neutral utterances after conversion"""
        emotion = self.config.evaluation.cosine_emotion
        if emotion not in (converters or {}):
            logger.warning(f"No {emotion} converter; the projection has no converted utterances")
            return [], []
        eval_speakers = manifest.speakers(split="eval")
        if not eval_speakers:
            return [], []
        speaker = self.config.evaluation.projection_speaker or eval_speakers[0]
        if speaker not in eval_speakers:
            raise ConfigError(f"invalid configuration: evaluation.projection_speaker {speaker!r} "
                              f"is not an eval speaker")
        records = manifest.select(split="eval", speaker=speaker, emotion="neutral")
        mels = self._converted_mels(manifest, records, converters[emotion], "projection")
        return mels, [(speaker, f"{emotion}_converted")] * len(mels)

    def projection(self, manifest, encoders, converters=None, baseline=None):
        """2-D projection of eval d-vectors per model, as a DataFrame.

        The baseline model's projection also carries one speaker's neutral
        utterances converted to the cosine emotion, labelled '<emotion>_converted'.
        """
        frames = []
        records = manifest.select(split="eval")
        authentic_mels = self._mels(manifest, records)
        authentic_labels = [(r.speaker_id, r.emotion) for r in records]
        converted_mels, converted_labels = [], []
        if baseline is not None:
            converted_mels, converted_labels = self._projection_converted(manifest, converters)

        for name, encoder in encoders.items():
            mels, labels = authentic_mels, authentic_labels
            if name == baseline:
                mels, labels = mels + converted_mels, labels + converted_labels
            vectors = encoder.embed_many(mels)
            points = project_embeddings_2d([d.values for d in vectors], labels, seed=self.config.seed)
            frames.append(pd.DataFrame([
                {"model": name, "speaker": speaker, "emotion": emotion, "x": x, "y": y}
                for x, y, (speaker, emotion) in points
            ]))
        return pd.concat(frames, ignore_index=True)

    # Reports

    @contextlib.contextmanager
    def staged_reports(self):
        """Write reports into a staging directory and publish it only on success"""
        staging = os.path.join(self.run_dir, ".reports-staging")
        shutil.rmtree(staging, ignore_errors=True)
        if os.path.isdir(self.reports_dir):
            shutil.copytree(self.reports_dir, staging)
        else:
            os.makedirs(staging)
        try:
            yield staging
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        shutil.rmtree(self.reports_dir, ignore_errors=True)
        os.replace(staging, self.reports_dir)

    def collect_artifacts(self):
        """Content hashes of checkpoints, logs and reports, keyed by run-relative path"""
        artifacts = {}
        for sub in ("converters", "sv", "reports"):
            root = os.path.join(self.run_dir, sub)
            for directory, _, files in os.walk(root):
                for name in files:
                    path = os.path.join(directory, name)
                    artifacts[os.path.relpath(path, self.run_dir).replace(os.sep, "/")] = file_hash(path)
        if os.path.exists(self.manifest_path):
            artifacts["corpus/" + os.path.basename(self.manifest_path)] = file_hash(self.manifest_path)
        return artifacts

    def write_run_record(self):
        record = RunRecord(self.config.to_dict(), self.config_hash, self.collect_artifacts(), self.timings)
        dump_json(os.path.join(self.run_dir, "run_record.json"), record.to_dict())
        return record

    def run(self):
        """The whole grid: corpus, features, converters, one SV model per plan, reports"""
        manifest = self.prepare_corpus()
        self.extract_features(manifest)

        plans = self.config.augmentation.parsed()
        baseline = self.baseline_plan()
        experiments = [p for p in plans if p.name != baseline.name]
        converters = self.train_converters(manifest)

        encoders = {baseline.name: self.baseline_encoder(manifest)}
        for plan in experiments:
            encoders[plan.name] = self.train_speaker_model(manifest, plan, converters)

        results = {}
        for plan in [baseline] + experiments:
            results[plan.name] = (plan,) + self.evaluate(manifest, encoders[plan.name], plan)

        with self.stage("report"), self.staged_reports() as staging:
            for name, (plan, eer, trials, _) in results.items():
                dump_json(os.path.join(staging, f"eer_{name}.json"), eer.to_dict())
                write_csv(os.path.join(staging, f"trials_{name}.csv"), trials.to_frame())
                write_csv(os.path.join(staging, f"det_{name}.csv"), det_points(trials))

            summary = reports.relative_improvement_summary(
                (baseline.name, baseline.describe(), results[baseline.name][1]),
                [(p.name, p.describe(), results[p.name][1]) for p in experiments],
            )
            dump_json(os.path.join(staging, "relative_improvement.json"), summary)
            include_gap = self.config.augmentation.keep_authentic_emotional
            atomic_write_bytes(os.path.join(staging, "relative_improvement.txt"),
                               reports.relative_improvement_text(summary, include_gap=include_gap).encode("utf-8"))

            cosine = self.cosine_report(manifest, encoders[baseline.name], converters)
            if cosine is not None:
                dump_json(os.path.join(staging, "cosine_similarity.json"), cosine.to_dict())
                text = reports.cosine_similarity_text(cosine.to_dict(), self.config.evaluation.cosine_emotion)
                atomic_write_bytes(os.path.join(staging, "cosine_similarity.txt"), text.encode("utf-8"))

            media = {}
            for name, (plan, _, trials, profiles) in results.items():
                check = self.media_check(manifest, encoders[name], trials, profiles)
                if check is not None:
                    media[name] = check.to_dict()
            if media:
                dump_json(os.path.join(staging, "media_far.json"), media)
                atomic_write_bytes(os.path.join(staging, "media_far.txt"),
                                   reports.media_far_text(media).encode("utf-8"))

            write_csv(os.path.join(staging, "projection.csv"),
                      self.projection(manifest, encoders, converters, baseline=baseline.name))

        return self.write_run_record()

    def render_reports(self, absolute=False):
        """Re-render text reports from the JSON ones; returns {file name: text}"""
        texts = {}
        summary_path = os.path.join(self.reports_dir, "relative_improvement.json")
        if not os.path.exists(summary_path):
            raise CheckpointError(f"no reports in {self.reports_dir}; run run-experiment first")
        include_gap = self.config.augmentation.keep_authentic_emotional
        texts["relative_improvement.txt"] = reports.relative_improvement_text(
            load_json(summary_path), absolute=absolute, include_gap=include_gap)

        cosine_path = os.path.join(self.reports_dir, "cosine_similarity.json")
        if os.path.exists(cosine_path):
            texts["cosine_similarity.txt"] = reports.cosine_similarity_text(
                load_json(cosine_path), self.config.evaluation.cosine_emotion)
        media_path = os.path.join(self.reports_dir, "media_far.json")
        if os.path.exists(media_path):
            texts["media_far.txt"] = reports.media_far_text(load_json(media_path))
        return texts

    # Single-purpose entry points for the CLI

    def convert_file(self, input_path, output_path, emotion, seed=0):
        EmotionPair(emotion)
        converter = self.load_converters([emotion])[emotion]
        with self.stage("convert"):
            write_wav(output_path, converter.convert(read_wav(input_path), seed=seed))

    def train_plan(self, manifest, plan_text):
        augmentation = self.config.augmentation
        plan = parse_plan(plan_text, augmentation.n_neutral, augmentation.keep_authentic_emotional)
        needed = [e for e, n in plan.synthetic_counts.items() if n]
        converters = self.load_converters(needed) if needed else {}
        return plan, self.train_speaker_model(manifest, plan, converters)

    def evaluate_plan(self, manifest, plan_text):
        augmentation = self.config.augmentation
        plan = parse_plan(plan_text, augmentation.n_neutral, augmentation.keep_authentic_emotional)
        path = self.sv_path(plan)
        if not os.path.exists(path):
            raise CheckpointError(f"no speaker model for plan {plan.name}; run train-sv first")
        report, trials, _ = self.evaluate(manifest, SpeakerEncoder.load(path), plan)
        os.makedirs(self.reports_dir, exist_ok=True)
        dump_json(os.path.join(self.reports_dir, f"eer_{plan.name}.json"), report.to_dict())
        return report
