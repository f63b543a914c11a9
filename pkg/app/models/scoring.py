"""Verification scoring: EER/FAR/FRR, per-emotion breakdowns, relative
improvement, identity-preservation cosines and 2-D embedding projection."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from app.models.neural import SeededRng
from app.utils.config import EMOTIONS, EMOTIONAL
from app.utils.errors import DegenerateTrialSetError, InsufficientUtterancesError, InvalidEmotionError
from app.utils.logger import logger

# Report cells in table order
CELLS = ["overall", "neutral", "emotional", "happy", "angry", "sad", "calm"]


@dataclass(frozen=True)
class Trial:
    profile_speaker: str
    utterance_speaker: str
    emotion: str
    score: float
    is_target: Optional[bool] = None

    def __post_init__(self):
        same = self.profile_speaker == self.utterance_speaker
        if self.is_target is None:
            object.__setattr__(self, "is_target", same)
        elif bool(self.is_target) != same:
            raise ValueError("is_target must equal (profile_speaker == utterance_speaker)")
        if self.emotion not in EMOTIONS:
            raise InvalidEmotionError(f"invalid emotion '{self.emotion}'")
        if not np.isfinite(self.score):
            raise ValueError("trial score must be finite")


@dataclass
class TrialScoreSet:
    trials: list = field(default_factory=list)

    def __len__(self):
        return len(self.trials)

    def target_scores(self):
        return np.array([t.score for t in self.trials if t.is_target], dtype=np.float64)

    def impostor_scores(self):
        return np.array([t.score for t in self.trials if not t.is_target], dtype=np.float64)

    def subset(self, emotions):
        wanted = set(emotions)
        return TrialScoreSet([t for t in self.trials if t.emotion in wanted])

    def to_frame(self):
        return pd.DataFrame(
            [(t.profile_speaker, t.utterance_speaker, t.emotion, t.score, t.is_target) for t in self.trials],
            columns=["profile_speaker", "utterance_speaker", "emotion", "score", "is_target"],
        )


@dataclass
class EerReport:
    overall_eer: float
    eer_threshold: float
    per_emotion_eer: dict
    neutral_vs_emotional_gap: Optional[float] = None

    def cell(self, name):
        if name == "overall":
            return self.overall_eer
        return self.per_emotion_eer.get(name)

    def to_dict(self):
        return {
            "overall_eer": self.overall_eer,
            "eer_threshold": self.eer_threshold,
            "per_emotion_eer": dict(self.per_emotion_eer),
            "neutral_vs_emotional_gap": self.neutral_vs_emotional_gap,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["overall_eer"], data["eer_threshold"], dict(data["per_emotion_eer"]),
                   data.get("neutral_vs_emotional_gap"))


@dataclass
class RelativeImprovementReport:
    """Signed percentages per cell; None where the baseline cell is missing or zero"""
    label: str
    cells: dict
    baseline_gap: Optional[float] = None
    experimental_gap: Optional[float] = None

    def to_dict(self):
        return {
            "label": self.label,
            "cells": dict(self.cells),
            "baseline_gap": self.baseline_gap,
            "experimental_gap": self.experimental_gap,
        }


@dataclass
class CosineSimilarityReport:
    """Rows of {speaker, case, mean, std, pairs}; case is "authentic" or "synthetic" """
    rows: list

    def cell(self, speaker, case):
        for row in self.rows:
            if row["speaker"] == speaker and row["case"] == case:
                return row
        return None

    def pooled_mean(self, case):
        values = [row["mean"] for row in self.rows if row["case"] == case]
        return float(np.mean(values)) if values else None

    def to_dict(self):
        return {"rows": [dict(r) for r in self.rows],
                "pooled": {case: self.pooled_mean(case) for case in ("authentic", "synthetic")}}


@dataclass
class MediaFarReport:
    threshold: float
    target_far: float
    far: dict
    within_target: dict
    impostor_trials: dict

    def to_dict(self):
        return {
            "threshold": self.threshold,
            "target_far": self.target_far,
            "far": dict(self.far),
            "within_target": dict(self.within_target),
            "impostor_trials": dict(self.impostor_trials),
        }


def _split_scores(scores):
    targets = np.sort(scores.target_scores())
    impostors = np.sort(scores.impostor_scores())
    if targets.size == 0 or impostors.size == 0:
        raise DegenerateTrialSetError(
            f"degenerate trial set: {targets.size} targets, {impostors.size} impostors"
        )
    return targets, impostors


def error_rates(targets, impostors, thresholds):
    """FAR = impostors >= t over impostors; FRR = targets < t over targets (inputs sorted)"""
    far = (impostors.size - np.searchsorted(impostors, thresholds, side="left")) / impostors.size
    frr = np.searchsorted(targets, thresholds, side="left") / targets.size
    return far, frr


def compute_eer(scores):
    """EER and its threshold, interpolated linearly at the FAR/FRR crossing"""
    targets, impostors = _split_scores(scores)
    thresholds = np.unique(np.concatenate([targets, impostors]))
    # One step past the top score, where FAR = 0 and FRR = 1, so a crossing always exists
    thresholds = np.append(thresholds, np.nextafter(thresholds[-1], np.inf))
    far, frr = error_rates(targets, impostors, thresholds)

    gap = far - frr
    k = int(np.argmax(gap <= 0))
    if k == 0:
        return float(far[0]), float(thresholds[0])

    alpha = gap[k - 1] / (gap[k - 1] - gap[k])
    eer = far[k - 1] + alpha * (far[k] - far[k - 1])
    threshold = thresholds[k - 1] + alpha * (thresholds[k] - thresholds[k - 1])
    return float(eer), float(threshold)


def _subset_eer(scores, emotions):
    subset = scores.subset(emotions)
    try:
        return compute_eer(subset)[0]
    except DegenerateTrialSetError:
        return None


def per_emotion_breakdown(scores):
    """EER overall, per test-utterance emotion and pooled over emotional speech"""
    overall, threshold = compute_eer(scores)
    per_emotion = {}
    for emotion in EMOTIONS:
        value = _subset_eer(scores, [emotion])
        if value is not None:
            per_emotion[emotion] = value

    present = {t.emotion for t in scores.trials}
    if present & set(EMOTIONAL):
        value = _subset_eer(scores, EMOTIONAL)
        if value is not None:
            per_emotion["emotional"] = value

    gap = None
    if "neutral" in per_emotion and "emotional" in per_emotion:
        gap = per_emotion["emotional"] - per_emotion["neutral"]
    return EerReport(overall, threshold, per_emotion, gap)


def relative_improvement(baseline, experimental, label="experimental"):
    """Cell-wise (baseline - experimental) / baseline * 100; positive means lower EER"""
    cells = {}
    for name in CELLS:
        b, e = baseline.cell(name), experimental.cell(name)
        if b is None or e is None or b == 0:
            cells[name] = None
        else:
            cells[name] = (b - e) / b * 100.0
    return RelativeImprovementReport(label, cells, baseline.neutral_vs_emotional_gap,
                                     experimental.neutral_vs_emotional_gap)


def _impostors_of(scores):
    if isinstance(scores, TrialScoreSet):
        return scores.impostor_scores()
    return np.asarray(scores, dtype=np.float64).reshape(-1)


def far_at_threshold(scores, threshold):
    """Fraction of impostor scores at or above threshold"""
    impostors = _impostors_of(scores)
    if impostors.size == 0:
        raise DegenerateTrialSetError("degenerate trial set: no impostor trials")
    return float(np.count_nonzero(impostors >= threshold) / impostors.size)


def frr_at_threshold(scores, threshold):
    """Fraction of target scores below threshold"""
    targets = scores.target_scores()
    if targets.size == 0:
        raise DegenerateTrialSetError("degenerate trial set: no target trials")
    return float(np.count_nonzero(targets < threshold) / targets.size)


def calibrate_threshold(dev_scores, target_far):
    """Smallest observed score whose FAR on the dev set is at most target_far"""
    impostors = np.sort(_impostors_of(dev_scores))
    if impostors.size == 0:
        raise DegenerateTrialSetError("degenerate trial set: no impostor trials")
    observed = impostors
    if isinstance(dev_scores, TrialScoreSet):
        observed = np.unique(np.concatenate([impostors, dev_scores.target_scores()]))

    far = (impostors.size - np.searchsorted(impostors, observed, side="left")) / impostors.size
    ok = np.flatnonzero(far <= target_far)
    if ok.size:
        return float(observed[ok[0]])
    return float(np.nextafter(impostors[-1], np.inf))


def media_far_check(media_trials, threshold, target_far=0.03):
    """FAR of media-proxy impostor trials, overall and split by neutral/emotional speech"""
    groups = {
        "overall": media_trials,
        "neutral": media_trials.subset(["neutral"]),
        "emotional": media_trials.subset(EMOTIONAL),
    }
    far, within, counts = {}, {}, {}
    for name, group in groups.items():
        impostors = group.impostor_scores()
        counts[name] = int(impostors.size)
        if impostors.size == 0:
            far[name], within[name] = None, None
            continue
        far[name] = far_at_threshold(impostors, threshold)
        within[name] = far[name] <= target_far
    logger.info(f"Media FAR at threshold {threshold:.4f}: {far['overall']}")
    return MediaFarReport(float(threshold), float(target_far), far, within, counts)


def det_points(scores):
    """FAR/FRR at every distinct score, for external DET plotting"""
    targets, impostors = _split_scores(scores)
    thresholds = np.unique(np.concatenate([targets, impostors]))
    far, frr = error_rates(targets, impostors, thresholds)
    return pd.DataFrame({"threshold": thresholds, "far": far, "frr": frr})


def build_trials(profiles, test_items, max_impostor_trials=None, seed=0):
    """Score every test d-vector against every profile.

    profiles: {speaker_id: SpeakerProfile}; test_items: [(speaker_id, emotion, DVector)].
    Targets are kept in full; impostor trials beyond max_impostor_trials are
    subsampled with a seeded draw.
    """
    speakers = sorted(profiles)
    if not speakers or not test_items:
        return TrialScoreSet([])
    centroids = np.stack([profiles[s].centroid.values for s in speakers])
    vectors = np.stack([item[2].values for item in test_items])
    scores = np.clip(vectors @ centroids.T, -1.0, 1.0)

    targets, impostors = [], []
    for row, (speaker, emotion, _) in enumerate(test_items):
        for col, profile_speaker in enumerate(speakers):
            trial = Trial(profile_speaker, speaker, emotion, float(scores[row, col]))
            (targets if trial.is_target else impostors).append(trial)

    if max_impostor_trials is not None and len(impostors) > max_impostor_trials:
        keep = SeededRng(seed).child("impostors").choice(len(impostors), size=max_impostor_trials, replace=False)
        impostors = [impostors[i] for i in np.sort(keep)]

    return TrialScoreSet(targets + impostors)


def _pair_cosines(neutral, emotional):
    a = np.stack([d.values for d in neutral])
    b = np.stack([d.values for d in emotional])
    return np.clip(a @ b.T, -1.0, 1.0).reshape(-1)


def cosine_similarity_report(encoder, speakers):
    """Same-speaker cosine between neutral and emotional d-vectors.

    speakers: {speaker_id: {"neutral": [mels], "authentic": [mels], "synthetic": [mels]}}
    """
    rows = []
    for speaker in sorted(speakers):
        cells = speakers[speaker]
        for name in ("neutral", "authentic", "synthetic"):
            if len(cells.get(name, [])) < 2:
                raise InsufficientUtterancesError(
                    f"insufficient utterances: speaker {speaker} has {len(cells.get(name, []))} {name}"
                )
        neutral = encoder.embed_many(cells["neutral"])
        for case in ("authentic", "synthetic"):
            cosines = _pair_cosines(neutral, encoder.embed_many(cells[case]))
            rows.append({
                "speaker": speaker,
                "case": case,
                "mean": float(cosines.mean()),
                "std": float(cosines.std()),
                "pairs": int(cosines.size),
            })
    return CosineSimilarityReport(rows)


def project_embeddings_2d(vectors, labels, seed=0, iterations=200):
    """Top-2 principal-component coordinates as (x, y, label) tuples.

    Subspace iteration from a seeded start, then a 2x2 Rayleigh-Ritz step;
    each axis is signed so its first nonzero loading is positive.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise InsufficientUtterancesError("insufficient utterances: projection needs at least 3 vectors")
    if len(labels) != X.shape[0]:
        raise ValueError("one label per vector is required")

    X = X - X.mean(axis=0)
    dim = X.shape[1]
    scale = np.abs(X).max()
    axes = np.zeros((dim, 2))
    if scale > 0 and dim >= 1:
        k = min(2, dim)
        Q, _ = np.linalg.qr(SeededRng(seed).child("pca").normal(size=(dim, k)))
        for _ in range(iterations):
            Q, _ = np.linalg.qr(X.T @ (X @ Q))
        ritz = Q.T @ (X.T @ (X @ Q))
        values, rotation = np.linalg.eigh(ritz)
        order = np.argsort(values)[::-1]
        values, Q = values[order], Q @ rotation[:, order]

        top = max(values[0], 0.0)
        for j in range(k):
            if values[j] <= 1e-20 * max(top, 1.0) or (j > 0 and values[j] <= 1e-12 * top):
                continue
            axis = Q[:, j]
            nonzero = np.flatnonzero(np.abs(axis) > 1e-12)
            if nonzero.size and axis[nonzero[0]] < 0:
                axis = -axis
            axes[:, j] = axis

    coords = X @ axes
    return [(float(x), float(y), label) for (x, y), label in zip(coords, labels)]
