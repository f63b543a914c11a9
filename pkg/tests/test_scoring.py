import sys
import os
import unittest

import numpy as np
from sklearn.decomposition import PCA
from sklearn.metrics import silhouette_score, pairwise_distances

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.models.neural import SeededRng
from app.models.scoring import (
    Trial,
    TrialScoreSet,
    EerReport,
    compute_eer,
    per_emotion_breakdown,
    relative_improvement,
    far_at_threshold,
    frr_at_threshold,
    calibrate_threshold,
    media_far_check,
    det_points,
    build_trials,
    cosine_similarity_report,
    project_embeddings_2d,
)
from app.models.speaker_encoder import DVector, SpeakerProfile, SpeakerEncoder, SvTrainConfig
from app.utils.errors import DegenerateTrialSetError, InsufficientUtterancesError, InvalidEmotionError


def make_trials(targets, impostors, emotion="neutral"):
    trials = [Trial("s1", "s1", emotion, float(s)) for s in targets]
    trials += [Trial("s1", "s2", emotion, float(s)) for s in impostors]
    return trials


def brute_force_eer(targets, impostors):
    """Plain-loop threshold sweep with linear interpolation at the first crossing"""
    candidates = sorted(set(targets) | set(impostors))
    candidates.append(np.nextafter(candidates[-1], np.inf))
    previous = None
    for t in candidates:
        far = sum(1 for s in impostors if s >= t) / len(impostors)
        frr = sum(1 for s in targets if s < t) / len(targets)
        if far - frr <= 0:
            if previous is None:
                return far
            p_far, p_frr = previous
            alpha = (p_far - p_frr) / ((p_far - p_frr) - (far - frr))
            return p_far + alpha * (far - p_far)
        previous = (far, frr)
    raise AssertionError("no crossing found")


def gap_trials(low_targets, low_impostors, emotions):
    """1000 targets / 1000 impostors whose EER is exactly count/1000"""
    trials = []
    for i in range(1000):
        emotion = emotions[i % len(emotions)]
        score = -0.5 if i < low_targets else 1.0
        trials.append(Trial("a", "a", emotion, score))
        score = 0.9 if i < low_impostors else 0.0
        trials.append(Trial("a", "b", emotion, score))
    return trials


class TestTrials(unittest.TestCase):
    """Trial value object"""

    def test_target_flag_derived(self):
        """is_target defaults to id equality"""
        self.assertTrue(Trial("a", "a", "neutral", 0.3).is_target)
        self.assertFalse(Trial("a", "b", "neutral", 0.3).is_target)

    def test_inconsistent_flag(self):
        """An is_target flag that contradicts the ids is rejected"""
        with self.assertRaises(ValueError):
            Trial("a", "b", "neutral", 0.3, is_target=True)

    def test_invalid_emotion(self):
        """Unknown emotion labels are rejected"""
        with self.assertRaises(InvalidEmotionError):
            Trial("a", "a", "bored", 0.3)

    def test_frame_export(self):
        """to_frame has one row per trial"""
        frame = TrialScoreSet(make_trials([0.9], [0.1, 0.2])).to_frame()
        self.assertEqual(len(frame), 3)
        self.assertEqual(int(frame["is_target"].sum()), 1)


class TestEer(unittest.TestCase):
    """Equal error rate computation"""

    def test_separable(self):
        """Perfectly separated scores give zero EER"""
        eer, threshold = compute_eer(TrialScoreSet(make_trials([0.9, 0.8], [0.1, 0.2])))
        self.assertEqual(eer, 0.0)
        self.assertTrue(0.2 < threshold <= 0.8)

    def test_indistinguishable(self):
        """Identical target and impostor scores give 0.5"""
        eer, _ = compute_eer(TrialScoreSet(make_trials([0.1, 0.9], [0.1, 0.9])))
        self.assertAlmostEqual(eer, 0.5)

    def test_matches_brute_force(self):
        """100 seeded random sets agree with an exhaustive sweep"""
        rng = SeededRng(11)
        for case in range(100):
            n_t, n_i = int(rng.integers(1, 40)), int(rng.integers(1, 200))
            targets = list(np.round(rng.normal(0.5, 0.3, n_t), 2))
            impostors = list(np.round(rng.normal(0.1, 0.3, n_i), 2))
            eer, _ = compute_eer(TrialScoreSet(make_trials(targets, impostors)))
            self.assertAlmostEqual(eer, brute_force_eer(targets, impostors), delta=1e-9, msg=str(case))

    def test_monotone_invariance(self):
        """Strictly increasing transforms leave the EER unchanged"""
        rng = SeededRng(3)
        targets, impostors = rng.normal(0.4, 0.3, 50), rng.normal(0.0, 0.3, 150)
        base, _ = compute_eer(TrialScoreSet(make_trials(targets, impostors)))
        warped, _ = compute_eer(TrialScoreSet(make_trials(np.tanh(3 * targets) + 0.1,
                                                          np.tanh(3 * impostors) + 0.1)))
        self.assertAlmostEqual(base, warped, places=12)

    def test_degenerate(self):
        """Sets without targets or without impostors are rejected"""
        with self.assertRaises(DegenerateTrialSetError):
            compute_eer(TrialScoreSet(make_trials([], [0.1])))
        with self.assertRaises(DegenerateTrialSetError):
            compute_eer(TrialScoreSet(make_trials([0.1], [])))

    def test_tied_top_score(self):
        """A target tied with the top impostor still yields a crossing"""
        eer, _ = compute_eer(TrialScoreSet(make_trials([0.5, 0.9], [0.9])))
        self.assertAlmostEqual(eer, brute_force_eer([0.5, 0.9], [0.9]))

    def test_det_points(self):
        """DET export is monotone in threshold"""
        rng = SeededRng(4)
        frame = det_points(TrialScoreSet(make_trials(rng.normal(1, 1, 30), rng.normal(0, 1, 30))))
        self.assertEqual(list(frame.columns), ["threshold", "far", "frr"])
        self.assertTrue(np.all(np.diff(frame["far"]) <= 0))
        self.assertTrue(np.all(np.diff(frame["frr"]) >= 0))


class TestBreakdown(unittest.TestCase):
    """Per-emotion EER and relative improvement"""

    def test_neutral_only(self):
        """A neutral-only set has a single cell and no gap"""
        report = per_emotion_breakdown(TrialScoreSet(make_trials([0.9, 0.7], [0.1, 0.8])))
        self.assertEqual(list(report.per_emotion_eer), ["neutral"])
        self.assertIsNone(report.neutral_vs_emotional_gap)

    def test_hand_built_gap(self):
        """Neutral EER 0.05 and emotional EER 0.063 give a 1.3-point gap"""
        trials = gap_trials(50, 50, ["neutral"]) + gap_trials(63, 63, ["angry", "happy"])
        report = per_emotion_breakdown(TrialScoreSet(trials))
        self.assertAlmostEqual(report.per_emotion_eer["neutral"], 0.05, places=12)
        self.assertAlmostEqual(report.per_emotion_eer["emotional"], 0.063, places=12)
        self.assertAlmostEqual(report.neutral_vs_emotional_gap, 0.013, places=12)
        self.assertNotIn("sad", report.per_emotion_eer)

    def test_subset_oracle(self):
        """Each cell equals compute_eer on the manually filtered trials"""
        rng = SeededRng(21)
        emotions = ["neutral", "calm", "angry", "happy", "sad"]
        trials = []
        for i in range(400):
            emotion = emotions[i % 5]
            trials.append(Trial("x", "x", emotion, float(rng.normal(0.6 - 0.05 * (i % 5), 0.2))))
            trials.append(Trial("x", "y", emotion, float(rng.normal(0.2, 0.2))))
        report = per_emotion_breakdown(TrialScoreSet(trials))
        for emotion in emotions:
            manual = TrialScoreSet([t for t in trials if t.emotion == emotion])
            self.assertAlmostEqual(report.per_emotion_eer[emotion], compute_eer(manual)[0], places=12)
        pooled = TrialScoreSet([t for t in trials if t.emotion != "neutral"])
        self.assertAlmostEqual(report.per_emotion_eer["emotional"], compute_eer(pooled)[0], places=12)

    def test_relative_improvement(self):
        """Signed percentages per cell"""
        baseline = EerReport(0.05, 0.3, {"neutral": 0.04, "emotional": 0.05, "sad": 0.0})
        experimental = EerReport(0.04818, 0.3, {"neutral": 0.05, "emotional": 0.05, "sad": 0.01})
        report = relative_improvement(baseline, experimental)
        self.assertEqual(round(report.cells["overall"], 2), 3.64)
        self.assertAlmostEqual(report.cells["emotional"], 0.0)
        self.assertLess(report.cells["neutral"], 0)
        self.assertIsNone(report.cells["sad"])
        self.assertIsNone(report.cells["calm"])


class TestThresholds(unittest.TestCase):
    """FAR/FRR at a threshold, calibration and the media check"""

    def test_far_counting(self):
        """One of four impostors at or above 0.35"""
        self.assertEqual(far_at_threshold([0.1, 0.2, 0.3, 0.4], 0.35), 0.25)
        scores = TrialScoreSet(make_trials([0.5], [0.1, 0.2, 0.3, 0.4]))
        self.assertEqual(far_at_threshold(scores, 0.35), 0.25)
        self.assertEqual(frr_at_threshold(scores, 0.6), 1.0)

    def test_far_non_increasing(self):
        """FAR never rises with the threshold"""
        impostors = SeededRng(9).normal(size=200)
        values = [far_at_threshold(impostors, t) for t in np.linspace(-3, 3, 61)]
        self.assertTrue(all(a >= b for a, b in zip(values, values[1:])))

    def test_far_degenerate(self):
        """No impostors means no FAR"""
        with self.assertRaises(DegenerateTrialSetError):
            far_at_threshold([], 0.5)

    def test_calibration(self):
        """Calibrated threshold meets the target on the dev set and is the smallest that does"""
        impostors = SeededRng(17).normal(size=1000)
        threshold = calibrate_threshold(impostors, 0.03)
        self.assertLessEqual(far_at_threshold(impostors, threshold), 0.03)
        below = np.sort(impostors)[np.sort(impostors) < threshold]
        self.assertGreater(far_at_threshold(impostors, below[-1]), 0.03)

    def test_calibration_beyond_scores(self):
        """A zero target lands just above the highest impostor"""
        threshold = calibrate_threshold([0.1, 0.4], 0.0)
        self.assertGreater(threshold, 0.4)
        self.assertEqual(far_at_threshold([0.1, 0.4], threshold), 0.0)

    def test_media_far(self):
        """Media FAR equals a brute-force count, split by speech style"""
        rng = SeededRng(5)
        trials = [Trial(f"p{i % 4}", f"m{i % 3}", ["neutral", "angry", "sad"][i % 3], float(s))
                  for i, s in enumerate(rng.normal(0.0, 0.4, 300))]
        report = media_far_check(TrialScoreSet(trials), 0.5, target_far=0.03)
        expected = sum(1 for t in trials if t.score >= 0.5) / len(trials)
        self.assertAlmostEqual(report.far["overall"], expected)
        neutral = [t for t in trials if t.emotion == "neutral"]
        self.assertAlmostEqual(report.far["neutral"], sum(t.score >= 0.5 for t in neutral) / len(neutral))
        self.assertEqual(report.impostor_trials["emotional"], 200)
        self.assertEqual(report.within_target["overall"], expected <= 0.03)


def unit(values):
    return DVector.normalized(np.asarray(values, dtype=np.float64))


class TestTrialBuilding(unittest.TestCase):
    """Exhaustive scoring of test d-vectors against profiles"""

    def setUp(self):
        """Two enrolled speakers and three test utterances"""
        self.profiles = {
            "a": SpeakerProfile("a", unit([1, 0, 0]), 3),
            "b": SpeakerProfile("b", unit([0, 1, 0]), 3),
        }
        self.items = [
            ("a", "neutral", unit([1, 0.1, 0])),
            ("b", "angry", unit([0.2, 1, 0])),
            ("c", "sad", unit([0, 0, 1])),
        ]

    def test_exhaustive(self):
        """Every item meets every profile"""
        trials = build_trials(self.profiles, self.items)
        self.assertEqual(len(trials), 6)
        self.assertEqual(len(trials.target_scores()), 2)
        self.assertEqual(len(trials.impostor_scores()), 4)
        target = [t for t in trials.trials if t.is_target and t.profile_speaker == "a"][0]
        self.assertAlmostEqual(target.score, 1 / np.sqrt(1.01))

    def test_impostor_cap(self):
        """The impostor cap keeps every target and subsamples reproducibly"""
        capped = build_trials(self.profiles, self.items, max_impostor_trials=2, seed=4)
        again = build_trials(self.profiles, self.items, max_impostor_trials=2, seed=4)
        self.assertEqual(len(capped.target_scores()), 2)
        self.assertEqual(len(capped.impostor_scores()), 2)
        self.assertEqual(capped.trials, again.trials)


class TestCosineSimilarity(unittest.TestCase):
    """Identity-preservation cosine report"""

    def setUp(self):
        """A small untrained encoder and random mels"""
        config = SvTrainConfig(lstm_layers=1, hidden_size=8, dvector_dim=6)
        self.encoder = SpeakerEncoder.initialize(config, SeededRng(2))
        rng = SeededRng(8)
        self.mels = [rng.normal(size=(12, 40)) for _ in range(5)]

    def test_identical_cells(self):
        """Identical authentic and synthetic lists give identical means"""
        report = cosine_similarity_report(self.encoder, {
            "spk": {"neutral": self.mels[:2], "authentic": self.mels[2:], "synthetic": self.mels[2:]},
        })
        authentic, synthetic = report.cell("spk", "authentic"), report.cell("spk", "synthetic")
        self.assertEqual(authentic["mean"], synthetic["mean"])
        self.assertEqual(authentic["pairs"], 6)
        self.assertTrue(-1 <= authentic["mean"] <= 1)
        self.assertGreaterEqual(authentic["std"], 0)

    def test_insufficient(self):
        """A cell with a single utterance is rejected"""
        with self.assertRaises(InsufficientUtterancesError):
            cosine_similarity_report(self.encoder, {
                "spk": {"neutral": self.mels[:2], "authentic": self.mels[2:3], "synthetic": self.mels[3:]},
            })


class TestProjection(unittest.TestCase):
    """Two-dimensional principal-component projection"""

    def test_planar_data_isometric(self):
        """Data in a 2-D subspace keeps all pairwise distances"""
        rng = SeededRng(31)
        basis, _ = np.linalg.qr(rng.normal(size=(10, 2)))
        X = rng.normal(size=(20, 2)) @ basis.T + 3.0
        points = project_embeddings_2d(X, list(range(20)))
        coords = np.array([(x, y) for x, y, _ in points])
        np.testing.assert_allclose(pairwise_distances(coords), pairwise_distances(X), atol=1e-6)

    def test_deterministic(self):
        """Repeated calls give identical coordinates"""
        X = SeededRng(1).normal(size=(15, 8))
        labels = ["x"] * 15
        self.assertEqual(project_embeddings_2d(X, labels), project_embeddings_2d(X.copy(), labels))

    def test_clusters_separate(self):
        """Three separated clusters in 64-D stay separated in 2-D and match PCA up to sign"""
        rng = SeededRng(12)
        centres = rng.normal(0, 6, size=(3, 64))
        X = np.concatenate([c + rng.normal(size=(30, 64)) for c in centres])
        labels = [i // 30 for i in range(90)]
        coords = np.array([(x, y) for x, y, _ in project_embeddings_2d(X, labels)])
        self.assertGreater(silhouette_score(coords, labels), 0.5)
        reference = PCA(n_components=2).fit_transform(X)
        np.testing.assert_allclose(np.abs(coords), np.abs(reference), atol=1e-6)

    def test_rank_one(self):
        """Collinear data zero-fills the second axis"""
        X = np.outer(np.arange(5.0), [1.0, 2.0, 2.0])
        coords = np.array([(x, y) for x, y, _ in project_embeddings_2d(X, list("abcde"))])
        np.testing.assert_array_equal(coords[:, 1], np.zeros(5))
        np.testing.assert_allclose(np.abs(np.diff(coords[:, 0])), 3.0)

    def test_too_few(self):
        """At least three vectors are needed"""
        with self.assertRaises(InsufficientUtterancesError):
            project_embeddings_2d(np.eye(2), ["a", "b"])


if __name__ == '__main__':
    unittest.main()
