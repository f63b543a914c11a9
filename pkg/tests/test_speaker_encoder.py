import sys
import os
import tempfile
import unittest
from unittest import mock

import numpy as np

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.models.neural import SeededRng, grad_check
from app.models.speaker_encoder import (
    DVector,
    SpeakerProfile,
    Ge2eParams,
    Ge2eBatch,
    SvTrainConfig,
    SpeakerEncoder,
    ge2e_similarity,
    ge2e_loss,
    enroll,
    verify,
    cosine_score,
    save_profile,
    load_profile,
    train_sv,
)
from app.utils.errors import (
    DimensionError,
    SpeakerCountError,
    CorpusTooSmallError,
    EmptyEnrollmentError,
    CheckpointError,
)


def small_encoder(seed=0, layers=2, hidden=6, dim=5):
    config = SvTrainConfig(lstm_layers=layers, hidden_size=hidden, dvector_dim=dim)
    return SpeakerEncoder.initialize(config, SeededRng(seed))


def toy_speaker_mels(speakers, utterances, frames=30, seed=0):
    """Each speaker has its own spectral offset plus per-frame noise"""
    rng = SeededRng(seed)
    corpus = {}
    for s in range(speakers):
        offset = rng.normal(0.0, 2.0, size=40)
        corpus[f"spk{s:02d}"] = [offset + rng.normal(0.0, 0.5, size=(frames, 40)) for _ in range(utterances)]
    return corpus


class TestGe2e(unittest.TestCase):
    """GE2E similarity matrix and softmax loss"""

    def setUp(self):
        """Two speakers with orthogonal, repeated embeddings"""
        self.orthogonal = np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]])

    def test_orthogonal_similarity(self):
        """Own centroid scores 1, the other speaker 0"""
        S = ge2e_similarity(self.orthogonal, Ge2eParams(1.0, 0.0))
        np.testing.assert_allclose(S[0, :, 0], [1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(S[0, :, 1], [0.0, 0.0], atol=1e-12)

    def test_orthogonal_loss(self):
        """Loss is 4 log(1 + 1/e)"""
        loss = ge2e_loss(ge2e_similarity(self.orthogonal, Ge2eParams(1.0, 0.0)))
        self.assertAlmostEqual(loss, 4 * np.log1p(np.exp(-1.0)), places=12)
        self.assertAlmostEqual(loss, 1.25305, delta=1e-5)

    def test_identical_embeddings(self):
        """Identical embeddings give every entry w + b"""
        E = np.tile(np.array([0.0, 1.0, 0.0]), (2, 3, 1))
        np.testing.assert_allclose(ge2e_similarity(E, Ge2eParams(1.0, 0.0)), np.ones((2, 3, 2)))

    def test_uniform_loss(self):
        """Equal similarities give N M log N"""
        self.assertAlmostEqual(ge2e_loss(np.full((3, 4, 3), 0.7)), 12 * np.log(3), places=12)

    def test_monotone_in_own_score(self):
        """Raising the own-speaker similarity lowers the loss"""
        S = SeededRng(1).normal(size=(3, 2, 3))
        raised = S.copy()
        raised[1, 0, 1] += 0.1
        self.assertLess(ge2e_loss(raised), ge2e_loss(S))

    def test_leave_one_out(self):
        """With two utterances the own centroid is the other utterance"""
        E = SeededRng(2).normal(size=(3, 2, 4))
        E /= np.linalg.norm(E, axis=-1, keepdims=True)
        S = ge2e_similarity(E, Ge2eParams(1.0, 0.0))
        for j in range(3):
            self.assertAlmostEqual(S[j, 0, j], float(E[j, 0] @ E[j, 1]), places=12)

    def test_scale_linearity(self):
        """Doubling w with b = 0 doubles every entry"""
        E = SeededRng(3).normal(size=(2, 3, 4))
        np.testing.assert_allclose(ge2e_similarity(E, Ge2eParams(2.0, 0.0)),
                                   2 * ge2e_similarity(E, Ge2eParams(1.0, 0.0)))

    def test_single_speaker(self):
        """One speaker is rejected"""
        with self.assertRaises(SpeakerCountError):
            ge2e_similarity(np.ones((1, 2, 3)), Ge2eParams())
        with self.assertRaises(SpeakerCountError):
            Ge2eBatch(np.zeros((1, 2, 5, 40)))

    def test_gradients(self):
        """End-to-end GE2E gradients pass the finite-difference check on a 2 x 2 batch"""
        encoder = small_encoder(seed=4, layers=2, hidden=4, dim=3)
        encoder.ge2e_w[0], encoder.ge2e_b[0] = 3.0, -1.0
        batch = Ge2eBatch(SeededRng(5).normal(size=(2, 2, 4, 40)))

        def loss():
            flat, _ = encoder.forward_batch(batch.features.reshape(4, 4, 40))
            return ge2e_loss(ge2e_similarity(flat.reshape(2, 2, -1), encoder.ge2e))

        _, grads = encoder.ge2e_step(batch)
        params = encoder.trainable_params()
        self.assertEqual(sorted(grads), sorted(params))
        error = grad_check(loss, params, grads, epsilon=1e-5, max_entries_per_param=40, rng=SeededRng(6))
        self.assertLess(error, 1e-3)


class TestEmbedding(unittest.TestCase):
    """d-vector extraction, enrollment and verification"""

    def setUp(self):
        """Seeded untrained encoder and a few random mels"""
        self.encoder = small_encoder(seed=9)
        rng = SeededRng(10)
        self.mels = [rng.normal(size=(15, 40)) for _ in range(3)]

    def test_unit_norm(self):
        """Embeddings have unit norm"""
        d = self.encoder.embed(self.mels[0])
        self.assertAlmostEqual(np.linalg.norm(d.values), 1.0, delta=1e-6)
        self.assertEqual(d.dim, 5)

    def test_deterministic(self):
        """Embedding the same input twice is identical"""
        np.testing.assert_array_equal(self.encoder.embed(self.mels[0]).values,
                                      self.encoder.embed(self.mels[0].copy()).values)

    def test_order_sensitive(self):
        """Reversing the frames changes the embedding"""
        forward = self.encoder.embed(self.mels[0])
        backward = self.encoder.embed(self.mels[0][::-1])
        self.assertLess(cosine_score(forward, backward), 1 - 1e-6)

    def test_empty(self):
        """An empty spectrogram cannot be embedded"""
        with self.assertRaises(DimensionError):
            self.encoder.embed(np.zeros((0, 40)))

    def test_embed_many_matches_embed(self):
        """Batched embedding preserves order and values"""
        mels = [self.mels[0], np.zeros((7, 40)) + 0.3, self.mels[1]]
        batched = self.encoder.embed_many(mels)
        for mel, d in zip(mels, batched):
            np.testing.assert_allclose(d.values, self.encoder.embed(mel).values, atol=1e-10)

    def test_enroll_single(self):
        """A one-utterance profile is that utterance's d-vector"""
        profile = enroll(self.mels[:1], self.encoder, "a")
        np.testing.assert_allclose(profile.centroid.values, self.encoder.embed(self.mels[0]).values, atol=1e-12)
        self.assertAlmostEqual(verify(profile, self.mels[0], self.encoder), 1.0, delta=1e-6)

    def test_enroll_idempotent_and_symmetric(self):
        """Duplicates and ordering do not change the centroid"""
        one = enroll(self.mels[:1], self.encoder)
        two = enroll([self.mels[0], self.mels[0]], self.encoder)
        np.testing.assert_allclose(one.centroid.values, two.centroid.values, atol=1e-10)
        ab = enroll([self.mels[0], self.mels[1]], self.encoder)
        ba = enroll([self.mels[1], self.mels[0]], self.encoder)
        np.testing.assert_allclose(ab.centroid.values, ba.centroid.values, atol=1e-10)

    def test_empty_enrollment(self):
        """No utterances, no profile"""
        with self.assertRaises(EmptyEnrollmentError):
            enroll([], self.encoder, "a")

    def test_cosine_properties(self):
        """Orthogonal vectors score 0; scores are symmetric and bounded"""
        a, b = DVector(np.array([1.0, 0.0])), DVector(np.array([0.0, 1.0]))
        self.assertEqual(cosine_score(a, b), 0.0)
        c = DVector.normalized(np.array([0.3, -0.8]))
        self.assertEqual(cosine_score(a, c), cosine_score(c, a))
        self.assertTrue(-1.0 <= cosine_score(c, a) <= 1.0)

    def test_dimension_mismatch(self):
        """Profile and model dimensions must agree"""
        profile = SpeakerProfile("x", DVector(np.array([1.0, 0.0])), 1)
        with self.assertRaises(DimensionError):
            verify(profile, self.mels[0], self.encoder)

    def test_profile_json(self):
        """Profiles survive JSON serialization"""
        profile = enroll(self.mels, self.encoder, "spk01")
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "spk01.json")
            save_profile(path, profile)
            loaded = load_profile(path)
        self.assertEqual(loaded.speaker_id, "spk01")
        self.assertEqual(loaded.num_enrollment_utterances, 3)
        np.testing.assert_allclose(loaded.centroid.values, profile.centroid.values, atol=1e-12)

    def test_checkpoint(self):
        """Saved encoders reload with identical embeddings and hash"""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "sv.evck")
            digest = self.encoder.save(path)
            loaded = SpeakerEncoder.load(path)
        self.assertEqual(digest, self.encoder.content_hash())
        self.assertEqual(loaded.content_hash(), digest)
        np.testing.assert_array_equal(loaded.embed(self.mels[1]).values, self.encoder.embed(self.mels[1]).values)

    def test_bad_state(self):
        """A state dict without encoder keys is rejected"""
        with self.assertRaises(CheckpointError):
            SpeakerEncoder.from_state_dict({"lstm.0.W_x": np.zeros((4, 40))})


class TestTraining(unittest.TestCase):
    """GE2E training loop"""

    def setUp(self):
        """Small corpus and a fast configuration"""
        self.corpus = toy_speaker_mels(12, 8)
        self.config = SvTrainConfig(speakers_per_batch=4, utterances_per_speaker=3, lstm_layers=1,
                                    hidden_size=8, dvector_dim=6, base_lr=1e-2, max_iterations=60,
                                    crop_frames=20, log_every=20)

    def test_corpus_too_small(self):
        """Fewer eligible speakers than N is an error"""
        config = SvTrainConfig(speakers_per_batch=8, utterances_per_speaker=4)
        with self.assertRaises(CorpusTooSmallError):
            train_sv(toy_speaker_mels(4, 6), config, seed=0)

    def test_loss_decreases(self):
        """The GE2E loss goes down over training"""
        _, log = train_sv(self.corpus, self.config, seed=1)
        self.assertEqual(list(log.columns), ["iter", "loss", "lr", "grad_norm", "val_eer"])
        self.assertEqual(len(log), 60)
        self.assertLess(log["loss"].iloc[-15:].mean(), log["loss"].iloc[:15].mean())

    def test_reproducible(self):
        """Same seed, same checkpoint hash; another seed differs"""
        config = SvTrainConfig(speakers_per_batch=4, utterances_per_speaker=3, lstm_layers=1,
                               hidden_size=4, dvector_dim=3, max_iterations=5, crop_frames=10)
        first, _ = train_sv(self.corpus, config, seed=3)
        second, _ = train_sv(self.corpus, config, seed=3)
        other, _ = train_sv(self.corpus, config, seed=4)
        self.assertEqual(first.content_hash(), second.content_hash())
        self.assertNotEqual(first.content_hash(), other.content_hash())
        self.assertGreater(first.ge2e.w, 0)

    def test_validation_tracked(self):
        """Validation EER is recorded every validate_every iterations"""
        config = SvTrainConfig(speakers_per_batch=4, utterances_per_speaker=3, lstm_layers=1,
                               hidden_size=4, dvector_dim=3, max_iterations=10, crop_frames=10,
                               validate_every=5, patience=5, enroll_utterances=2)
        validation = toy_speaker_mels(3, 4, seed=7)
        _, log = train_sv(self.corpus, config, seed=0, validation_mels=validation)
        recorded = log["val_eer"].dropna()
        self.assertEqual(list(recorded.index), [4, 9])
        self.assertTrue(((recorded >= 0) & (recorded <= 1)).all())

    def test_early_stopping_patience(self):
        """Rising validation EER stops training on the patience-th stale check"""
        config = SvTrainConfig(speakers_per_batch=4, utterances_per_speaker=3, lstm_layers=1,
                               hidden_size=4, dvector_dim=3, max_iterations=40, crop_frames=10,
                               validate_every=2, patience=2, enroll_utterances=2)
        validation = toy_speaker_mels(3, 4, seed=7)
        with mock.patch("app.models.speaker_encoder.validation_eer", side_effect=[0.2, 0.3, 0.4, 0.5]):
            _, log = train_sv(self.corpus, config, seed=0, validation_mels=validation)
        self.assertEqual(len(log), 6)
        self.assertEqual(list(log["val_eer"].dropna()), [0.2, 0.3, 0.4])

    def test_single_validation_speaker(self):
        """One validation speaker disables early stopping with a warning"""
        config = SvTrainConfig(speakers_per_batch=4, utterances_per_speaker=3, lstm_layers=1,
                               hidden_size=4, dvector_dim=3, max_iterations=2, crop_frames=10)
        with self.assertLogs("evsv", level="WARNING"):
            _, log = train_sv(self.corpus, config, seed=0, validation_mels=toy_speaker_mels(1, 4))
        self.assertTrue(log["val_eer"].isna().all())


if __name__ == '__main__':
    unittest.main()
