"""LSTM d-vector speaker encoder trained with the GE2E softmax loss.

mel frames -> input standardization -> LSTM stack -> mean over time ->
linear projection -> L2 normalization = d-vector
"""

import copy
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd
from scipy.special import logsumexp, softmax
from tqdm import tqdm

from app.models.neural import (
    SeededRng,
    DenseLayer,
    LstmLayer,
    LstmStack,
    AdamState,
    adam_step,
    effective_lr,
    clip_gradients,
)
from app.models import scoring
from app.utils.config import N_MELS, DEFAULT_OPTIMIZER
from app.utils.errors import (
    DimensionError,
    SpeakerCountError,
    CorpusTooSmallError,
    EmptyEnrollmentError,
    DegenerateTrialSetError,
    CheckpointError,
)
from app.utils.logger import logger
from app.utils.serialization import save_checkpoint, load_checkpoint, checkpoint_hash, dump_json, load_json

NORM_FLOOR = 1e-12
W_FLOOR = 1e-6


@dataclass(frozen=True)
class DVector:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if abs(np.linalg.norm(values) - 1.0) > 1e-6:
            raise ValueError(f"d-vector must have unit norm, got {np.linalg.norm(values):.8f}")
        object.__setattr__(self, "values", values)

    @property
    def dim(self):
        return self.values.size

    @classmethod
    def normalized(cls, raw):
        raw = np.asarray(raw, dtype=np.float64)
        return cls(raw / max(np.linalg.norm(raw), NORM_FLOOR))


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    centroid: DVector
    num_enrollment_utterances: int

    def __post_init__(self):
        if self.num_enrollment_utterances < 1:
            raise EmptyEnrollmentError()

    def to_dict(self):
        return {
            "speaker_id": self.speaker_id,
            "dim": self.centroid.dim,
            "values": [float(v) for v in self.centroid.values],
            "num_enrollment_utterances": int(self.num_enrollment_utterances),
        }

    @classmethod
    def from_dict(cls, data):
        values = np.asarray(data["values"], dtype=np.float64)
        if values.size != int(data["dim"]):
            raise DimensionError(f"dimension error: profile says dim {data['dim']} but has {values.size} values")
        return cls(str(data["speaker_id"]), DVector(values), int(data["num_enrollment_utterances"]))


def save_profile(path, profile):
    dump_json(path, profile.to_dict())


def load_profile(path):
    return SpeakerProfile.from_dict(load_json(path))


@dataclass
class Ge2eParams:
    w: float = 10.0
    b: float = -5.0

    def __post_init__(self):
        if not self.w > 0:
            raise ValueError("GE2E scale w must be positive")


@dataclass
class Ge2eBatch:
    """N speakers x M utterances of equal-length mel crops, shape (N, M, T, 40)"""
    features: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 4 or features.shape[-1] != N_MELS:
            raise DimensionError(f"dimension error: GE2E batch must be N x M x T x {N_MELS}, got {features.shape}")
        if features.shape[0] < 2:
            raise SpeakerCountError()
        if features.shape[1] < 2:
            raise DimensionError("dimension error: GE2E needs at least 2 utterances per speaker")
        self.features = features

    @property
    def N(self):
        return self.features.shape[0]

    @property
    def M(self):
        return self.features.shape[1]


@dataclass
class SvTrainConfig:
    speakers_per_batch: int = 8
    utterances_per_speaker: int = 4
    lstm_layers: int = 2
    hidden_size: int = 96
    dvector_dim: int = 64
    base_lr: float = DEFAULT_OPTIMIZER["base_lr"]
    decay_rate: float = DEFAULT_OPTIMIZER["decay_rate"]
    decay_every: int = DEFAULT_OPTIMIZER["decay_every"]
    max_iterations: int = 300
    crop_frames: int = 100
    clip_norm: float = 5.0
    patience: int = 3
    validate_every: int = 50
    enroll_utterances: int = 5
    log_every: int = 50

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"SvTrainConfig.{name} must be positive, got {value}")

    def optimizer(self):
        return AdamState(base_lr=self.base_lr, decay_rate=self.decay_rate, decay_every=self.decay_every)


# GE2E similarity and loss

def _check_embeddings(embeddings):
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 3:
        raise DimensionError(f"dimension error: embeddings must be N x M x d, got {embeddings.shape}")
    if embeddings.shape[0] < 2:
        raise SpeakerCountError()
    if embeddings.shape[1] < 2:
        raise DimensionError("dimension error: GE2E needs at least 2 utterances per speaker")
    return embeddings


def _similarity_parts(E):
    N, M, _ = E.shape
    sums = E.sum(axis=1)
    centroids = sums / M
    held_out = (sums[:, None, :] - E) / (M - 1)

    e_norm = np.maximum(np.linalg.norm(E, axis=-1), NORM_FLOOR)
    c_norm = np.maximum(np.linalg.norm(centroids, axis=-1), NORM_FLOOR)
    h_norm = np.maximum(np.linalg.norm(held_out, axis=-1), NORM_FLOOR)

    cos_other = np.einsum("jid,kd->jik", E, centroids) / (e_norm[:, :, None] * c_norm[None, None, :])
    cos_own = np.sum(E * held_out, axis=-1) / (e_norm * h_norm)

    own = np.eye(N, dtype=bool)[:, None, :].repeat(M, axis=1)
    cos = np.where(own, cos_own[:, :, None], cos_other)
    return cos, (centroids, held_out, e_norm, c_norm, h_norm, cos_other, cos_own, own)


def ge2e_similarity(embeddings, params):
    """S[j, i, k] = w * cos(e_ji, c_k) + b, own centroid excluding e_ji"""
    E = _check_embeddings(embeddings)
    cos, _ = _similarity_parts(E)
    return params.w * cos + params.b


def ge2e_similarity_backward(dS, embeddings, params):
    """Gradients of a scalar through S with respect to embeddings, w and b"""
    E = _check_embeddings(embeddings)
    N, M, _ = E.shape
    cos, (centroids, held_out, e_norm, c_norm, h_norm, cos_other, cos_own, own) = _similarity_parts(E)

    dw = float(np.sum(dS * cos))
    db = float(np.sum(dS))
    G = params.w * dS
    G_other = np.where(own, 0.0, G)
    G_own = np.sum(np.where(own, G, 0.0), axis=2)

    # Cross-speaker terms: cos(e_ji, c_k), c_k the mean of speaker k
    scaled = G_other / (e_norm[:, :, None] * c_norm[None, None, :])
    dE = np.einsum("jik,kd->jid", scaled, centroids)
    dE -= np.sum(G_other * cos_other, axis=2)[:, :, None] * E / (e_norm ** 2)[:, :, None]
    dC = np.einsum("jik,jid->kd", scaled, E)
    dC -= np.sum(G_other * cos_other, axis=(0, 1))[:, None] * centroids / (c_norm ** 2)[:, None]
    dE += dC[:, None, :] / M

    # Own-speaker terms against the leave-one-out centroid
    denom = (e_norm * h_norm)[:, :, None]
    dE += G_own[:, :, None] * (held_out / denom - cos_own[:, :, None] * E / (e_norm ** 2)[:, :, None])
    dH = G_own[:, :, None] * (E / denom - cos_own[:, :, None] * held_out / (h_norm ** 2)[:, :, None])
    dE += dH.sum(axis=1)[:, None, :] / (M - 1) - dH / (M - 1)

    return dE, dw, db


def ge2e_loss(similarity):
    """Softmax GE2E loss: sum over (j, i) of -S[j,i,j] + log sum_k exp S[j,i,k]"""
    S = np.asarray(similarity, dtype=np.float64)
    N = S.shape[0]
    own = S[np.arange(N), :, np.arange(N)]
    return float(np.sum(-own) + np.sum(logsumexp(S, axis=2)))


def ge2e_loss_grad(similarity):
    S = np.asarray(similarity, dtype=np.float64)
    dS = softmax(S, axis=2)
    N = S.shape[0]
    dS[np.arange(N), :, np.arange(N)] -= 1.0
    return dS


# Encoder

class SpeakerEncoder:
    def __init__(self, lstm, projection, input_mean=None, input_std=None, ge2e=None):
        self.lstm = lstm
        self.projection = projection
        self.input_mean = np.zeros(N_MELS) if input_mean is None else np.asarray(input_mean, dtype=np.float64)
        self.input_std = np.ones(N_MELS) if input_std is None else np.asarray(input_std, dtype=np.float64)
        ge2e = ge2e or Ge2eParams()
        self.ge2e_w = np.array([float(ge2e.w)])
        self.ge2e_b = np.array([float(ge2e.b)])

    @classmethod
    def initialize(cls, config, rng, input_mean=None, input_std=None):
        lstm = LstmStack.initialize(N_MELS, config.hidden_size, config.lstm_layers, rng.child("lstm"))
        projection = DenseLayer.initialize(config.hidden_size, config.dvector_dim, "linear", rng.child("projection"))
        return cls(lstm, projection, input_mean, input_std)

    @property
    def dvector_dim(self):
        return self.projection.out_dim

    @property
    def ge2e(self):
        return Ge2eParams(float(self.ge2e_w[0]), float(self.ge2e_b[0]))

    def trainable_params(self):
        params = {f"lstm.{k}": v for k, v in self.lstm.params().items()}
        params.update({f"proj.{k}": v for k, v in self.projection.params.items()})
        params["ge2e.w"] = self.ge2e_w
        params["ge2e.b"] = self.ge2e_b
        return params

    def state_dict(self):
        state = dict(self.trainable_params())
        state["input.mean"] = self.input_mean
        state["input.std"] = self.input_std
        return state

    def content_hash(self):
        return checkpoint_hash(self.state_dict())

    def save(self, path):
        return save_checkpoint(path, self.state_dict())

    @classmethod
    def from_state_dict(cls, state):
        try:
            layer_count = 1 + max(int(k.split(".")[1]) for k in state if k.startswith("lstm."))
            layers = []
            for index in range(layer_count):
                prefix = f"lstm.{index}."
                layers.append(LstmLayer(state[prefix + "W_x"].copy(), state[prefix + "W_h"].copy(),
                                        state[prefix + "b"].copy()))
            projection = DenseLayer(state["proj.weight"].copy(), state["proj.bias"].copy(), "linear")
            ge2e = Ge2eParams(float(state["ge2e.w"][0]), float(state["ge2e.b"][0]))
            return cls(LstmStack(layers), projection, state["input.mean"].copy(), state["input.std"].copy(), ge2e)
        except (KeyError, ValueError) as e:
            raise CheckpointError(f"not a speaker encoder checkpoint: {e}")

    @classmethod
    def load(cls, path):
        return cls.from_state_dict(load_checkpoint(path))

    def forward_batch(self, mels):
        """Embed equal-length mels (B, T, 40); returns (B, d) unit vectors and a cache"""
        mels = np.asarray(mels, dtype=np.float64)
        if mels.ndim != 3 or mels.shape[1] < 1 or mels.shape[2] != N_MELS:
            raise DimensionError(f"dimension error: expected (batch, frames>=1, {N_MELS}), got {mels.shape}")
        x = (mels - self.input_mean) / self.input_std
        hs, lstm_cache = self.lstm.forward(x)
        pooled = hs.mean(axis=1)
        raw, proj_cache = self.projection.forward(pooled)
        norms = np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), NORM_FLOOR)
        out = raw / norms
        return out, (hs.shape, lstm_cache, proj_cache, norms, out)

    def backward_batch(self, d_out, cache):
        hs_shape, lstm_cache, proj_cache, norms, out = cache
        d_raw = (d_out - out * np.sum(out * d_out, axis=1, keepdims=True)) / norms
        d_pooled, proj_grads = self.projection.backward(d_raw, proj_cache)
        d_hs = np.repeat(d_pooled[:, None, :] / hs_shape[1], hs_shape[1], axis=1)
        _, lstm_grads = self.lstm.backward(d_hs, lstm_cache)
        grads = {f"lstm.{k}": v for k, v in lstm_grads.items()}
        grads.update({f"proj.{k}": v for k, v in proj_grads.items()})
        return grads

    def ge2e_step(self, batch):
        """GE2E loss and gradients for every trainable parameter"""
        N, M, T, _ = batch.features.shape
        flat, cache = self.forward_batch(batch.features.reshape(N * M, T, N_MELS))
        E = flat.reshape(N, M, -1)
        params = self.ge2e
        S = ge2e_similarity(E, params)
        loss = ge2e_loss(S)
        dE, dw, db = ge2e_similarity_backward(ge2e_loss_grad(S), E, params)
        grads = self.backward_batch(dE.reshape(N * M, -1), cache)
        grads["ge2e.w"] = np.array([dw])
        grads["ge2e.b"] = np.array([db])
        return loss, grads

    def embed(self, mel):
        frames = mel.frames if hasattr(mel, "frames") else np.asarray(mel, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise DimensionError(f"dimension error: cannot embed spectrogram of shape {frames.shape}")
        out, _ = self.forward_batch(frames[None])
        return DVector.normalized(out[0])

    def embed_many(self, mels):
        """Embed a list of mels, batching those of equal length; order preserved"""
        frames = [m.frames if hasattr(m, "frames") else np.asarray(m, dtype=np.float64) for m in mels]
        result = [None] * len(frames)
        by_length = {}
        for index, f in enumerate(frames):
            by_length.setdefault(f.shape[0], []).append(index)
        for length in sorted(by_length):
            indices = by_length[length]
            out, _ = self.forward_batch(np.stack([frames[i] for i in indices]))
            for i, row in zip(indices, out):
                result[i] = DVector.normalized(row)
        return result


def enroll(mels, encoder, speaker_id=""):
    """Speaker profile as the re-normalized mean of utterance d-vectors"""
    if len(mels) == 0:
        raise EmptyEnrollmentError(f"empty enrollment for speaker '{speaker_id}'")
    vectors = np.stack([d.values for d in encoder.embed_many(mels)])
    return SpeakerProfile(speaker_id, DVector.normalized(vectors.mean(axis=0)), len(mels))


def cosine_score(centroid, dvector):
    if centroid.dim != dvector.dim:
        raise DimensionError(f"dimension error: profile dim {centroid.dim} vs embedding dim {dvector.dim}")
    return float(np.clip(centroid.values @ dvector.values, -1.0, 1.0))


def verify(profile, mel, encoder):
    """Cosine similarity between a profile centroid and an utterance's d-vector"""
    if profile.centroid.dim != encoder.dvector_dim:
        raise DimensionError(
            f"dimension error: profile dim {profile.centroid.dim} vs model dim {encoder.dvector_dim}"
        )
    return cosine_score(profile.centroid, encoder.embed(mel))


# Training

def crop_or_pad(frames, length, rng):
    """Random crop to length frames, or wrap-pad when shorter"""
    if frames.shape[0] >= length:
        start = int(rng.integers(0, frames.shape[0] - length + 1))
        return frames[start:start + length]
    return np.pad(frames, ((0, length - frames.shape[0]), (0, 0)), mode="wrap")


def feature_stats(speaker_mels):
    stacked = np.concatenate([m for mels in speaker_mels.values() for m in mels], axis=0)
    return stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-3)


def sample_batch(speaker_mels, eligible, config, rng):
    N, M = config.speakers_per_batch, config.utterances_per_speaker
    speakers = [eligible[i] for i in np.sort(rng.choice(len(eligible), size=N, replace=False))]
    features = np.empty((N, M, config.crop_frames, N_MELS))
    for j, speaker in enumerate(speakers):
        mels = speaker_mels[speaker]
        for i, u in enumerate(rng.choice(len(mels), size=M, replace=False)):
            features[j, i] = crop_or_pad(mels[u], config.crop_frames, rng)
    return Ge2eBatch(features)


def validation_eer(encoder, validation_mels, enroll_utterances):
    """EER over validation speakers: enroll on the first utterances, test on the rest"""
    profiles = {}
    tests = []
    for speaker in sorted(validation_mels):
        mels = validation_mels[speaker]
        k = min(enroll_utterances, len(mels) - 1)
        if k < 1:
            continue
        profiles[speaker] = enroll(mels[:k], encoder, speaker)
        tests.extend((speaker, "neutral", d) for d in encoder.embed_many(mels[k:]))
    trials = scoring.build_trials(profiles, tests)
    return scoring.compute_eer(trials)[0]


def train_sv(speaker_mels, config, seed, validation_mels=None):
    """Train a speaker encoder on {speaker_id: [T x 40 mel arrays]}.

    Returns (encoder, log) where log is a DataFrame with columns
    iter, loss, lr, grad_norm, val_eer.
    """
    N, M = config.speakers_per_batch, config.utterances_per_speaker
    eligible = sorted(s for s, mels in speaker_mels.items() if len(mels) >= M)
    if len(eligible) < N or N < 2:
        raise CorpusTooSmallError(
            f"corpus too small for N×M batch: {len(eligible)} speakers with >= {M} utterances, need {N}"
        )

    rng = SeededRng(seed)
    mean, std = feature_stats({s: speaker_mels[s] for s in eligible})
    encoder = SpeakerEncoder.initialize(config, rng.child("init"), mean, std)
    optimizer = config.optimizer()
    batch_rng = rng.child("batches")

    validating = validation_mels is not None and len(validation_mels) >= 2
    if validation_mels is not None and not validating:
        logger.warning("Fewer than 2 validation speakers; early stopping disabled")

    best_eer, best_state, stale = np.inf, None, 0
    rows = []
    logger.info(f"Training speaker encoder: {len(eligible)} speakers, N={N}, M={M}, "
                f"{config.max_iterations} iterations")

    for iteration in tqdm(range(config.max_iterations), desc="train-sv", disable=None):
        batch = sample_batch(speaker_mels, eligible, config, batch_rng)
        loss, grads = encoder.ge2e_step(batch)
        grad_norm = clip_gradients(grads, config.clip_norm)
        lr = effective_lr(optimizer)
        adam_step(optimizer, encoder.trainable_params(), grads)
        encoder.ge2e_w[0] = max(encoder.ge2e_w[0], W_FLOOR)

        row = {"iter": iteration, "loss": loss, "lr": lr, "grad_norm": grad_norm, "val_eer": np.nan}
        if validating and (iteration + 1) % config.validate_every == 0:
            try:
                eer = validation_eer(encoder, validation_mels, config.enroll_utterances)
            except DegenerateTrialSetError:
                eer = np.nan
            row["val_eer"] = eer
            if eer < best_eer:
                best_eer, best_state, stale = eer, copy.deepcopy(encoder.state_dict()), 0
            else:
                stale += 1
            logger.info(f"iter {iteration + 1}: validation EER {eer:.4f} (best {best_eer:.4f})")
        rows.append(row)

        if (iteration + 1) % config.log_every == 0:
            logger.info(f"iter {iteration + 1}: GE2E loss {loss:.4f}, lr {lr:.2e}, grad norm {grad_norm:.3f}")
        if validating and stale >= config.patience:
            logger.info(f"Early stopping at iteration {iteration + 1}")
            break

    if best_state is not None:
        encoder = SpeakerEncoder.from_state_dict(best_state)

    return encoder, pd.DataFrame(rows, columns=["iter", "loss", "lr", "grad_norm", "val_eer"])
