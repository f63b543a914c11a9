"""CycleGAN emotion conversion over frame-level feature streams.

Two independent models are trained per target emotion: one on 24-dim
mel-cepstra (spectrum), one on 10-scale CWT log-F0 z-scores (prosody).
Generators are residual windowed gated dense nets; discriminators share the
windowing and emit a per-frame real/fake probability.
"""

import copy
import dataclasses
import os
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd
from tqdm import tqdm

from app.features.prosody import (
    estimate_f0,
    cwt_decompose,
    cwt_reconstruct,
    contour_from_log_f0,
    log_gaussian_f0_transform,
)
from app.features.spectral import mcep_analyze, synthesize
from app.features.types import McepSequence
from app.models.neural import DenseLayer, DenseStack, AdamState, adam_step, clip_gradients, SeededRng
from app.models.speaker_encoder import crop_or_pad
from app.utils.config import DEFAULT_LOSS_WEIGHTS, HOP_MS, N_MCEP, N_CWT_SCALES
from app.utils.errors import (
    CheckpointError,
    DimensionError,
    EmptyBatchError,
    EmptyDomainError,
    InvalidEmotionError,
)
from app.utils.logger import logger
from app.utils.serialization import checkpoint_hash, save_checkpoint, load_checkpoint, dump_json, load_json

FEATURE_DIMS = {"mcep24": N_MCEP, "cwtf0_10": N_CWT_SCALES}
CONVERSION_TARGETS = ("angry", "happy")
PROB_CLAMP = 1e-7
LOG_COLUMNS = ["iter", "d_loss", "g_loss", "cycle", "identity", "total"]


@dataclass(frozen=True)
class EmotionPair:
    target_domain: str
    source_domain: str = "neutral"

    def __post_init__(self):
        if self.source_domain != "neutral":
            raise InvalidEmotionError(f"invalid emotion: conversion source must be neutral, got '{self.source_domain}'")
        if self.target_domain not in CONVERSION_TARGETS:
            raise InvalidEmotionError(f"invalid emotion: no converter for '{self.target_domain}'")


@dataclass
class CycleGanConfig:
    lambda_cy: float = DEFAULT_LOSS_WEIGHTS["lambda_cy"]
    lambda_id: float = DEFAULT_LOSS_WEIGHTS["lambda_id"]
    id_cutoff_iters: int = DEFAULT_LOSS_WEIGHTS["id_cutoff_iters"]
    head_start_k: int = 500
    iterations: int = 2000
    batch_size: int = 8
    segment_frames: int = 32
    context: int = 4
    hidden_layers: int = 2
    hidden_width: int = 64
    generator_lr: float = 2e-4
    discriminator_lr: float = 1e-4
    beta1: float = 0.5
    decay_rate: float = 0.98
    decay_every: int = 10000
    clip_norm: float = 5.0
    validate_every: int = 200
    patience: int = 3
    log_every: int = 100

    def __post_init__(self):
        if self.lambda_cy < 0 or self.lambda_id < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0 <= self.head_start_k < self.iterations:
            raise ValueError(f"head_start_k must lie in [0, iterations), got {self.head_start_k}")
        if self.context < 0 or self.id_cutoff_iters < 0:
            raise ValueError("context and id_cutoff_iters must be non-negative")
        for name in ("batch_size", "segment_frames", "hidden_layers", "hidden_width", "generator_lr",
                     "discriminator_lr", "decay_every", "clip_norm", "validate_every", "patience", "log_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"CycleGanConfig.{name} must be positive")

    def to_dict(self):
        return asdict(self)


# Windowing

def _window_index(length, context):
    offsets = np.arange(-context, context + 1)
    return np.clip(np.arange(length)[:, None] + offsets[None, :], 0, length - 1)


def context_windows(x, context):
    """(B, L, D) -> (B, L, (2C+1)·D) with edge replication at both ends"""
    batch, length, dim = x.shape
    index = _window_index(length, context)
    return x[:, index, :].reshape(batch, length, -1), index


def _unwindow(d_windows, index, shape):
    batch, length, dim = shape
    d_windows = d_windows.reshape(batch, length, index.shape[1], dim)
    dx = np.zeros((length, batch, dim))
    np.add.at(dx, index, d_windows.transpose(1, 2, 0, 3))
    return dx.transpose(1, 0, 2)


def _check_frames(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] != dim:
        raise DimensionError(f"dimension error: expected (batch, frames, {dim}), got {x.shape}")
    if x.shape[0] == 0 or x.shape[1] == 0:
        raise EmptyBatchError()
    return x


class FrameGenerator:
    """Residual generator: output frame = input frame + net(context window)"""

    def __init__(self, net, context):
        self.net = net
        self.context = int(context)

    @classmethod
    def initialize(cls, dim, config, rng):
        dims = [dim * (2 * config.context + 1)] + [config.hidden_width] * config.hidden_layers + [dim]
        net = DenseStack.initialize(dims, ["gated"] * config.hidden_layers + ["linear"], rng)
        # Zero output layer: training starts from the identity map
        net.layers[-1].params["weight"][...] = 0.0
        net.layers[-1].params["bias"][...] = 0.0
        return cls(net, config.context)

    @property
    def dim(self):
        return self.net.out_dim

    def params(self):
        return self.net.params()

    def forward(self, x):
        x = _check_frames(x, self.dim)
        windows, index = context_windows(x, self.context)
        delta, net_cache = self.net.forward(windows)
        return x + delta, (x.shape, index, net_cache)

    def backward(self, dout, cache):
        shape, index, net_cache = cache
        d_windows, grads = self.net.backward(dout, net_cache)
        return dout + _unwindow(d_windows, index, shape), grads

    def __call__(self, x):
        return self.forward(x)[0]


class FrameDiscriminator:
    """Windowed dense net ending in a sigmoid; one probability per frame"""

    def __init__(self, net, context):
        self.net = net
        self.context = int(context)

    @classmethod
    def initialize(cls, dim, config, rng):
        dims = [dim * (2 * config.context + 1)] + [config.hidden_width] * config.hidden_layers + [1]
        return cls(DenseStack.initialize(dims, ["gated"] * config.hidden_layers + ["sigmoid"], rng), config.context)

    @property
    def dim(self):
        return self.net.in_dim // (2 * self.context + 1)

    def params(self):
        return self.net.params()

    def forward(self, x):
        x = _check_frames(x, self.dim)
        windows, index = context_windows(x, self.context)
        p, net_cache = self.net.forward(windows)
        return p[..., 0], (x.shape, index, net_cache)

    def backward(self, dp, cache):
        shape, index, net_cache = cache
        d_windows, grads = self.net.backward(dp[..., None], net_cache)
        return _unwindow(d_windows, index, shape), grads

    def __call__(self, x):
        return self.forward(x)[0]


def _rebuild_stack(state, prefix, hidden_activation, output_activation):
    count = 1 + max(int(k[len(prefix):].split(".")[0]) for k in state if k.startswith(prefix))
    layers = []
    for index in range(count):
        activation = output_activation if index == count - 1 else hidden_activation
        layers.append(DenseLayer(state[f"{prefix}{index}.weight"].copy(), state[f"{prefix}{index}.bias"].copy(),
                                 activation))
    return DenseStack(layers)


class CycleGanModel:
    """G_xy, G_yx, D_x, D_y for one feature kind, plus normalization statistics"""

    def __init__(self, g_xy, g_yx, d_x, d_y, feature_kind, norm_mean=None, norm_std=None,
                 f0_stats=None, pair=None):
        self.g_xy, self.g_yx, self.d_x, self.d_y = g_xy, g_yx, d_x, d_y
        dim = g_xy.dim
        if feature_kind in FEATURE_DIMS and FEATURE_DIMS[feature_kind] != dim:
            raise DimensionError(f"dimension error: {feature_kind} needs dim {FEATURE_DIMS[feature_kind]}, got {dim}")
        self.feature_kind = feature_kind
        self.norm_mean = np.zeros(dim) if norm_mean is None else np.asarray(norm_mean, dtype=np.float64).reshape(dim)
        self.norm_std = np.ones(dim) if norm_std is None else np.asarray(norm_std, dtype=np.float64).reshape(dim)
        # ((mean_x, std_x), (mean_y, std_y)) of voiced log-F0 per domain
        self.f0_stats = f0_stats
        self.pair = pair

    @classmethod
    def initialize(cls, feature_dim, config, rng, feature_kind=None, **kwargs):
        feature_kind = feature_kind or infer_feature_kind(feature_dim)
        return cls(
            FrameGenerator.initialize(feature_dim, config, rng.child("g_xy")),
            FrameGenerator.initialize(feature_dim, config, rng.child("g_yx")),
            FrameDiscriminator.initialize(feature_dim, config, rng.child("d_x")),
            FrameDiscriminator.initialize(feature_dim, config, rng.child("d_y")),
            feature_kind,
            **kwargs,
        )

    @property
    def feature_dim(self):
        return self.g_xy.dim

    def _named(self, nets):
        named = {}
        for prefix in nets:
            named.update({f"{prefix}.{k}": v for k, v in getattr(self, prefix).params().items()})
        return named

    def generator_params(self):
        return self._named(("g_xy", "g_yx"))

    def discriminator_params(self):
        return self._named(("d_x", "d_y"))

    def state_dict(self):
        state = self.generator_params()
        state.update(self.discriminator_params())
        state["norm.mean"] = self.norm_mean
        state["norm.std"] = self.norm_std
        if self.f0_stats is not None:
            (mx, sx), (my, sy) = self.f0_stats
            state["f0.stats"] = np.array([mx, sx, my, sy], dtype=np.float64)
        return state

    def content_hash(self):
        return checkpoint_hash(self.state_dict())

    def discriminator_hash(self):
        return checkpoint_hash(self.discriminator_params())

    def load_state(self, state):
        """Copy a state_dict of the same architecture into this model in place"""
        for name in ("g_xy", "g_yx", "d_x", "d_y"):
            getattr(self, name).net.load_params({k[len(name) + 1:]: v for k, v in state.items()
                                                 if k.startswith(name + ".")})
        self.norm_mean[...] = state["norm.mean"]
        self.norm_std[...] = state["norm.std"]

    @classmethod
    def from_state_dict(cls, state, feature_kind, pair=None):
        try:
            nets = {
                "g_xy": _rebuild_stack(state, "g_xy.", "gated", "linear"),
                "g_yx": _rebuild_stack(state, "g_yx.", "gated", "linear"),
                "d_x": _rebuild_stack(state, "d_x.", "gated", "sigmoid"),
                "d_y": _rebuild_stack(state, "d_y.", "gated", "sigmoid"),
            }
            dim = nets["g_xy"].out_dim
            context = (nets["g_xy"].in_dim // dim - 1) // 2
            f0_stats = None
            if "f0.stats" in state:
                mx, sx, my, sy = (float(v) for v in state["f0.stats"])
                f0_stats = ((mx, sx), (my, sy))
            return cls(
                FrameGenerator(nets["g_xy"], context), FrameGenerator(nets["g_yx"], context),
                FrameDiscriminator(nets["d_x"], context), FrameDiscriminator(nets["d_y"], context),
                feature_kind, state["norm.mean"].copy(), state["norm.std"].copy(), f0_stats, pair,
            )
        except (KeyError, ValueError) as e:
            raise CheckpointError(f"not a converter checkpoint: {e}")

    def normalize(self, frames):
        return (frames - self.norm_mean) / self.norm_std

    def denormalize(self, frames):
        return frames * self.norm_std + self.norm_mean

    def convert_features(self, frames):
        """Apply G_xy to a (T, D) feature matrix in the original feature scale"""
        frames = np.asarray(frames, dtype=np.float64)
        converted = self.g_xy(self.normalize(frames)[None])[0]
        return self.denormalize(converted)

    def save(self, path, config, seed):
        """Checkpoint plus JSON sidecar next to it; returns the content hash"""
        digest = save_checkpoint(path, self.state_dict())
        dump_json(sidecar_path(path), {
            "feature_kind": self.feature_kind,
            "source_emotion": self.pair.source_domain if self.pair else None,
            "target_emotion": self.pair.target_domain if self.pair else None,
            "config": config.to_dict(),
            "seed": int(seed),
            "content_hash": digest,
        })
        return digest

    @classmethod
    def load(cls, path):
        """Returns (model, sidecar dict)"""
        state = load_checkpoint(path)
        sidecar = load_json(sidecar_path(path))
        if sidecar.get("content_hash") != checkpoint_hash(state):
            raise CheckpointError(f"{path}: sidecar hash does not match checkpoint")
        pair = EmotionPair(sidecar["target_emotion"]) if sidecar.get("target_emotion") else None
        return cls.from_state_dict(state, sidecar["feature_kind"], pair), sidecar


def sidecar_path(path):
    return os.path.splitext(path)[0] + ".json"


def infer_feature_kind(dim):
    for kind, kind_dim in FEATURE_DIMS.items():
        if kind_dim == dim:
            return kind
    return "raw"


# Losses

def _clamped(p):
    """Clamped probabilities and a 0/1 mask of entries the clamp left untouched"""
    q = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return q, ((p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)).astype(np.float64)


def _generator_bce(p_fake):
    q_fake, _ = _clamped(p_fake)
    return float(-np.mean(np.log(q_fake)))


def _bce(p_real, p_fake):
    q_real, _ = _clamped(p_real)
    q_fake, _ = _clamped(p_fake)
    d_loss = -np.mean(np.log(q_real)) - np.mean(np.log(1.0 - q_fake))
    return float(d_loss), _generator_bce(p_fake)


def _check_batch(batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.size == 0 or batch.shape[0] == 0:
        raise EmptyBatchError()
    return batch


def adversarial_loss(d, real, fake):
    """(d_loss, g_loss) in binary cross-entropy form; d maps (B, L, D) to (B, L) probabilities"""
    real, fake = _check_batch(real), _check_batch(fake)
    if real.shape[-1] != fake.shape[-1]:
        raise DimensionError(f"dimension error: real {real.shape} vs fake {fake.shape}")
    return _bce(d(real), d(fake))


def _mean_abs(a, b):
    return float(np.mean(np.abs(a - b)))


def cycle_loss(g_xy, g_yx, x, y):
    """E|G_yx(G_xy(x)) - x| + E|G_xy(G_yx(y)) - y|"""
    x, y = _check_batch(x), _check_batch(y)
    return _mean_abs(g_yx(g_xy(x)), x) + _mean_abs(g_xy(g_yx(y)), y)


def identity_loss(g_xy, g_yx, x, y):
    """E|G_yx(x) - x| + E|G_xy(y) - y|"""
    x, y = _check_batch(x), _check_batch(y)
    return _mean_abs(g_yx(x), x) + _mean_abs(g_xy(y), y)


def lambda_id(iteration, config):
    return config.lambda_id if iteration < config.id_cutoff_iters else 0.0


def combine_losses(components, iteration, config):
    """Weighted generator objective from adv_xy, adv_yx, cycle and identity components"""
    return (components["adv_xy"] + components["adv_yx"] + config.lambda_cy * components["cycle"]
            + lambda_id(iteration, config) * components["identity"])


def _add_grads(total, grads, prefix):
    for name, value in grads.items():
        key = f"{prefix}.{name}"
        total[key] = total[key] + value if key in total else value.copy()


def discriminator_loss(model, x, y):
    """Summed D_x and D_y losses against detached fakes, and their gradients"""
    x, y = _check_batch(x), _check_batch(y)
    fake_x, fake_y = model.g_yx(y), model.g_xy(x)
    total, grads = 0.0, {}
    for name, real, fake in (("d_x", x, fake_x), ("d_y", y, fake_y)):
        d = getattr(model, name)
        p_real, cache_real = d.forward(real)
        p_fake, cache_fake = d.forward(fake)
        total += _bce(p_real, p_fake)[0]
        q_real, keep_real = _clamped(p_real)
        q_fake, keep_fake = _clamped(p_fake)
        _, g_real = d.backward(-keep_real / (q_real * p_real.size), cache_real)
        _, g_fake = d.backward(keep_fake / ((1.0 - q_fake) * p_fake.size), cache_fake)
        _add_grads(grads, g_real, name)
        _add_grads(grads, g_fake, name)
    return total, grads


def total_loss(model, x, y, iteration, config):
    """Generator objective, its components and gradients for every generator parameter"""
    x, y = _check_batch(x), _check_batch(y)
    g_xy, g_yx = model.g_xy, model.g_yx
    grads = {}

    fake_y, c_fake_y = g_xy.forward(x)
    cyc_x, c_cyc_x = g_yx.forward(fake_y)
    fake_x, c_fake_x = g_yx.forward(y)
    cyc_y, c_cyc_y = g_xy.forward(fake_x)

    p_fy, c_dy = model.d_y.forward(fake_y)
    p_fx, c_dx = model.d_x.forward(fake_x)
    components = {
        "adv_xy": _generator_bce(p_fy),
        "adv_yx": _generator_bce(p_fx),
        "cycle": _mean_abs(cyc_x, x) + _mean_abs(cyc_y, y),
        "identity": 0.0,
    }

    # x -> y -> x and the D_y adversarial term both flow into fake_y
    q, keep = _clamped(p_fy)
    d_fake_y, _ = model.d_y.backward(-keep / (q * p_fy.size), c_dy)
    d_mid, g = g_yx.backward(config.lambda_cy * np.sign(cyc_x - x) / x.size, c_cyc_x)
    _add_grads(grads, g, "g_yx")
    _, g = g_xy.backward(d_fake_y + d_mid, c_fake_y)
    _add_grads(grads, g, "g_xy")

    q, keep = _clamped(p_fx)
    d_fake_x, _ = model.d_x.backward(-keep / (q * p_fx.size), c_dx)
    d_mid, g = g_xy.backward(config.lambda_cy * np.sign(cyc_y - y) / y.size, c_cyc_y)
    _add_grads(grads, g, "g_xy")
    _, g = g_yx.backward(d_fake_x + d_mid, c_fake_x)
    _add_grads(grads, g, "g_yx")

    weight = lambda_id(iteration, config)
    id_x, c_id_x = g_yx.forward(x)
    id_y, c_id_y = g_xy.forward(y)
    components["identity"] = _mean_abs(id_x, x) + _mean_abs(id_y, y)
    if weight > 0:
        _, g = g_yx.backward(weight * np.sign(id_x - x) / x.size, c_id_x)
        _add_grads(grads, g, "g_yx")
        _, g = g_xy.backward(weight * np.sign(id_y - y) / y.size, c_id_y)
        _add_grads(grads, g, "g_xy")

    return combine_losses(components, iteration, config), components, grads


# Training

def sample_segments(features, config, rng):
    """batch_size random crops (wrap-padded when short) of segment_frames frames"""
    picks = rng.integers(0, len(features), size=config.batch_size)
    return np.stack([crop_or_pad(features[i], config.segment_frames, rng) for i in picks])


def feature_norm_stats(source_feats, target_feats):
    stacked = np.concatenate(list(source_feats) + list(target_feats), axis=0)
    return stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-3)


def _check_domain(features, name):
    features = [np.asarray(f, dtype=np.float64) for f in features]
    if not features or all(f.shape[0] == 0 for f in features):
        raise EmptyDomainError(f"empty training domain: {name}")
    return [f for f in features if f.shape[0] > 0]


def train_cyclegan(source_feats, target_feats, config, seed, feature_kind=None, pair=None,
                   f0_stats=None, validator=None, on_iteration=None):
    """Train a CycleGAN on non-parallel (T, D) feature matrices of two domains.

    validator(model) -> float is checked every validate_every iterations,
    higher is better; the best state is restored when training ends.
    on_iteration(iteration, model) is called after each iteration.
    Returns (model, log DataFrame).
    """
    source = _check_domain(source_feats, "source")
    target = _check_domain(target_feats, "target")
    dim = source[0].shape[1]
    if any(f.shape[1] != dim for f in source + target):
        raise DimensionError("dimension error: all feature matrices must share one width")

    rng = SeededRng(seed)
    mean, std = feature_norm_stats(source, target)
    model = CycleGanModel.initialize(dim, config, rng.child("init"), feature_kind,
                                     norm_mean=mean, norm_std=std, f0_stats=f0_stats, pair=pair)
    source = [model.normalize(f) for f in source]
    target = [model.normalize(f) for f in target]

    g_opt = AdamState(base_lr=config.generator_lr, decay_rate=config.decay_rate,
                      decay_every=config.decay_every, beta1=config.beta1)
    d_opt = AdamState(base_lr=config.discriminator_lr, decay_rate=config.decay_rate,
                      decay_every=config.decay_every, beta1=config.beta1)
    batch_rng = rng.child("batches")

    best_score, best_state, stale = -np.inf, None, 0
    rows = []
    logger.info(f"Training {model.feature_kind} converter: {len(source)} source / {len(target)} target "
                f"utterances, {config.iterations} iterations, head start {config.head_start_k}")

    for iteration in tqdm(range(config.iterations), desc="train-converter", disable=None):
        x = sample_segments(source, config, batch_rng)
        y = sample_segments(target, config, batch_rng)

        d_loss, d_grads = discriminator_loss(model, x, y)
        if iteration >= config.head_start_k:
            clip_gradients(d_grads, config.clip_norm)
            adam_step(d_opt, model.discriminator_params(), d_grads)

        total, components, g_grads = total_loss(model, x, y, iteration, config)
        clip_gradients(g_grads, config.clip_norm)
        adam_step(g_opt, model.generator_params(), g_grads)

        rows.append({
            "iter": iteration,
            "d_loss": d_loss,
            "g_loss": components["adv_xy"] + components["adv_yx"],
            "cycle": components["cycle"],
            "identity": components["identity"],
            "total": total,
        })
        if (iteration + 1) % config.log_every == 0:
            logger.info(f"iter {iteration + 1}: d {d_loss:.4f}, g {rows[-1]['g_loss']:.4f}, "
                        f"cycle {components['cycle']:.4f}, identity {components['identity']:.4f}")
        if on_iteration is not None:
            on_iteration(iteration, model)

        if validator is not None and (iteration + 1) % config.validate_every == 0:
            score = float(validator(model))
            if score > best_score:
                best_score, best_state, stale = score, copy.deepcopy(model.state_dict()), 0
            else:
                stale += 1
            logger.info(f"iter {iteration + 1}: validation score {score:.4f} (best {best_score:.4f})")
            if stale >= config.patience:
                logger.info(f"Early stopping at iteration {iteration + 1}")
                break

    if best_state is not None:
        model.load_state(best_state)
    return model, pd.DataFrame(rows, columns=LOG_COLUMNS)


# Conversion

@dataclass(frozen=True)
class ConversionResult:
    waveform: object
    mcep: McepSequence
    cwt: object
    f0: object


def convert_prosody(cwt, model):
    """Convert a LogF0Cwt with the prosody model; level and spread follow the domain statistics"""
    converted = cwt.with_normalized(model.convert_features(cwt.normalized()))
    if model.f0_stats is not None:
        source_stats, target_stats = model.f0_stats
        mean, std = log_gaussian_f0_transform(converted.norm_mean, converted.norm_std, source_stats, target_stats)
        converted = dataclasses.replace(converted, norm_mean=mean, norm_std=std)
    return converted


def convert_utterance(w, spectrum_model, prosody_model, seed=0):
    """Neutral waveform -> target-emotion waveform and converted feature bundle"""
    if spectrum_model.feature_kind != "mcep24" or prosody_model.feature_kind != "cwtf0_10":
        raise DimensionError(
            f"dimension error: expected mcep24 and cwtf0_10 models, got "
            f"{spectrum_model.feature_kind} and {prosody_model.feature_kind}"
        )
    mcep = mcep_analyze(w)
    contour = estimate_f0(w, hop_ms=HOP_MS)
    cwt = cwt_decompose(contour)

    converted_mcep = McepSequence(spectrum_model.convert_features(mcep.coeffs), mcep.frame_ms, mcep.hop_ms)
    converted_cwt = convert_prosody(cwt, prosody_model)
    converted_f0 = contour_from_log_f0(cwt_reconstruct(converted_cwt), contour.voiced, contour.hop_ms)

    waveform = synthesize(converted_mcep, converted_f0, seed=seed)
    return ConversionResult(waveform, converted_mcep, converted_cwt, converted_f0)


@dataclass(frozen=True)
class EmotionConverter:
    """Spectrum and prosody models for one neutral -> emotion direction"""

    spectrum: CycleGanModel
    prosody: CycleGanModel

    @property
    def target_emotion(self):
        pair = self.spectrum.pair or self.prosody.pair
        return pair.target_domain if pair else None

    def convert(self, w, seed=0):
        return convert_utterance(w, self.spectrum, self.prosody, seed=seed).waveform

    @classmethod
    def load(cls, spectrum_path, prosody_path):
        spectrum, _ = CycleGanModel.load(spectrum_path)
        prosody, _ = CycleGanModel.load(prosody_path)
        return cls(spectrum, prosody)
