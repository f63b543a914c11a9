"""Small numpy network toolkit with hand-written backward passes.

Tensors are float64 numpy arrays. Layers keep their parameters in a ``params``
dict of live arrays; ``forward`` returns ``(output, cache)`` and ``backward``
turns an upstream gradient plus that cache into ``(input_grad, param_grads)``.
Stacks flatten their layers' parameters under dotted names ("0.weight",
"1.W_h") so optimizers and checkpoints can address them uniformly.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from app.utils.errors import DimensionError, DivergenceError

Tensor = np.ndarray

ACTIVATIONS = ("linear", "tanh", "sigmoid", "gated")


def as_tensor(x):
    return np.asarray(x, dtype=np.float64)


class SeededRng:
    """Reproducible random source; child streams are derived from string keys"""

    def __init__(self, seed=0, _sequence=None):
        self.seed = int(seed) % (1 << 64)
        sequence = _sequence if _sequence is not None else np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def child(self, *keys):
        label = "/".join([str(self.seed)] + [str(k) for k in keys])
        entropy = int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:16], "little")
        return SeededRng(self.seed, _sequence=np.random.SeedSequence(entropy))

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self.generator.choice(a, size=size, replace=replace)


def _init_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class DenseLayer:
    """Affine map plus activation; "gated" splits the affine output into a ⊙ σ(b)"""

    def __init__(self, weight, bias, activation="linear"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{activation}'")
        weight, bias = as_tensor(weight), as_tensor(bias)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise DimensionError(f"dimension error: weight {weight.shape} and bias {bias.shape} disagree")
        if activation == "gated" and weight.shape[0] % 2:
            raise DimensionError("dimension error: gated layers need an even number of rows")
        self.activation = activation
        self.params = {"weight": weight, "bias": bias}

    @classmethod
    def initialize(cls, in_dim, out_dim, activation, rng):
        """out_dim is the output width; gated layers get twice as many weight rows"""
        rows = 2 * out_dim if activation == "gated" else out_dim
        return cls(_init_uniform(rng, (rows, in_dim), in_dim), np.zeros(rows), activation)

    @property
    def in_dim(self):
        return self.params["weight"].shape[1]

    @property
    def out_dim(self):
        rows = self.params["weight"].shape[0]
        return rows // 2 if self.activation == "gated" else rows

    def forward(self, x):
        x = as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"dimension error: expected inner dim {self.in_dim}, got {x.shape}")
        z = x @ self.params["weight"].T + self.params["bias"]

        if self.activation == "linear":
            out = z
        elif self.activation == "tanh":
            out = np.tanh(z)
        elif self.activation == "sigmoid":
            out = expit(z)
        else:
            a, b = np.split(z, 2, axis=-1)
            out = a * expit(b)
        return out, (x, z, out)

    def backward(self, dout, cache):
        x, z, out = cache
        dout = as_tensor(dout)
        if dout.shape != out.shape:
            raise DimensionError(f"dimension error: upstream gradient {dout.shape} vs output {out.shape}")

        if self.activation == "linear":
            dz = dout
        elif self.activation == "tanh":
            dz = dout * (1.0 - out ** 2)
        elif self.activation == "sigmoid":
            dz = dout * out * (1.0 - out)
        else:
            a, b = np.split(z, 2, axis=-1)
            gate = expit(b)
            dz = np.concatenate([dout * gate, dout * a * gate * (1.0 - gate)], axis=-1)

        flat_dz = dz.reshape(-1, dz.shape[-1])
        flat_x = x.reshape(-1, x.shape[-1])
        grads = {"weight": flat_dz.T @ flat_x, "bias": flat_dz.sum(axis=0)}
        return dz @ self.params["weight"], grads


class LstmLayer:
    """Single LSTM layer over (batch, time, features); gate order i, f, g, o"""

    def __init__(self, W_x, W_h, b):
        W_x, W_h, b = as_tensor(W_x), as_tensor(W_h), as_tensor(b)
        hidden = W_h.shape[1]
        if W_h.shape != (4 * hidden, hidden) or W_x.shape[0] != 4 * hidden or b.shape != (4 * hidden,):
            raise DimensionError(
                f"dimension error: LSTM weights {W_x.shape}, {W_h.shape}, {b.shape} inconsistent"
            )
        self.params = {"W_x": W_x, "W_h": W_h, "b": b}

    @classmethod
    def initialize(cls, input_size, hidden_size, rng):
        W_x = _init_uniform(rng, (4 * hidden_size, input_size), input_size)
        W_h = _init_uniform(rng, (4 * hidden_size, hidden_size), hidden_size)
        b = np.zeros(4 * hidden_size)
        b[hidden_size:2 * hidden_size] = 1.0
        return cls(W_x, W_h, b)

    @property
    def hidden_size(self):
        return self.params["W_h"].shape[1]

    @property
    def input_size(self):
        return self.params["W_x"].shape[1]

    def forward(self, x):
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[1] < 1 or x.shape[2] != self.input_size:
            raise DimensionError(f"dimension error: expected (batch, time>=1, {self.input_size}), got {x.shape}")

        batch, steps, _ = x.shape
        H = self.hidden_size
        W_x, W_h, b = self.params["W_x"], self.params["W_h"], self.params["b"]

        projected = x @ W_x.T + b
        h = np.zeros((batch, H))
        c = np.zeros((batch, H))
        hs = np.zeros((batch, steps, H))
        steps_cache = []
        for t in range(steps):
            z = projected[:, t] + h @ W_h.T
            i = expit(z[:, :H])
            f = expit(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = expit(z[:, 3 * H:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tanh_c = np.tanh(c)
            h = o * tanh_c
            hs[:, t] = h
            steps_cache.append((i, f, g, o, c_prev, h_prev, tanh_c))
        return hs, (x, steps_cache)

    def backward(self, dhs, cache):
        """Full backpropagation through time"""
        x, steps_cache = cache
        dhs = as_tensor(dhs)
        batch, steps, _ = x.shape
        H = self.hidden_size
        if dhs.shape != (batch, steps, H):
            raise DimensionError(f"dimension error: upstream gradient {dhs.shape} vs {(batch, steps, H)}")

        W_x, W_h = self.params["W_x"], self.params["W_h"]
        grads = {name: np.zeros_like(value) for name, value in self.params.items()}
        dx = np.zeros_like(x)
        dh_next = np.zeros((batch, H))
        dc_next = np.zeros((batch, H))

        for t in reversed(range(steps)):
            i, f, g, o, c_prev, h_prev, tanh_c = steps_cache[t]
            dh = dhs[:, t] + dh_next
            do = dh * tanh_c
            dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g ** 2),
                do * o * (1.0 - o),
            ], axis=1)
            dc_next = dc * f

            grads["W_x"] += dz.T @ x[:, t]
            grads["W_h"] += dz.T @ h_prev
            grads["b"] += dz.sum(axis=0)
            dx[:, t] = dz @ W_x
            dh_next = dz @ W_h

        return dx, grads


class _Stack:
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        named = {}
        for index, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                named[f"{index}.{name}"] = value
        return named

    def load_params(self, named):
        for index, layer in enumerate(self.layers):
            for name in layer.params:
                key = f"{index}.{name}"
                value = as_tensor(named[key])
                if value.shape != layer.params[name].shape:
                    raise DimensionError(f"dimension error: {key} has shape {value.shape}")
                layer.params[name][...] = value

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, dout, caches):
        grads = {}
        for index in reversed(range(len(self.layers))):
            dout, layer_grads = self.layers[index].backward(dout, caches[index])
            for name, value in layer_grads.items():
                grads[f"{index}.{name}"] = value
        return dout, grads


class DenseStack(_Stack):
    """Feed-forward stack of DenseLayers"""

    @classmethod
    def initialize(cls, dims, activations, rng):
        if len(dims) != len(activations) + 1:
            raise ValueError("need one activation per layer")
        return cls(DenseLayer.initialize(dims[k], dims[k + 1], act, rng) for k, act in enumerate(activations))

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim


class LstmStack(_Stack):
    """Stacked LSTM layers; the output is the last layer's hidden sequence"""

    @classmethod
    def initialize(cls, input_size, hidden_size, num_layers, rng):
        sizes = [input_size] + [hidden_size] * num_layers
        return cls(LstmLayer.initialize(sizes[k], hidden_size, rng) for k in range(num_layers))

    @property
    def hidden_size(self):
        return self.layers[-1].hidden_size


@dataclass
class AdamState:
    base_lr: float = 1e-3
    decay_rate: float = 0.98
    decay_every: int = 10000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be non-negative")
        if self.decay_every < 1:
            raise ValueError("decay_every must be positive")

    @classmethod
    def from_settings(cls, settings):
        return cls(
            base_lr=float(settings["base_lr"]),
            decay_rate=float(settings["decay_rate"]),
            decay_every=int(settings["decay_every"]),
        )


def effective_lr(state, step=None):
    step = state.step if step is None else step
    return state.base_lr * state.decay_rate ** (step // state.decay_every)


def adam_step(state, params, grads):
    """In-place Adam update of params; returns params"""
    for name, grad in grads.items():
        if name not in params:
            raise DimensionError(f"dimension error: gradient for unknown parameter '{name}'")
        if grad.shape != params[name].shape:
            raise DimensionError(f"dimension error: {name} gradient {grad.shape} vs parameter {params[name].shape}")
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"divergence detected: non-finite gradient for '{name}' at step {state.step}")

    lr = effective_lr(state)
    t = state.step + 1
    for name, grad in grads.items():
        # Blocks with no gradient signal keep their value and moments
        if not np.any(grad):
            continue
        m = state.first_moment.setdefault(name, np.zeros_like(grad))
        v = state.second_moment.setdefault(name, np.zeros_like(grad))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad ** 2
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)

    state.step = t
    return params


def clip_gradients(grads, max_norm=5.0):
    """Scale grads in place to a global L2 norm of at most max_norm; returns the norm before clipping"""
    total = float(np.sqrt(sum(float(np.sum(g ** 2)) for g in grads.values())))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def grad_check(loss_fn, params, analytic, epsilon=1e-4, max_entries_per_param=None, rng=None):
    """Largest relative error between analytic gradients and central differences.

    loss_fn() must read the live arrays in params; each entry is perturbed in
    place and restored. With max_entries_per_param only a seeded sample of
    entries of each block is checked.
    """
    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        grad = np.asarray(analytic[name]).reshape(-1)
        indices = np.arange(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            picker = rng if rng is not None else SeededRng(0).child("grad_check", name)
            indices = np.sort(picker.choice(flat.size, size=max_entries_per_param, replace=False))

        for index in indices:
            original = flat[index]
            flat[index] = original + epsilon
            upper = loss_fn()
            flat[index] = original - epsilon
            lower = loss_fn()
            flat[index] = original

            numeric = (upper - lower) / (2.0 * epsilon)
            error = abs(grad[index] - numeric) / max(abs(grad[index]) + abs(numeric), 1e-5)
            worst = max(worst, error)
    return worst
