"""Small numpy MLPs with hand-written backprop, a diagonal Gaussian action
head, a running input normalizer and Adam.

Networks map batches row-wise: ``out = layer(... layer(x))`` with
``x`` of shape ``(n, in_dim)``; weights are stored ``(in_dim, out_dim)``.
Hidden layers use tanh, the output layer is linear.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlAction
from .quaternion import InvalidInputError

POLICY_HIDDEN = (130, 88, 60)
VALUE_HIDDEN = (130, 25, 5)
OBS_DIM = 13
ACT_DIM = 6
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class NetworkParameters:
    weights: list
    biases: list

    @property
    def sizes(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)

    def arrays(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "NetworkParameters":
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "NetworkParameters":
        return NetworkParameters([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def init_network(sizes, rng: np.random.Generator) -> NetworkParameters:
    """Uniform fan-in init, limit sqrt(1/fan_in); zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParameters(weights, biases)


def zeros_like_network(sizes) -> NetworkParameters:
    return NetworkParameters([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                             [np.zeros(b) for b in sizes[1:]])


def _check_input(params: NetworkParameters, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise InvalidInputError(
            f"input has {x.shape[-1]} features, network expects {params.weights[0].shape[0]}")
    return x


def forward(params: NetworkParameters, x) -> np.ndarray:
    h = _check_input(params, x)
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        h = z if i == last else np.tanh(z)
    return h


def forward_cache(params: NetworkParameters, x):
    """Forward pass that also returns every layer input for ``backward``."""
    h = _check_input(params, x)
    acts = [h]
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        h = z if i == last else np.tanh(z)
        if i != last:
            acts.append(h)
    return h, acts


def backward(params: NetworkParameters, acts, grad_out, want_input_grad: bool = False):
    """Reverse-mode gradients of ``sum(grad_out * out)`` w.r.t. the parameters.

    ``acts`` is the list returned by ``forward_cache`` for the same batch.
    """
    g = np.asarray(grad_out, dtype=float)
    if g.shape[-1] != params.weights[-1].shape[1]:
        raise InvalidInputError("output gradient has the wrong width")
    dW = [None] * len(params.weights)
    db = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        h = acts[i]
        dW[i] = h.T @ g
        db[i] = g.sum(axis=0)
        if i > 0 or want_input_grad:
            g = g @ params.weights[i].T
            if i > 0:
                g = g * (1.0 - h * h)
    grads = NetworkParameters(dW, db)
    return (grads, g) if want_input_grad else grads


def network_backward(params: NetworkParameters, x, grad_out) -> NetworkParameters:
    """Convenience wrapper: forward then backward on the batch ``x``."""
    _, acts = forward_cache(params, np.atleast_2d(x))
    return backward(params, acts, np.atleast_2d(grad_out))


# -- diagonal Gaussian policy head ------------------------------------------

def gaussian_logprob(mean, log_var, action):
    mean = np.asarray(mean, dtype=float)
    action = np.asarray(action, dtype=float)
    log_var = np.asarray(log_var, dtype=float)
    return -0.5 * np.sum(LOG_2PI + log_var + (action - mean) ** 2 / np.exp(log_var), axis=-1)


def sample_action(mean, log_var, rng_or_noise, stochastic: bool = True):
    """``mean + sqrt(exp(log_var)) * z``; returns ``mean`` unchanged when not stochastic."""
    mean = np.asarray(mean, dtype=float)
    if not stochastic:
        return mean.copy()
    if isinstance(rng_or_noise, np.random.Generator):
        z = rng_or_noise.standard_normal(mean.shape)
    else:
        z = np.asarray(rng_or_noise, dtype=float)
    return mean + np.sqrt(np.exp(np.asarray(log_var, dtype=float))) * z


def gaussian_kl(mean_old, log_var_old, mean_new, log_var_new):
    """KL(old || new) for diagonal Gaussians, summed over action dims."""
    var_old = np.exp(log_var_old)
    var_new = np.exp(log_var_new)
    return 0.5 * np.sum(log_var_new - log_var_old + (var_old + (mean_old - mean_new) ** 2) / var_new - 1.0,
                        axis=-1)


def scale_action_batch(raw, f_max, l_max) -> np.ndarray:
    limits = np.concatenate([np.asarray(f_max, dtype=float), np.asarray(l_max, dtype=float)])
    return np.clip(np.asarray(raw, dtype=float) * limits, -limits, limits)


def scale_action(raw, f_max, l_max) -> ControlAction:
    u = scale_action_batch(raw, f_max, l_max)
    return ControlAction(u[:3], u[3:])


# -- running normalizer -----------------------------------------------------

STD_FLOOR = 1e-6


@dataclass
class RunningNormalizer:
    """Streaming mean/variance merged with the parallel (Chan et al.) rule.

    Until two samples have been seen the normalizer passes inputs through
    unchanged (mean 0, std 1).
    """

    dim: int = OBS_DIM
    count: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None

    def __post_init__(self):
        self.mean = np.zeros(self.dim) if self.mean is None else np.array(self.mean, dtype=float)
        self.m2 = np.zeros(self.dim) if self.m2 is None else np.array(self.m2, dtype=float)

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.maximum(np.sqrt(self.m2 / max(self.count - 1, 1)), STD_FLOOR)

    @property
    def offset(self) -> np.ndarray:
        return self.mean if self.count >= 2 else np.zeros(self.dim)

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.offset) / self.std

    def merge(self, other: "RunningNormalizer") -> "RunningNormalizer":
        if other.count == 0:
            return RunningNormalizer(self.dim, self.count, self.mean.copy(), self.m2.copy())
        if self.count == 0:
            return RunningNormalizer(self.dim, other.count, other.mean.copy(), other.m2.copy())
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / n)
        return RunningNormalizer(self.dim, n, mean, m2)

    @classmethod
    def from_batch(cls, batch) -> "RunningNormalizer":
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        if batch.shape[0] == 0:
            return cls(batch.shape[1])
        mean = batch.mean(axis=0)
        m2 = ((batch - mean) ** 2).sum(axis=0)
        return cls(batch.shape[1], batch.shape[0], mean, m2)

    def update(self, batch) -> "RunningNormalizer":
        return self.merge(RunningNormalizer.from_batch(batch))


# -- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(arrays, grads, state: AdamState, lr):
    """One bias-corrected Adam descent step; returns new arrays and state.

    ``lr`` is a scalar or one rate per array.  Ascent is obtained by passing
    the negated gradient.
    """
    if len(arrays) != len(state.m):
        raise InvalidInputError("Adam state does not match the parameter list")
    rates = [lr] * len(arrays) if np.ndim(lr) == 0 else list(lr)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m = [b1 * mi + (1.0 - b1) * g for mi, g in zip(state.m, grads)]
    v = [b2 * vi + (1.0 - b2) * g * g for vi, g in zip(state.v, grads)]
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new = [a - r * (mi / c1) / (np.sqrt(vi / c2) + state.eps) for a, r, mi, vi in zip(arrays, rates, m, v)]
    return new, AdamState(m, v, t, b1, b2, state.eps)


# -- policy / value bundles -------------------------------------------------

@dataclass
class Policy:
    net: NetworkParameters
    log_var: np.ndarray

    def arrays(self) -> list:
        return self.net.arrays() + [self.log_var]

    @classmethod
    def from_arrays(cls, arrays) -> "Policy":
        return cls(NetworkParameters.from_arrays(arrays[:-1]), arrays[-1])

    def mean(self, obs) -> np.ndarray:
        return forward(self.net, obs)

    def copy(self) -> "Policy":
        return Policy(self.net.copy(), self.log_var.copy())


def init_policy(rng: np.random.Generator, hidden=POLICY_HIDDEN, init_log_var: float = 0.0) -> Policy:
    net = init_network((OBS_DIM,) + tuple(hidden) + (ACT_DIM,), rng)
    return Policy(net, np.full(ACT_DIM, float(init_log_var)))


def init_value(rng: np.random.Generator, hidden=VALUE_HIDDEN) -> NetworkParameters:
    return init_network((OBS_DIM,) + tuple(hidden) + (1,), rng)


@dataclass
class Snapshot:
    """Frozen policy + value + input normalizer, as used by a rollout."""

    policy: Policy
    value: NetworkParameters
    normalizer: RunningNormalizer = field(default_factory=RunningNormalizer)
    value_scale: float = 1.0
    normalize_quaternion: bool = True

    def observe(self, states) -> np.ndarray:
        obs = self.normalizer.normalize(states)
        if not self.normalize_quaternion:
            obs[..., 6:10] = np.asarray(states)[..., 6:10]
        return obs

    def value_estimate(self, obs) -> np.ndarray:
        return forward(self.value, obs)[..., 0] * self.value_scale
