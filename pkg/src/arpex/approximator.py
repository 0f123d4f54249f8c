"""Small numpy MLPs with hand-written reverse-mode gradients.

Parameters of every network live in one flat float64 vector; layers are
views into it, so an optimizer can update ``net.params`` in place.
Layout per layer: weight matrix ``(n_out, n_in)`` row-major, then bias.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

LOG_STD_MIN = -8.0
LOG_STD_MAX = 2.0


def orthogonal(shape, gain, rng):
    n_out, n_in = shape
    a = rng.standard_normal((max(n_out, n_in), min(n_out, n_in)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if n_out < n_in:
        q = q.T
    return gain * q[:n_out, :n_in]


class Mlp:
    """Fully connected net: tanh on hidden layers, identity on the output.

    ``forward`` accepts a single vector or a ``(batch, n_in)`` array and keeps
    the activations needed by the next ``backward`` call.
    """

    def __init__(self, layer_sizes, rng: np.random.Generator | None = None, out_gain: float = 1.0, hidden_gain: float = np.sqrt(2.0)):
        self.layer_sizes = [int(n) for n in layer_sizes]
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.params = np.zeros(self.num_params)
        self._views()
        self._cache = None
        if rng is not None:
            self.init(rng, out_gain=out_gain, hidden_gain=hidden_gain)

    @property
    def num_params(self) -> int:
        return sum((n_in + 1) * n_out for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def _views(self):
        self.weights, self.biases = [], []
        i = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(self.params[i : i + n_in * n_out].reshape(n_out, n_in))
            i += n_in * n_out
            self.biases.append(self.params[i : i + n_out])
            i += n_out

    def init(self, rng, out_gain=1.0, hidden_gain=np.sqrt(2.0)):
        last = len(self.weights) - 1
        for i, w in enumerate(self.weights):
            w[...] = orthogonal(w.shape, out_gain if i == last else hidden_gain, rng)
        for b in self.biases:
            b[...] = 0.0

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def set_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.params.shape:
            raise ValueError(f"expected {self.params.shape[0]} parameters, got {theta.shape}")
        self.params[...] = theta

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"input size {h.shape[1]} does not match {self.layer_sizes[0]}")
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T
            h += b
            if i != last:
                np.tanh(h, out=h)
            acts.append(h)
        self._cache = (acts, single)
        return h[0] if single else h

    __call__ = forward

    def backward(self, output_grad) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of ``sum(output * output_grad)`` w.r.t. parameters and input.

        Batched inputs contribute the sum of their per-sample gradients.
        """
        if self._cache is None:
            raise RuntimeError("backward() called before forward()")
        acts, single = self._cache
        g = np.asarray(output_grad, dtype=float)
        g = g[None, :] if single else g
        grads = np.zeros_like(self.params)
        gw, gb = [], []
        i = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            gw.append(grads[i : i + n_in * n_out].reshape(n_out, n_in))
            i += n_in * n_out
            gb.append(grads[i : i + n_out])
            i += n_out
        last = len(self.weights) - 1
        for layer in range(last, -1, -1):
            if layer != last:
                # tanh' = 1 - a^2; g is a fresh array here, safe to scale in place
                d = acts[layer + 1] * acts[layer + 1]
                np.subtract(1.0, d, out=d)
                g *= d
            np.matmul(g.T, acts[layer], out=gw[layer])
            np.sum(g, axis=0, out=gb[layer])
            g = g @ self.weights[layer]
        return grads, (g[0] if single else g)


def check_gradient(net: Mlp, x, loss=None, h: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    ``loss`` maps the network output to ``(value, d value / d output)``; the
    default is a fixed random linear functional.  Relative error is taken
    against ``max(|analytic|, 1e-8)``.
    """
    x = np.asarray(x, dtype=float)
    if loss is None:
        proj = np.random.default_rng(0).standard_normal(np.shape(net.forward(x)))

        def loss(y):
            return float(np.sum(proj * y)), proj

    theta = net.get_params()
    _, g_out = loss(net.forward(x))
    analytic, _ = net.backward(g_out)
    numeric = np.zeros_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + h
        net.set_params(bumped)
        up = loss(net.forward(x))[0]
        bumped[i] = theta[i] - h
        net.set_params(bumped)
        down = loss(net.forward(x))[0]
        numeric[i] = (up - down) / (2 * h)
    net.set_params(theta)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1e-8)))


class PolicyHead:
    """Mean network plus log standard deviation for a diagonal Gaussian.

    By default the log std is a free vector shared by all states; with
    ``state_dependent_std=True`` it is a second MLP of the observation.
    Log std is clipped to ``[-8, 2]``; the clip has zero gradient outside.
    """

    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64), rng=None, state_dependent_std: bool = False, init_log_std: float = 0.0):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.hidden = tuple(hidden)
        self.state_dependent_std = state_dependent_std
        sizes = [obs_dim, *hidden, act_dim]
        self.mean_net = Mlp(sizes, rng=rng, out_gain=0.01)
        if state_dependent_std:
            self.std_net = Mlp(sizes, rng=rng, out_gain=0.01)
            self.std_net.biases[-1][...] = init_log_std
            self.log_std = None
        else:
            self.std_net = None
            self.log_std = np.full(act_dim, float(init_log_std))

    @property
    def num_params(self) -> int:
        n = self.mean_net.num_params
        return n + (self.std_net.num_params if self.state_dependent_std else self.act_dim)

    def get_params(self) -> np.ndarray:
        other = self.std_net.params if self.state_dependent_std else self.log_std
        return np.concatenate([self.mean_net.params, other])

    def set_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {theta.shape}")
        n = self.mean_net.num_params
        self.mean_net.set_params(theta[:n])
        if self.state_dependent_std:
            self.std_net.set_params(theta[n:])
        else:
            self.log_std[...] = theta[n:]

    def zero(self):
        """Random-agent setting: mean output 0 and unit std for every state."""
        self.mean_net.params[...] = 0.0
        if self.state_dependent_std:
            self.std_net.params[...] = 0.0
        else:
            self.log_std[...] = 0.0

    def forward(self, obs) -> tuple[np.ndarray, np.ndarray]:
        """Mean and (clipped) log std for a ``(batch, obs_dim)`` array."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        mu = self.mean_net.forward(obs)
        if self.state_dependent_std:
            raw = self.std_net.forward(obs)
        else:
            raw = np.broadcast_to(self.log_std, mu.shape)
        self._raw = raw
        return mu, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)

    def backward(self, d_mu, d_log_std) -> np.ndarray:
        inside = (self._raw >= LOG_STD_MIN) & (self._raw <= LOG_STD_MAX)
        d_raw = np.where(inside, d_log_std, 0.0)
        g_mean, _ = self.mean_net.backward(d_mu)
        if self.state_dependent_std:
            g_std, _ = self.std_net.backward(d_raw)
        else:
            g_std = d_raw.sum(axis=0)
        return np.concatenate([g_mean, g_std])


class Adam:
    """Adam on a flat parameter vector, updated in place."""

    def __init__(self, size: int, lr: float = 4e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# Checkpoint: 4-byte little-endian header length, UTF-8 JSON header, then the
# parameter vector as little-endian float64.


def save_checkpoint(path, params: np.ndarray, header: dict):
    meta = json.dumps({**header, "num_params": int(params.size)}).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(np.asarray(params, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[np.ndarray, dict]:
    data = Path(path).read_bytes()
    (n,) = struct.unpack("<I", data[:4])
    header = json.loads(data[4 : 4 + n].decode())
    params = np.frombuffer(data[4 + n :], dtype="<f8").astype(float)
    if params.size != header["num_params"]:
        raise ValueError(f"checkpoint holds {params.size} parameters, header says {header['num_params']}")
    return params, header


def save_head(path, head: PolicyHead, value_net: Mlp | None = None, step: int = 0):
    header = {
        "layer_sizes": [head.obs_dim, *head.hidden, head.act_dim],
        "state_dependent_std": head.state_dependent_std,
        "log_std": None if head.state_dependent_std else head.log_std.tolist(),
        "value_layer_sizes": None if value_net is None else value_net.layer_sizes,
        "step": int(step),
    }
    params = head.get_params() if value_net is None else np.concatenate([head.get_params(), value_net.params])
    save_checkpoint(path, params, header)


def load_head(path) -> tuple[PolicyHead, Mlp | None, dict]:
    params, header = load_checkpoint(path)
    sizes = header["layer_sizes"]
    head = PolicyHead(sizes[0], sizes[-1], hidden=sizes[1:-1], state_dependent_std=header["state_dependent_std"])
    n = head.num_params
    head.set_params(params[:n])
    value_net = None
    if header["value_layer_sizes"] is not None:
        value_net = Mlp(header["value_layer_sizes"])
        value_net.set_params(params[n:])
    return head, value_net, header
