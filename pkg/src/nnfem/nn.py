"""Fully-connected feed-forward network on 2D points with reverse-mode
parameter gradients.

Parameters live in one flat float64 vector, layer-major: for each layer k
the weight matrix W_k (shape n_k x n_{k-1}, row-major) followed by the bias
b_k.  The training loop only ever needs gradients of weighted sums of
outputs with respect to the parameters, never spatial derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Mlp", "init", "forward", "vjp_params", "save_params", "load_params"]

_SNAPSHOT_VERSION = 1


def _softplus(x):
    # ln(1 + e^x) with an overflow-safe branch for large arguments
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def _softplus_prime(x):
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "softplus": (_softplus, _softplus_prime),
}


@dataclass(frozen=True)
class Mlp:
    """Architecture of a scalar network: layer sizes, activation, and an
    optional output rectification ``|x| + 0.01`` for positive fields."""

    sizes: tuple[int, ...]
    activation: str = "tanh"
    rect: bool = False

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; "
                f"available: {sorted(_ACTIVATIONS)}"
            )

    @property
    def n_params(self):
        return sum(
            self.sizes[k] * self.sizes[k - 1] + self.sizes[k]
            for k in range(1, len(self.sizes))
        )

    def unflatten(self, theta):
        """Split the flat parameter vector into (W, b) pairs."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(
                f"parameter vector has shape {theta.shape}, expected ({self.n_params},)"
            )
        out = []
        pos = 0
        for k in range(1, len(self.sizes)):
            nk, nk1 = self.sizes[k], self.sizes[k - 1]
            W = theta[pos : pos + nk * nk1].reshape(nk, nk1)
            pos += nk * nk1
            b = theta[pos : pos + nk]
            pos += nk
            out.append((W, b))
        return out

    def init_params(self, seed=0):
        """Glorot-uniform weights and zero biases, reproducible from seed."""
        rng = np.random.default_rng(seed)
        chunks = []
        for k in range(1, len(self.sizes)):
            nk, nk1 = self.sizes[k], self.sizes[k - 1]
            limit = np.sqrt(6.0 / (nk + nk1))
            chunks.append(rng.uniform(-limit, limit, size=nk * nk1))
            chunks.append(np.zeros(nk))
        return np.concatenate(chunks)


def init(arch, activation="tanh", seed=0, rect=False):
    """Create a network and its initial flat parameter vector."""
    net = Mlp(tuple(arch), activation, rect)
    return net, net.init_params(seed)


def forward(net: Mlp, theta, points):
    """Network values at a batch of 2D points, shape (n,)."""
    act, _ = _ACTIVATIONS[net.activation]
    z = np.asarray(points, dtype=float).reshape(-1, 2)
    layers = net.unflatten(theta)
    for W, b in layers[:-1]:
        z = act(z @ W.T + b)
    W, b = layers[-1]
    out = (z @ W.T + b)[:, 0]
    if net.rect:
        out = np.abs(out) + 0.01
    return out


def vjp_params(net: Mlp, theta, points, cotangent):
    """Gradient of ``sum_i cotangent_i * N(points_i; theta)`` w.r.t. theta.

    One reverse sweep; the rectification uses the sign subgradient with
    ``sign(0) = 0``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    w = np.asarray(cotangent, dtype=float)
    if w.shape != (len(pts),):
        raise ValueError(
            f"cotangent has shape {w.shape}, expected ({len(pts)},)"
        )
    act, act_prime = _ACTIVATIONS[net.activation]
    layers = net.unflatten(theta)

    pre = []  # pre-activation inputs of each layer
    inputs = [pts]
    z = pts
    for W, b in layers[:-1]:
        a = z @ W.T + b
        pre.append(a)
        z = act(a)
        inputs.append(z)
    W, b = layers[-1]
    out_pre = (z @ W.T + b)[:, 0]

    delta = w.copy()
    if net.rect:
        delta = delta * np.sign(out_pre)
    delta = delta[:, None]

    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        gW = delta.T @ inputs[k]
        gb = delta.sum(axis=0)
        grads[k] = (gW, gb)
        if k > 0:
            delta = (delta @ W) * act_prime(pre[k - 1])

    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def save_params(path, net: Mlp, theta):
    """Snapshot the architecture header and flat parameters (.npz)."""
    np.savez(
        path,
        format_version=_SNAPSHOT_VERSION,
        sizes=np.asarray(net.sizes, dtype=np.int64),
        activation=net.activation,
        rect=net.rect,
        theta=np.asarray(theta, dtype=float),
    )


def load_params(path):
    """Load a snapshot written by :func:`save_params`."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != _SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        net = Mlp(
            tuple(int(s) for s in data["sizes"]),
            str(data["activation"]),
            bool(data["rect"]),
        )
        return net, np.array(data["theta"], dtype=float)
