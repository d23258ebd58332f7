"""Dense MLP with hand-written forward and backward passes.

All parameters of a network live in one flat float64 vector so that
optimizers, checkpoints, and finite-difference checks can treat the whole
network as a single point in R^P.

Flat layout, for layer widths (d0, d1, ..., dL):
    for each layer l = 0 .. L-1:
        weight matrix W_l of shape (d_l, d_{l+1}), flattened row-major,
        followed by the bias vector b_l of length d_{l+1}.
Hidden layers apply the configured activation; the output layer is linear.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpDef:
    """Architecture of a fully-connected Q-network.

    layer_widths is (input dim, hidden dims..., output dim); the output
    dimension is the number of actions when used for Q-values.
    """

    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(int(w) <= 0 for w in self.layer_widths):
            raise ValueError(f"layer widths must be positive: {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))


def param_count(mlp: MlpDef) -> int:
    widths = mlp.layer_widths
    return sum(din * dout + dout for din, dout in zip(widths[:-1], widths[1:]))


def split_params(mlp: MlpDef, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of the flat vector as per-layer (W, b) pairs. No copies."""
    params = np.asarray(params)
    if params.shape != (param_count(mlp),):
        raise ValueError(
            f"params has shape {params.shape}, expected ({param_count(mlp)},)"
        )
    layers = []
    off = 0
    widths = mlp.layer_widths
    for din, dout in zip(widths[:-1], widths[1:]):
        w = params[off : off + din * dout].reshape(din, dout)
        off += din * dout
        b = params[off : off + dout]
        off += dout
        layers.append((w, b))
    return layers


def init_params(mlp: MlpDef) -> np.ndarray:
    """Glorot-uniform weights, zero biases; deterministic in mlp.seed."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(mlp.seed)))
    chunks = []
    widths = mlp.layer_widths
    for din, dout in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (din + dout))
        chunks.append(rng.uniform(-limit, limit, size=din * dout))
        chunks.append(np.zeros(dout))
    return np.concatenate(chunks)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def forward_batch(mlp: MlpDef, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Q-values for a batch of feature rows, shape (B, input) -> (B, output)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.layer_widths[0]:
        raise ValueError(
            f"batch has shape {x.shape}, expected (B, {mlp.layer_widths[0]})"
        )
    layers = split_params(mlp, params)
    h = x
    for w, b in layers[:-1]:
        h = _activate(h @ w + b, mlp.activation)
    w, b = layers[-1]
    return h @ w + b


def forward(mlp: MlpDef, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Q-values for a single feature vector. Pure; output never aliases inputs."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ValueError(f"expected rank-1 features, got shape {features.shape}")
    return forward_batch(mlp, params, features[None, :])[0]


def _stack_batch(batch):
    if len(batch) == 0:
        raise ValueError("empty batch")
    s = np.stack([np.asarray(t.s, dtype=np.float64) for t in batch])
    s_next = np.stack([np.asarray(t.s_next, dtype=np.float64) for t in batch])
    actions = np.array([t.a for t in batch], dtype=np.intp)
    rewards = np.array([t.r for t in batch], dtype=np.float64)
    nonterminal = np.array([0.0 if t.terminal else 1.0 for t in batch])
    return s, actions, rewards, s_next, nonterminal


def _targets(mlp: MlpDef, theta: np.ndarray, rewards, s_next, nonterminal, gamma: float):
    # Bootstrapped regression targets; they depend on theta only, never on w.
    q_next = forward_batch(mlp, theta, s_next)
    return rewards + gamma * nonterminal * q_next.max(axis=1)


def td_loss(mlp: MlpDef, w: np.ndarray, theta: np.ndarray, batch, gamma: float) -> float:
    """Summed squared TD loss: 1/2 sum_batch (target - q(s,a;w))^2.

    Targets are r for terminal transitions and r + gamma*max_a' q(s';theta)
    otherwise. The sum is not divided by the batch size.
    """
    s, actions, rewards, s_next, nonterminal = _stack_batch(batch)
    y = _targets(mlp, theta, rewards, s_next, nonterminal, gamma)
    q = forward_batch(mlp, w, s)
    delta = q[np.arange(len(batch)), actions] - y
    return float(0.5 * np.dot(delta, delta))


def grad_td_loss(
    mlp: MlpDef, w: np.ndarray, theta: np.ndarray, batch, gamma: float
) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to w, with theta held constant.

    Semi-gradient: the max over the target network contributes nothing to the
    gradient. Returns (loss, flat gradient with the same layout as w).
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    s, actions, rewards, s_next, nonterminal = _stack_batch(batch)
    y = _targets(mlp, theta, rewards, s_next, nonterminal, gamma)

    layers = split_params(mlp, w)
    acts = [s]  # layer inputs
    pres = []  # hidden pre-activations
    h = s
    for wmat, b in layers[:-1]:
        z = h @ wmat + b
        pres.append(z)
        h = _activate(z, mlp.activation)
        acts.append(h)
    wmat, b = layers[-1]
    q = h @ wmat + b

    rows = np.arange(len(batch))
    delta = q[rows, actions] - y
    loss = float(0.5 * np.dot(delta, delta))

    g_out = np.zeros_like(q)
    g_out[rows, actions] = delta

    grads = [None] * len(layers)  # (gW, gb) per layer
    g = g_out
    for l in range(len(layers) - 1, -1, -1):
        grads[l] = (acts[l].T @ g, g.sum(axis=0))
        if l > 0:
            g = g @ layers[l][0].T
            if mlp.activation == "relu":
                g = g * (pres[l - 1] > 0.0)
            else:
                g = g * (1.0 - acts[l] ** 2)
    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return loss, flat


def finite_diff_grad(
    mlp: MlpDef,
    w: np.ndarray,
    theta: np.ndarray,
    batch,
    gamma: float,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of td_loss at w, one coordinate at a time."""
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    w = np.asarray(w, dtype=np.float64)
    grad = np.empty_like(w)
    for j in range(w.size):
        wp = w.copy()
        wp[j] += h
        lp = td_loss(mlp, wp, theta, batch, gamma)
        wp[j] = w[j] - h
        lm = td_loss(mlp, wp, theta, batch, gamma)
        grad[j] = (lp - lm) / (2.0 * h)
    return grad


def params_to_bytes(layer_widths: tuple[int, ...], values: np.ndarray) -> bytes:
    """Serialize a flat parameter vector.

    Layout: uint32 LE width count, then each width as uint32 LE, then the
    values as float64 LE. The value count must match the widths.
    """
    widths = tuple(int(w) for w in layer_widths)
    expected = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    values = np.asarray(values, dtype="<f8")
    if values.shape != (expected,):
        raise ValueError(f"values shape {values.shape} does not match widths {widths}")
    head = struct.pack("<I", len(widths)) + np.asarray(widths, dtype="<u4").tobytes()
    return head + values.tobytes()


def params_from_bytes(buf: bytes, offset: int = 0) -> tuple[tuple[int, ...], np.ndarray, int]:
    """Inverse of params_to_bytes. Returns (widths, values, next offset)."""
    (n,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    widths = tuple(int(x) for x in np.frombuffer(buf, dtype="<u4", count=n, offset=offset))
    offset += 4 * n
    count = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    values = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).copy()
    offset += 8 * count
    return widths, values, offset
