"""Dense-network substrate: explicit forward/backward, Adam, schedules.

Everything is float64 numpy, single fixed architecture (affine chains
with one hidden activation, linear output), with reverse-mode gradients
written out by hand.  No computation-graph machinery: the operator
models built on top only ever need this one shape of network, and the
explicit backward keeps gradient checks tight and runs deterministic.

Checkpoint byte layout (little endian), see ``save_mlp``:

    magic      8 bytes   b"RNMLP001"
    version    u32       1
    activation 16 bytes  ascii, null padded
    n_layers   u32       number of weight layers L
    dims       u32 * (L+1)
    payload    f64 * sum(out_i*in_i + out_i)   per layer: W row-major, then b
    checksum   u32       CRC-32 of the payload bytes
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

_MAGIC = b"RNMLP001"
_VERSION = 1


# ---------------------------------------------------------------------------
# activations

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_ACTIVATIONS = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float)),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "sin": (np.sin, np.cos),
    "sigmoid": (_sigmoid, lambda x: _sigmoid(x) * (1.0 - _sigmoid(x))),
    # sigmoid re-centred at zero; same derivative as the plain sigmoid
    "shifted_sigmoid": (
        lambda x: _sigmoid(x) - 0.5,
        lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)),
    ),
}

# derivative expressed through the activation value (exact, and cheaper
# than re-evaluating on the pre-activations); None where impossible
_VALUE_DERIVS = {
    "relu": lambda a: (a > 0).astype(float),
    "tanh": lambda a: 1.0 - a**2,
    "sin": None,
    "sigmoid": lambda a: a * (1.0 - a),
    "shifted_sigmoid": lambda a: (a + 0.5) * (0.5 - a),
}

# ufuncs usable with an explicit output buffer for the fused forward
_INPLACE_ACTS = {
    "tanh": lambda z: np.tanh(z, out=z),
    "sin": lambda z: np.sin(z, out=z),
    "relu": lambda z: np.maximum(z, 0.0, out=z),
}

ACTIVATION_NAMES = tuple(_ACTIVATIONS)


def activation_eval(kind: str, x):
    """Evaluate an activation elementwise. relu/tanh/sin/sigmoid/shifted_sigmoid."""
    return _ACTIVATIONS[kind][0](np.asarray(x, dtype=float))


def activation_deriv(kind: str, x):
    """Elementwise derivative; relu'(0) is defined as 0."""
    return _ACTIVATIONS[kind][1](np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# network container


@dataclass
class Mlp:
    """Affine-activation chain with a linear final layer.

    ``weights[i]`` has shape (out, in); consecutive dimensions chain.
    The same activation is applied after every hidden layer.
    """

    weights: list
    biases: list
    activation: str

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight/bias shape mismatch")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: dimensions do not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def dims(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def params(self):
        """Flat parameter list (all weights, then all biases)."""
        return list(self.weights) + list(self.biases)

    def copy(self) -> "Mlp":
        return Mlp(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )


def init_mlp(dims, activation: str, rng: np.random.Generator) -> Mlp:
    """Glorot-uniform weights, zero biases, drawn from the given stream."""
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights=weights, biases=biases, activation=activation)


@dataclass
class MlpCache:
    """Intermediates of one forward pass, consumed by ``mlp_backward``."""

    inputs: list    # input to each affine layer (post-dropout where applied)
    pre: list       # pre-activations z of the hidden layers
    masks: list     # inverted-dropout masks (None where inactive)
    squeeze: bool   # the caller passed a single sample


def _dropout_mask(shape, rate, rng):
    keep = rng.random(shape) >= rate
    return keep.astype(float) / (1.0 - rate)


def mlp_forward(net: Mlp, x, dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Forward pass; ``(batch, n_in)`` or a single ``(n_in,)`` vector.

    Training mode is selected by a positive dropout rate together with
    an rng for the mask stream: hidden units are zeroed with the given
    probability and survivors scaled by 1/(1-p) (inverted dropout), so
    evaluation applies no mask and no scaling.  A rate of 0 is exactly
    the evaluation path (taken without building the backward cache).
    """
    if dropout > 0.0:
        y, _ = mlp_forward_cached(net, x, dropout=dropout, rng=rng)
        return y
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != net.weights[0].shape[1]:
        raise ValueError(
            f"input width {h.shape[1]} does not match first layer ({net.weights[0].shape[1]})"
        )
    act = _ACTIVATIONS[net.activation][0]
    act_inplace = _INPLACE_ACTS.get(net.activation)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T
        z += b
        if i < last:
            h = act_inplace(z) if act_inplace is not None else act(z)
        else:
            h = z
    return h[0] if squeeze else h


def mlp_forward_cached(net: Mlp, x, dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Forward pass that also returns the cache needed for the backward pass."""
    if not 0.0 <= dropout < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if dropout > 0.0 and rng is None:
        raise ValueError("dropout requires an rng for the mask stream")
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != net.weights[0].shape[1]:
        raise ValueError(
            f"input width {h.shape[1]} does not match first layer ({net.weights[0].shape[1]})"
        )
    act = _ACTIVATIONS[net.activation][0]
    inputs, pre, masks = [], [], []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w.T + b
        if i < last:
            pre.append(z)
            h = act(z)
            if dropout > 0.0:
                mask = _dropout_mask(h.shape, dropout, rng)
                h = h * mask
                masks.append(mask)
            else:
                masks.append(None)
        else:
            h = z
    y = h[0] if squeeze else h
    return y, MlpCache(inputs=inputs, pre=pre, masks=masks, squeeze=squeeze)


@dataclass
class MlpGrads:
    weights: list
    biases: list

    def params(self):
        return list(self.weights) + list(self.biases)


def mlp_backward(net: Mlp, cache: MlpCache, grad_out):
    """Exact gradients of the cached forward map (dropout masks reused).

    Returns ``(MlpGrads, grad_x)`` where ``grad_x`` matches the shape of
    the original input.
    """
    grad_out = np.asarray(grad_out, dtype=float)
    delta = grad_out[None, :] if cache.squeeze else grad_out
    if delta.shape != (cache.inputs[-1].shape[0], net.weights[-1].shape[0]):
        raise ValueError("upstream gradient shape mismatch")
    deriv = _ACTIVATIONS[net.activation][1]
    vderiv = _VALUE_DERIVS[net.activation]
    g_w = [None] * len(net.weights)
    g_b = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        g_w[i] = delta.T @ cache.inputs[i]
        g_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ net.weights[i]
            if cache.masks[i - 1] is not None:
                delta *= cache.masks[i - 1]
                delta *= deriv(cache.pre[i - 1])
            elif vderiv is not None:
                # without a mask the cached layer input is the activation value
                delta *= vderiv(cache.inputs[i])
            else:
                delta *= deriv(cache.pre[i - 1])
    grad_x = delta @ net.weights[0]
    if cache.squeeze:
        grad_x = grad_x[0]
    return MlpGrads(weights=g_w, biases=g_b), grad_x


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    """First/second moment buffers mirroring a flat parameter list."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(state: AdamState, params, grads, lr: float, weight_decay=None):
    """One bias-corrected Adam update, in place; returns the parameter list.

    ``weight_decay`` is an optional per-parameter list of L2
    coefficients; a coefficient lambda adds 2*lambda*w to that
    parameter's gradient (loss-consistent penalty), which callers use
    for weight matrices only, never biases.
    """
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("parameter/gradient/state lengths differ")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if weight_decay is not None and weight_decay[i] != 0.0:
            g = g + 2.0 * weight_decay[i] * p
        m = state.m[i]
        v = state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class LrSchedule:
    """Piecewise-constant learning rate: list of (epoch_threshold, rate).

    ``lr_at`` returns the rate of the first segment whose threshold
    exceeds the epoch; after the last threshold the last rate applies
    (an epoch equal to a threshold already belongs to the next segment).
    """

    points: list

    def __post_init__(self):
        if not self.points:
            raise ValueError("schedule must have at least one segment")
        thresholds = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")
        if any(r <= 0 for _, r in self.points):
            raise ValueError("rates must be positive")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    for threshold, rate in schedule.points:
        if threshold > epoch:
            return rate
    return schedule.points[-1][1]


@dataclass
class RegConfig:
    """Per-group regularisation: L2 on weights, dropout on hidden activations."""

    l2_branch: float = 0.0
    l2_trunk: float = 0.0
    dropout_branch: float = 0.0
    dropout_trunk: float = 0.0

    def __post_init__(self):
        for name in ("l2_branch", "l2_trunk"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("dropout_branch", "dropout_trunk"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")


# ---------------------------------------------------------------------------
# gradient verification


def gradient_check(net: Mlp, x, step: float = 1e-6, rng: np.random.Generator | None = None) -> float:
    """Max mismatch between analytic and central-difference gradients.

    The scalar objective is a random (or all-ones) weighted sum of the
    outputs.  Per-component mismatch is |analytic - fd| / max(|fd|,
    1e-3); the floor keeps the measure meaningful where the true
    gradient is tiny compared to the finite-difference noise floor.
    """
    x = np.asarray(x, dtype=float)
    weights = np.ones(net.weights[-1].shape[0]) if rng is None else rng.standard_normal(net.weights[-1].shape[0])
    y, cache = mlp_forward_cached(net, x)
    grads, grad_x = mlp_backward(net, cache, np.broadcast_to(weights, y.shape))
    worst = 0.0

    def objective():
        return float(np.sum(mlp_forward(net, x) * weights))

    for analytic, param in zip(grads.params(), net.params()):
        flat = param.reshape(-1)
        aflat = analytic.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = objective()
            flat[j] = orig - step
            f_minus = objective()
            flat[j] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            worst = max(worst, abs(aflat[j] - fd) / max(abs(fd), 1e-3))
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_mlp(net: Mlp, path) -> None:
    """Serialise to the documented little-endian binary layout."""
    with open(path, "wb") as fh:
        fh.write(_pack_mlp(net))


def load_mlp(path) -> Mlp:
    with open(path, "rb") as fh:
        blob = fh.read()
    return _unpack_mlp(blob, 0)[0]


def _unpack_mlp(blob: bytes, offset: int):
    """Read one serialised network from a byte buffer; returns (Mlp, end)."""
    if blob[offset : offset + 8] != _MAGIC:
        raise ValueError("bad checkpoint: magic string mismatch")
    offset += 8
    (version,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if version != _VERSION:
        raise ValueError(f"bad checkpoint: unsupported version {version}")
    activation = blob[offset : offset + 16].rstrip(b"\x00").decode("ascii")
    offset += 16
    (n_layers,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    dims = struct.unpack_from(f"<{n_layers + 1}I", blob, offset)
    offset += 4 * (n_layers + 1)
    count = sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(n_layers))
    payload = blob[offset : offset + 8 * count]
    if len(payload) != 8 * count:
        raise ValueError("bad checkpoint: truncated payload")
    offset += 8 * count
    (crc,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if crc != zlib.crc32(payload):
        raise ValueError("bad checkpoint: checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8")
    weights, biases, pos = [], [], 0
    for i in range(n_layers):
        out_d, in_d = dims[i + 1], dims[i]
        weights.append(flat[pos : pos + out_d * in_d].reshape(out_d, in_d).astype(float))
        pos += out_d * in_d
        biases.append(flat[pos : pos + out_d].astype(float))
        pos += out_d
    return Mlp(weights=weights, biases=biases, activation=activation), offset


def _pack_mlp(net: Mlp) -> bytes:
    """Serialise to bytes (embedded form used by operator model files)."""
    dims = net.dims
    buf = _MAGIC + struct.pack("<I", _VERSION)
    buf += net.activation.encode("ascii").ljust(16, b"\x00")
    buf += struct.pack("<I", len(net.weights))
    buf += struct.pack(f"<{len(dims)}I", *dims)
    payload = b"".join(
        np.ascontiguousarray(w, dtype="<f8").tobytes() + np.ascontiguousarray(b, dtype="<f8").tobytes()
        for w, b in zip(net.weights, net.biases)
    )
    return buf + payload + struct.pack("<I", zlib.crc32(payload))
