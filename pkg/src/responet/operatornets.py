"""Branch-trunk operator networks for causal trajectory prediction.

Four architectures over the :mod:`responet.neuralcore` substrate:

* ``DeepOnetModel`` - plain branch/trunk dot product; the branch encodes
  the whole sampled input signal, the trunk the output time.
* ``PodDeepOnetModel`` - the trunk is replaced by a fixed orthonormal
  basis extracted from centred training outputs; the branch predicts
  basis coefficients and the whole trajectory comes out at once.
* ``MsDeepOnetModel`` - the trunk is a sum of subnetworks fed
  frequency-scaled copies of the (unit-interval) time input, to fight
  the usual low-frequency learning bias.
* ``CausalityModel`` - the branch consumes a zero-padded window holding
  only samples up to the query time.  With ``convolutional=True`` the
  window is right-aligned against the branch's first-layer weight
  columns, so a prediction at a later time slides the same weights
  along the signal (a correlation); with ``convolutional=False`` the
  window stays left-aligned (causality without the sliding structure).

``causality_forward_all`` evaluates a causal model at every time index;
its fast path computes the first-layer correlations by FFT and must
agree with the per-index direct path to 1e-9.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .neuralcore import Mlp, _pack_mlp, _unpack_mlp, mlp_forward

_MODEL_MAGIC = b"RNMODEL1"
_MODEL_VERSION = 1

ARCH_TAGS = ("deeponet", "pod", "msdeeponet", "causality", "causality_noconv")


# ---------------------------------------------------------------------------
# model containers


@dataclass
class DeepOnetModel:
    """Plain branch/trunk pair; prediction is their dot product plus a scalar bias.

    The final linear layer of the branch absorbs the combination
    coefficients, so branch and trunk must share their output width.
    The output bias is kept but disabled (zero, untrained) by default.
    """

    branch: Mlp
    trunk: Mlp
    output_bias: float = 0.0

    def __post_init__(self):
        if self.branch.dims[-1] != self.trunk.dims[-1]:
            raise ValueError("branch and trunk output widths must match")


@dataclass
class PodDeepOnetModel:
    """Branch predicting coefficients of a fixed orthonormal trajectory basis."""

    branch: Mlp
    basis: np.ndarray   # (p, m), orthonormal rows
    mean: np.ndarray    # (m,)

    def __post_init__(self):
        p = self.basis.shape[0]
        if self.branch.dims[-1] != p:
            raise ValueError("branch output width must equal the basis size")
        gram = self.basis @ self.basis.T
        if np.abs(gram - np.eye(p)).max() > 1e-10:
            raise ValueError("basis rows must be orthonormal")


@dataclass
class MsTrunk:
    """Sum of subnetworks fed scaled copies of the input: sum_i w_i net_i(s_i t)."""

    subnets: list
    scales: np.ndarray
    combo_weights: np.ndarray

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=float)
        self.combo_weights = np.asarray(self.combo_weights, dtype=float)
        widths = {net.dims[-1] for net in self.subnets}
        if len(widths) != 1:
            raise ValueError("subnet output widths must agree")
        if not (len(self.subnets) == len(self.scales) == len(self.combo_weights)):
            raise ValueError("need one scale and one weight per subnet")
        if np.any(self.scales <= 0) or not np.all(np.isfinite(self.scales)):
            raise ValueError("scales must be finite and positive")

    @property
    def out_width(self) -> int:
        return self.subnets[0].dims[-1]


def default_mstrunk_scales(count: int = 20, top: float = 1.0 + 780.0 * np.pi) -> np.ndarray:
    """Equally spaced scale set from 1 to the top value (defaults span 1..1+780pi)."""
    return np.linspace(1.0, top, count)


@dataclass
class MsDeepOnetModel:
    """Branch/trunk pair whose trunk is a multi-scale sum; trunk input is t/T in [0, 1]."""

    branch: Mlp
    trunk: MsTrunk
    output_bias: float = 0.0

    def __post_init__(self):
        if self.branch.dims[-1] != self.trunk.out_width:
            raise ValueError("branch and trunk output widths must match")


@dataclass
class CausalityModel:
    """Causal branch/trunk model over a fixed m-sample grid with step dt.

    The branch input width equals the sensor count m.  A prediction at
    index p (time p*dt) sees exactly the first p samples, zero padded to
    width m; the ``convolutional`` flag picks right alignment (shared
    sliding weights) versus left alignment.
    """

    branch: Mlp
    trunk: Mlp
    dt: float
    m: int
    convolutional: bool = True
    output_bias: float = 0.0

    def __post_init__(self):
        if self.branch.dims[0] != self.m:
            raise ValueError("branch input width must equal the sensor count m")
        if self.branch.dims[-1] != self.trunk.dims[-1]:
            raise ValueError("branch and trunk output widths must match")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


# ---------------------------------------------------------------------------
# forward evaluation


def deeponet_forward(model: DeepOnetModel, signal_samples, t: float, dropout=(0.0, 0.0), rng=None) -> float:
    """dot(branch(signal), trunk(t)) + bias for a single query."""
    b = mlp_forward(model.branch, np.asarray(signal_samples, dtype=float), dropout[0], rng)
    tau = mlp_forward(model.trunk, np.asarray([t], dtype=float), dropout[1], rng)
    return float(b @ tau + model.output_bias)


def pod_basis(train_outputs: np.ndarray, p: int):
    """Mean trajectory and top-p orthonormal basis of the centred outputs.

    The mean is the per-time-point average over rows; the basis rows are
    the leading right singular vectors of the centred matrix, ordered by
    descending singular value, each sign-fixed so its largest-magnitude
    entry is positive.  Raises for p > n and for a degenerate corpus
    (an exactly zero singular value among the top p, e.g. identical
    rows); note centring always leaves one near-zero singular value, so
    p = n stays usable on generic data.
    """
    x = np.asarray(train_outputs, dtype=float)
    n, m = x.shape
    if not 1 <= p <= n:
        raise ValueError("need 1 <= p <= number of training outputs")
    if n > m:
        raise ValueError("need at least as many time points as outputs")
    mean = x.mean(axis=0)
    centred = x - mean
    _, svals, vt = np.linalg.svd(centred, full_matrices=False)
    if svals[p - 1] == 0.0:
        raise ValueError("rank deficient: zero singular value among the leading basis vectors")
    basis = vt[:p].copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return mean, basis


def pod_forward(model: PodDeepOnetModel, signal_samples, dropout: float = 0.0, rng=None) -> np.ndarray:
    """Whole predicted trajectory: coefficient-weighted basis plus the mean."""
    coef = mlp_forward(model.branch, np.asarray(signal_samples, dtype=float), dropout, rng)
    return coef @ model.basis + model.mean


def mstrunk_forward(trunk: MsTrunk, t, dropout: float = 0.0, rng=None) -> np.ndarray:
    """sum_i w_i subnet_i(scale_i * t); t is the caller's unit-interval time."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((len(t), trunk.out_width))
    for net, scale, w in zip(trunk.subnets, trunk.scales, trunk.combo_weights):
        out += w * mlp_forward(net, (scale * t)[:, None], dropout, rng)
    return out[0] if out.shape[0] == 1 else out


def ms_forward(model: MsDeepOnetModel, signal_samples, t_unit: float, rng=None) -> float:
    """dot(branch(signal), mstrunk(t_unit)) + bias; t_unit already in [0, 1]."""
    b = mlp_forward(model.branch, np.asarray(signal_samples, dtype=float))
    tau = mstrunk_forward(model.trunk, t_unit)
    return float(b @ tau + model.output_bias)


# ---------------------------------------------------------------------------
# causal windows


def causal_branch_input(signal, p: int) -> np.ndarray:
    """First p samples right-aligned, zero padded on the left.

    The fixed branch weight columns then slide over the signal as p
    advances, which is what makes the branch behave like a correlation.
    """
    u = np.asarray(signal, dtype=float)
    m = len(u)
    if not 0 <= p <= m:
        raise ValueError("window length p out of range")
    out = np.zeros(m)
    if p:
        out[m - p :] = u[:p]
    return out


def noconv_branch_input(signal, p: int) -> np.ndarray:
    """First p samples left-aligned, zero padded on the right (no sliding)."""
    u = np.asarray(signal, dtype=float)
    m = len(u)
    if not 0 <= p <= m:
        raise ValueError("window length p out of range")
    out = np.zeros(m)
    if p:
        out[:p] = u[:p]
    return out


def window_matrix(signal, convolutional: bool) -> np.ndarray:
    """All m windows of a signal stacked as rows (row p-1 holds window p).

    For the convolutional alignment this is a zero-copy strided view of
    the padded signal; batch consumers never materialise it themselves.
    """
    u = np.asarray(signal, dtype=float)
    m = len(u)
    if convolutional:
        padded = np.concatenate([np.zeros(m - 1), u])
        return np.lib.stride_tricks.sliding_window_view(padded, m)
    cols = np.arange(m)
    return np.where(cols[None, :] <= cols[:, None], u[None, :], 0.0)


def causality_forward(model: CausalityModel, signal, p: int, dropout=(0.0, 0.0), rng=None) -> float:
    """Prediction at window length p, paired with trunk input t = p*dt."""
    u = np.asarray(signal, dtype=float)
    if len(u) != model.m:
        raise ValueError("signal length must equal the model sensor count")
    window = causal_branch_input(u, p) if model.convolutional else noconv_branch_input(u, p)
    b = mlp_forward(model.branch, window, dropout[0], rng)
    tau = mlp_forward(model.trunk, np.asarray([p * model.dt]), dropout[1], rng)
    return float(b @ tau + model.output_bias)


def branch_features(model: CausalityModel, signal, p: int) -> np.ndarray:
    """Branch output vector for the window at index p (evaluation mode)."""
    u = np.asarray(signal, dtype=float)
    window = causal_branch_input(u, p) if model.convolutional else noconv_branch_input(u, p)
    return mlp_forward(model.branch, window)


def _fft_first_layer(weights: np.ndarray, bias: np.ndarray, u: np.ndarray) -> np.ndarray:
    """First-layer pre-activations of the right-aligned windows for all p.

    z[p-1, i] = sum_j W[i, m-p+j] u[j] = conv(u, reversed W_i)[p-1],
    computed for every row i via one padded FFT product.
    """
    m = len(u)
    size = 1 << int(np.ceil(np.log2(max(2 * m - 1, 2))))
    uf = np.fft.rfft(u, size)
    wf = np.fft.rfft(weights[:, ::-1], size, axis=1)
    z = np.fft.irfft(uf[None, :] * wf, size, axis=1)[:, :m]
    return z.T + bias


def causality_forward_all(model: CausalityModel, signal, fast: bool = False) -> np.ndarray:
    """Predictions at every window length p = 1..m (evaluation mode).

    The direct path evaluates each window independently.  The fast path
    (convolutional models only) computes all first-layer pre-activations
    as FFT correlations of the first-layer weight rows with the signal,
    then applies the remaining layers batched; it matches the direct
    path to better than 1e-9 per output.
    """
    u = np.asarray(signal, dtype=float)
    if len(u) != model.m:
        raise ValueError("signal length must equal the model sensor count")
    if not fast:
        return np.array([causality_forward(model, u, p) for p in range(1, model.m + 1)])
    if not model.convolutional:
        raise ValueError("fast path undefined for non-convolutional models")
    branch = model.branch
    from .neuralcore import _ACTIVATIONS

    act = _ACTIVATIONS[branch.activation][0]
    h = act(_fft_first_layer(branch.weights[0], branch.biases[0], u))
    for i in range(1, len(branch.weights)):
        z = h @ branch.weights[i].T + branch.biases[i]
        h = act(z) if i < len(branch.weights) - 1 else z
    t_grid = (np.arange(1, model.m + 1) * model.dt)[:, None]
    tau = mlp_forward(model.trunk, t_grid)
    return np.einsum("pk,pk->p", h, tau) + model.output_bias


def amplitude_spectrum(samples, dt: float):
    """One-sided amplitude spectrum (freqs in Hz, |rfft| magnitudes)."""
    samples = np.asarray(samples, dtype=float)
    amps = np.abs(np.fft.rfft(samples))
    freqs = np.fft.rfftfreq(len(samples), d=dt)
    return freqs, amps


# ---------------------------------------------------------------------------
# model files: a tagged container around the network checkpoint format
#
# Layout (little endian):
#   magic     8 bytes  b"RNMODEL1"
#   version   u32
#   arch tag  16 bytes ascii, null padded
#   body      architecture-specific (embedded network checkpoints and
#             f64 arrays, each array prefixed by a u32 element count)
#   checksum  u32 CRC-32 of the body


def _pack_array(a) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8").reshape(-1)
    return struct.pack("<I", a.size) + a.tobytes()


def _unpack_array(blob, offset):
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    a = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(float)
    return a, offset + 8 * count


def save_model(model, path) -> None:
    """Write any of the five architectures to a tagged binary model file."""
    if isinstance(model, CausalityModel):
        tag = "causality" if model.convolutional else "causality_noconv"
        body = _pack_mlp(model.branch) + _pack_mlp(model.trunk)
        body += struct.pack("<dI", model.dt, model.m)
        body += _pack_array([model.output_bias])
    elif isinstance(model, PodDeepOnetModel):
        tag = "pod"
        body = _pack_mlp(model.branch)
        body += struct.pack("<II", *model.basis.shape)
        body += _pack_array(model.mean) + _pack_array(model.basis)
    elif isinstance(model, MsDeepOnetModel):
        tag = "msdeeponet"
        body = _pack_mlp(model.branch) + struct.pack("<I", len(model.trunk.subnets))
        for net in model.trunk.subnets:
            body += _pack_mlp(net)
        body += _pack_array(model.trunk.scales) + _pack_array(model.trunk.combo_weights)
        body += _pack_array([model.output_bias])
    elif isinstance(model, DeepOnetModel):
        tag = "deeponet"
        body = _pack_mlp(model.branch) + _pack_mlp(model.trunk)
        body += _pack_array([model.output_bias])
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    blob = _MODEL_MAGIC + struct.pack("<I", _MODEL_VERSION)
    blob += tag.encode("ascii").ljust(16, b"\x00")
    blob += body + struct.pack("<I", zlib.crc32(body))
    with open(path, "wb") as fh:
        fh.write(blob)


def load_model(path):
    """Read a tagged model file back into its architecture container."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MODEL_MAGIC:
        raise ValueError("bad model file: magic string mismatch")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != _MODEL_VERSION:
        raise ValueError(f"bad model file: unsupported version {version}")
    tag = blob[12:28].rstrip(b"\x00").decode("ascii")
    offset = 28
    body_start = offset
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if crc != zlib.crc32(blob[body_start : len(blob) - 4]):
        raise ValueError("bad model file: checksum mismatch")
    if tag in ("causality", "causality_noconv"):
        branch, offset = _unpack_mlp(blob, offset)
        trunk, offset = _unpack_mlp(blob, offset)
        dt, m = struct.unpack_from("<dI", blob, offset)
        offset += 12
        bias, offset = _unpack_array(blob, offset)
        return CausalityModel(
            branch=branch, trunk=trunk, dt=dt, m=m,
            convolutional=(tag == "causality"), output_bias=float(bias[0]),
        )
    if tag == "pod":
        branch, offset = _unpack_mlp(blob, offset)
        p, m = struct.unpack_from("<II", blob, offset)
        offset += 8
        mean, offset = _unpack_array(blob, offset)
        basis, offset = _unpack_array(blob, offset)
        return PodDeepOnetModel(branch=branch, basis=basis.reshape(p, m), mean=mean)
    if tag == "msdeeponet":
        branch, offset = _unpack_mlp(blob, offset)
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        subnets = []
        for _ in range(count):
            net, offset = _unpack_mlp(blob, offset)
            subnets.append(net)
        scales, offset = _unpack_array(blob, offset)
        weights, offset = _unpack_array(blob, offset)
        bias, offset = _unpack_array(blob, offset)
        trunk = MsTrunk(subnets=subnets, scales=scales, combo_weights=weights)
        return MsDeepOnetModel(branch=branch, trunk=trunk, output_bias=float(bias[0]))
    if tag == "deeponet":
        branch, offset = _unpack_mlp(blob, offset)
        trunk, offset = _unpack_mlp(blob, offset)
        bias, offset = _unpack_array(blob, offset)
        return DeepOnetModel(branch=branch, trunk=trunk, output_bias=float(bias[0]))
    raise ValueError(f"bad model file: unknown architecture tag {tag!r}")
