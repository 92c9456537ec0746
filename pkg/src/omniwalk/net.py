"""Fixed-topology tanh MLPs with exact reverse-mode gradients.

Parameters live in one flat float64 vector. Layout is layer-major; each
layer stores its weight matrix of shape ``(out, in)`` in row-major order
followed by its bias vector of length ``out``. The layout is also what the
checkpoint format writes, so checkpoints are portable.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .mathkit import (
    AdamState,
    BetaParams,
    ConfigurationError,
    beta_log_prob,
    beta_log_prob_grad,
    beta_mode,
    beta_params_from_raw,
    sigmoid,
    softplus,
)


@dataclass(frozen=True)
class MlpSpec:
    input_width: int
    output_width: int
    hidden: tuple[int, ...] = (512, 512)
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        widths = self.widths
        if any(w < 1 for w in widths):
            raise ConfigurationError(f"all layer widths must be >= 1, got {widths}")
        if self.activation != "tanh":
            raise ConfigurationError("hidden activation is fixed to tanh")

    @property
    def widths(self) -> tuple[int, ...]:
        return (int(self.input_width), *self.hidden, int(self.output_width))

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.widths
        return [(w[i + 1], w[i]) for i in range(len(w) - 1)]

    @property
    def n_params(self) -> int:
        return sum((i + 1) * o for o, i in self.layer_shapes)

    def to_dict(self) -> dict:
        return {"input_width": int(self.input_width), "output_width": int(self.output_width),
                "hidden": list(self.hidden), "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(d["input_width"], d["output_width"], tuple(d["hidden"]),
                   d.get("activation", "tanh"))


class MlpParams:
    """Flat parameter vector plus views onto per-layer weights and biases."""

    def __init__(self, spec: MlpSpec, flat: np.ndarray | None = None):
        self.spec = spec
        if flat is None:
            flat = np.zeros(spec.n_params)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (spec.n_params,):
            raise ValueError(f"expected {spec.n_params} parameters, got {flat.shape}")
        self.flat = flat.copy()
        self.version = 0
        self._make_views()

    def _make_views(self):
        self.weights, self.biases = [], []
        off = 0
        for o, i in self.spec.layer_shapes:
            self.weights.append(self.flat[off:off + o * i].reshape(o, i))
            off += o * i
            self.biases.append(self.flat[off:off + o])
            off += o

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.flat.shape:
            raise ValueError("parameter vector shape mismatch")
        self.flat[:] = flat
        self.version += 1

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, self.flat)


def init_params(spec: MlpSpec, rng: np.random.Generator, final_scale: float = 0.01) -> MlpParams:
    """Orthogonal weights, zero biases, final layer scaled down."""
    params = MlpParams(spec)
    shapes = spec.layer_shapes
    for k, (o, i) in enumerate(shapes):
        a = rng.normal(size=(max(o, i), min(o, i)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        w = q if o >= i else q.T
        gain = final_scale if k == len(shapes) - 1 else 1.0
        params.weights[k][:] = gain * w[:o, :i]
    return params


@dataclass
class GradientTape:
    inputs: np.ndarray
    activations: list  # post-tanh activations of every hidden layer
    params_id: int
    params_version: int


def mlp_forward(spec: MlpSpec, params: MlpParams, x) -> tuple[np.ndarray, GradientTape]:
    """Evaluate the network on one input vector or a batch ``(N, in)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.input_width:
        raise ValueError(f"input width {x.shape[-1]} != {spec.input_width}")
    h = x
    acts = []
    n_layers = len(params.weights)
    for k in range(n_layers):
        z = h @ params.weights[k].T + params.biases[k]
        if k < n_layers - 1:
            h = np.tanh(z)
            acts.append(h)
        else:
            h = z
    return h, GradientTape(x, acts, id(params), params.version)


class StaleTapeError(RuntimeError):
    pass


def mlp_backward(spec: MlpSpec, params: MlpParams, tape: GradientTape, output_grad) -> np.ndarray:
    """Gradient of ``sum(output_grad * output)`` with respect to the flat parameters."""
    if tape.params_id != id(params) or tape.params_version != params.version:
        raise StaleTapeError("tape does not belong to the current parameters")
    g = np.asarray(output_grad, dtype=np.float64)
    batched = tape.inputs.ndim == 2
    if not batched:
        g = g[None, :]
    inputs = tape.inputs if batched else tape.inputs[None, :]
    acts = [a if batched else a[None, :] for a in tape.activations]
    grad = np.empty(spec.n_params)
    offsets = []
    off = 0
    for o, i in spec.layer_shapes:
        offsets.append(off)
        off += (i + 1) * o
    n_layers = len(params.weights)
    for k in range(n_layers - 1, -1, -1):
        o, i = spec.layer_shapes[k]
        prev = acts[k - 1] if k > 0 else inputs
        off = offsets[k]
        grad[off:off + o * i] = (g.T @ prev).ravel()
        grad[off + o * i:off + o * i + o] = g.sum(axis=0)
        if k > 0:
            g = (g @ params.weights[k]) * (1.0 - acts[k - 1] ** 2)
    return grad


# ---------------------------------------------------------------------------
# policy heads


class BetaHead:
    """Two raw outputs per action dimension, laid out ``[a_0, b_0, a_1, b_1, ...]``."""

    name = "beta"

    def __init__(self, action_dim: int):
        self.action_dim = action_dim

    @property
    def raw_width(self) -> int:
        return 2 * self.action_dim

    def params(self, raw) -> BetaParams:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[-1] % 2:
            raise ConfigurationError("beta head needs an even number of raw outputs")
        return beta_params_from_raw(raw[..., 0::2], raw[..., 1::2])

    def sample(self, raw, generator: np.random.Generator) -> np.ndarray:
        p = self.params(raw)
        return generator.beta(p.alpha, p.beta)

    def to_unit(self, sample):
        return sample

    def mode(self, raw) -> np.ndarray:
        return np.asarray(beta_mode(self.params(raw)))

    def log_prob(self, raw, sample) -> np.ndarray:
        return beta_log_prob(self.params(raw), sample).sum(axis=-1)

    def log_prob_grad(self, raw, sample) -> np.ndarray:
        """d log_prob / d raw, same shape as ``raw``."""
        raw = np.asarray(raw, dtype=np.float64)
        p = self.params(raw)
        ga, gb = beta_log_prob_grad(p, sample)
        out = np.empty_like(raw)
        out[..., 0::2] = ga * sigmoid(raw[..., 0::2])
        out[..., 1::2] = gb * sigmoid(raw[..., 1::2])
        return out

    def concentration(self, raw) -> np.ndarray:
        p = self.params(raw)
        return p.alpha + p.beta


def actor_head(raw_output) -> list[BetaParams]:
    """Per-dimension Beta parameters for one raw actor output vector."""
    raw = np.asarray(raw_output, dtype=np.float64)
    if raw.ndim != 1 or raw.size % 2:
        raise ConfigurationError("actor output width must be even")
    a = 1.0 + softplus(raw[0::2])
    b = 1.0 + softplus(raw[1::2])
    return [BetaParams(a[i], b[i]) for i in range(a.size)]


class GaussianHead:
    """Clipped-Gaussian surrogate used by the ablation.

    Raw outputs ``[mu_0, s_0, ...]``; mean = 0.5 + mu, std = exp(s + log_std_offset).
    Samples are drawn unclipped (log-probs use the unclipped value) and clipped
    into [0, 1] before reaching the environment.
    """

    name = "gaussian"
    log_std_offset = -1.6

    def __init__(self, action_dim: int):
        self.action_dim = action_dim

    @property
    def raw_width(self) -> int:
        return 2 * self.action_dim

    def _mean_std(self, raw):
        raw = np.asarray(raw, dtype=np.float64)
        mean = 0.5 + raw[..., 0::2]
        log_std = np.clip(raw[..., 1::2] + self.log_std_offset, -10.0, 2.0)
        return mean, log_std

    def sample(self, raw, generator: np.random.Generator) -> np.ndarray:
        mean, log_std = self._mean_std(raw)
        return mean + np.exp(log_std) * generator.standard_normal(mean.shape)

    def to_unit(self, sample):
        return np.clip(sample, 0.0, 1.0)

    def mode(self, raw) -> np.ndarray:
        mean, _ = self._mean_std(raw)
        return np.clip(mean, 0.0, 1.0)

    def log_prob(self, raw, sample) -> np.ndarray:
        mean, log_std = self._mean_std(raw)
        z = (np.asarray(sample) - mean) / np.exp(log_std)
        return (-0.5 * z * z - log_std - 0.5 * np.log(2 * np.pi)).sum(axis=-1)

    def log_prob_grad(self, raw, sample) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        mean, log_std = self._mean_std(raw)
        std = np.exp(log_std)
        z = (np.asarray(sample) - mean) / std
        out = np.empty_like(raw)
        out[..., 0::2] = z / std
        s_raw = raw[..., 1::2] + self.log_std_offset
        inside = (s_raw > -10.0) & (s_raw < 2.0)
        out[..., 1::2] = (z * z - 1.0) * inside
        return out

    def concentration(self, raw) -> np.ndarray:
        _, log_std = self._mean_std(raw)
        return 1.0 / np.exp(2 * log_std)


def make_head(name: str, action_dim: int):
    if name == "beta":
        return BetaHead(action_dim)
    if name == "gaussian":
        return GaussianHead(action_dim)
    raise ConfigurationError(f"unknown policy head {name!r}")


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"OMNIWCK\x00"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    actor_spec: MlpSpec
    critic_spec: MlpSpec
    actor: np.ndarray
    critic: np.ndarray
    actor_adam: AdamState
    critic_adam: AdamState
    epoch: int = 0
    episodes: int = 0
    c_vel: float = 1.0
    c_foot: float = 1.0
    head: str = "beta"
    runtime: dict = field(default_factory=dict)


def _pack_f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Write a checkpoint atomically (temporary file + rename).

    Layout (little endian)::

        magic[8] version:u32 header_len:u32 header_json
        actor f64[n_a] critic f64[n_c]
        actor_m f64[n_a] actor_v f64[n_a] critic_m f64[n_c] critic_v f64[n_c]
        actor_step:i64 critic_step:i64 epoch:i64 episodes:i64 c_vel:f64 c_foot:f64
        runtime_len:u64 runtime_json
        crc32:u32   (over every preceding byte)
    """
    header = {
        "actor_spec": ck.actor_spec.to_dict(),
        "critic_spec": ck.critic_spec.to_dict(),
        "head": ck.head,
        "adam": {"lr": [ck.actor_adam.lr, ck.critic_adam.lr],
                 "beta1": [ck.actor_adam.beta1, ck.critic_adam.beta1],
                 "beta2": [ck.actor_adam.beta2, ck.critic_adam.beta2],
                 "eps": [ck.actor_adam.eps, ck.critic_adam.eps]},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    rb = json.dumps(ck.runtime, sort_keys=True).encode()
    na, nc = ck.actor_spec.n_params, ck.critic_spec.n_params
    if ck.actor.shape != (na,) or ck.critic.shape != (nc,):
        raise CheckpointError("parameter vectors do not match their specs")
    parts = [
        MAGIC, struct.pack("<II", FORMAT_VERSION, len(hb)), hb,
        _pack_f64(ck.actor), _pack_f64(ck.critic),
        _pack_f64(ck.actor_adam.m), _pack_f64(ck.actor_adam.v),
        _pack_f64(ck.critic_adam.m), _pack_f64(ck.critic_adam.v),
        struct.pack("<qqqqdd", ck.actor_adam.step, ck.critic_adam.step, ck.epoch,
                    ck.episodes, ck.c_vel, ck.c_foot),
        struct.pack("<Q", len(rb)), rb,
    ]
    body = b"".join(parts)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body)
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def f64(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def load_checkpoint(path, actor_spec: MlpSpec | None = None,
                    critic_spec: MlpSpec | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 12 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checkpoint truncated or corrupted (checksum mismatch)")
    r = _Reader(data[:-4])
    r.take(len(MAGIC))
    version, hlen = struct.unpack("<II", r.take(8))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    header = json.loads(r.take(hlen))
    a_spec = MlpSpec.from_dict(header["actor_spec"])
    c_spec = MlpSpec.from_dict(header["critic_spec"])
    for want, got, name in ((actor_spec, a_spec, "actor"), (critic_spec, c_spec, "critic")):
        if want is not None and want != got:
            raise CheckpointError(f"{path}: {name} spec mismatch: file has {got.widths}, "
                                  f"expected {want.widths}")
    na, nc = a_spec.n_params, c_spec.n_params
    actor, critic = r.f64(na), r.f64(nc)
    am, av, cm, cv = r.f64(na), r.f64(na), r.f64(nc), r.f64(nc)
    a_step, c_step, epoch, episodes, c_vel, c_foot = struct.unpack("<qqqqdd", r.take(48))
    (rlen,) = struct.unpack("<Q", r.take(8))
    runtime = json.loads(r.take(rlen)) if rlen else {}
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    ad = header["adam"]
    actor_adam = AdamState(am, av, a_step, ad["lr"][0], ad["beta1"][0], ad["beta2"][0], ad["eps"][0])
    critic_adam = AdamState(cm, cv, c_step, ad["lr"][1], ad["beta1"][1], ad["beta2"][1], ad["eps"][1])
    return Checkpoint(a_spec, c_spec, actor, critic, actor_adam, critic_adam, epoch, episodes,
                      c_vel, c_foot, header.get("head", "beta"), runtime)


def count_params(widths: Sequence[int]) -> int:
    return sum((widths[i] + 1) * widths[i + 1] for i in range(len(widths) - 1))
