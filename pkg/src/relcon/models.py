"""Small classifier networks with dropout perturbation and feature taps.

Two architectures cover the two dataset kinds:

* an MLP for vector data (relu hidden layers, linear head), and
* a tiny conv net for image data: two 3x3 stride-1 conv blocks with relu,
  global average pooling, then a linear head.

Both place dropout immediately before the final pooling stage (for the MLP,
immediately before the head) using inverted-dropout scaling, so evaluation
needs no rescale. Feature taps expose the activations right before the
global pooling (``pre_pool``, conv only) and right after it (``post_pool``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, FormatError, UnsupportedTapError

Params = dict[str, np.ndarray]

_MAGIC = b"RCPM"
_VERSION = 1


@dataclass(frozen=True)
class ArchSpec:
    """Architecture description; the input shape decides MLP vs conv."""

    input_shape: tuple[int, ...]
    num_classes: int
    hidden: tuple[int, ...] = (32, 32)
    conv_channels: tuple[int, ...] = (6, 8)
    dropout_rate: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.num_classes < 2:
            raise ContractError("num_classes must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError("dropout_rate must be in [0, 1)")
        if len(self.input_shape) == 1:
            if not self.hidden:
                raise ContractError("MLP needs at least one hidden layer")
        elif len(self.input_shape) == 3:
            if not self.conv_channels:
                raise ContractError("conv net needs at least one conv block")
        else:
            raise ContractError(f"input_shape must be (D,) or (C, H, W), got {self.input_shape}")

    @property
    def kind(self) -> str:
        return "mlp" if len(self.input_shape) == 1 else "conv"

    @property
    def feature_dim(self) -> int:
        """Width of the post_pool feature vector."""
        return self.hidden[-1] if self.kind == "mlp" else self.conv_channels[-1]


@dataclass
class ForwardOutput:
    """Tape nodes produced by one forward pass."""

    logits: T.Tensor
    features_post_pool: T.Tensor
    features_pre_pool: T.Tensor | None = None


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(spec: ArchSpec, rng: np.random.Generator) -> Params:
    """Glorot-uniform weights, zero biases; deterministic given the rng state."""
    params: Params = {}
    if spec.kind == "mlp":
        widths = (spec.input_shape[0],) + tuple(spec.hidden)
        for i in range(len(widths) - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            params[f"dense{i}.w"] = _glorot(rng, (fan_in, fan_out), fan_in, fan_out)
            params[f"dense{i}.b"] = np.zeros(fan_out)
        head_in = widths[-1]
    else:
        channels = (spec.input_shape[0],) + tuple(spec.conv_channels)
        for i in range(len(channels) - 1):
            cin, cout = channels[i], channels[i + 1]
            params[f"conv{i}.w"] = _glorot(rng, (cout, cin, 3, 3), cin * 9, cout * 9)
            params[f"conv{i}.b"] = np.zeros(cout)
        head_in = channels[-1]
    params["head.w"] = _glorot(rng, (head_in, spec.num_classes), head_in, spec.num_classes)
    params["head.b"] = np.zeros(spec.num_classes)
    return params


def _leaves(params: Params, trainable: bool) -> dict[str, T.Tensor]:
    make = T.parameter if trainable else T.constant
    return {name: make(value, name=name) for name, value in params.items()}


def _dropout(node: T.Tensor, rate: float, rng: np.random.Generator) -> T.Tensor:
    # inverted dropout: entries are 0 or 1/(1-rate), expectation matches eval
    mask = (rng.random(node.shape) >= rate) / (1.0 - rate)
    return T.mul(node, T.constant(mask))


def forward(spec: ArchSpec, params: Params, x: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None, trainable: bool = True) -> ForwardOutput:
    """Run the network on a batch.

    ``mode="train"`` draws dropout masks from ``rng`` (none are drawn when
    the rate is 0, and eval mode never touches ``rng``); ``trainable``
    decides whether parameters enter the tape as leaves or constants.
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != spec.input_shape:
        raise DimensionError(
            f"input shape {x.shape[1:]} does not match architecture input {spec.input_shape}")
    use_dropout = mode == "train" and spec.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ContractError("train-mode forward with dropout needs an rng")

    leaf = _leaves(params, trainable)
    if spec.kind == "mlp":
        h = T.constant(x)
        for i in range(len(spec.hidden)):
            h = T.relu(T.add_rows(T.matmul(h, leaf[f"dense{i}.w"]), leaf[f"dense{i}.b"]))
        if use_dropout:
            h = _dropout(h, spec.dropout_rate, rng)
        post = h
        pre = None
    else:
        h = T.constant(x)
        for i in range(len(spec.conv_channels)):
            h = T.relu(T.add_channel_bias(T.conv2d(h, leaf[f"conv{i}.w"]), leaf[f"conv{i}.b"]))
        if use_dropout:
            h = _dropout(h, spec.dropout_rate, rng)
        pre = h
        post = T.global_avg_pool(h)
    logits = T.add_rows(T.matmul(post, leaf["head.w"]), leaf["head.b"])
    return ForwardOutput(logits=logits, features_post_pool=post, features_pre_pool=pre)


def tap_features(out: ForwardOutput, where: str = "post_pool") -> T.Tensor:
    """Feature matrix [B, D] for relation losses.

    ``post_pool`` is the pooled vector; ``pre_pool`` flattens the spatial
    activation map and exists only for conv outputs.
    """
    if where == "post_pool":
        return out.features_post_pool
    if where == "pre_pool":
        if out.features_pre_pool is None:
            raise UnsupportedTapError("pre_pool tap is only available on conv architectures")
        b = out.features_pre_pool.shape[0]
        return T.reshape(out.features_pre_pool, (b, out.features_pre_pool.data.size // b))
    raise ContractError(f"unknown tap {where!r}")


# ---------------------------------------------------------------------------
# flat binary parameter files


def save_params(params: Params, path) -> None:
    """Write parameters: magic, version u32, count u32, then per tensor
    (name length u16, name bytes, ndim u8, dims u32 each, f64 data LE)."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(params)))
        for name, value in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_params(path) -> Params:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {_MAGIC!r}", offset=0)
    if len(blob) < 12:
        raise FormatError("truncated header", offset=len(blob))
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    off = 12
    params: Params = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            if len(blob) < off + name_len:
                raise struct.error
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            n_bytes = 8 * int(np.prod(dims))
            if len(blob) < off + n_bytes:
                raise struct.error
            data = np.frombuffer(blob, dtype="<f8", count=int(np.prod(dims)), offset=off)
            off += n_bytes
        except struct.error:
            raise FormatError("truncated tensor record", offset=off) from None
        params[name] = np.ascontiguousarray(data.reshape(dims))
    return params
