"""Small CNN feature streams with bilinear classifier and embedding heads.

The network has two convolutional streams (aliased when ``shared_streams``),
a bilinear head feeding a softmax classifier, and an embedding head
(global average pool -> dense -> L2 normalise) producing unit-norm vectors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .bilinear import bilinear_pool, normalize_pooled
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class ConvBlock:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    pool: int = 2  # max-pool window after the ReLU; 1 disables pooling


@dataclass(frozen=True)
class BackboneConfig:
    input_size: tuple[int, int, int] = (3, 32, 32)
    conv_blocks: tuple[ConvBlock, ...] = (ConvBlock(8), ConvBlock(16))
    embedding_dim: int = 128
    num_classes: int = 8
    dropout_rate: float = 0.25
    shared_streams: bool = True
    pooling: str = "sum"

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "conv_blocks", tuple(
            b if isinstance(b, ConvBlock) else ConvBlock(*b) for b in self.conv_blocks))
        self.validate()

    def validate(self):
        if len(self.input_size) != 3 or min(self.input_size) < 1:
            raise ValueError(f"input_size must be (channels, height, width), got {self.input_size}")
        if not self.conv_blocks:
            raise ValueError("at least one conv block is required")
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not 0.25 <= self.dropout_rate <= 0.5:
            raise ValueError(f"dropout_rate must be in [0.25, 0.5], got {self.dropout_rate}")
        if self.pooling not in ("sum", "avg"):
            raise ValueError(f"pooling must be 'sum' or 'avg', got {self.pooling!r}")
        for b in self.conv_blocks:
            if b.out_channels < 1 or b.kernel < 1 or b.stride < 1 or b.pool < 1:
                raise ValueError(f"invalid conv block {b}")
        h, w = self.feature_grid()
        if h < 1 or w < 1:
            raise ValueError(f"conv blocks shrink a {self.input_size} input to an empty map")

    def feature_grid(self) -> tuple[int, int]:
        _, h, w = self.input_size
        for b in self.conv_blocks:
            pad = b.kernel // 2
            h = (h + 2 * pad - b.kernel) // b.stride + 1
            w = (w + 2 * pad - b.kernel) // b.stride + 1
            h, w = h // b.pool, w // b.pool
        return h, w

    @property
    def feature_channels(self) -> int:
        return self.conv_blocks[-1].out_channels

    @property
    def bilinear_dim(self) -> int:
        return self.feature_channels ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_blocks"] = [list(asdict(b).values()) for b in self.conv_blocks]
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        d["conv_blocks"] = tuple(ConvBlock(*b) for b in d["conv_blocks"])
        return cls(**d)


class Outputs(NamedTuple):
    logits: Tensor
    probs: Tensor
    embeddings: Tensor
    bilinear: Tensor
    pooled: Tensor


@dataclass
class Network:
    config: BackboneConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    @property
    def stream_names(self) -> tuple[str, str]:
        return ("stream_a", "stream_a") if self.config.shared_streams else ("stream_a", "stream_b")

    def classifier_branch(self) -> list[str]:
        """Parameters of the streams and the bilinear classifier."""
        return [n for n in self.params if not n.startswith("embedding.")]

    def embedding_branch(self) -> list[str]:
        return [n for n in self.params if n.startswith("embedding.")]

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=T.DTYPE)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.config.input_size:
            raise ShapeError(f"image shape {x.shape[1:]} does not match input_size {self.config.input_size}")
        return x

    def _stream(self, x: Tensor, prefix: str) -> Tensor:
        for i, b in enumerate(self.config.conv_blocks):
            x = T.conv2d(x, self.params[f"{prefix}.conv{i}.weight"], b.stride, b.kernel // 2,
                         self.params[f"{prefix}.conv{i}.bias"])
            x = T.relu(x)
            if b.pool > 1:
                x = T.max_pool2d(x, b.pool)
        return x

    def _as_locations(self, fmap: Tensor) -> Tensor:
        """[B, C, H, W] -> [B, Y, C]."""
        b, c, h, w = fmap.shape
        return T.transpose(T.reshape(fmap, (b, c, h * w)), (0, 2, 1))

    def stream_maps(self, images) -> tuple[Tensor, Tensor]:
        x = Tensor(self._check_input(images))
        name_a, name_b = self.stream_names
        fa = self._stream(x, name_a)
        fb = fa if name_b == name_a else self._stream(x, name_b)
        return fa, fb

    def forward(self, images, training: bool = False, rng: np.random.Generator | None = None) -> Outputs:
        fa, fb = self.stream_maps(images)
        pooled = bilinear_pool(self._as_locations(fa), self._as_locations(fb), self.config.pooling)
        feat = normalize_pooled(pooled)
        h = T.dropout(feat, self.config.dropout_rate, rng, training)
        logits = T.add_bias(T.matmul(h, self.params["classifier.weight"]), self.params["classifier.bias"])
        probs = T.softmax(logits, axis=-1)
        g = T.global_avg_pool(fa)
        emb = T.add_bias(T.matmul(g, self.params["embedding.weight"]), self.params["embedding.bias"])
        emb = T.l2_normalize(emb, axis=-1)
        return Outputs(logits, probs, emb, feat, pooled)

    def predict(self, images, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """Inference-mode (probabilities, embeddings) as arrays."""
        images = np.asarray(images)
        probs, embs = [], []
        for s in range(0, len(images), batch_size):
            out = self.forward(images[s:s + batch_size])
            probs.append(out.probs.data)
            embs.append(out.embeddings.data)
        return np.concatenate(probs), np.concatenate(embs)


def forward_features(net: Network, image) -> tuple[Tensor, Tensor]:
    """Per-location feature maps ([Y, N], [Y, M]) of a single image."""
    x = np.asarray(image.data if isinstance(image, Tensor) else image)
    if x.ndim != 3:
        raise ShapeError(f"forward_features takes one [C, H, W] image, got {x.shape}")
    fa, fb = net.stream_maps(x)
    maps = []
    for f in (fa, fb):
        _, c, h, w = f.shape
        maps.append(T.reshape(net._as_locations(f), (h * w, c)))
    return maps[0], maps[1]


def forward_embedding(net: Network, image) -> Tensor:
    """Unit-norm embedding [d] of a single image (inference mode)."""
    x = np.asarray(image.data if isinstance(image, Tensor) else image)
    if x.ndim != 3:
        raise ShapeError(f"forward_embedding takes one [C, H, W] image, got {x.shape}")
    emb = net.forward(x).embeddings
    return T.reshape(emb, (emb.shape[1],))


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_parameters(config: BackboneConfig, seed: int) -> Network:
    """Fan-in scaled uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    streams = ("stream_a",) if config.shared_streams else ("stream_a", "stream_b")
    for s in streams:
        c_in = config.input_size[0]
        for i, b in enumerate(config.conv_blocks):
            fan_in = c_in * b.kernel * b.kernel
            params[f"{s}.conv{i}.weight"] = Tensor(
                _uniform(rng, (b.out_channels, c_in, b.kernel, b.kernel), fan_in), name=f"{s}.conv{i}.weight")
            params[f"{s}.conv{i}.bias"] = Tensor(np.zeros(b.out_channels), name=f"{s}.conv{i}.bias")
            c_in = b.out_channels
    nm = config.bilinear_dim
    params["classifier.weight"] = Tensor(_uniform(rng, (nm, config.num_classes), nm), name="classifier.weight")
    params["classifier.bias"] = Tensor(np.zeros(config.num_classes), name="classifier.bias")
    c = config.feature_channels
    params["embedding.weight"] = Tensor(_uniform(rng, (c, config.embedding_dim), c), name="embedding.weight")
    params["embedding.bias"] = Tensor(np.zeros(config.embedding_dim), name="embedding.bias")
    return Network(config, params)
