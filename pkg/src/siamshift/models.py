"""The direct classifier and the tied-branch Siamese similarity network.

Both families share one encoder design: a small VGG-style stack of
``same``-padded 3x3 convolutions with optional 2x2 max pooling, flattened
and projected to an embedding. The direct classifier adds one
fully-connected unit; the Siamese network feeds the merged pair of
embeddings through a three-layer perceptron.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .backbone import ops
from .backbone.checkpoint import FORMAT_VERSION, load_parameters, save_parameters
from .backbone.tensor import DTYPE, Parameter, Tensor
from .errors import DimensionError, FormatError

CONCAT = "concat"
SUBTRACT = "subtract"
MERGES = (CONCAT, SUBTRACT)


@dataclass(frozen=True)
class EncoderConfig:
    """Convolution blocks are ``(out_channels, kernel_size, pool_after)``."""

    conv_blocks: tuple[tuple[int, int, bool], ...] = ((32, 3, True), (64, 3, True), (128, 3, True), (128, 3, True))
    embedding_dim: int = 256
    input_shape: tuple[int, int, int] = (1, 32, 32)

    def __post_init__(self):
        object.__setattr__(self, "conv_blocks", tuple(tuple(b) for b in self.conv_blocks))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        self.shape_chain()

    def shape_chain(self) -> list[tuple[int, int, int]]:
        """Feature-map shapes after each block; raises on an invalid chain."""
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise DimensionError(f"input_shape must be (D, H, W) with positive sizes, got {self.input_shape}")
        if self.embedding_dim < 1:
            raise DimensionError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        c, h, w = self.input_shape
        chain = []
        for i, (out_ch, k, pool) in enumerate(self.conv_blocks):
            if out_ch < 1 or k < 1:
                raise DimensionError(f"block {i}: channels and kernel size must be positive")
            pad = k // 2
            h = ops.conv_output_size(h, k, 1, pad)
            w = ops.conv_output_size(w, k, 1, pad)
            if h < 1 or w < 1:
                raise DimensionError(f"block {i}: kernel {k} larger than padded input")
            if pool:
                if h % 2:
                    raise DimensionError(f"block {i}: cannot pool odd height {h}")
                if w % 2:
                    raise DimensionError(f"block {i}: cannot pool odd width {w}")
                h, w = h // 2, w // 2
            c = out_ch
            chain.append((c, h, w))
        return chain

    def flat_dim(self) -> int:
        chain = self.shape_chain()
        return int(np.prod(chain[-1] if chain else self.input_shape))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EncoderConfig":
        return cls(
            conv_blocks=tuple(tuple(b) for b in d["conv_blocks"]),
            embedding_dim=int(d["embedding_dim"]),
            input_shape=tuple(d["input_shape"]),
        )


def _fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


class Dense:
    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        w = np.zeros((n_out, n_in), DTYPE) if zero else _fan_in_uniform(rng, (n_out, n_in), n_in)
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = Parameter(f"{name}.bias", np.zeros(n_out, DTYPE), role="bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.fully_connected(x, self.weight, self.bias)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class Encoder:
    """Conv blocks (relu, optional pool), flatten, then a relu projection."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, prefix: str = "encoder"):
        self.config = config
        self.convs: list[tuple[Parameter, Parameter, int, bool]] = []
        c_in = config.input_shape[0]
        for i, (c_out, k, pool) in enumerate(config.conv_blocks, start=1):
            kernel = Parameter(
                f"{prefix}.conv{i}.kernel", _fan_in_uniform(rng, (c_out, c_in, k, k), c_in * k * k)
            )
            bias = Parameter(f"{prefix}.conv{i}.bias", np.zeros(c_out, DTYPE), role="bias")
            self.convs.append((kernel, bias, k // 2, pool))
            c_in = c_out
        self.embed = Dense(f"{prefix}.embed", config.flat_dim(), config.embedding_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1:] != self.config.input_shape:
            raise DimensionError(f"encoder expects [N, {self.config.input_shape}] input, got {x.shape}")
        h = x
        for kernel, bias, pad, pool in self.convs:
            h = ops.relu(ops.conv2d(h, kernel, bias, stride=1, padding=pad))
            if pool:
                h = ops.maxpool2(h)
        return ops.relu(self.embed(ops.flatten(h)))

    def parameters(self) -> list[Parameter]:
        params = [p for kernel, bias, _, _ in self.convs for p in (kernel, bias)]
        return params + self.embed.parameters()


def build_encoder(config: EncoderConfig, seed: int = 0) -> Encoder:
    return Encoder(config, np.random.default_rng(seed))


def _as_batch(images, input_shape) -> Tensor:
    arr = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=DTYPE)
    if arr.shape == tuple(input_shape):
        arr = arr[None]
    if arr.shape[1:] != tuple(input_shape):
        raise DimensionError(f"expected images of shape {tuple(input_shape)}, got {arr.shape}")
    return Tensor(arr)


@dataclass
class _ModelBase:
    config: EncoderConfig
    seed: int = 0
    zero_head: bool = False
    provenance: dict[str, Any] = field(default_factory=dict)

    def parameters(self) -> list[Parameter]:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise FormatError(f"checkpoint does not match model: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise FormatError(f"{name}: checkpoint shape {arrays[name].shape}, model shape {p.shape}")
            p.data = np.array(arrays[name], dtype=DTYPE)


@dataclass
class DirectClassifier(_ModelBase):
    """Single-branch network scoring the probability of class 1."""

    family = "direct"

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        self.encoder = Encoder(self.config, rng)
        self.out = Dense("head.out", self.config.embedding_dim, 1, rng, zero=self.zero_head)

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.out.parameters()

    def forward(self, x: Tensor) -> Tensor:
        """``[N, D, H, W]`` images to ``[N]`` scores in (0, 1)."""
        logits = self.out(self.encoder(x))
        return ops.sigmoid(ops.reshape(logits, (x.shape[0],)))

    def predict_proba(self, images, batch_size: int = 256) -> np.ndarray:
        x = _as_batch(images, self.config.input_shape).data
        return np.concatenate(
            [self.forward(Tensor(x[i:i + batch_size])).data for i in range(0, len(x), batch_size)]
        ) if len(x) else np.zeros(0, DTYPE)


@dataclass
class SiameseSimilarity(_ModelBase):
    """Tied encoder applied to both inputs, merged, then a 3-layer MLP.

    There is exactly one encoder object, so both branches read and update
    the same parameter storage.
    """

    merge: str = CONCAT
    hidden: tuple[int, int] = (256, 128)

    family = "siamese"

    def __post_init__(self):
        if self.merge not in MERGES:
            raise ValueError(f"merge must be one of {MERGES}, got {self.merge!r}")
        self.hidden = tuple(self.hidden)
        rng = np.random.default_rng(self.seed)
        self.encoder = Encoder(self.config, rng)
        d = self.config.embedding_dim * (2 if self.merge == CONCAT else 1)
        h1, h2 = self.hidden
        self.fc1 = Dense("head.fc1", d, h1, rng)
        self.fc2 = Dense("head.fc2", h1, h2, rng)
        self.fc3 = Dense("head.fc3", h2, 1, rng, zero=self.zero_head)

    def head_parameters(self) -> list[Parameter]:
        return self.fc1.parameters() + self.fc2.parameters() + self.fc3.parameters()

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.head_parameters()

    def merge_embeddings(self, ea: Tensor, eb: Tensor) -> Tensor:
        return ops.concat(ea, eb) if self.merge == CONCAT else ops.subtract(ea, eb)

    def head(self, merged: Tensor) -> Tensor:
        h = ops.relu(self.fc1(merged))
        h = ops.relu(self.fc2(h))
        logits = self.fc3(h)
        return ops.sigmoid(ops.reshape(logits, (merged.shape[0],)))

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        """Two ``[N, D, H, W]`` batches to ``[N]`` same-class probabilities."""
        if a.shape != b.shape:
            raise DimensionError(f"pair inputs differ in shape: {a.shape} vs {b.shape}")
        return self.head(self.merge_embeddings(self.encoder(a), self.encoder(b)))

    def embed(self, images, batch_size: int = 256) -> np.ndarray:
        x = _as_batch(images, self.config.input_shape).data
        if not len(x):
            return np.zeros((0, self.config.embedding_dim), DTYPE)
        return np.concatenate([self.encoder(Tensor(x[i:i + batch_size])).data for i in range(0, len(x), batch_size)])

    def head_scores(self, ea: np.ndarray, eb: np.ndarray, batch_size: int = 4096) -> np.ndarray:
        """Similarities from precomputed embeddings."""
        ea, eb = np.asarray(ea, DTYPE), np.asarray(eb, DTYPE)
        if ea.shape != eb.shape:
            raise DimensionError(f"embedding batches differ in shape: {ea.shape} vs {eb.shape}")
        out = [
            self.head(self.merge_embeddings(Tensor(ea[i:i + batch_size]), Tensor(eb[i:i + batch_size]))).data
            for i in range(0, len(ea), batch_size)
        ]
        return np.concatenate(out) if out else np.zeros(0, DTYPE)

    def pair_scores(self, a, b, batch_size: int = 256) -> np.ndarray:
        a = _as_batch(a, self.config.input_shape).data
        b = _as_batch(b, self.config.input_shape).data
        if a.shape != b.shape:
            raise DimensionError(f"pair inputs differ in shape: {a.shape} vs {b.shape}")
        return self.head_scores(self.embed(a, batch_size), self.embed(b, batch_size))


def predict_class(model: DirectClassifier, image) -> float:
    """Score for one ``[D, H, W]`` image; threshold at 0.5 for a decision."""
    return float(model.predict_proba(_as_batch(image, model.config.input_shape).data[:1])[0])


def similarity(model: SiameseSimilarity, a, b) -> float:
    """Probability that two single images belong to the same class."""
    return float(model.pair_scores(a, b)[0])


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def save_model(model: DirectClassifier | SiameseSimilarity, path: str | os.PathLike) -> None:
    """Write parameters to ``path`` and architecture metadata to ``path.json``."""
    path = Path(path)
    save_parameters(path, model.state_dict())
    meta = {
        "format_version": FORMAT_VERSION,
        "family": model.family,
        "encoder": model.config.to_dict(),
        "seed": model.seed,
        "provenance": model.provenance,
    }
    if isinstance(model, SiameseSimilarity):
        meta["merge"] = model.merge
        meta["hidden"] = list(model.hidden)
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_model(path: str | os.PathLike) -> DirectClassifier | SiameseSimilarity:
    path = Path(path)
    side = _sidecar(path)
    if not side.exists():
        raise FormatError(f"{path}: missing metadata sidecar {side.name}")
    meta = json.loads(side.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{side}: format version {meta.get('format_version')}, expected {FORMAT_VERSION}")
    config = EncoderConfig.from_dict(meta["encoder"])
    kwargs = dict(config=config, seed=meta.get("seed", 0), provenance=meta.get("provenance", {}))
    if meta["family"] == "siamese":
        model = SiameseSimilarity(merge=meta["merge"], hidden=tuple(meta["hidden"]), **kwargs)
    elif meta["family"] == "direct":
        model = DirectClassifier(**kwargs)
    else:
        raise FormatError(f"{side}: unknown model family {meta['family']!r}")
    model.load_state_dict(load_parameters(path))
    return model
