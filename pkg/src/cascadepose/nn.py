"""Transformer building blocks, positional encodings, heads, and the small
multi-scale CNN backbone used at desk scale.

All layers are plain classes over the autodiff tensors; parameters live in a
``_params`` dict per layer and are collected recursively with stable dotted
names, which doubles as the checkpoint catalog.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


@dataclass
class ModelConfig:
    d_model: int = 32
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    ffn_dim: int = 64
    n_person_queries: int = 8
    n_keypoint_queries: int = 12
    n_joints: int = 5
    backbone_channels: tuple = (16, 24, 32, 48)
    crop_w: int = 8
    crop_h: int = 8
    image_size: int = 64
    enlarge_factor: float = 0.25
    exclude_background_at_readout: bool = True
    variant: str = "end_to_end"  # "two_stage" | "end_to_end"
    align_corners: bool = False
    class_specific_queries: bool = False  # fixed joint-to-query assignment ablation
    person_threshold: float = 0.5
    # two-stage crop: patch size fed to the keypoint backbone, H:W aspect
    patch_h: int = 64
    patch_w: int = 48
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % 4:
            raise ConfigError(f"d_model {self.d_model} must be divisible by 4 for 2-D encoding")
        if self.class_specific_queries:
            self.n_keypoint_queries = self.n_joints
        if self.n_keypoint_queries < self.n_joints:
            raise ConfigError("need at least as many keypoint queries as joints")
        if self.enlarge_factor < 0:
            raise ConfigError("enlarge_factor must be >= 0")
        if self.variant not in ("two_stage", "end_to_end"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        for name in ("d_model", "n_heads", "ffn_dim", "n_person_queries",
                     "n_keypoint_queries", "n_joints", "crop_w", "crop_h",
                     "image_size", "patch_h", "patch_w"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.image_size % 16 or self.patch_h % 16 or self.patch_w % 16:
            raise ConfigError("image and patch sizes must be divisible by 16")

    @classmethod
    def full_scale(cls, **overrides):
        """Full-scale profile: 6 encoder / 6 decoder layers, 100 queries."""
        base = dict(d_model=256, n_heads=8, n_encoder_layers=6, n_decoder_layers=6,
                    ffn_dim=2048, n_person_queries=100, n_keypoint_queries=100,
                    n_joints=17, backbone_channels=(64, 128, 256, 512),
                    crop_w=16, crop_h=16, image_size=256)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["backbone_channels"] = tuple(d["backbone_channels"])
        return cls(**d)

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


class Module:
    """Minimal parameter container with recursive dotted-name collection."""

    def __init__(self):
        self._params = {}

    def named_parameters(self, prefix=""):
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for attr, value in vars(self).items():
            if attr == "_params":
                continue
            if isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{attr}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{attr}.{i}."))
        return out


class Linear(Module):
    def __init__(self, n_in, n_out, rng, dtype=np.float32):
        super().__init__()
        scale = 1.0 / np.sqrt(n_in)
        self._params["weight"] = Tensor(
            rng.normal(0.0, scale, size=(n_in, n_out)).astype(dtype), requires_grad=True)
        self._params["bias"] = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.matmul(x, self._params["weight"]) + self._params["bias"]


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32):
        super().__init__()
        self._params["gamma"] = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self._params["beta"] = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.layer_norm(x) * self._params["gamma"] + self._params["beta"]


class FeedForward(Module):
    def __init__(self, d_model, ffn_dim, rng, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(d_model, ffn_dim, rng, dtype)
        self.fc2 = Linear(ffn_dim, d_model, rng, dtype)

    def __call__(self, x):
        return self.fc2(T.relu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention, n_heads heads, output projection."""

    def __init__(self, d_model, n_heads, rng, dtype=np.float32):
        super().__init__()
        if d_model % n_heads:
            raise ConfigError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng, dtype)
        self.wk = Linear(d_model, d_model, rng, dtype)
        self.wv = Linear(d_model, d_model, rng, dtype)
        self.wo = Linear(d_model, d_model, rng, dtype)

    def __call__(self, queries, keys, values):
        if keys.shape[0] != values.shape[0]:
            raise ConfigError("key and value counts must match")
        q = self.wq(queries)
        k = self.wk(keys)
        v = self.wv(values)
        scale = 1.0 / np.sqrt(self.d_head)
        heads = []
        for h in range(self.n_heads):
            sl = slice(h * self.d_head, (h + 1) * self.d_head)
            qh = q[:, sl]
            kh = k[:, sl]
            vh = v[:, sl]
            attn = T.softmax(T.matmul(qh, kh.T) * scale, axis=-1)
            heads.append(T.matmul(attn, vh))
        return self.wo(T.concat(heads, axis=1))


class EncoderLayer(Module):
    def __init__(self, cfg, rng, dtype):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.norm1 = LayerNorm(cfg.d_model, dtype)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim, rng, dtype)
        self.norm2 = LayerNorm(cfg.d_model, dtype)

    def __call__(self, x):
        x = self.norm1(x + self.attn(x, x, x))
        return self.norm2(x + self.ffn(x))


class Encoder(Module):
    def __init__(self, cfg, rng, dtype, n_layers=None):
        super().__init__()
        n = cfg.n_encoder_layers if n_layers is None else n_layers
        self.layers = [EncoderLayer(cfg, rng, dtype) for _ in range(n)]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class DecoderLayer(Module):
    def __init__(self, cfg, rng, dtype):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.norm1 = LayerNorm(cfg.d_model, dtype)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.norm2 = LayerNorm(cfg.d_model, dtype)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim, rng, dtype)
        self.norm3 = LayerNorm(cfg.d_model, dtype)

    def __call__(self, x, memory):
        x = self.norm1(x + self.self_attn(x, x, x))
        x = self.norm2(x + self.cross_attn(x, memory, memory))
        return self.norm3(x + self.ffn(x))


class Decoder(Module):
    """Parallel (non-autoregressive) decoder returning every layer's state."""

    def __init__(self, cfg, rng, dtype, n_layers=None):
        super().__init__()
        n = cfg.n_decoder_layers if n_layers is None else n_layers
        self.layers = [DecoderLayer(cfg, rng, dtype) for _ in range(n)]

    def __call__(self, queries, memory):
        states = []
        x = queries
        for layer in self.layers:
            x = layer(x, memory)
            states.append(x)
        return states


class PredictionHead(Module):
    """Per-query class logits plus squashed coordinates.

    kind "person": 2 classes (person, background) and 4 box coordinates
    (cx, cy, w, h). kind "keypoint": J+1 classes and 2 coordinates, all in
    (0, 1) via the logistic map.
    """

    def __init__(self, cfg, kind, rng, dtype):
        super().__init__()
        if kind == "person":
            n_classes, n_coords = 2, 4
        elif kind == "keypoint":
            n_classes, n_coords = cfg.n_joints + 1, 2
        else:
            raise ConfigError(f"unknown head kind {kind!r}")
        self.kind = kind
        self.classifier = Linear(cfg.d_model, n_classes, rng, dtype)
        self.coord1 = Linear(cfg.d_model, cfg.d_model, rng, dtype)
        self.coord2 = Linear(cfg.d_model, n_coords, rng, dtype)

    def __call__(self, state):
        logits = self.classifier(state)
        coords = T.sigmoid(self.coord2(T.relu(self.coord1(state))))
        return logits, coords


class Backbone(Module):
    """Four strided conv stages; returns maps at strides 4, 8 and 16."""

    def __init__(self, cfg, rng, dtype, in_channels=3):
        super().__init__()
        c0, c1, c2, c3 = cfg.backbone_channels
        self.convs = []
        chans = [in_channels, c0, c1, c2, c3]
        for cin, cout in zip(chans[:-1], chans[1:]):
            scale = 1.0 / np.sqrt(cin * 9)
            w = Tensor(rng.normal(0.0, scale, size=(cout, cin, 3, 3)).astype(dtype),
                       requires_grad=True)
            b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
            self.convs.append((w, b))
        for i, (w, b) in enumerate(self.convs):
            self._params[f"conv{i}.weight"] = w
            self._params[f"conv{i}.bias"] = b

    def __call__(self, image):
        _, h, w = image.shape
        if h % 16 or w % 16:
            raise ConfigError(f"backbone input size {h}x{w} not divisible by 16")
        x = image
        maps = []
        for cw, cb in self.convs:
            x = T.relu(T.conv2d(x, cw, cb, stride=2, padding=1))
            maps.append(x)
        return maps[1:]  # strides 4, 8, 16


def _sinusoid(coords, d_half):
    """Interleaved sin/cos encoding of normalized coordinates."""
    n_freq = d_half // 2
    k = np.arange(n_freq)
    freqs = 1.0 / (10000.0 ** (k / n_freq))
    angles = 2.0 * np.pi * coords[..., None] * freqs
    out = np.empty(coords.shape + (d_half,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def positional_encoding_2d(height, width, d_model, frame="absolute", box=None):
    """Sinusoidal 2-D encoding, [height x width x d_model].

    Grid coordinates are x_i = i/width, y_j = j/height. In ``box_relative``
    mode the grid is first placed inside the box in image coordinates and
    then re-normalized to [0, 1] within the box, so the unit box coincides
    with the absolute frame.
    """
    if d_model % 4:
        raise ConfigError(f"d_model {d_model} must be divisible by 4")
    xs = np.arange(width) / width
    ys = np.arange(height) / height
    if frame == "box_relative":
        x_left, x_right, y_top, y_down = box
        img_x = (1.0 - xs) * x_left + xs * x_right
        img_y = (1.0 - ys) * y_top + ys * y_down
        xs = (img_x - x_left) / (x_right - x_left)
        ys = (img_y - y_top) / (y_down - y_top)
    elif frame != "absolute":
        raise ConfigError(f"unknown frame {frame!r}")
    half = d_model // 2
    ex = _sinusoid(xs, half)  # [W, half]
    ey = _sinusoid(ys, half)  # [H, half]
    out = np.empty((height, width, d_model))
    out[..., :half] = ex[None, :, :]
    out[..., half:] = ey[:, None, :]
    return out


class QueryEmbedding(Module):
    def __init__(self, n_queries, d_model, rng, dtype=np.float32):
        super().__init__()
        self._params["weight"] = Tensor(
            rng.normal(0.0, 1.0, size=(n_queries, d_model)).astype(dtype), requires_grad=True)

    def __call__(self):
        return self._params["weight"]
