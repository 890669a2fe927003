"""Feature generator: two CNN blocks followed by a patch-embedded transformer encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import (
    RunningStats,
    Tensor,
    batchnorm2d,
    conv2d,
    dropout,
    layer_norm,
    linear,
    maxpool2d,
    pad,
    softmax,
)


@dataclass
class GeneratorConfig:
    patch: int = 3
    embed_dim: int = 64
    depth: int = 8
    heads: int = 8
    mlp_units: tuple = (2048, 1024)
    c1_filters: tuple = (64, 64, 128)
    c2_filters: tuple = (128, 256, 512)
    kernel: int = 3
    dropout: tuple = (0.30, 0.20)
    input_shape: tuple = (5, 62, 9)
    pos_embed: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mlp_units", "c1_filters", "c2_filters", "dropout", "input_shape"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.patch < 1 or self.depth < 0:
            raise ConfigError("patch must be >= 1 and depth >= 0")
        if len(self.c1_filters) != 3 or len(self.c2_filters) != 3 or len(self.dropout) != 2:
            raise ConfigError("each CNN block has three convolutions and one dropout rate")

    @property
    def head_dim(self):
        return self.embed_dim // self.heads

    @property
    def feature_map_shape(self):
        """(C, H, W) after both CNN blocks."""
        _, h, w = self.input_shape
        return self.c2_filters[-1], h // 2 // 2, w // 2 // 2

    @property
    def n_tokens(self):
        _, h, w = self.feature_map_shape
        return math.ceil(h / self.patch) * math.ceil(w / self.patch)

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "extra"}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _he_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape):
    return Tensor(np.ones(shape), requires_grad=True)


def init_params(config: GeneratorConfig, rng):
    """Fresh parameters in a fixed name order."""
    p = {}
    k = config.kernel
    cin = config.input_shape[0]
    for i, cout in enumerate(config.c1_filters + config.c2_filters, start=1):
        p[f"cnn.conv{i}.weight"] = _he_uniform(rng, (cout, cin, k, k), cin * k * k)
        p[f"cnn.conv{i}.bias"] = _zeros((cout,))
        p[f"cnn.bn{i}.gamma"] = _ones((cout,))
        p[f"cnn.bn{i}.beta"] = _zeros((cout,))
        cin = cout
    D = config.embed_dim
    patch_len = config.patch * config.patch * cin
    p["patch.weight"] = _he_uniform(rng, (patch_len, D), patch_len)
    p["patch.bias"] = _zeros((D,))
    if config.pos_embed:
        p["pos_embed"] = Tensor(0.02 * rng.standard_normal((config.n_tokens, D)), requires_grad=True)
    for b in range(config.depth):
        pre = f"enc.{b}."
        p[pre + "ln1.gamma"] = _ones((D,))
        p[pre + "ln1.beta"] = _zeros((D,))
        for proj in ("q", "k", "v", "o"):
            p[pre + f"attn.{proj}.weight"] = _he_uniform(rng, (D, D), D)
            p[pre + f"attn.{proj}.bias"] = _zeros((D,))
        p[pre + "ln2.gamma"] = _ones((D,))
        p[pre + "ln2.beta"] = _zeros((D,))
        widths = (D,) + config.mlp_units + (D,)
        for j in range(len(widths) - 1):
            p[pre + f"ff.{j}.weight"] = _he_uniform(rng, (widths[j], widths[j + 1]), widths[j])
            p[pre + f"ff.{j}.bias"] = _zeros((widths[j + 1],))
    p["norm.gamma"] = _ones((D,))
    p["norm.beta"] = _zeros((D,))
    return p


# ----------------------------------------------------------------- forward ops


def cnn_forward(x, params, stats, config, train=False, rng=None, update_stats=True, bn_train=None):
    """C1 and C2 blocks: 3x(conv 3x3 pad 1 -> BN -> ReLU), maxpool(2, 2), dropout.

    ``bn_train`` overrides ``train`` for batch norm only, so dropout can stay
    active while normalizing with running statistics.
    """
    bn_train = train if bn_train is None else bn_train
    x = x if isinstance(x, Tensor) else Tensor(x)
    if tuple(x.shape[1:]) != tuple(config.input_shape):
        raise DimensionError(f"expected input (N, {config.input_shape}), got {x.shape}")
    layer = 1
    for block, filters in enumerate((config.c1_filters, config.c2_filters)):
        for _ in filters:
            x = conv2d(x, params[f"cnn.conv{layer}.weight"], params[f"cnn.conv{layer}.bias"],
                       padding=config.kernel // 2)
            x = batchnorm2d(x, params[f"cnn.bn{layer}.gamma"], params[f"cnn.bn{layer}.beta"],
                            bn_train, stats[f"cnn.bn{layer}"], eps=config.bn_eps,
                            update_stats=update_stats)
            x = x.relu()
            layer += 1
        if x.shape[2] < 2 or x.shape[3] < 2:
            raise DimensionError(f"feature map {x.shape[2]}x{x.shape[3]} too small to pool")
        x = maxpool2d(x, 2, 2)
        x = dropout(x, config.dropout[block], train, rng)
    return x


def patchify(fm, p):
    """(N, C, H, W) -> (N, n, p*p*C) after zero-padding H and W up to multiples of p.

    Patches are taken row-major over the patch grid; inside a patch the
    layout is (row, col, channel).
    """
    fm = fm if isinstance(fm, Tensor) else Tensor(fm)
    n, c, h, w = fm.shape
    ph, pw = -h % p, -w % p
    if ph or pw:
        fm = pad(fm, ((0, 0), (0, 0), (0, ph), (0, pw)))
    gh, gw = (h + ph) // p, (w + pw) // p
    x = fm.reshape(n, c, gh, p, gw, p).transpose(0, 2, 4, 3, 5, 1)
    return x.reshape(n, gh * gw, p * p * c)


def embed(patches, params):
    """Linear patch projection plus learned positional embedding."""
    tokens = linear(patches, params["patch.weight"], params["patch.bias"])
    pos = params.get("pos_embed")
    if pos is not None:
        n = tokens.shape[-2]
        if n > pos.shape[0]:
            raise DimensionError(f"{n} tokens exceed positional table of {pos.shape[0]}")
        tokens = tokens + (pos if n == pos.shape[0] else pos[:n])
    return tokens


def attention(q, k, v):
    """Scaled dot-product attention over the last two axes."""
    d = q.shape[-1]
    scores = (q @ k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / math.sqrt(d))
    return softmax(scores, axis=-1) @ v


def mha(tokens, params, prefix, heads):
    """Multi-head self-attention on (N, n, D) tokens."""
    N, n, D = tokens.shape
    if D % heads:
        raise ConfigError(f"embed dim {D} not divisible by {heads} heads")
    d = D // heads

    def split(name):
        t = linear(tokens, params[f"{prefix}{name}.weight"], params[f"{prefix}{name}.bias"])
        return t.reshape(N, n, heads, d).transpose(0, 2, 1, 3)

    out = attention(split("q"), split("k"), split("v"))          # N,h,n,d
    out = out.transpose(0, 2, 1, 3).reshape(N, n, heads * d)
    return linear(out, params[f"{prefix}o.weight"], params[f"{prefix}o.bias"])


def encoder_forward(tokens, params, config):
    """Pre-norm transformer blocks, then a final layer norm."""
    x = tokens
    n_ff = len(config.mlp_units) + 1
    for b in range(config.depth):
        pre = f"enc.{b}."
        h = layer_norm(x, params[pre + "ln1.gamma"], params[pre + "ln1.beta"])
        x = x + mha(h, params, pre + "attn.", config.heads)
        h = layer_norm(x, params[pre + "ln2.gamma"], params[pre + "ln2.beta"])
        for j in range(n_ff):
            h = linear(h, params[pre + f"ff.{j}.weight"], params[pre + f"ff.{j}.bias"])
            if j < n_ff - 1:
                h = h.relu()
        x = x + h
    if config.depth == 0:
        return x
    return layer_norm(x, params["norm.gamma"], params["norm.beta"])


class Generator:
    """Parameters, batch-norm state and forward pass of the feature generator."""

    def __init__(self, config: GeneratorConfig | None = None, seed=0):
        self.config = config or GeneratorConfig()
        rng = np.random.default_rng(seed)
        self.params = init_params(self.config, rng)
        n_conv = len(self.config.c1_filters) + len(self.config.c2_filters)
        filters = self.config.c1_filters + self.config.c2_filters
        self.stats = {f"cnn.bn{i + 1}": RunningStats(filters[i], self.config.bn_momentum)
                      for i in range(n_conv)}

    def feature_map(self, x, train=False, rng=None, update_stats=True, bn_train=None):
        return cnn_forward(x, self.params, self.stats, self.config, train, rng, update_stats, bn_train)

    def tokens(self, x, train=False, rng=None, update_stats=True, bn_train=None):
        fm = self.feature_map(x, train, rng, update_stats, bn_train)
        return embed(patchify(fm, self.config.patch), self.params)

    def __call__(self, x, train=False, rng=None, update_stats=True, bn_train=None):
        """(N, 5, 62, W) -> (N, D) mean-pooled encoder output."""
        tokens = self.tokens(x, train, rng, update_stats, bn_train)
        return encoder_forward(tokens, self.params, self.config).mean(axis=1)

    generate = __call__

    def buffers(self):
        """Running statistics as named arrays (for checkpoints)."""
        out = {}
        for name, st in self.stats.items():
            out[f"{name}.running_mean"] = st.mean
            out[f"{name}.running_var"] = st.var
            out[f"{name}.tracked"] = np.array([1.0 if st.initialized else 0.0])
        return out

    def load_buffers(self, bufs):
        for name, st in self.stats.items():
            st.mean = np.array(bufs[f"{name}.running_mean"], dtype=np.float64)
            st.var = np.array(bufs[f"{name}.running_var"], dtype=np.float64)
            st.initialized = bool(bufs[f"{name}.tracked"][0])
