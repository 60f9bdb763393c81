"""Network building blocks: parameter store, layers, Adam, checkpoints.

Everything the three learned models (sequence denoiser, latent encoder,
travel-time classifier) are assembled from. Layers are thin objects holding
named parameters inside a ParamStore; calling a layer builds the autodiff
graph via the ops in autodiff.py.
"""

from __future__ import annotations

import json
import numpy as np

from .autodiff import (
    Tensor,
    add,
    as_tensor,
    concat,
    conv1d,
    matmul,
    mul,
    pow_const,
    silu,
    time_resample,
    tmean,
)


class ParamStore:
    """Named float64 parameter tensors with matching gradient slots."""

    def __init__(self, seed: int | np.random.Generator = 0):
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

    def new(self, name: str, shape: tuple, fan_in: int | None = None, zero: bool = False) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        if zero:
            data = np.zeros(shape)
        else:
            scale = 1.0 / np.sqrt(fan_in) if fan_in else 1.0
            data = self.rng.normal(0.0, scale, size=shape)
        t = Tensor(data, requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def n_params(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, p in self._params.items():
            src = arrays[name]
            if src.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {p.data.shape}")
            p.data = src.astype(np.float64)


class Adam:
    """Adam with bias correction; step() consumes and zeroes gradients."""

    def __init__(self, store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(store[n].data) for n in store.names()}
        self.v = {n: np.zeros_like(store[n].data) for n in store.names()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name in self.store.names():
            p = self.store[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = np.zeros_like(p.data)


def adam_step(store: ParamStore, opt: Adam):
    """Functional alias: apply one optimizer step to `store` via `opt`."""
    assert opt.store is store
    opt.step()


# -- layers -------------------------------------------------------------


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, zero_init=False):
        self.w = store.new(f"{name}.w", (d_in, d_out), fan_in=d_in, zero=zero_init)
        self.b = store.new(f"{name}.b", (d_out,), zero=True)

    def __call__(self, x) -> Tensor:
        return add(matmul(x, self.w), self.b)


class Conv1d:
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, kernel=3, zero_init=False):
        self.kernel = kernel
        self.w = store.new(f"{name}.w", (kernel * c_in, c_out), fan_in=kernel * c_in, zero=zero_init)
        self.b = store.new(f"{name}.b", (c_out,), zero=True)

    def __call__(self, x) -> Tensor:
        return conv1d(x, self.w, self.b, kernel=self.kernel)


class GroupNorm:
    """Normalize (B, M, C) over (time, channels-per-group) for each group."""

    def __init__(self, store: ParamStore, name: str, channels: int, groups=8, eps=1e-5):
        if channels % groups:
            raise ValueError("channels must divide into groups")
        self.channels, self.groups, self.eps = channels, groups, eps
        self.gamma = store.new(f"{name}.gamma", (channels,))
        self.gamma.data = np.ones(channels)
        self.beta = store.new(f"{name}.beta", (channels,), zero=True)

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        bsz, m, c = x.data.shape
        g = self.groups
        xg = x.reshape((bsz, m, g, c // g))
        mu = tmean(xg, axis=(1, 3), keepdims=True)
        cent = add(xg, mul(mu, -1.0))
        var = tmean(mul(cent, cent), axis=(1, 3), keepdims=True)
        inv = pow_const(add(var, self.eps), -0.5)
        y = mul(cent, inv).reshape((bsz, m, c))
        return add(mul(y, self.gamma), self.beta)


class Film:
    """Feature-wise affine modulation of (B, M, C) from a context vector.

    Two separate projections for scale and shift avoid tensor slicing.
    """

    def __init__(self, store: ParamStore, name: str, ctx_dim: int, channels: int):
        self.channels = channels
        self.scale = Linear(store, f"{name}.scale", ctx_dim, channels)
        self.shift = Linear(store, f"{name}.shift", ctx_dim, channels)

    def __call__(self, x, ctx) -> Tensor:
        bsz = ctx.data.shape[0] if isinstance(ctx, Tensor) else np.asarray(ctx).shape[0]
        s = self.scale(ctx).reshape((bsz, 1, self.channels))
        t = self.shift(ctx).reshape((bsz, 1, self.channels))
        return add(mul(x, add(s, 1.0)), t)


class MLP:
    """Stack of Linear layers with the smooth gate between them."""

    def __init__(self, store: ParamStore, name: str, dims: list[int], final_zero=False):
        self.layers = []
        for i in range(len(dims) - 1):
            zero = final_zero and i == len(dims) - 2
            self.layers.append(Linear(store, f"{name}.l{i}", dims[i], dims[i + 1], zero_init=zero))

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = silu(h)
        return h


class ResBlock1d:
    """Residual temporal-conv block with context modulation.

    conv3 -> groupnorm -> gate -> film(ctx) -> conv3 -> groupnorm -> gate,
    plus a 1x1-projected skip when channel widths differ.
    """

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, ctx_dim: int, groups=8):
        self.conv1 = Conv1d(store, f"{name}.conv1", c_in, c_out)
        self.norm1 = GroupNorm(store, f"{name}.norm1", c_out, groups)
        self.film = Film(store, f"{name}.film", ctx_dim, c_out)
        self.conv2 = Conv1d(store, f"{name}.conv2", c_out, c_out)
        self.norm2 = GroupNorm(store, f"{name}.norm2", c_out, groups)
        self.skip = None if c_in == c_out else Conv1d(store, f"{name}.skip", c_in, c_out, kernel=1)

    def __call__(self, x, ctx) -> Tensor:
        h = silu(self.norm1(self.conv1(x)))
        h = self.film(h, ctx)
        h = silu(self.norm2(self.conv2(h)))
        res = x if self.skip is None else self.skip(x)
        return add(h, res)


class TemporalUNet:
    """Length-polymorphic conditional sequence-to-sequence denoising core.

    Convolves over the time dimension, so one parameter set serves any
    sequence length >= 2. A single down/upsample pair engages only for
    sequences of length >= `down_threshold`; the mid block is shared
    between the pooled and full-resolution paths. Output length and
    per-element dimensionality always equal the input's.
    """

    def __init__(self, store: ParamStore, name: str, in_ch: int, out_ch: int, ctx_dim: int,
                 base=32, mid=64, down_threshold=8, groups=8):
        self.down_threshold = down_threshold
        self.in_proj = Conv1d(store, f"{name}.in_proj", in_ch, base)
        self.block1 = ResBlock1d(store, f"{name}.block1", base, base, ctx_dim, groups)
        self.block_mid = ResBlock1d(store, f"{name}.block_mid", base, mid, ctx_dim, groups)
        self.merge = Conv1d(store, f"{name}.merge", base + mid, base, kernel=1)
        self.block2 = ResBlock1d(store, f"{name}.block2", base, base, ctx_dim, groups)
        self.out_proj = Conv1d(store, f"{name}.out_proj", base, out_ch, zero_init=True)

    def __call__(self, x, ctx) -> Tensor:
        x = as_tensor(x)
        m = x.data.shape[1]
        h1 = self.block1(self.in_proj(x), ctx)
        if m >= self.down_threshold:
            pooled = time_resample(h1, (m + 1) // 2)
            mid = self.block_mid(pooled, ctx)
            mid = time_resample(mid, m)
        else:
            mid = self.block_mid(h1, ctx)
        h = silu(self.merge(concat([h1, mid], axis=2)))
        h = self.block2(h, ctx)
        return self.out_proj(h)


def sinusoidal_embedding(steps, dim: int) -> np.ndarray:
    """Standard sin/cos embedding of integer step indices; (B, dim)."""
    steps = np.atleast_1d(np.asarray(steps, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = steps[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# -- checkpoints ---------------------------------------------------------


def save_checkpoint(path, model_name: str, store: ParamStore, hyperparams: dict):
    """Write a manifest line (JSON) followed by the little-endian f32 blob."""
    names = store.names()
    manifest = {
        "model_name": model_name,
        "shapes": [[n, list(store[n].data.shape)] for n in names],
        "hyperparams": hyperparams,
    }
    blob = np.concatenate([store[n].data.ravel() for n in names]).astype("<f4")
    with open(path, "wb") as f:
        f.write(json.dumps(manifest).encode("utf-8"))
        f.write(b"\n")
        f.write(blob.tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (manifest, name -> float array)."""
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.index(b"\n")
    manifest = json.loads(raw[:nl].decode("utf-8"))
    blob = np.frombuffer(raw[nl + 1:], dtype="<f4")
    arrays = {}
    offset = 0
    for name, shape in manifest["shapes"]:
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = blob[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != blob.size:
        raise ValueError(f"checkpoint blob size mismatch: {offset} != {blob.size}")
    return manifest, arrays
