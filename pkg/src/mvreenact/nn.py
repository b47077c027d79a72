"""Shared network building blocks: linear layers, multi-head attention,
pre-LN transformer blocks, sinusoidal encodings, patchify, and a
differentiable SSIM built from banded Gaussian matmuls (no convolution op)."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def init_linear(params: dict, rng: np.random.Generator, name: str,
                d_in: int, d_out: int, std: float = 0.02, zero: bool = False) -> None:
    w = np.zeros((d_in, d_out)) if zero else rng.normal(0.0, std, size=(d_in, d_out))
    params[f"{name}.w"] = Tensor(w, requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(d_out), requires_grad=True)


def linear(x: Tensor, params: dict, name: str) -> Tensor:
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def init_layer_norm(params: dict, name: str, d: int) -> None:
    params[f"{name}.g"] = Tensor(np.ones(d), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(d), requires_grad=True)


def lnorm(x: Tensor, params: dict, name: str) -> Tensor:
    return ad.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


MLP_RATIO = 2  # hidden width multiple; 2x keeps the CPU budget


def init_block(params: dict, rng: np.random.Generator, name: str, d: int) -> None:
    init_layer_norm(params, f"{name}.ln1", d)
    init_linear(params, rng, f"{name}.wq", d, d)
    init_linear(params, rng, f"{name}.wk", d, d)
    init_linear(params, rng, f"{name}.wv", d, d)
    init_linear(params, rng, f"{name}.wo", d, d)
    init_layer_norm(params, f"{name}.ln2", d)
    init_linear(params, rng, f"{name}.fc1", d, MLP_RATIO * d)
    init_linear(params, rng, f"{name}.fc2", MLP_RATIO * d, d)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    x = ad.reshape(x, (b, n, heads, d // heads))
    return ad.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (b, n, h * dh))


def mha(x: Tensor, params: dict, name: str, heads: int,
        bias: Tensor | None = None, tap: bool = False):
    """Self-attention over the middle axis of (batch, tokens, d).

    ``bias`` broadcasts against the (batch, heads, q, k) score tensor and is
    added to the logits before the softmax.  With ``tap`` the post-softmax
    attention probabilities are returned alongside the output.
    """
    d = x.shape[-1]
    scale = 1.0 / math.sqrt(d // heads)
    q = _split_heads(linear(x, params, f"{name}.wq") * scale, heads)
    k = _split_heads(linear(x, params, f"{name}.wk"), heads)
    v = _split_heads(linear(x, params, f"{name}.wv"), heads)
    ctx, probs = ad.attention(q, k, v, bias=bias, want_probs=tap)
    out = linear(_merge_heads(ctx), params, f"{name}.wo")
    return out, probs


def block(x: Tensor, params: dict, name: str, heads: int,
          bias: Tensor | None = None, tap: bool = False):
    """Pre-LN transformer block: attention then a GELU MLP, both residual."""
    h, probs = mha(lnorm(x, params, f"{name}.ln1"), params, name, heads, bias=bias, tap=tap)
    x = x + h
    h = linear(ad.gelu(linear(lnorm(x, params, f"{name}.ln2"), params, f"{name}.fc1")),
               params, f"{name}.fc2")
    return x + h, probs


# ---------------------------------------------------------------------------
# positional encodings

def sincos_1d(n: int, d: int) -> np.ndarray:
    """(n, d) sinusoidal table; d must be even."""
    pos = np.arange(n)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(d // 2) / max(d // 2 - 1, 1))
    ang = pos * freq[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def sincos_2d(gh: int, gw: int, d: int) -> np.ndarray:
    """(gh*gw, d) grid encoding: half the channels encode row, half column."""
    row = np.repeat(sincos_1d(gh, d // 2), gw, axis=0)
    col = np.tile(sincos_1d(gw, d // 2), (gh, 1))
    return np.concatenate([row, col], axis=1)


def time_features(t: np.ndarray, d: int) -> np.ndarray:
    """Sinusoidal features of scalars in [0, 1]; shape (len(t), d)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freq = np.exp(math.log(10000.0) * np.arange(d // 2) / max(d // 2 - 1, 1))
    ang = t[:, None] * freq[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# ---------------------------------------------------------------------------
# patch embedding (reshape + matmul; no convolution)

def patchify(x: Tensor, p: int) -> Tensor:
    """(B, H, W, C) -> (B, H/p * W/p, p*p*C), row-major patch order."""
    b, h, w, c = x.shape
    gh, gw = h // p, w // p
    x = ad.reshape(x, (b, gh, p, gw, p, c))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (b, gh * gw, p * p * c))


def unpatchify(x: Tensor, p: int, gh: int, gw: int, c: int) -> Tensor:
    """Inverse of patchify: (B, gh*gw, p*p*C) -> (B, gh*p, gw*p, C)."""
    b = x.shape[0]
    x = ad.reshape(x, (b, gh, gw, p, p, c))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (b, gh * p, gw * p, c))


# ---------------------------------------------------------------------------
# differentiable SSIM (valid windows, Gaussian weighting)

def gaussian_band(n: int, win: int, sigma: float) -> np.ndarray:
    """(n-win+1, n) matrix whose rows are normalized Gaussian windows."""
    if n < win:
        raise ValueError(f"image extent {n} smaller than window {win}")
    g = np.exp(-0.5 * ((np.arange(win) - (win - 1) / 2.0) / sigma) ** 2)
    g /= g.sum()
    band = np.zeros((n - win + 1, n))
    for i in range(n - win + 1):
        band[i, i:i + win] = g
    return band


def ssim_index(a: Tensor, b: Tensor, win: int = 11, sigma: float = 1.5,
               c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> Tensor:
    """Mean SSIM over valid windows of two (..., H, W) grayscale tensors."""
    h, w = a.shape[-2], a.shape[-1]
    gr = Tensor(gaussian_band(h, win, sigma))
    gc = Tensor(gaussian_band(w, win, sigma).T)

    def blur(t: Tensor) -> Tensor:
        return ad.matmul(ad.matmul(gr, t), gc)

    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return ad.mean(ad.div(num, den))


def grayscale(x: Tensor) -> Tensor:
    """Channel mean of (..., H, W, C) -> (..., H, W)."""
    return ad.mean(x, axes=-1)
