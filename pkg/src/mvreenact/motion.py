"""Latent motion encoding of frame-pair transitions.

A small two-block transformer over the patch tokens of both crops maps an
object-centered (before, after) pair to a single motion vector.  Learned
frame-index embeddings make the encoding directed.  Trained jointly with
the stage-I anchor model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .config import ModelConfig
from .synthworld import crop_object

CROP = 32


@dataclass
class MotionEmbedding:
    """Latent descriptor of the transition from frame t to t + dt."""
    vector: np.ndarray
    t: int
    dt: int


class MotionEncoder:
    PREFIX = "motion"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None,
                 params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        p = cfg.patch
        self.grid = CROP // p
        self.n_tokens = self.grid * self.grid
        if params is not None:
            self.params = params
        else:
            assert rng is not None
            d = cfg.d_enc
            self.params = {}
            nn.init_linear(self.params, rng, f"{self.PREFIX}.embed", p * p * 3, d)
            self.params[f"{self.PREFIX}.frame_emb"] = Tensor(
                rng.normal(0.0, 0.02, size=(2, d)), requires_grad=True)
            for i in range(cfg.enc_blocks):
                nn.init_block(self.params, rng, f"{self.PREFIX}.block{i}", d)
            nn.init_layer_norm(self.params, f"{self.PREFIX}.ln_out", d)
            nn.init_linear(self.params, rng, f"{self.PREFIX}.pool", d, cfg.d_m)
        self._pos = Tensor(nn.sincos_2d(self.grid, self.grid, cfg.d_enc))

    def n_params(self) -> int:
        return sum(t.size for t in self.params.values())

    def encode_pair(self, before: Tensor, after: Tensor) -> Tensor:
        """(B, 32, 32, 3) crop pair -> (B, d_m) motion vector; differentiable."""
        if before.shape != after.shape:
            raise ValueError(f"crop shapes differ: {before.shape} vs {after.shape}")
        p = self.params
        pre = self.PREFIX
        fe = p[f"{pre}.frame_emb"]
        tok_a = nn.linear(nn.patchify(before, self.cfg.patch), p, f"{pre}.embed")
        tok_b = nn.linear(nn.patchify(after, self.cfg.patch), p, f"{pre}.embed")
        tok_a = tok_a + self._pos + ad.reshape(ad.gather(fe, np.array([0]), 0), (1, 1, -1))
        tok_b = tok_b + self._pos + ad.reshape(ad.gather(fe, np.array([1]), 0), (1, 1, -1))
        x = ad.concat([tok_a, tok_b], axis=1)
        for i in range(self.cfg.enc_blocks):
            x, _ = nn.block(x, p, f"{pre}.block{i}", self.cfg.heads)
        x = nn.lnorm(x, p, f"{pre}.ln_out")
        pooled = ad.mean(x, axes=1)
        return nn.linear(pooled, p, f"{pre}.pool")


def crop_sequence(frames: np.ndarray, masks: np.ndarray, out: int = CROP) -> np.ndarray:
    """Object-centered segmented crops for every frame; (T, out, out, 3)."""
    return np.stack([crop_object(f, m, out=out) for f, m in zip(frames, masks)])


def extract_sequence(frames: np.ndarray, masks: np.ndarray, dt: int,
                     encoder: MotionEncoder) -> list[MotionEmbedding]:
    """Motion embeddings at unit hop: indices t = 0 .. T-dt-1."""
    t_frames = frames.shape[0]
    if t_frames <= dt:
        raise ValueError(f"need more than dt={dt} frames, got {t_frames}")
    crops = crop_sequence(frames, masks)
    before = Tensor(crops[:t_frames - dt])
    after = Tensor(crops[dt:])
    vecs = encoder.encode_pair(before, after).data
    return [MotionEmbedding(vector=vecs[t], t=t, dt=dt) for t in range(t_frames - dt)]
