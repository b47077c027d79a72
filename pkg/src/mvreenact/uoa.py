"""Stage I: multi-view anchored next-frame prediction.

One transformer fuses the current object crop, K reference views and the
motion embedding (as a learned scale/shift on the object tokens) and
decodes the crop dt frames ahead.  A designated attention layer is tapped
for per-view attention mass, the retrieval signal consumed by stage II.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor, backward
from .config import Config, ModelConfig
from .motion import CROP, MotionEmbedding, MotionEncoder, crop_sequence
from .optim import Adam

PERC_SEED = 0x9E3779B9


@dataclass
class ViewWeights:
    """Per-reference-view attention mass from a tapped anchor layer."""
    w: np.ndarray          # (K,), each in (0,1), summing to 1
    layer: int
    frame: int             # source-video frame index the weights describe

    def clamped(self, lo: float = 1e-4) -> np.ndarray:
        return np.clip(self.w, lo, 1.0 - lo)


class AnchorModel:
    PREFIX = "uoa"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None,
                 params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        p = cfg.patch
        self.grid = CROP // p
        self.n_obj = self.grid * self.grid
        if params is not None:
            self.params = params
        else:
            assert rng is not None
            d = cfg.d
            self.params = {}
            nn.init_linear(self.params, rng, f"{self.PREFIX}.embed", p * p * 3, d)
            # motion-conditioned scale/shift, zero so modulation starts at identity
            nn.init_linear(self.params, rng, f"{self.PREFIX}.film", cfg.d_m, 2 * d, zero=True)
            self.params[f"{self.PREFIX}.view_emb"] = Tensor(
                rng.normal(0.0, 0.02, size=(8, d)), requires_grad=True)
            self.params[f"{self.PREFIX}.registers"] = Tensor(
                rng.normal(0.0, 0.02, size=(cfg.registers, d)), requires_grad=True)
            for i in range(cfg.l_blocks):
                nn.init_block(self.params, rng, f"{self.PREFIX}.block{i}", d)
            nn.init_layer_norm(self.params, f"{self.PREFIX}.ln_out", d)
            nn.init_linear(self.params, rng, f"{self.PREFIX}.rgb", d, p * p * 3, zero=True)
        self._pos = Tensor(nn.sincos_2d(self.grid, self.grid, cfg.d))

    def n_params(self) -> int:
        return sum(t.size for t in self.params.values())

    def forward(self, obj: Tensor, refs: Tensor, m: Tensor,
                tap: int | None = None):
        """(B,32,32,3) current crop + (B,K,32,32,3) refs + (B,d_m) motion ->
        (next-crop prediction (B,32,32,3), per-view weights (B,K) or None)."""
        cfg = self.cfg
        p = self.params
        pre = self.PREFIX
        b, k = refs.shape[0], refs.shape[1]
        if k < 1:
            raise ValueError("need at least one reference view")
        if obj.shape[1] != CROP or refs.shape[2] != CROP:
            raise ValueError("anchor model expects 32x32 inputs")
        tap = cfg.resolved_tap() if tap is None else tap

        tok_obj = nn.linear(nn.patchify(obj, cfg.patch), p, f"{pre}.embed") + self._pos
        gb = nn.linear(m, p, f"{pre}.film")
        gamma, beta = ad.split(gb, [cfg.d, cfg.d], axis=1)
        tok_obj = tok_obj * (ad.reshape(gamma, (b, 1, cfg.d)) + 1.0) \
            + ad.reshape(beta, (b, 1, cfg.d))

        refs_flat = ad.reshape(refs, (b * k, CROP, CROP, 3))
        tok_ref = nn.linear(nn.patchify(refs_flat, cfg.patch), p, f"{pre}.embed")
        tok_ref = tok_ref + self._pos
        view = ad.gather(p[f"{pre}.view_emb"], np.arange(k) % 8, 0)
        tok_ref = ad.reshape(tok_ref, (b, k, self.n_obj, cfg.d)) \
            + ad.reshape(view, (1, k, 1, cfg.d))
        tok_ref = ad.reshape(tok_ref, (b, k * self.n_obj, cfg.d))

        regs = ad.reshape(p[f"{pre}.registers"], (1, cfg.registers, cfg.d)) \
            + Tensor(np.zeros((b, cfg.registers, cfg.d)))
        x = ad.concat([tok_obj, tok_ref, regs], axis=1)

        weights = None
        for i in range(cfg.l_blocks):
            x, probs = nn.block(x, p, f"{pre}.block{i}", cfg.heads, tap=(i == tap))
            if probs is not None:
                weights = self._view_weights(probs, k)
        x = nn.lnorm(x, p, f"{pre}.ln_out")
        obj_out = ad.split(x, [self.n_obj, k * self.n_obj + cfg.registers], axis=1)[0]
        rgb = ad.sigmoid(nn.linear(obj_out, p, f"{pre}.rgb"))
        pred = nn.unpatchify(rgb, cfg.patch, self.grid, self.grid, 3)
        return pred, weights

    def _view_weights(self, probs: np.ndarray, k: int) -> np.ndarray:
        """Mean attention mass from object queries to each view's keys."""
        n_obj = self.n_obj
        obj_rows = probs[:, :, :n_obj, :]              # (B, h, n_obj, N)
        per_view = [obj_rows[..., n_obj + v * n_obj: n_obj + (v + 1) * n_obj].sum(axis=-1)
                    for v in range(k)]
        w = np.stack(per_view, axis=-1)                # (B, h, n_obj, K)
        w = w.mean(axis=(1, 2))                        # (B, K)
        return w / w.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# multi-objective reconstruction loss

_perc_params: list[tuple[Tensor, Tensor, Tensor]] | None = None


def _perceptual_stack() -> list[tuple[Tensor, Tensor, Tensor]]:
    """Fixed, seeded, untrained strided projection stack shared by all runs."""
    global _perc_params
    if _perc_params is None:
        rng = np.random.default_rng(PERC_SEED)
        dims = [(4, 48, 32), (2, 128, 64), (2, 256, 128)]
        _perc_params = []
        for p, d_in, d_out in dims:
            w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, d_out)))
            _perc_params.append((Tensor(np.array(float(p))), w, Tensor(np.zeros(d_out))))
    return _perc_params


def _perc_features(x: Tensor) -> list[Tensor]:
    stack = _perceptual_stack()
    feats = []
    cur = x
    side = x.shape[1]
    ch = x.shape[3]
    for pt, w, _b in stack:
        p = int(pt.data)
        grid = side // p
        tok = nn.patchify(cur, p)                  # (B, grid*grid, p*p*ch)
        h = ad.gelu(tok @ w)
        feats.append(h)
        cur = ad.reshape(h, (x.shape[0], grid, grid, w.shape[1]))
        side, ch = grid, w.shape[1]
    return feats


def perceptual_distance(a: Tensor, b: Tensor) -> Tensor:
    """L2 between fixed-random-feature activations; a deterministic stand-in
    for a learned perceptual metric."""
    fa = _perc_features(a)
    fb = _perc_features(b)
    total = None
    for x, y in zip(fa, fb):
        d = ad.mean((x - y) * (x - y))
        total = d if total is None else total + d
    return total * (1.0 / len(fa))


def stage1_loss(pred: Tensor, gt: Tensor, lambda_l2: float = 1.0,
                lambda_perc: float = 0.1, lambda_ssim: float = 0.1) -> Tensor:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    l2 = ad.mean((pred - gt) * (pred - gt))
    perc = perceptual_distance(pred, gt)
    ssim = nn.ssim_index(nn.grayscale(pred), nn.grayscale(gt))
    return lambda_l2 * l2 + lambda_perc * perc + lambda_ssim * (1.0 - ssim)


# ---------------------------------------------------------------------------
# autoregressive rollout

def rollout_motion_indices(t_frames: int, dt: int) -> list[int]:
    """Unit-hop embedding indices consumed by rollout: 0, dt, 2dt, ...;
    the final step clamps to the last available pair so the rollout reaches
    the nominal index floor(T/dt)*dt."""
    steps = t_frames // dt
    return [min(i * dt, t_frames - dt - 1) for i in range(steps)]


def rollout(model: AnchorModel, o0: np.ndarray, motions: list[MotionEmbedding],
            refs: np.ndarray, dt: int):
    """Feed the model its own output; returns (frames, view weight trace).

    ``frames[i]`` carries nominal index i*dt with frames[0] == o0; the i-th
    ViewWeights describes the step's input frame (index i*dt).
    """
    if len(motions) == 0:
        raise ValueError("empty motion sequence")
    frames = [np.asarray(o0, dtype=np.float64)]
    trace: list[ViewWeights] = []
    refs_t = Tensor(refs[None])
    tap = model.cfg.resolved_tap()
    cur = frames[0]
    for i, emb in enumerate(motions):
        pred, w = model.forward(Tensor(cur[None]), refs_t,
                                Tensor(emb.vector[None]), tap=tap)
        trace.append(ViewWeights(w=w[0], layer=tap, frame=i * dt))
        cur = pred.data[0]
        frames.append(cur)
    return frames, trace


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    seconds: float = 0.0


def _episode_pairs(episodes) -> list[tuple[int, int]]:
    pairs = []
    for e, ep in enumerate(episodes):
        for t in range(ep.t_frames - ep.dt):
            pairs.append((e, t))
    return pairs


def train_stage1(episodes, cfg: Config, progress=None):
    """Jointly fit the motion encoder and anchor model with teacher forcing.

    Returns (params, log); params contain both prefixes and go into one
    checkpoint.
    """
    if not episodes:
        raise ValueError("empty dataset")
    rng = np.random.default_rng([cfg.seed, 0x57A6E1])
    encoder = MotionEncoder(cfg.model, rng)
    model = AnchorModel(cfg.model, rng)
    params = {**encoder.params, **model.params}
    opt = Adam(params, lr=cfg.train.lr)
    pairs = _episode_pairs(episodes)
    crops = [crop_sequence(ep.frames, ep.object_masks) for ep in episodes]
    refs = np.stack([ep.refs for ep in episodes])
    log = TrainLog()
    t0 = time.time()
    for step in range(cfg.train.steps):
        picks = rng.choice(len(pairs), size=cfg.train.batch, replace=True)
        before = np.empty((cfg.train.batch, CROP, CROP, 3))
        after = np.empty_like(before)
        ref_batch = np.empty((cfg.train.batch,) + refs.shape[1:])
        for j, pick in enumerate(picks):
            e, t = pairs[pick]
            before[j] = crops[e][t]
            after[j] = crops[e][t + episodes[e].dt]
            ref_batch[j] = refs[e]
        bt, at = Tensor(before), Tensor(after)
        m = encoder.encode_pair(bt, at)
        pred, _ = model.forward(bt, Tensor(ref_batch), m)
        loss = stage1_loss(pred, at, cfg.train.lambda_l2,
                           cfg.train.lambda_perc, cfg.train.lambda_ssim)
        loss.assert_finite("stage-1 loss")
        ad.zero_grads(params)
        grads = backward(loss, params)
        opt.step(grads)
        if step % cfg.train.log_every == 0 or step == cfg.train.steps - 1:
            log.steps.append(step)
            log.losses.append(loss.item())
            if progress:
                progress(step, loss.item())
    log.seconds = time.time() - t0
    return params, log


def load_stage1(raw: dict[str, np.ndarray], cfg: ModelConfig):
    """Split a stage-1 checkpoint into (MotionEncoder, AnchorModel)."""
    from .checkpoint import params_to_tensors
    tensors = params_to_tensors(raw)
    enc = {k: v for k, v in tensors.items() if k.startswith(MotionEncoder.PREFIX + ".")}
    anchor = {k: v for k, v in tensors.items() if k.startswith(AnchorModel.PREFIX + ".")}
    return MotionEncoder(cfg, params=enc), AnchorModel(cfg, params=anchor)
