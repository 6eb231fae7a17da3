"""The noise-prediction network: a small U-Net of residual blocks with
sinusoidal timestep embeddings, plus a tiny MLP variant for 1-D sanity
diffusions. All parameters carry the "backbone" partition tag.

Feature maps are (N, C, H, W). FiLM modulation, when supplied, is applied
inside a residual block right after its second normalization, before the
activation; by default the blocks at the two coarsest resolutions are
modulated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class EpsNetConfig:
    image_size: int = 16
    in_channels: int = 3
    base_channels: int = 16
    channel_mults: tuple = (1, 2, 4)
    blocks_per_scale: int = 1
    temb_dim: int = 64
    groups: int = 8
    # names of residual blocks receiving FiLM; None = all blocks at the two
    # coarsest resolutions (including the middle block)
    film_blocks: tuple | None = None

    def __post_init__(self):
        levels = len(self.channel_mults)
        if self.image_size % (2 ** (levels - 1)) != 0:
            raise ConfigError(
                f"image size {self.image_size} not divisible by 2^{levels - 1}"
            )
        if self.base_channels % self.groups != 0:
            raise ConfigError("base_channels must be divisible by groups")

    def channels(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_mults]


def _kaiming(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class ResBlock:
    """norm-silu-conv, timestep injection, norm-(FiLM)-silu-conv, residual."""

    def __init__(self, name, cin, cout, temb_dim, groups, rng, params, dtype):
        self.name = name
        self.cin, self.cout, self.groups = cin, cout, groups

        def add(suffix, data):
            params[f"{name}.{suffix}"] = ad.param(np.asarray(data, dtype=dtype), tag="backbone")

        add("norm1.g", np.ones(cin))
        add("norm1.b", np.zeros(cin))
        add("conv1.w", _kaiming(rng, (cout, cin, 3, 3), cin * 9))
        add("conv1.b", np.zeros(cout))
        add("temb.w", rng.standard_normal((temb_dim, cout)) / np.sqrt(temb_dim))
        add("temb.b", np.zeros(cout))
        add("norm2.g", np.ones(cout))
        add("norm2.b", np.zeros(cout))
        add("conv2.w", np.zeros((cout, cout, 3, 3)))  # zero-init: block starts as skip
        add("conv2.b", np.zeros(cout))
        if cin != cout:
            add("skip.w", _kaiming(rng, (cout, cin, 1, 1), cin))

    def __call__(self, params, x, temb, film):
        p = lambda s: params[f"{self.name}.{s}"]
        h = ad.group_norm(x, self.groups)
        h = ad.channel_affine(h, p("norm1.g"), p("norm1.b"))
        h = ad.conv2d(ad.silu(h), p("conv1.w"), padding=1)
        h = ad.add_bias(h, p("conv1.b"))
        tvec = ad.linear(ad.silu(temb), p("temb.w"), p("temb.b"))
        h = ad.add_channel_vec(h, tvec)
        h = ad.group_norm(h, self.groups)
        h = ad.channel_affine(h, p("norm2.g"), p("norm2.b"))
        if film is not None and self.name in film:
            gamma, beta = film[self.name]
            h = ad.channel_affine(h, gamma, beta)
        h = ad.conv2d(ad.silu(h), p("conv2.w"), padding=1)
        h = ad.add_bias(h, p("conv2.b"))
        if self.cin != self.cout:
            x = ad.conv2d(x, p("skip.w"))
        return ad.add(h, x)


class EpsNet:
    """U-Net epsilon predictor over (N, C, H, W) inputs in [-1, 1]."""

    def __init__(self, cfg: EpsNetConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict[str, ad.Tensor] = {}
        p = self.params
        chans = cfg.channels()
        levels = len(chans)

        def add(name, data):
            p[name] = ad.param(np.asarray(data, dtype=dtype), tag="backbone")

        add("temb.w1", rng.standard_normal((cfg.temb_dim, cfg.temb_dim)) / np.sqrt(cfg.temb_dim))
        add("temb.b1", np.zeros(cfg.temb_dim))
        add("temb.w2", rng.standard_normal((cfg.temb_dim, cfg.temb_dim)) / np.sqrt(cfg.temb_dim))
        add("temb.b2", np.zeros(cfg.temb_dim))
        add("stem.w", _kaiming(rng, (chans[0], cfg.in_channels, 3, 3), cfg.in_channels * 9))
        add("stem.b", np.zeros(chans[0]))

        self.enc_blocks: list[ResBlock] = []
        self.levels = levels
        cur = chans[0]
        self._block_level: dict[str, int] = {}
        for i in range(levels):
            for j in range(cfg.blocks_per_scale):
                blk = ResBlock(f"enc{i}.{j}", cur, chans[i], cfg.temb_dim, cfg.groups, rng, p, dtype)
                self.enc_blocks.append(blk)
                self._block_level[blk.name] = i
                cur = chans[i]
            if i < levels - 1:
                add(f"down{i}.w", _kaiming(rng, (cur, cur, 3, 3), cur * 9))
                add(f"down{i}.b", np.zeros(cur))
        self.mid = ResBlock("mid", cur, cur, cfg.temb_dim, cfg.groups, rng, p, dtype)
        self._block_level["mid"] = levels - 1
        self.dec_blocks: list[ResBlock] = []
        skip_chans = [chans[i] for i in range(levels) for _ in range(cfg.blocks_per_scale)]
        for i in reversed(range(levels)):
            for j in range(cfg.blocks_per_scale):
                cin = cur + skip_chans.pop()
                blk = ResBlock(f"dec{i}.{j}", cin, chans[i], cfg.temb_dim, cfg.groups, rng, p, dtype)
                self.dec_blocks.append(blk)
                self._block_level[blk.name] = i
                cur = chans[i]
        add("head.norm.g", np.ones(cur))
        add("head.norm.b", np.zeros(cur))
        add("head.w", np.zeros((cfg.in_channels, cur, 3, 3)))  # zero-init output conv
        add("head.b", np.zeros(cfg.in_channels))

    def parameters(self) -> dict[str, ad.Tensor]:
        return self.params

    def film_spec(self) -> tuple:
        """(block name, channel width) pairs eligible for FiLM modulation."""
        if self.cfg.film_blocks is not None:
            wanted = set(self.cfg.film_blocks)
            unknown = wanted - set(self._block_level)
            if unknown:
                raise ConfigError(f"unknown film blocks: {sorted(unknown)}")
        else:
            coarse = {self.levels - 1, self.levels - 2} if self.levels > 1 else {0}
            wanted = {n for n, lvl in self._block_level.items() if lvl in coarse}
        all_blocks = self.enc_blocks + [self.mid] + self.dec_blocks
        return tuple((b.name, b.cout) for b in all_blocks if b.name in wanted)

    def forward(self, x: ad.Tensor, t, film=None) -> ad.Tensor:
        cfg = self.cfg
        n = x.shape[0]
        if x.shape[1:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
            raise DimensionError(f"input {x.shape} does not match config {cfg}")
        t = np.broadcast_to(np.asarray(t), (n,))
        p = self.params
        temb = ad.embed_timestep(t, cfg.temb_dim, dtype=self.dtype)
        temb = ad.linear(ad.silu(ad.linear(temb, p["temb.w1"], p["temb.b1"])), p["temb.w2"], p["temb.b2"])

        h = ad.add_bias(ad.conv2d(x, p["stem.w"], padding=1), p["stem.b"])
        skips = []
        bi = 0
        for i in range(self.levels):
            for _ in range(cfg.blocks_per_scale):
                h = self.enc_blocks[bi](p, h, temb, film)
                skips.append(h)
                bi += 1
            if i < self.levels - 1:
                h = ad.add_bias(ad.conv2d(h, p[f"down{i}.w"], stride=2, padding=1), p[f"down{i}.b"])
        h = self.mid(p, h, temb, film)
        bi = 0
        for i in reversed(range(self.levels)):
            for _ in range(cfg.blocks_per_scale):
                h = self.dec_blocks[bi](p, ad.concat([h, skips.pop()], axis=1), temb, film)
                bi += 1
            if i > 0:
                h = ad.upsample_nearest2x(h)
        h = ad.channel_affine(ad.group_norm(h, cfg.groups), p["head.norm.g"], p["head.norm.b"])
        h = ad.add_bias(ad.conv2d(ad.silu(h), p["head.w"], padding=1), p["head.b"])
        return h


@dataclass(frozen=True)
class MlpEpsConfig:
    """Config for the dense 1-D toy denoiser (shape (N, dim) data)."""

    dim: int = 1
    hidden: int = 64
    temb_dim: int = 32


class MlpEpsNet:
    """Two-hidden-layer dense epsilon predictor for low-dimensional sanity runs."""

    def __init__(self, cfg: MlpEpsConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict[str, ad.Tensor] = {}
        d_in = cfg.dim + cfg.temb_dim

        def add(name, data):
            self.params[name] = ad.param(np.asarray(data, dtype=dtype), tag="backbone")

        add("w1", rng.standard_normal((d_in, cfg.hidden)) * np.sqrt(2.0 / d_in))
        add("b1", np.zeros(cfg.hidden))
        add("w2", rng.standard_normal((cfg.hidden, cfg.hidden)) * np.sqrt(2.0 / cfg.hidden))
        add("b2", np.zeros(cfg.hidden))
        add("w3", np.zeros((cfg.hidden, cfg.dim)))
        add("b3", np.zeros(cfg.dim))

    def parameters(self) -> dict[str, ad.Tensor]:
        return self.params

    def forward(self, x: ad.Tensor, t, film=None) -> ad.Tensor:
        if film:
            raise ConfigError("MlpEpsNet has no modulation points")
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (n,))
        temb = ad.embed_timestep(t, self.cfg.temb_dim, dtype=self.dtype)
        h = ad.concat([x, temb], axis=1)
        p = self.params
        h = ad.silu(ad.linear(h, p["w1"], p["b1"]))
        h = ad.silu(ad.linear(h, p["w2"], p["b2"]))
        return ad.linear(h, p["w3"], p["b3"])
