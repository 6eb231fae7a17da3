"""Gene-conditioned feature modulation for a frozen denoising backbone.

A single linear projection compresses the preprocessed gene vector to a
small embedding; per-block heads map that embedding to per-channel scale
and shift. The scale is parameterized as 1 + delta with zero-initialized
heads, so an untrained adapter reproduces the unconditional backbone
bit for bit. The null condition is the all-zeros embedding (not a learned
token) for the same reason.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, IntegrityError


@dataclass(frozen=True)
class GeneProfile:
    """One preprocessed gene-expression vector of length d."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 1:
            raise DimensionError(f"gene profile must be 1-D, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DimensionError("gene profile contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.shape[0]


def film_modulate(h: ad.Tensor, gamma: ad.Tensor, beta: ad.Tensor) -> ad.Tensor:
    """h' = gamma * h + beta per channel; gamma/beta (C,) or per-sample (N, C)."""
    return ad.channel_affine(h, gamma, beta)


@dataclass(frozen=True)
class AdapterConfig:
    gene_dim: int
    embed_dim: int = 16
    # (block name, channel width) pairs; normally taken from EpsNet.film_spec()
    blocks: tuple = ()


class FiLMAdapter:
    """Projection + per-block (gamma, beta) heads, all tagged "adapter"."""

    def __init__(self, cfg: AdapterConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.params: dict[str, ad.Tensor] = {}
        scale = 1.0 / np.sqrt(cfg.gene_dim)
        self._add("proj.w", rng.standard_normal((cfg.gene_dim, cfg.embed_dim)) * scale, dtype)
        self._add("proj.b", np.zeros(cfg.embed_dim), dtype)
        for name, width in cfg.blocks:
            # zero-init: gamma = 1 + 0, beta = 0 at the start of adaptation
            self._add(f"head.{name}.gamma.w", np.zeros((cfg.embed_dim, width)), dtype)
            self._add(f"head.{name}.gamma.b", np.zeros(width), dtype)
            self._add(f"head.{name}.beta.w", np.zeros((cfg.embed_dim, width)), dtype)
            self._add(f"head.{name}.beta.b", np.zeros(width), dtype)

    def _add(self, name: str, data, dtype):
        self.params[name] = ad.param(np.asarray(data, dtype=dtype), tag="adapter")

    def parameters(self) -> dict[str, ad.Tensor]:
        return self.params

    def embed(self, genes: np.ndarray | None, n: int, dtype=np.float32) -> ad.Tensor:
        """Project a (N, d) gene matrix; None yields the null (zeros) embedding."""
        if genes is None:
            return ad.Tensor(np.zeros((n, self.cfg.embed_dim), dtype=dtype))
        genes = np.asarray(genes, dtype=dtype)
        if genes.ndim == 1:
            genes = np.broadcast_to(genes, (n, genes.shape[0])).copy()
        if genes.shape != (n, self.cfg.gene_dim):
            raise DimensionError(
                f"gene batch {genes.shape} incompatible with d={self.cfg.gene_dim}, n={n}"
            )
        return ad.linear(ad.Tensor(genes), self.params["proj.w"], self.params["proj.b"])

    def embed_with_dropout(
        self, genes: np.ndarray, keep: np.ndarray, dtype=np.float32
    ) -> ad.Tensor:
        """Per-sample conditional dropout: dropped rows become the null embedding."""
        n = genes.shape[0]
        emb = self.embed(genes, n, dtype)
        if np.all(keep):
            return emb
        mask = np.broadcast_to(keep.astype(dtype)[:, None], emb.shape).copy()
        return ad.mul(emb, ad.Tensor(mask))

    def modulations(self, emb: ad.Tensor) -> dict[str, tuple[ad.Tensor, ad.Tensor]]:
        """Per-block (gamma, beta) with gamma = 1 + head_gamma(emb)."""
        out = {}
        for name, _width in self.cfg.blocks:
            dgamma = ad.linear(
                emb, self.params[f"head.{name}.gamma.w"], self.params[f"head.{name}.gamma.b"]
            )
            beta = ad.linear(
                emb, self.params[f"head.{name}.beta.w"], self.params[f"head.{name}.beta.b"]
            )
            out[name] = (ad.add_const(dgamma, 1.0), beta)
        return out

    def film_for(
        self, genes: np.ndarray | None, n: int, dtype=np.float32, keep: np.ndarray | None = None
    ) -> dict[str, tuple[ad.Tensor, ad.Tensor]]:
        if keep is not None and genes is not None:
            emb = self.embed_with_dropout(np.asarray(genes, dtype=dtype), keep, dtype)
        else:
            emb = self.embed(genes, n, dtype)
        return self.modulations(emb)


def partition_parameters(net, adapter=None):
    """Split all parameters into (backbone, adapter) by tag.

    Raises IntegrityError on untagged parameters or name collisions between
    the partitions; returns the two dicts (either may be empty).
    """
    backbone: dict[str, ad.Tensor] = {}
    adapter_set: dict[str, ad.Tensor] = {}
    sources = [("net", net.parameters())]
    if adapter is not None:
        sources.append(("adapter", adapter.parameters()))
    for label, params in sources:
        for name, p in params.items():
            if p.tag == "backbone":
                dest = backbone
            elif p.tag == "adapter":
                dest = adapter_set
            else:
                raise IntegrityError(f"untagged parameter {label}:{name} (tag={p.tag!r})")
            if name in backbone or name in adapter_set:
                raise IntegrityError(f"duplicate parameter name {name!r} across partitions")
            dest[name] = p
    return backbone, adapter_set


def parameter_count(params: dict[str, ad.Tensor]) -> int:
    return sum(p.size for p in params.values())
