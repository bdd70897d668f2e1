"""Shared-weight patch transformer producing one pooled token per image."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import BadImageShape, InvalidConfig, OutOfRange
from .nn import Block


@dataclass(frozen=True)
class EncoderConfig:
    patch_size: int = 8
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    trainable_depth: int = 4
    channels: int = 3
    max_grid: int = 8      # learned positional table covers max_grid x max_grid patches
    ffn_mult: int = 4

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise InvalidConfig("embed_dim must be divisible by heads")
        if not 0 <= self.trainable_depth <= self.depth:
            raise InvalidConfig(f"trainable_depth {self.trainable_depth} outside [0, {self.depth}]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ImageEmbedding:
    pooled: torch.Tensor    # (d,)
    patches: torch.Tensor   # (P, d)
    grid: tuple             # (rows, cols) of the patch grid


class Encoder(nn.Module):
    """Patchify, embed, add learned positions, prepend a summary token, run bidirectional blocks.

    Inputs are ``(B, H, W, C)`` images with values in [0, 1].
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_embed = nn.Linear(cfg.channels * cfg.patch_size ** 2, d)
        self.pos = nn.Parameter(torch.randn(cfg.max_grid, cfg.max_grid, d) * 0.02)
        self.summary = nn.Parameter(torch.randn(d) * 0.02)
        self.blocks = nn.ModuleList(
            Block(d, cfg.heads, cfg.ffn_mult, 1e-6, bias=False, rope_base=None, causal=False)
            for _ in range(cfg.depth)
        )
        self.set_trainable_depth(cfg.trainable_depth)

    def grid_shape(self, h: int, w: int) -> tuple[int, int]:
        p = self.cfg.patch_size
        if h % p or w % p or h == 0 or w == 0:
            raise BadImageShape(f"image {h}x{w} not divisible by patch size {p}")
        gh, gw = h // p, w // p
        if gh > self.cfg.max_grid or gw > self.cfg.max_grid:
            raise BadImageShape(f"patch grid {gh}x{gw} exceeds max_grid {self.cfg.max_grid}")
        return gh, gw

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns ``(pooled (B, d), patches (B, P, d))``."""
        if images.dim() != 4 or images.shape[-1] != self.cfg.channels:
            raise BadImageShape(f"expected (B, H, W, {self.cfg.channels}), got {tuple(images.shape)}")
        B, H, W, C = images.shape
        gh, gw = self.grid_shape(H, W)
        p = self.cfg.patch_size
        x = (images - 0.5).reshape(B, gh, p, gw, p, C).permute(0, 1, 3, 2, 4, 5).reshape(B, gh * gw, p * p * C)
        x = self.patch_embed(x) + self.pos[:gh, :gw].reshape(gh * gw, -1)
        x = torch.cat([self.summary.expand(B, 1, -1), x], dim=1)
        for blk in self.blocks:
            x = blk(x)
        return x[:, 0], x[:, 1:]

    def encode_image(self, image) -> ImageEmbedding:
        img = torch.tensor(np.asarray(image), dtype=self.summary.dtype)
        if img.dim() != 3:
            raise BadImageShape(f"expected (H, W, C), got {tuple(img.shape)}")
        pooled, patches = self(img[None])
        return ImageEmbedding(pooled[0], patches[0], self.grid_shape(img.shape[0], img.shape[1]))

    def set_trainable_depth(self, k: int) -> None:
        """Unfreeze the top ``k`` blocks; everything below block ``depth - k`` stops receiving gradients."""
        if not 0 <= k <= self.cfg.depth:
            raise OutOfRange(f"trainable depth {k} outside [0, {self.cfg.depth}]")
        self.trainable_depth = k
        cut = self.cfg.depth - k
        stem = k == self.cfg.depth
        for p in (*self.patch_embed.parameters(), self.pos, self.summary):
            p.requires_grad_(stem)
        for i, blk in enumerate(self.blocks):
            for p in blk.parameters():
                p.requires_grad_(i >= cut)


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return F.cosine_similarity(a, b, dim=-1, eps=1e-12).clamp(-1.0, 1.0)


def select_top_patches(street: ImageEmbedding, sat: ImageEmbedding, s: int) -> tuple[torch.Tensor, torch.Tensor]:
    """The ``s`` satellite patch tokens most cosine-similar to the street pooled token.

    Returns ``(indices, tokens)``; ties go to the lower patch index.
    """
    n = sat.patches.shape[0]
    if not 0 <= s <= n:
        raise OutOfRange(f"top-s {s} outside [0, {n}]")
    idx = top_patch_indices(street.pooled[None], sat.patches[None], s)[0]
    return idx, sat.patches[idx]


def top_patch_indices(query: torch.Tensor, patches: torch.Tensor, s: int) -> torch.Tensor:
    """Batched ranking: ``query (B, d)``, ``patches (B, P, d)`` -> ``(B, s)`` indices."""
    sims = cosine_similarity(patches, query[:, None, :])
    order = torch.sort(sims.detach(), dim=-1, descending=True, stable=True).indices
    return order[:, :s]


def pretrain_reconstruction(encoder: Encoder, images: torch.Tensor, steps: int, lr: float = 1e-3,
                            batch_size: int = 64, seed: int = 0) -> list[float]:
    """Brief auxiliary objective: reconstruct each patch's pixels from its token."""
    from .nn import OptimizerState, adamw_step, clip_global_norm

    cfg = encoder.cfg
    p = cfg.patch_size
    gen = torch.Generator().manual_seed(seed)
    head = nn.Linear(cfg.embed_dim, p * p * cfg.channels)
    saved = encoder.trainable_depth
    encoder.set_trainable_depth(cfg.depth)
    params = {f"enc.{k}": v for k, v in encoder.named_parameters()}
    params.update({f"head.{k}": v for k, v in head.named_parameters()})
    state = OptimizerState(lr=lr, weight_decay=0.0)
    losses = []
    for _ in range(steps):
        idx = torch.randint(0, images.shape[0], (min(batch_size, images.shape[0]),), generator=gen)
        x = images[idx]
        B, H, W, C = x.shape
        gh, gw = H // p, W // p
        target = (x - 0.5).reshape(B, gh, p, gw, p, C).permute(0, 1, 3, 2, 4, 5).reshape(B, gh * gw, -1)
        _, patches = encoder(x)
        loss = F.mse_loss(head(patches), target)
        grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
        grads, _ = clip_global_norm(grads, 1.0)
        adamw_step(params, dict(zip(params, grads)), state)
        losses.append(float(loss.detach()))
    encoder.set_trainable_depth(saved)
    return losses
