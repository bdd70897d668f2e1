"""Autoregressive zoom policy: interleaved token sequences, teacher-forced loss, greedy zooming.

A training sequence for one query is ``[I_g, M_0, y_0, M_1, y_1, ..., M_{N-1}]``.
Logits for decision ``t`` are read at the position of tile token ``M_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .encoder import Encoder, EncoderConfig, ImageEmbedding, cosine_similarity, top_patch_indices
from .errors import InvalidAction, InvalidConfig, RenderFailure, ShapeMismatch
from .geo import GeoPoint, PyramidConfig, TerminalCell, decode_actions
from .nn import CausalDecoder, DecoderConfig, softmax_cross_entropy

TileSource = Callable[[Sequence[int]], np.ndarray]

KIND_GROUND, KIND_TILE, KIND_ACTION = 0, 1, 2


@dataclass(frozen=True)
class PolicyConfig:
    pyramid: PyramidConfig = field(default_factory=lambda: PyramidConfig(num_steps=3, aoi_side=2000.0))
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    top_s: int = 0  # extra satellite patch tokens per tile (0 = pooled token only)

    def __post_init__(self):
        if self.encoder.embed_dim != self.decoder.hidden_dim:
            raise InvalidConfig("encoder embed_dim must equal decoder hidden_dim")
        if self.decoder.action_vocab != self.pyramid.num_actions:
            raise InvalidConfig(f"action_vocab {self.decoder.action_vocab} != K^2 = {self.pyramid.num_actions}")
        if self.seq_len > self.decoder.max_seq_len:
            raise InvalidConfig(f"sequence length {self.seq_len} exceeds max_seq_len")

    @property
    def tile_group(self) -> int:
        return 1 + self.top_s

    @property
    def seq_len(self) -> int:
        n = self.pyramid.num_steps
        return 1 + n * self.tile_group + (n - 1)

    @property
    def decision_positions(self) -> list[int]:
        g = self.tile_group
        return [g + t * (g + 1) for t in range(self.pyramid.num_steps)]

    def to_dict(self) -> dict:
        return {"pyramid": self.pyramid.to_dict(), "encoder": self.encoder.to_dict(),
                "decoder": self.decoder.to_dict(), "top_s": self.top_s}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        return cls(pyramid=PyramidConfig.from_dict(d["pyramid"]), encoder=EncoderConfig(**d["encoder"]),
                   decoder=DecoderConfig(**d["decoder"]), top_s=int(d.get("top_s", 0)))


@dataclass(frozen=True, eq=False)
class TokenSequence:
    tokens: torch.Tensor          # (T, d)
    kinds: tuple                  # per-token KIND_*
    decision_positions: tuple
    tile_addresses: tuple


@dataclass(frozen=True)
class ZoomTrace:
    actions: tuple
    step_probs: tuple             # N tuples of K^2 probabilities
    step_logprobs: tuple
    cell: TerminalCell
    prediction: GeoPoint
    joint_logprob: float

    def to_record(self) -> dict:
        return {
            "actions": list(self.actions),
            "max_probs": [max(p) for p in self.step_probs],
            "lat": self.prediction.latitude,
            "lon": self.prediction.longitude,
            "joint_logprob": self.joint_logprob,
        }


class PolicyModel(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.decoder.hidden_dim
        self.encoder = Encoder(cfg.encoder)
        self.action_embed = nn.Embedding(cfg.pyramid.num_actions, d)
        nn.init.normal_(self.action_embed.weight, std=0.02)
        self.kind_embed = nn.Embedding(3, d)
        nn.init.normal_(self.kind_embed.weight, std=0.02)
        self.decoder = CausalDecoder(cfg.decoder)
        self.head = nn.Linear(d, cfg.pyramid.num_actions)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @property
    def dtype(self):
        return self.head.weight.dtype

    # -- embedding helpers -------------------------------------------------

    def _images(self, arrays) -> torch.Tensor:
        return torch.as_tensor(np.stack([np.asarray(a) for a in arrays]), dtype=self.dtype)

    def _tile_tokens(self, ground_pooled: torch.Tensor, addresses: list[tuple], tile_source: TileSource) -> torch.Tensor:
        """Encode one tile per query (deduplicated); returns ``(B, 1 + top_s, d)``."""
        uniq: dict[tuple, int] = {}
        for a in addresses:
            uniq.setdefault(a, len(uniq))
        try:
            imgs = [tile_source(a) for a in uniq]
        except Exception as exc:
            raise RenderFailure(f"tile source failed: {exc}") from exc
        pooled, patches = self.encoder(self._images(imgs))
        sel = torch.tensor([uniq[a] for a in addresses])
        pooled, patches = pooled[sel], patches[sel]
        toks = pooled[:, None, :]
        if self.cfg.top_s:
            idx = top_patch_indices(ground_pooled, patches, self.cfg.top_s)
            picked = patches.gather(1, idx[..., None].expand(-1, -1, patches.shape[-1]))
            toks = torch.cat([toks, picked], dim=1)
        return toks + self.kind_embed.weight[KIND_TILE]

    def _action_tokens(self, actions: torch.Tensor) -> torch.Tensor:
        return (self.action_embed(actions) + self.kind_embed.weight[KIND_ACTION])[:, None, :]

    def encode_ground(self, observations) -> torch.Tensor:
        pooled, _ = self.encoder(self._images(observations))
        return pooled

    # -- teacher forcing ---------------------------------------------------

    def assemble(self, observations, actions: torch.Tensor, tile_source: TileSource) -> torch.Tensor:
        """Batched interleaved sequence ``(B, T, d)`` along the given action paths."""
        n = self.cfg.pyramid.num_steps
        if actions.dim() != 2 or actions.shape[1] != n:
            raise ShapeMismatch(f"expected actions of shape (B, {n}), got {tuple(actions.shape)}")
        if int(actions.min()) < 0 or int(actions.max()) >= self.cfg.pyramid.num_actions:
            raise InvalidAction("action outside [0, K^2)")
        g = self.encode_ground(observations)
        parts = [(g + self.kind_embed.weight[KIND_GROUND])[:, None, :]]
        paths = [tuple(row) for row in actions.tolist()]
        for t in range(n):
            parts.append(self._tile_tokens(g, [p[:t] for p in paths], tile_source))
            if t < n - 1:
                parts.append(self._action_tokens(actions[:, t]))
        return torch.cat(parts, dim=1)

    def decision_logits(self, observations, actions: torch.Tensor, tile_source: TileSource) -> torch.Tensor:
        """``(B, N, K^2)`` logits at every decision position."""
        x = self.assemble(observations, actions, tile_source)
        h = self.decoder(x)
        return self.head(h[:, self.cfg.decision_positions])

    def forward_loss(self, observations, actions: torch.Tensor, tile_source: TileSource) -> torch.Tensor:
        """Mean over the batch of the per-query sum of step cross-entropies."""
        logits = self.decision_logits(observations, actions, tile_source)
        return softmax_cross_entropy(logits, actions).sum(dim=1).mean()

    # -- inference -----------------------------------------------------------

    @torch.no_grad()
    def score_sequences(self, observations, actions: torch.Tensor, tile_source: TileSource) -> torch.Tensor:
        """Joint log-probability of each given path, float64 ``(B,)``."""
        logits = self.decision_logits(observations, actions, tile_source).double()
        logp = torch.log_softmax(logits, dim=-1)
        return logp.gather(-1, actions[..., None]).squeeze(-1).sum(dim=1)

    @torch.no_grad()
    def localize_batch(self, observations, tile_source: TileSource, use_cache: bool = True) -> list[ZoomTrace]:
        """Greedy zooming: argmax at each tile position, lowest index on ties."""
        cfg = self.cfg
        n = cfg.pyramid.num_steps
        g = self.encode_ground(observations)
        B = g.shape[0]
        first = torch.cat([(g + self.kind_embed.weight[KIND_GROUND])[:, None, :],
                           self._tile_tokens(g, [()] * B, tile_source)], dim=1)
        caches = [dict() for _ in range(cfg.decoder.layers)] if use_cache else None
        seq = first
        pos = 0
        new = first
        chosen: list[list[int]] = [[] for _ in range(B)]
        probs, logps = [], []
        for t in range(n):
            if use_cache:
                positions = torch.arange(pos, pos + new.shape[1])
                h = self.decoder(new, positions, caches)
                pos += new.shape[1]
            else:
                h = self.decoder(seq)
            logits = self.head(h[:, -1]).double()
            lp = torch.log_softmax(logits, dim=-1)
            a = torch.argmax(logits, dim=-1)
            probs.append(lp.exp())
            logps.append(lp.gather(-1, a[:, None]).squeeze(-1))
            for i in range(B):
                chosen[i].append(int(a[i]))
            if t < n - 1:
                tiles = self._tile_tokens(g, [tuple(c) for c in chosen], tile_source)
                new = torch.cat([self._action_tokens(a), tiles], dim=1)
                seq = torch.cat([seq, new], dim=1)
        traces = []
        for i in range(B):
            cell = decode_actions(chosen[i], cfg.pyramid)
            step_lp = tuple(float(l[i]) for l in logps)
            traces.append(ZoomTrace(
                actions=tuple(chosen[i]),
                step_probs=tuple(tuple(p[i].tolist()) for p in probs),
                step_logprobs=step_lp,
                cell=cell,
                prediction=cell.center,
                joint_logprob=float(math.fsum(step_lp)),
            ))
        return traces

    def localize(self, observation, tile_source: TileSource) -> ZoomTrace:
        return self.localize_batch([observation], tile_source)[0]

    def score_sequence(self, observation, actions: Sequence[int], tile_source: TileSource) -> float:
        a = torch.as_tensor([list(actions)], dtype=torch.long)
        return float(self.score_sequences([observation], a, tile_source)[0])


def assemble_sequence(model: PolicyModel, observation, actions: Sequence[int], tile_source: TileSource) -> TokenSequence:
    """Single-query teacher-forced sequence with token bookkeeping."""
    cfg = model.cfg
    n = cfg.pyramid.num_steps
    if len(actions) != n:
        raise ShapeMismatch(f"expected {n} actions, got {len(actions)}")
    a = torch.as_tensor([list(actions)], dtype=torch.long)
    tokens = model.assemble([observation], a, tile_source)[0]
    kinds = [KIND_GROUND]
    addrs = []
    for t in range(n):
        kinds += [KIND_TILE] * cfg.tile_group
        addrs.append(tuple(actions[:t]))
        if t < n - 1:
            kinds.append(KIND_ACTION)
    return TokenSequence(tokens=tokens, kinds=tuple(kinds), decision_positions=tuple(cfg.decision_positions),
                         tile_addresses=tuple(addrs))


@torch.no_grad()
def similarity_heatmap(model_or_encoder, observation, tile) -> np.ndarray:
    """Cosine similarity of each ground patch token to the tile pooled token, on the patch grid."""
    enc = model_or_encoder.encoder if isinstance(model_or_encoder, PolicyModel) else model_or_encoder
    g = enc.encode_image(observation)
    s = enc.encode_image(tile)
    return heatmap_from_embeddings(g, s)


def heatmap_from_embeddings(ground: ImageEmbedding, tile: ImageEmbedding) -> np.ndarray:
    sims = cosine_similarity(ground.patches, tile.pooled[None, :])
    return sims.reshape(ground.grid).double().numpy()
