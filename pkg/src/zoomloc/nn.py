"""Differentiable building blocks shared by the encoder and the zoom policy.

Tensors are plain torch tensors; autograd supplies the backward pass and
:func:`grad_check` verifies it against central differences in float64.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidConfig, NonFinite, OddHeadDim, ShapeMismatch, TargetOutOfRange


def check_finite(t: torch.Tensor, where: str = "tensor") -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NonFinite(f"non-finite values in {where}")
    return t


# ---------------------------------------------------------------------------
# functional ops


def rmsnorm(x: torch.Tensor, gain: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """``gain * x / sqrt(mean(x^2) + eps)`` over the last axis."""
    if x.shape[-1] == 0:
        raise ShapeMismatch("rmsnorm over an empty axis")
    ms = x.pow(2).mean(dim=-1, keepdim=True)
    y = x * torch.rsqrt(ms + eps) if eps > 0 else x / ms.sqrt()
    return check_finite(y * gain, "rmsnorm output")


def rope_angles(positions: torch.Tensor, head_dim: int, base: float = 10000.0, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    if head_dim % 2:
        raise OddHeadDim(f"head_dim {head_dim} is odd")
    inv = base ** (-torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim)
    ang = positions.to(torch.float64)[..., None] * inv
    return ang.cos().to(dtype), ang.sin().to(dtype)


def rope_apply(x: torch.Tensor, positions: torch.Tensor, base: float = 10000.0) -> torch.Tensor:
    """Rotate channel pairs ``(2i, 2i+1)`` at position ``m`` by ``m * base^(-2i/d)``.

    ``x`` is ``(..., T, head_dim)``; ``positions`` is ``(T,)``.
    """
    d = x.shape[-1]
    cos, sin = rope_angles(positions, d, base, x.dtype)
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.stack((x1 * cos - x2 * sin, x1 * sin + x2 * cos), dim=-1)
    return out.flatten(-2)


def causal_mask(t_q: int, t_k: int | None = None, dtype=torch.float32) -> torch.Tensor:
    """Additive mask letting query ``i`` see keys ``j <= i + (t_k - t_q)``."""
    t_k = t_q if t_k is None else t_k
    i = torch.arange(t_q)[:, None]
    j = torch.arange(t_k)[None, :]
    m = torch.zeros(t_q, t_k, dtype=dtype)
    return m.masked_fill(j > i + (t_k - t_q), float("-inf"))


def causal_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, mask: torch.Tensor | None = None,
                     return_weights: bool = False):
    """Scaled dot-product attention; ``mask`` is additive with ``-inf`` at hidden positions.

    Shapes ``(..., T_q, D)``, ``(..., T_k, D)``, ``(..., T_k, D_v)``. ``mask=None``
    means a standard lower-triangular causal mask.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[:-2] != k.shape[:-2]:
        raise ShapeMismatch(f"q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)}")
    if mask is None:
        mask = causal_mask(q.shape[-2], k.shape[-2], q.dtype)
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1]) + mask.to(q.dtype)
    w = torch.softmax(scores, dim=-1)
    out = w @ v
    return (out, w) if return_weights else out


def softmax_cross_entropy(logits: torch.Tensor, target: torch.Tensor | int) -> torch.Tensor:
    """Per-row ``-log softmax(logits)[target]``; reduces over nothing."""
    target = torch.as_tensor(target, dtype=torch.long)
    vocab = logits.shape[-1]
    if target.numel() and (int(target.min()) < 0 or int(target.max()) >= vocab):
        raise TargetOutOfRange(f"target outside [0, {vocab})")
    logp = torch.log_softmax(logits, dim=-1)
    return -logp.gather(-1, target.unsqueeze(-1)).squeeze(-1)


def cross_entropy_grad(logits: torch.Tensor, target: int) -> torch.Tensor:
    """Closed-form gradient of :func:`softmax_cross_entropy` for one row."""
    g = torch.softmax(logits, dim=-1).clone()
    g[..., target] -= 1
    return g


# ---------------------------------------------------------------------------
# optimization


def clip_global_norm(grads: Sequence[torch.Tensor | None], max_norm: float = 1.0) -> tuple[list, float]:
    """Scale every gradient by ``max_norm / g`` when the global L2 norm ``g`` exceeds ``max_norm``."""
    present = [g for g in grads if g is not None]
    if not present:
        return list(grads), 0.0
    total = math.sqrt(sum(float(g.double().pow(2).sum()) for g in present))
    if not math.isfinite(total):
        raise NonFinite("non-finite gradient norm")
    if total <= max_norm:
        return list(grads), total
    scale = max_norm / total
    return [None if g is None else g * scale for g in grads], total


@dataclass
class OptimizerState:
    lr: float = 3e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)

    def hyper(self) -> dict:
        return {"lr": self.lr, "betas": list(self.betas), "eps": self.eps,
                "weight_decay": self.weight_decay, "clip_norm": self.clip_norm, "step": self.step}


@torch.no_grad()
def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor | None], state: OptimizerState) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Parameters whose gradient is ``None`` are left bit-untouched (frozen).
    """
    state.step += 1
    b1, b2 = state.betas
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"grad for {name} has shape {tuple(g.shape)}, param {tuple(p.shape)}")
        check_finite(g, f"gradient of {name}")
        m = state.exp_avg.get(name)
        if m is None:
            m = state.exp_avg[name] = torch.zeros_like(p)
            state.exp_avg_sq[name] = torch.zeros_like(p)
        v = state.exp_avg_sq[name]
        if state.weight_decay:
            p.mul_(1 - state.lr * state.weight_decay)
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        denom = (v / bc2).sqrt_().add_(state.eps)
        p.addcdiv_(m, denom, value=-state.lr / bc1)


# ---------------------------------------------------------------------------
# verification


def grad_check(fn: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor], h: float = 1e-5,
               floor: float = 1e-8) -> float:
    """Max relative error between autograd and central differences.

    ``fn`` maps the float64 ``inputs`` to a scalar. The per-coordinate error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    xs = [x.detach().to(torch.float64).clone().requires_grad_(True) for x in inputs]
    out = fn(*xs)
    if out.numel() != 1:
        raise ShapeMismatch("grad_check needs a scalar-valued function")
    analytic = torch.autograd.grad(out, xs, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for x, a in zip(xs, analytic):
            a = torch.zeros_like(x) if a is None else a
            flat = x.view(-1)
            af = a.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = float(fn(*xs))
                flat[i] = orig - h
                fm = float(fn(*xs))
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                ai = float(af[i])
                err = abs(ai - num) / max(abs(ai), abs(num), floor)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# modules


@dataclass(frozen=True)
class DecoderConfig:
    hidden_dim: int = 128
    layers: int = 3
    heads: int = 4
    action_vocab: int = 16
    max_seq_len: int = 64
    rope_base: float = 10000.0
    rmsnorm_eps: float = 1e-6
    ffn_mult: int = 4
    attn_bias: bool = False

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise InvalidConfig(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if (self.hidden_dim // self.heads) % 2:
            raise OddHeadDim("RoPE needs an even head_dim")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        return rmsnorm(x, self.weight, self.eps)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int, bias: bool = False, rope_base: float | None = 10000.0):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.rope_base = rope_base
        self.qkv = nn.Linear(dim, 3 * dim, bias=bias)
        self.proj = nn.Linear(dim, dim, bias=bias)

    def forward(self, x, positions=None, causal: bool = True, cache: dict | None = None):
        B, T, D = x.shape
        q, k, v = self.qkv(x).view(B, T, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        if self.rope_base is not None:
            if positions is None:
                positions = torch.arange(T)
            q = rope_apply(q, positions, self.rope_base)
            k = rope_apply(k, positions, self.rope_base)
        if cache is not None:
            if "k" in cache:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        if causal:
            mask = causal_mask(T, k.shape[2], x.dtype)
        else:
            mask = torch.zeros(T, k.shape[2], dtype=x.dtype)
        out = causal_attention(q, k, v, mask)
        return self.proj(out.transpose(1, 2).reshape(B, T, D))


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 4, bias: bool = True):
        super().__init__()
        self.up = nn.Linear(dim, mult * dim, bias=bias)
        self.down = nn.Linear(mult * dim, dim, bias=bias)

    def forward(self, x):
        return self.down(F.gelu(self.up(x)))


class Block(nn.Module):
    """Pre-norm residual block: ``x + attn(norm(x))`` then ``x + ffn(norm(x))``."""

    def __init__(self, dim: int, heads: int, ffn_mult: int = 4, eps: float = 1e-6, bias: bool = False,
                 rope_base: float | None = 10000.0, causal: bool = True):
        super().__init__()
        self.causal = causal
        self.norm1 = RMSNorm(dim, eps)
        self.attn = Attention(dim, heads, bias=bias, rope_base=rope_base)
        self.norm2 = RMSNorm(dim, eps)
        self.ffn = FeedForward(dim, ffn_mult)

    def forward(self, x, positions=None, cache=None):
        x = x + self.attn(self.norm1(x), positions, causal=self.causal, cache=cache)
        return x + self.ffn(self.norm2(x))


class CausalDecoder(nn.Module):
    """Stack of causal pre-norm blocks with 1-D RoPE and a final RMSNorm."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(
            Block(cfg.hidden_dim, cfg.heads, cfg.ffn_mult, cfg.rmsnorm_eps, cfg.attn_bias, cfg.rope_base, causal=True)
            for _ in range(cfg.layers)
        )
        self.norm = RMSNorm(cfg.hidden_dim, cfg.rmsnorm_eps)

    def forward(self, x, positions=None, caches: list | None = None):
        if positions is None:
            positions = torch.arange(x.shape[1])
        if int(positions.max()) >= self.cfg.max_seq_len:
            raise ShapeMismatch(f"sequence position {int(positions.max())} beyond max_seq_len {self.cfg.max_seq_len}")
        for i, blk in enumerate(self.blocks):
            x = blk(x, positions, None if caches is None else caches[i])
        return self.norm(x)


def named_params(module: nn.Module) -> dict[str, torch.Tensor]:
    return dict(module.named_parameters())


def zero_(module: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module
