"""Dual-branch decoder-only transformer over quantized 8-channel EMG.

The self branch reads channel-0 tokens, the context branch reads all eight
channels through separate token embeddings summed with a shared positional
embedding. Both stacks are concatenated per position and a small fully
connected head maps them to logits over the next channel-0 value.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .container import read_container, write_container
from .errors import CheckpointError, ContextOverflow, InvalidArgument
from .signal_core import N_CHANNELS, Intent

CHECKPOINT_KIND = "chatemg-model"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 1001
    n_embed: int = 256
    n_blocks_per_branch: int = 12
    n_heads: int = 8
    context_len: int = 256
    fc_layers: int = 3
    dropout: float = 0.1

    def __post_init__(self):
        if self.n_embed % self.n_heads:
            raise InvalidArgument("n_embed must be divisible by n_heads")
        if self.context_len < 2 or self.vocab_size < 2:
            raise InvalidArgument("context_len and vocab_size must be >= 2")
        if self.fc_layers < 1 or self.n_blocks_per_branch < 1:
            raise InvalidArgument("fc_layers and n_blocks_per_branch must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument("dropout must be in [0, 1)")


class CausalSelfAttention(nn.Module):
    def __init__(self, n_embed: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(n_embed, 3 * n_embed)
        self.proj = nn.Linear(n_embed, n_embed)
        # dropout on residual paths only; attention weights stay undropped so the fused kernel applies
        self.resid_drop = nn.Dropout(dropout)

    def forward(self, x, cache=None, pos: int = 0):
        """``cache`` is an optional dict of preallocated (B, heads, T, d) 'k'/'v' buffers."""
        B, L, C = x.shape
        h = self.n_heads
        q, k, v = self.qkv(x).split(C, dim=2)
        q = q.view(B, L, h, C // h).transpose(1, 2)
        k = k.view(B, L, h, C // h).transpose(1, 2)
        v = v.view(B, L, h, C // h).transpose(1, 2)
        if cache is not None:
            cache["k"][:, :, pos:pos + L] = k
            cache["v"][:, :, pos:pos + L] = v
            k = cache["k"][:, :, :pos + L]
            v = cache["v"][:, :, :pos + L]
        if L > 1 and pos > 0:
            # query i (absolute pos+i) may see keys 0..pos+i
            mask = torch.ones(L, pos + L, dtype=torch.bool, device=x.device).tril(diagonal=pos)
            y = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        else:
            y = F.scaled_dot_product_attention(q, k, v, is_causal=L > 1)
        y = y.transpose(1, 2).contiguous().view(B, L, C)
        return self.resid_drop(self.proj(y))


class Block(nn.Module):
    """Pre-LN residual block: attention then a 4x feed-forward."""

    def __init__(self, n_embed: int, n_heads: int, dropout: float):
        super().__init__()
        self.ln1 = nn.LayerNorm(n_embed)
        self.attn = CausalSelfAttention(n_embed, n_heads, dropout)
        self.ln2 = nn.LayerNorm(n_embed)
        self.mlp = nn.Sequential(
            nn.Linear(n_embed, 4 * n_embed),
            nn.GELU(),
            nn.Linear(4 * n_embed, n_embed),
            nn.Dropout(dropout),
        )

    def forward(self, x, cache=None, pos: int = 0):
        x = x + self.attn(self.ln1(x), cache, pos)
        return x + self.mlp(self.ln2(x))


class Branch(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            Block(cfg.n_embed, cfg.n_heads, cfg.dropout) for _ in range(cfg.n_blocks_per_branch))
        self.ln_f = nn.LayerNorm(cfg.n_embed)

    def forward(self, x, caches: Optional[list] = None, pos: int = 0):
        for i, block in enumerate(self.blocks):
            x = block(x, None if caches is None else caches[i], pos)
        return self.ln_f(x)


class ChatEMG(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        E, V, T = config.n_embed, config.vocab_size, config.context_len
        self.self_tok = nn.Embedding(V, E)
        self.self_pos = nn.Embedding(T, E)
        self.ctx_tok = nn.ModuleList(nn.Embedding(V, E) for _ in range(N_CHANNELS))
        self.ctx_pos = nn.Embedding(T, E)
        self.drop = nn.Dropout(config.dropout)
        self.self_branch = Branch(config)
        self.ctx_branch = Branch(config)
        layers: list[nn.Module] = []
        for i in range(config.fc_layers):
            out = V if i == config.fc_layers - 1 else 2 * E
            layers.append(nn.Linear(2 * E, out))
            if i < config.fc_layers - 1:
                layers.append(nn.GELU())
        self.head = nn.Sequential(*layers)
        # ablation switch: when False the context branch contributes zeros
        self.use_context = True

    def _embed(self, tokens: torch.Tensor, start: int):
        L = tokens.shape[1]
        pos = torch.arange(start, start + L, device=tokens.device)
        x_self = self.self_tok(tokens[..., 0]) + self.self_pos(pos)
        x_ctx = self.ctx_pos(pos)
        for c in range(N_CHANNELS):
            x_ctx = x_ctx + self.ctx_tok[c](tokens[..., c])
        return self.drop(x_self), self.drop(x_ctx)

    def _check(self, tokens: torch.Tensor, start: int = 0) -> None:
        if tokens.ndim != 3 or tokens.shape[-1] != N_CHANNELS:
            raise InvalidArgument(f"expected (B, L, {N_CHANNELS}) tokens, got {tuple(tokens.shape)}")
        if tokens.shape[1] < 1:
            raise InvalidArgument("sequence must contain at least one frame")
        if start + tokens.shape[1] > self.config.context_len:
            raise ContextOverflow(
                f"sequence length {start + tokens.shape[1]} exceeds context {self.config.context_len}")
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise InvalidArgument("token outside the vocabulary")

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, L, 8) integer tokens -> (B, L, vocab) logits for the next channel-0 value."""
        self._check(tokens)
        return self.head(self._features(tokens, None, 0))

    def _features(self, tokens, cache, pos):
        x_self, x_ctx = self._embed(tokens, pos)
        h_self = self.self_branch(x_self, None if cache is None else cache["self"], pos)
        h_ctx = self.ctx_branch(x_ctx, None if cache is None else cache["ctx"], pos)
        if not self.use_context:
            h_ctx = torch.zeros_like(h_ctx)
        return torch.cat([h_self, h_ctx], dim=-1)

    def new_cache(self, batch: int) -> dict:
        cfg = self.config
        dtype = self.self_pos.weight.dtype
        shape = (batch, cfg.n_heads, cfg.context_len, cfg.n_embed // cfg.n_heads)

        def buffers():
            return [{"k": torch.empty(shape, dtype=dtype), "v": torch.empty(shape, dtype=dtype)}
                    for _ in range(cfg.n_blocks_per_branch)]
        return {"self": buffers(), "ctx": buffers(), "pos": 0}

    @torch.no_grad()
    def prefill(self, tokens: torch.Tensor):
        """Run a prefix; returns last-position logits and a cache for :meth:`step`."""
        self._check(tokens)
        cache = self.new_cache(tokens.shape[0])
        h = self._features(tokens, cache, 0)
        cache["pos"] = tokens.shape[1]
        return self.head(h[:, -1]), cache

    @torch.no_grad()
    def step(self, frame: torch.Tensor, cache: dict):
        """Append one (B, 8) frame to the cached prefix in place; returns (B, vocab) logits."""
        tokens = frame[:, None, :]
        pos = cache["pos"]
        self._check(tokens, pos)
        h = self._features(tokens, cache, pos)
        cache["pos"] = pos + 1
        return self.head(h[:, -1])


def init_params(config: ModelConfig, rng_seed: int = 0, dtype=torch.float32) -> ChatEMG:
    """Fresh model: N(0, 0.02) weights and embeddings, zero biases, unit LayerNorm."""
    model = ChatEMG(config)
    gen = torch.Generator().manual_seed(int(rng_seed))
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
            elif isinstance(module, (nn.Linear, nn.Embedding)):
                module.weight.copy_(torch.randn(module.weight.shape, generator=gen) * 0.02)
                if getattr(module, "bias", None) is not None:
                    module.bias.zero_()
    return model.to(dtype)


def loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean next-token cross-entropy over all positions (and batch rows)."""
    if logits.shape[:-1] != targets.shape:
        raise InvalidArgument(
            f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}")
    V = logits.shape[-1]
    if targets.numel() and (targets.min() < 0 or targets.max() >= V):
        raise InvalidArgument("target outside the vocabulary")
    return F.cross_entropy(logits.reshape(-1, V), targets.reshape(-1).long())


def as_tokens(x) -> torch.Tensor:
    """Integer array (L, 8) or (B, L, 8) -> long tensor with a batch axis."""
    t = torch.as_tensor(np.asarray(x), dtype=torch.long)
    return t[None] if t.ndim == 2 else t


def save_checkpoint(path: Union[str, Path], model: ChatEMG, intent: Intent, extra: Optional[dict] = None) -> None:
    header = {"kind": CHECKPOINT_KIND, "config": asdict(model.config),
              "intent": Intent.parse(intent).label, "extra": extra or {}}
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    write_container(path, header, tensors, dtype="<f4")


def checkpoint_header(path: Union[str, Path]) -> dict:
    """Header of a model checkpoint (config, intent, extra) without building the model."""
    header, _ = read_container(path)
    if header.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: not a model checkpoint (kind={header.get('kind')!r})")
    return header


def load_checkpoint(path: Union[str, Path]) -> Tuple[ChatEMG, Intent]:
    header, tensors = read_container(path)
    if header.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: not a model checkpoint (kind={header.get('kind')!r})")
    model = ChatEMG(ModelConfig(**header["config"]))
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    missing = set(model.state_dict()) ^ set(state)
    if missing:
        raise CheckpointError(f"{path}: parameter names mismatch: {sorted(missing)[:5]}")
    model.load_state_dict(state)
    model.eval()
    return model, Intent.parse(header["intent"])
