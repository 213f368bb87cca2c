"""Encoder-decoder transformer backend with parameter-space utilities.

A small from-scratch seq2seq model (pre-norm transformer, tied input/output
embeddings, sinusoidal positions) sized to train on a CPU in minutes. The
decoder's cross-attention memory is the encoder output, optionally with
extra task-conditioned vectors prepended; prepending keeps the positional
indexing of real source tokens untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path

import torch
from torch import nn

from .vocab import Vocabulary

NEG_INF = -1e9


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_ff: int = 256
    max_source_len: int = 192
    max_target_len: int = 64
    dropout: float = 0.0
    positional: bool = True

    def __post_init__(self) -> None:
        for name in ("d_model", "n_heads", "n_encoder_layers", "n_decoder_layers", "d_ff",
                     "max_source_len", "max_target_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass(frozen=True)
class ParameterSet:
    """Named tensors snapshotted from a module; supports scaled-difference updates."""

    tensors: dict[str, torch.Tensor]

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def clone(self) -> "ParameterSet":
        return ParameterSet({k: v.clone() for k, v in self.tensors.items()})

    def check_compatible(self, other: "ParameterSet") -> None:
        if self.names() != other.names():
            missing = set(self.tensors) ^ set(other.tensors)
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        for k, v in self.tensors.items():
            if v.shape != other.tensors[k].shape:
                raise ValueError(f"shape mismatch for {k}: {tuple(v.shape)} vs {tuple(other.tensors[k].shape)}")


def snapshot_parameters(module: nn.Module) -> ParameterSet:
    return ParameterSet({name: p.detach().clone() for name, p in module.named_parameters()})


def restore_parameters(module: nn.Module, params: ParameterSet) -> None:
    current = {name for name, _ in module.named_parameters()}
    if current != set(params.tensors):
        raise ValueError(f"parameter name mismatch: {sorted(current ^ set(params.tensors))}")
    with torch.no_grad():
        for name, p in module.named_parameters():
            src = params.tensors[name]
            if p.shape != src.shape:
                raise ValueError(f"shape mismatch for {name}: {tuple(p.shape)} vs {tuple(src.shape)}")
            p.copy_(src)


def axpy_parameters(module: nn.Module, scale: float, delta: ParameterSet) -> None:
    """In-place ``p += scale * delta[name]`` over all named parameters."""
    current = {name for name, _ in module.named_parameters()}
    if current != set(delta.tensors):
        raise ValueError(f"parameter name mismatch: {sorted(current ^ set(delta.tensors))}")
    with torch.no_grad():
        for name, p in module.named_parameters():
            d = delta.tensors[name]
            if p.shape != d.shape:
                raise ValueError(f"shape mismatch for {name}: {tuple(p.shape)} vs {tuple(d.shape)}")
            p.add_(d, alpha=scale)


@dataclass
class DecoderTrace:
    """Teacher-forcing byproducts: per-position states and normalized log-probs."""

    target_ids: tuple[int, ...]
    hidden: torch.Tensor      # (T, d_model), position t predicts target_ids[t]
    log_probs: torch.Tensor   # (T, vocab), log-sum-exp 0 per position


def _sinusoid_table(max_len: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
    idx = torch.arange(0, d_model, 2, dtype=torch.float32)
    angle = pos / torch.pow(10000.0, idx / d_model)
    table = torch.zeros(max_len, d_model)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : d_model - d_model // 2])
    return table


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query: torch.Tensor, memory: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """mask: broadcastable to (B, heads, Tq, Tk), True = attend."""
        b, tq, d = query.shape
        tk = memory.shape[1]
        q = self.q_proj(query).view(b, tq, self.n_heads, self.d_head).transpose(1, 2)
        k = self.k_proj(memory).view(b, tk, self.n_heads, self.d_head).transpose(1, 2)
        v = self.v_proj(memory).view(b, tk, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~mask, NEG_INF)
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(b, tq, d)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, d_ff), nn.ReLU(), nn.Dropout(dropout), nn.Linear(d_ff, d_model)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, mask))
        return x + self.dropout(self.ff(self.norm2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, causal_mask, memory_mask):
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, causal_mask))
        x = x + self.dropout(self.cross_attn(self.norm2(x), memory, memory_mask))
        return x + self.dropout(self.ff(self.norm3(x)))


class Seq2SeqModel(nn.Module):
    """Prompt-conditioned generator over a word-level vocabulary."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.embedding = nn.Embedding(len(vocab), config.d_model, padding_idx=vocab.pad_id)
        nn.init.normal_(self.embedding.weight, std=config.d_model ** -0.5)
        with torch.no_grad():
            self.embedding.weight[vocab.pad_id].zero_()
        self.encoder_layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.n_encoder_layers))
        self.encoder_norm = nn.LayerNorm(config.d_model)
        self.decoder_layers = nn.ModuleList(DecoderLayer(config) for _ in range(config.n_decoder_layers))
        self.decoder_norm = nn.LayerNorm(config.d_model)
        max_len = max(config.max_source_len, config.max_target_len)
        self.register_buffer("positions", _sinusoid_table(max_len, config.d_model), persistent=False)
        self.emb_dropout = nn.Dropout(config.dropout)

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.embedding(ids) * math.sqrt(self.config.d_model)
        if self.config.positional:
            x = x + self.positions[: ids.shape[1]].to(x.dtype)
        return self.emb_dropout(x)

    def encode(self, src: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
        """src: (B, S) ids; src_mask: (B, S) bool, True = real token."""
        x = self._embed(src)
        attn_mask = src_mask[:, None, None, :]
        for layer in self.encoder_layers:
            x = layer(x, attn_mask)
        return self.encoder_norm(x)

    def decode(self, tgt_in: torch.Tensor, memory: torch.Tensor, memory_mask: torch.Tensor) -> torch.Tensor:
        """tgt_in: (B, T) decoder input ids; memory: (B, M, d); memory_mask: (B, M)."""
        t = tgt_in.shape[1]
        x = self._embed(tgt_in)
        causal = torch.tril(torch.ones(t, t, dtype=torch.bool, device=tgt_in.device))[None, None]
        mem_mask = memory_mask[:, None, None, :]
        for layer in self.decoder_layers:
            x = layer(x, memory, causal, mem_mask)
        return self.decoder_norm(x)

    def output_logits(self, dec_states: torch.Tensor) -> torch.Tensor:
        return dec_states @ self.embedding.weight.t()

    @staticmethod
    def join_memory(enc_out: torch.Tensor, src_mask: torch.Tensor, extra_memory: torch.Tensor | None):
        """Prepend task memory vectors (B, K, d) to the encoder output."""
        if extra_memory is None or extra_memory.shape[-2] == 0:
            return enc_out, src_mask
        if extra_memory.dim() == 2:
            extra_memory = extra_memory.unsqueeze(0).expand(enc_out.shape[0], -1, -1)
        ones = torch.ones(enc_out.shape[0], extra_memory.shape[1], dtype=torch.bool, device=enc_out.device)
        return torch.cat([extra_memory.to(enc_out.dtype), enc_out], dim=1), torch.cat([ones, src_mask], dim=1)

    def forward(self, src, src_mask, tgt_in, extra_memory=None):
        """Returns (logits, encoder states, decoder states) for a padded batch."""
        enc = self.encode(src, src_mask)
        memory, memory_mask = self.join_memory(enc, src_mask, extra_memory)
        dec = self.decode(tgt_in, memory, memory_mask)
        return self.output_logits(dec), enc, dec

    # -- single-instance operations ------------------------------------

    def device(self) -> torch.device:
        return self.embedding.weight.device

    def _as_memory(self, extra_memory) -> torch.Tensor | None:
        if extra_memory is None:
            return None
        if isinstance(extra_memory, (list, tuple)):
            if not extra_memory:
                return None
            extra_memory = torch.stack([torch.as_tensor(v) for v in extra_memory])
        return extra_memory

    def teacher_forced_nll(self, source_ids, target_ids, extra_memory=None):
        """Mean next-token NLL of the gold target plus its decoder trace.

        ``target_ids`` is the tokenized target text; an end-of-sequence id is
        appended internally, and the decoder input is the bos-shifted gold.
        """
        cfg = self.config
        if len(source_ids) > cfg.max_source_len:
            raise ValueError(f"source length {len(source_ids)} exceeds max {cfg.max_source_len}")
        if len(target_ids) + 1 > cfg.max_target_len:
            raise ValueError(f"target length {len(target_ids) + 1} exceeds max {cfg.max_target_len}")
        device = self.device()
        y = list(target_ids) + [self.vocab.eos_id]
        src = torch.tensor([list(source_ids)], dtype=torch.long, device=device)
        src_mask = torch.ones_like(src, dtype=torch.bool)
        tgt_in = torch.tensor([[self.vocab.bos_id] + y[:-1]], dtype=torch.long, device=device)
        logits, _, dec = self.forward(src, src_mask, tgt_in, self._as_memory(extra_memory))
        log_probs = torch.log_softmax(logits[0], dim=-1)
        gold = torch.tensor(y, dtype=torch.long, device=device)
        loss = -log_probs[torch.arange(len(y), device=device), gold].mean()
        return loss, DecoderTrace(target_ids=tuple(y), hidden=dec[0], log_probs=log_probs)

    @torch.no_grad()
    def generate(self, source_ids, extra_memory=None, max_len: int | None = None) -> list[int]:
        """Greedy decoding; returns generated ids without bos/eos."""
        return self.generate_batch([list(source_ids)], extra_memory=extra_memory, max_len=max_len)[0]

    @torch.no_grad()
    def generate_batch(self, sources: list[list[int]], extra_memory=None, max_len: int | None = None) -> list[list[int]]:
        """Greedy decoding over a batch of sources (padded internally).

        ``extra_memory`` may be (K, d) shared across the batch or (B, K, d).
        """
        cfg = self.config
        limit = cfg.max_target_len if max_len is None else min(max_len, cfg.max_target_len)
        device = self.device()
        b = len(sources)
        s = max(len(s_) for s_ in sources)
        src = torch.full((b, s), self.vocab.pad_id, dtype=torch.long, device=device)
        src_mask = torch.zeros((b, s), dtype=torch.bool, device=device)
        for i, ids in enumerate(sources):
            src[i, : len(ids)] = torch.tensor(ids, dtype=torch.long, device=device)
            src_mask[i, : len(ids)] = True
        enc = self.encode(src, src_mask)
        memory, memory_mask = self.join_memory(enc, src_mask, self._as_memory(extra_memory))

        out = torch.full((b, 1), self.vocab.bos_id, dtype=torch.long, device=device)
        finished = torch.zeros(b, dtype=torch.bool, device=device)
        for _ in range(limit):
            dec = self.decode(out, memory, memory_mask)
            logits = self.output_logits(dec[:, -1])
            nxt = logits.argmax(dim=-1)
            nxt = torch.where(finished, torch.full_like(nxt, self.vocab.pad_id), nxt)
            out = torch.cat([out, nxt[:, None]], dim=1)
            finished |= nxt == self.vocab.eos_id
            if bool(finished.all()):
                break
        results = []
        for i in range(b):
            ids = []
            for t in out[i, 1:].tolist():
                if t in (self.vocab.eos_id, self.vocab.pad_id):
                    break
                ids.append(t)
            results.append(ids)
        return results

    def generate_text(self, source_text: str, extra_memory=None, max_len: int | None = None) -> str:
        ids = self.generate(self.vocab.tokenize(source_text), extra_memory=extra_memory, max_len=max_len)
        return self.vocab.detokenize(ids)

    # -- parameter algebra ----------------------------------------------

    def snapshot(self) -> ParameterSet:
        return snapshot_parameters(self)

    def restore(self, params: ParameterSet) -> None:
        restore_parameters(self, params)

    def axpy(self, scale: float, delta: ParameterSet) -> None:
        axpy_parameters(self, scale, delta)


def build_model(config: ModelConfig, vocab: Vocabulary, seed: int = 0) -> Seq2SeqModel:
    """Deterministically initialized model (seeds torch's generator)."""
    torch.manual_seed(seed)
    return Seq2SeqModel(config, vocab)


CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, model: Seq2SeqModel, extras: dict[str, dict] | None = None) -> None:
    """Versioned named-tensor container: config header, vocabulary, weights.

    ``extras`` maps a reserved namespace (e.g. "match_head", "task_memory")
    to {"config": <dict>, "state": <state_dict>} for auxiliary modules.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "model_config": asdict(model.config),
            "vocab_tokens": list(model.vocab.tokens),
            "model_state": model.state_dict(),
            "extras": extras or {},
        },
        path,
    )


@dataclass
class CheckpointBundle:
    config: ModelConfig
    vocab: Vocabulary
    model_state: dict
    extras: dict[str, dict]

    def build(self) -> Seq2SeqModel:
        model = Seq2SeqModel(self.config, self.vocab)
        model.load_state_dict(self.model_state)
        model.eval()
        return model


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    raw = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = raw.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    return CheckpointBundle(
        config=ModelConfig(**raw["model_config"]),
        vocab=Vocabulary(tuple(raw["vocab_tokens"])),
        model_state=raw["model_state"],
        extras=raw["extras"],
    )
