"""Baseline training loop with validation-F1 early stopping.

The three meta variants reuse :func:`run_training` by supplying their own
per-batch loss hooks and auxiliary head modules; the baseline trainer is the
hook-free case.
"""

from __future__ import annotations

import csv
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch
from torch import nn

from .codec import TripletOrder, TargetStyle
from .data import ZeroShotSplit
from .evaluation import predict_dataset, score
from .model import Seq2SeqModel
from .sampling import SamplerConfig, TrainingInstance, build_epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr_backbone: float = 3e-5
    lr_heads: float = 6e-4
    patience: int = 5
    seed: int = 0
    grad_clip: float | None = 1.0
    optimizer: str = "adam"
    gen_batch_size: int = 64

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1: float
    wall_time: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    selected_epoch: int = -1

    def best(self) -> EpochRecord:
        return self.records[self.selected_epoch]

    def save_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_f1", "wall_time", "selected"])
            for rec in self.records:
                writer.writerow(
                    [rec.epoch, f"{rec.train_loss:.6f}", f"{rec.val_f1:.6f}", f"{rec.wall_time:.3f}",
                     int(rec.epoch == self.selected_epoch)]
                )


@dataclass
class Batch:
    src: torch.Tensor        # (B, S) ids
    src_mask: torch.Tensor   # (B, S) bool
    tgt_in: torch.Tensor     # (B, T) bos-shifted gold ids
    gold: torch.Tensor       # (B, T) gold ids ending in eos
    tgt_mask: torch.Tensor   # (B, T) bool, True = scored position
    instances: list[TrainingInstance]


def collate(instances: list[TrainingInstance], model: Seq2SeqModel) -> Batch:
    vocab, cfg, device = model.vocab, model.config, model.device()
    srcs = [vocab.tokenize(inst.source.text) for inst in instances]
    tgts = [vocab.tokenize(inst.target.text) + [vocab.eos_id] for inst in instances]
    for inst, ids in zip(instances, srcs):
        if len(ids) > cfg.max_source_len:
            raise ValueError(f"sample {inst.sample.id}: source length {len(ids)} exceeds max {cfg.max_source_len}")
    for inst, ids in zip(instances, tgts):
        if len(ids) > cfg.max_target_len:
            raise ValueError(f"sample {inst.sample.id}: target length {len(ids)} exceeds max {cfg.max_target_len}")
    b = len(instances)
    s = max(len(x) for x in srcs)
    t = max(len(x) for x in tgts)
    src = torch.full((b, s), vocab.pad_id, dtype=torch.long)
    src_mask = torch.zeros((b, s), dtype=torch.bool)
    tgt_in = torch.full((b, t), vocab.pad_id, dtype=torch.long)
    gold = torch.full((b, t), vocab.pad_id, dtype=torch.long)
    tgt_mask = torch.zeros((b, t), dtype=torch.bool)
    for i, (src_ids, tgt_ids) in enumerate(zip(srcs, tgts)):
        src[i, : len(src_ids)] = torch.tensor(src_ids, dtype=torch.long)
        src_mask[i, : len(src_ids)] = True
        tgt_in[i, 0] = vocab.bos_id
        tgt_in[i, 1 : len(tgt_ids)] = torch.tensor(tgt_ids[:-1], dtype=torch.long)
        gold[i, : len(tgt_ids)] = torch.tensor(tgt_ids, dtype=torch.long)
        tgt_mask[i, : len(tgt_ids)] = True
    return Batch(src.to(device), src_mask.to(device), tgt_in.to(device), gold.to(device),
                 tgt_mask.to(device), instances)


def batch_nll(model: Seq2SeqModel, batch: Batch, extra_memory: torch.Tensor | None = None):
    """Token-mean NLL over the batch; also returns encoder/decoder states."""
    logits, enc, dec = model(batch.src, batch.src_mask, batch.tgt_in, extra_memory)
    log_probs = torch.log_softmax(logits, dim=-1)
    gold_lp = log_probs.gather(-1, batch.gold.unsqueeze(-1)).squeeze(-1)
    loss = -(gold_lp * batch.tgt_mask).sum() / batch.tgt_mask.sum()
    return loss, enc, dec


def make_optimizer(model: nn.Module, heads: dict[str, nn.Module], cfg: TrainConfig) -> torch.optim.Optimizer:
    """Two parameter groups: backbone at lr_backbone, auxiliary heads at lr_heads."""
    groups = [{"params": list(model.parameters()), "lr": cfg.lr_backbone}]
    head_params = [p for head in heads.values() for p in head.parameters()]
    if head_params:
        groups.append({"params": head_params, "lr": cfg.lr_heads})
    if cfg.optimizer == "adam":
        return torch.optim.Adam(groups)
    return torch.optim.SGD(groups)


def chunk_batches(instances: list[TrainingInstance], batch_size: int) -> list[list[TrainingInstance]]:
    return [instances[i : i + batch_size] for i in range(0, len(instances), batch_size)]


def validation_f1(
    model: Seq2SeqModel,
    split: ZeroShotSplit,
    order: TripletOrder,
    style: TargetStyle,
    cfg: TrainConfig,
    extra_memory: torch.Tensor | None = None,
) -> float:
    """Triplet F1 on the held-out validation samples, prompted with the validation labels."""
    if not split.validation.samples:
        return 0.0
    preds = predict_dataset(
        model,
        split.validation,
        split.validation_labels,
        order,
        style,
        batch_size=cfg.gen_batch_size,
        prompt_seed=cfg.seed,
        extra_memory=extra_memory,
    )
    return score(preds, split.validation).f1


LossHook = Callable[[Batch], torch.Tensor]


def run_training(
    model: Seq2SeqModel,
    split: ZeroShotSplit,
    sampler_cfg: SamplerConfig,
    cfg: TrainConfig,
    order: TripletOrder,
    style: TargetStyle,
    loss_hook: LossHook | None = None,
    heads: dict[str, nn.Module] | None = None,
    val_memory_fn: Callable[[], torch.Tensor] | None = None,
) -> TrainLog:
    """Epoch loop shared by all variants; early-stops on validation F1.

    The best checkpoint (argmax validation F1, earliest on ties) is restored
    into the model and heads before returning.
    """
    heads = heads or {}
    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    sampler_cfg = sampler_cfg.resolved(len(split.unseen_labels))
    optimizer = make_optimizer(model, heads, cfg)
    all_params = list(model.parameters()) + [p for h in heads.values() for p in h.parameters()]

    log = TrainLog()
    best_f1 = -1.0
    best_states: tuple | None = None
    for epoch in range(cfg.epochs):
        start = time.monotonic()
        model.train()
        for head in heads.values():
            head.train()
        instances = build_epoch(split.train, sampler_cfg, order, style, rng, label_pool=split.seen_labels)
        total_loss, total_batches = 0.0, 0
        for step, group in enumerate(chunk_batches(instances, cfg.batch_size)):
            batch = collate(group, model)
            loss = loss_hook(batch) if loss_hook is not None else batch_nll(model, batch)[0]
            if not math.isfinite(loss.item()):
                raise RuntimeError(f"training diverged: non-finite loss at epoch {epoch}, step {step}")
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip is not None:
                nn.utils.clip_grad_norm_(all_params, cfg.grad_clip)
            optimizer.step()
            total_loss += loss.item()
            total_batches += 1

        model.eval()
        for head in heads.values():
            head.eval()
        memory = val_memory_fn() if val_memory_fn is not None else None
        f1 = validation_f1(model, split, order, style, cfg, extra_memory=memory)
        log.records.append(
            EpochRecord(epoch=epoch, train_loss=total_loss / max(total_batches, 1), val_f1=f1,
                        wall_time=time.monotonic() - start)
        )
        if f1 > best_f1:
            best_f1 = f1
            log.selected_epoch = epoch
            best_states = (
                {k: v.detach().clone() for k, v in model.state_dict().items()},
                {name: {k: v.detach().clone() for k, v in h.state_dict().items()} for name, h in heads.items()},
            )
        elif epoch - log.selected_epoch >= cfg.patience:
            break

    if best_states is not None:
        model.load_state_dict(best_states[0])
        for name, head in heads.items():
            head.load_state_dict(best_states[1][name])
    model.eval()
    return log


def train_tgm(
    split: ZeroShotSplit,
    sampler_cfg: SamplerConfig,
    model: Seq2SeqModel,
    cfg: TrainConfig,
    order: TripletOrder = TripletOrder.HTR,
    style: TargetStyle = TargetStyle.PLAIN,
) -> tuple[Seq2SeqModel, TrainLog]:
    """Train the task-prompted generator on plain likelihood."""
    log = run_training(model, split, sampler_cfg, cfg, order, style)
    return model, log
