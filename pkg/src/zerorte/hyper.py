"""Task-conditioned memory generation for the decoder (hypernetwork variant).

A task prompt is encoded with the shared encoder, mean-pooled, and mapped by
a two-layer perceptron to k memory vectors that are prepended to the
encoder output as extra cross-attention keys/values.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .codec import SOURCE_RELATION_PREFIX, TripletOrder, TargetStyle
from .data import ZeroShotSplit
from .evaluation import test_task_prompt
from .model import Seq2SeqModel
from .sampling import SamplerConfig, TaskPrompt
from .training import Batch, TrainConfig, TrainLog, batch_nll, run_training


@dataclass(frozen=True)
class HyperConfig:
    k: int = 4
    hidden: int = 256

    def __post_init__(self) -> None:
        if self.k < 1 or self.hidden < 1:
            raise ValueError("k and hidden must be positive")


class TaskMemoryGenerator(nn.Module):
    """Two-layer perceptron from a task vector to k memory vectors."""

    def __init__(self, d_model: int, cfg: HyperConfig = HyperConfig()):
        super().__init__()
        self.cfg = cfg
        self.d_model = d_model
        self.net = nn.Sequential(nn.Linear(d_model, cfg.hidden), nn.ReLU(), nn.Linear(cfg.hidden, cfg.k * d_model))

    def forward(self, task_vector: torch.Tensor) -> torch.Tensor:
        """(..., d_model) -> (..., k, d_model)."""
        out = self.net(task_vector)
        return out.view(*task_vector.shape[:-1], self.cfg.k, self.d_model)


def task_prompt_text(task: TaskPrompt) -> str:
    return f"{SOURCE_RELATION_PREFIX} {', '.join(task.labels)}."


def encode_tasks(model: Seq2SeqModel, tasks: list[TaskPrompt]) -> torch.Tensor:
    """Mean-pooled encoder states of each prompt-only source, batched: (n, d)."""
    vocab = model.vocab
    ids = [vocab.tokenize(task_prompt_text(task)) for task in tasks]
    device = model.device()
    s = max(len(x) for x in ids)
    src = torch.full((len(ids), s), vocab.pad_id, dtype=torch.long, device=device)
    mask = torch.zeros((len(ids), s), dtype=torch.bool, device=device)
    for i, row in enumerate(ids):
        src[i, : len(row)] = torch.tensor(row, dtype=torch.long, device=device)
        mask[i, : len(row)] = True
    states = model.encode(src, mask)
    weights = mask.to(states.dtype).unsqueeze(-1)
    return (states * weights).sum(dim=1) / weights.sum(dim=1)


def encode_task(task: TaskPrompt, model: Seq2SeqModel) -> torch.Tensor:
    """Task vector of one prompt: (d_model,)."""
    return encode_tasks(model, [task])[0]


def generate_task_memory(generator: TaskMemoryGenerator, task_vector: torch.Tensor) -> torch.Tensor:
    """(d_model,) -> (k, d_model) memory vectors."""
    return generator(task_vector)


def task_memory_for(model: Seq2SeqModel, generator: TaskMemoryGenerator, task: TaskPrompt) -> torch.Tensor:
    return generate_task_memory(generator, encode_task(task, model))


def hyper_batch_loss(model: Seq2SeqModel, generator: TaskMemoryGenerator, batch: Batch) -> torch.Tensor:
    """Generation NLL with per-instance task memory injected into the decoder."""
    distinct: list[TaskPrompt] = []
    index: dict[tuple[str, ...], int] = {}
    for inst in batch.instances:
        if inst.task.labels not in index:
            index[inst.task.labels] = len(distinct)
            distinct.append(inst.task)
    vectors = encode_tasks(model, distinct)
    memories = generator(vectors)
    rows = torch.stack([memories[index[inst.task.labels]] for inst in batch.instances])
    loss, _, _ = batch_nll(model, batch, extra_memory=rows)
    return loss


def train_tgm_model(
    split: ZeroShotSplit,
    sampler_cfg: SamplerConfig,
    model: Seq2SeqModel,
    generator: TaskMemoryGenerator,
    cfg: TrainConfig,
    order: TripletOrder = TripletOrder.HTR,
    style: TargetStyle = TargetStyle.PLAIN,
) -> tuple[Seq2SeqModel, TaskMemoryGenerator, TrainLog]:
    """Joint training of the generator and backbone; validation generation
    uses the validation task's own memory."""

    def val_memory() -> torch.Tensor:
        task = test_task_prompt(split.validation_labels, cfg.seed)
        with torch.no_grad():
            return task_memory_for(model, generator, task)

    log = run_training(
        model, split, sampler_cfg, cfg, order, style,
        loss_hook=lambda batch: hyper_batch_loss(model, generator, batch),
        heads={"task_memory": generator},
        val_memory_fn=val_memory,
    )
    return model, generator, log
