"""First-order meta-optimization: adapt clones on sampled tasks, then move
the shared initialization toward the mean adapted parameters."""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass

import torch

from .codec import TripletOrder, TargetStyle
from .data import ZeroShotSplit
from .model import ParameterSet, Seq2SeqModel
from .sampling import MetaTask, SamplerConfig, sample_meta_batch
from .training import EpochRecord, TrainConfig, TrainLog, batch_nll, collate, validation_f1


@dataclass(frozen=True)
class ReptileConfig:
    n_tasks: int = 4
    inner_steps: int = 4
    inner_lr: float = 0.05
    inner_optimizer: str = "sgd"
    epsilon: float = 0.5
    meta_iterations: int = 200
    k_per_task: int = 16
    eval_interval: int = 20

    def __post_init__(self) -> None:
        if self.n_tasks < 1:
            raise ValueError("n_tasks must be >= 1")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if self.inner_optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown inner optimizer {self.inner_optimizer!r}")


def inner_adapt(model: Seq2SeqModel, task: MetaTask, cfg: ReptileConfig) -> ParameterSet:
    """Run the inner loop on a parameter clone; the model's own parameters
    are restored before returning, so the meta-state is untouched."""
    if not task.instances:
        raise ValueError("meta task has no instances")
    origin = model.snapshot()
    if cfg.inner_optimizer == "sgd":
        optimizer = torch.optim.SGD(model.parameters(), lr=cfg.inner_lr)
    else:
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.inner_lr)
    was_training = model.training
    model.train()
    batch = collate(list(task.instances), model)
    for step in range(cfg.inner_steps):
        loss, _, _ = batch_nll(model, batch)
        if not math.isfinite(loss.item()):
            model.restore(origin)
            raise RuntimeError(f"inner adaptation diverged at step {step} on task {task.task.labels}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    adapted = model.snapshot()
    model.restore(origin)
    model.train(was_training)
    return adapted


def reptile_step(psi: ParameterSet, adapted: list[ParameterSet], epsilon: float) -> ParameterSet:
    """psi + epsilon * mean_i(adapted_i - psi), elementwise."""
    if not adapted:
        raise ValueError("need at least one adapted parameter set")
    for a in adapted:
        psi.check_compatible(a)
    n = len(adapted)
    out = {}
    for name, base in psi.tensors.items():
        delta = torch.zeros_like(base)
        for a in adapted:
            delta += a.tensors[name] - base
        out[name] = base + epsilon * delta / n
    return ParameterSet(out)


def train_tgm_optimization(
    split: ZeroShotSplit,
    sampler_cfg: SamplerConfig,
    model: Seq2SeqModel,
    reptile_cfg: ReptileConfig,
    cfg: TrainConfig,
    order: TripletOrder = TripletOrder.HTR,
    style: TargetStyle = TargetStyle.PLAIN,
) -> tuple[Seq2SeqModel, TrainLog]:
    """Meta-train: sample task batches, adapt clones, average back.

    Validation F1 of the meta-parameters is checked every ``eval_interval``
    iterations; early stopping patience counts those evaluations.
    """
    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    sampler_cfg = sampler_cfg.resolved(len(split.unseen_labels))

    log = TrainLog()
    best_f1 = -1.0
    best_state: ParameterSet | None = None
    window_loss, window_count = 0.0, 0
    start = time.monotonic()
    for iteration in range(reptile_cfg.meta_iterations):
        metas = sample_meta_batch(
            split.train, reptile_cfg.n_tasks, reptile_cfg.k_per_task, sampler_cfg, rng,
            order=order, style=style, label_pool=split.seen_labels,
        )
        psi = model.snapshot()
        adapted = []
        for meta in metas:
            adapted.append(inner_adapt(model, meta, reptile_cfg))
            with torch.no_grad():
                batch = collate(list(meta.instances), model)
                loss, _, _ = batch_nll(model, batch)
            window_loss += loss.item()
            window_count += 1
        model.restore(reptile_step(psi, adapted, reptile_cfg.epsilon))

        is_last = iteration == reptile_cfg.meta_iterations - 1
        if (iteration + 1) % reptile_cfg.eval_interval == 0 or is_last:
            model.eval()
            f1 = validation_f1(model, split, order, style, cfg)
            log.records.append(
                EpochRecord(epoch=iteration, train_loss=window_loss / max(window_count, 1),
                            val_f1=f1, wall_time=time.monotonic() - start)
            )
            window_loss, window_count = 0.0, 0
            start = time.monotonic()
            if f1 > best_f1:
                best_f1 = f1
                log.selected_epoch = len(log.records) - 1
                best_state = model.snapshot()
            elif len(log.records) - 1 - log.selected_epoch >= cfg.patience:
                break

    if best_state is not None:
        model.restore(best_state)
    model.eval()
    return model, log
