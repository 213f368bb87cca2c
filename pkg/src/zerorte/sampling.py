"""Meta-learning task construction and episodic batch assembly."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .codec import SourceText, TargetText, TripletOrder, TargetStyle, build_source, serialize_triplets
from .data import AnnotatedSample, Dataset

_MAX_REDRAWS = 50


@dataclass(frozen=True)
class TaskPrompt:
    """An ordered list of candidate relation labels defining one task."""

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("task prompt must contain at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"task labels must be distinct, got {self.labels}")

    def label_set(self) -> frozenset[str]:
        return frozenset(self.labels)


@dataclass(frozen=True)
class SamplerConfig:
    """Episode construction knobs.

    ``r`` is the candidate count per task prompt; ``None`` means "resolve to
    the split's unseen-label count" and is filled in by the trainers.
    ``t`` is the number of tasks generated per training sample.
    """

    r: int | None = None
    t: int = 3
    ensure_gold: bool = True

    def __post_init__(self) -> None:
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.r is not None and self.r < 1:
            raise ValueError("r must be >= 1")

    def resolved(self, default_r: int) -> "SamplerConfig":
        return self if self.r is not None else SamplerConfig(r=default_r, t=self.t, ensure_gold=self.ensure_gold)


@dataclass(frozen=True)
class TrainingInstance:
    sample: AnnotatedSample
    task: TaskPrompt
    source: SourceText
    target: TargetText


@dataclass(frozen=True)
class MetaTask:
    task: TaskPrompt
    instances: tuple[TrainingInstance, ...]


def sample_tasks_for_sample(
    sample: AnnotatedSample,
    label_pool: set[str] | frozenset[str],
    cfg: SamplerConfig,
    rng: random.Random,
) -> list[TaskPrompt]:
    """Draw ``cfg.t`` task prompts of size ``cfg.r`` for one sample.

    With ensure_gold, every gold relation of the sample is included and the
    remaining slots are distractors drawn uniformly without replacement from
    the pool; the final label order is shuffled. Tasks are redrawn (bounded)
    to keep the t label-sets pairwise distinct when the pool permits.
    """
    if cfg.r is None:
        raise ValueError("SamplerConfig.r must be resolved before sampling")
    pool = sorted(label_pool)
    if len(pool) < cfg.r:
        raise ValueError(f"label pool has {len(pool)} labels, cannot build tasks of size {cfg.r}")
    gold = sorted(sample.relations())
    if cfg.ensure_gold and len(gold) > cfg.r:
        raise ValueError(
            f"sample {sample.id} has {len(gold)} gold relations but r={cfg.r}; "
            "raise r or disable ensure_gold"
        )

    tasks: list[TaskPrompt] = []
    seen_sets: set[frozenset[str]] = set()
    for _ in range(cfg.t):
        chosen = None
        for _attempt in range(_MAX_REDRAWS):
            if cfg.ensure_gold:
                distractor_pool = [l for l in pool if l not in sample.relations()]
                labels = gold + rng.sample(distractor_pool, cfg.r - len(gold))
            else:
                labels = rng.sample(pool, cfg.r)
            rng.shuffle(labels)
            chosen = TaskPrompt(tuple(labels))
            if chosen.label_set() not in seen_sets:
                break
        seen_sets.add(chosen.label_set())
        tasks.append(chosen)
    return tasks


def build_epoch(
    train: Dataset,
    cfg: SamplerConfig,
    order: TripletOrder,
    style: TargetStyle,
    rng: random.Random,
    label_pool: set[str] | frozenset[str] | None = None,
) -> list[TrainingInstance]:
    """One epoch of training instances: t tasks per sample, globally shuffled.

    ``label_pool`` defaults to the training relation set; trainers pass the
    full seen-label pool so held-out validation labels still appear as
    distractors.
    """
    if not train.samples:
        raise ValueError("training dataset is empty")
    pool = train.relation_set if label_pool is None else label_pool
    instances = []
    for sample in train.samples:
        target = serialize_triplets(sample.triplets, order, style)
        for task in sample_tasks_for_sample(sample, pool, cfg, rng):
            source = build_source(task, sample.tokens)
            instances.append(TrainingInstance(sample=sample, task=task, source=source, target=target))
    rng.shuffle(instances)
    return instances


def sample_meta_batch(
    train: Dataset,
    n_tasks: int,
    k_per_task: int,
    cfg: SamplerConfig,
    rng: random.Random,
    order: TripletOrder = TripletOrder.HTR,
    style: TargetStyle = TargetStyle.PLAIN,
    label_pool: set[str] | frozenset[str] | None = None,
) -> list[MetaTask]:
    """Sample ``n_tasks`` tasks, each with ``k_per_task`` compatible instances.

    A sample is compatible with a task when all its gold relations lie in the
    task's labels. Task label-sets are redrawn (bounded) to stay pairwise
    distinct when combinatorially possible.
    """
    if n_tasks < 1 or k_per_task < 1:
        raise ValueError("n_tasks and k_per_task must be positive")
    if cfg.r is None:
        raise ValueError("SamplerConfig.r must be resolved before sampling")
    pool = train.relation_set if label_pool is None else label_pool
    metas: list[MetaTask] = []
    seen_sets: set[frozenset[str]] = set()
    for _ in range(n_tasks):
        task = compatible = None
        for _attempt in range(_MAX_REDRAWS):
            anchor = rng.choice(train.samples)
            candidates = sample_tasks_for_sample(anchor, pool, cfg, rng)
            task = candidates[0]
            compatible = [s for s in train.samples if s.relations() <= task.label_set()]
            if len(compatible) >= k_per_task and task.label_set() not in seen_sets:
                break
        if len(compatible) < k_per_task:
            raise ValueError(
                f"task {task.labels} has only {len(compatible)} compatible samples, need {k_per_task}"
            )
        seen_sets.add(task.label_set())
        chosen = rng.sample(compatible, k_per_task)
        instances = tuple(
            TrainingInstance(
                sample=s,
                task=task,
                source=build_source(task, s.tokens),
                target=serialize_triplets(s.triplets, order, style),
            )
            for s in chosen
        )
        metas.append(MetaTask(task=task, instances=instances))
    return metas
