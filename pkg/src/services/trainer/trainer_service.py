from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from tqdm import tqdm

from src.core.tensor import Tape, Tensor
from src.extensions import SHOW_PROGRESS
from src.models.peft import frozen_parameters
from src.services.eval.eval_service import mean_recall
from src.services.objective_service import TextSource, build_batch, combined_loss, contrastive_it_loss
from src.services.trainer.checkpoint import Checkpoint
from src.services.trainer.optimizer import AdamState, adam_step, cosine_lr
from src.utils.errors import ConfigurationError, NoTrainingError, TrainingDivergedError, XlignException
from src.utils.io_utils import array_digest, fmt, write_csv
from src.utils.random_utils import rng_stream

if TYPE_CHECKING:
    from src.container import Lab

logger = logging.getLogger(__name__)


@dataclass
class TraceRow:
    step: int
    lr: float
    loss: float


@dataclass
class DevRow:
    step: int
    scores: dict[str, float]
    mean: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list[TraceRow] = field(default_factory=list)
    dev: list[DevRow] = field(default_factory=list)
    total_steps: int = 0

    @property
    def losses(self) -> list[float]:
        return [row.loss for row in self.trace]

    def save_trace(self, out_dir: str | Path) -> tuple[Path, int, Path, int]:
        out_dir = Path(out_dir)
        trace_path = out_dir / "trace.csv"
        trace_rows = write_csv(trace_path, ["step", "lr", "loss"], ([r.step, repr(r.lr), repr(r.loss)] for r in self.trace))
        languages = list(self.dev[0].scores) if self.dev else []
        dev_path = out_dir / "dev.csv"
        dev_rows = write_csv(
            dev_path,
            ["step", *languages, "mean"],
            ([r.step, *(fmt(r.scores[lang]) for lang in languages), fmt(r.mean)] for r in self.dev),
        )
        return trace_path, trace_rows, dev_path, dev_rows


def total_steps(n_train: int, batch_size: int, epochs: int) -> int:
    return epochs * math.ceil(n_train / batch_size)


def step_loss(lab: "Lab", image_ids: list[str]) -> Tensor:
    """Combined objective summed over the run's languages on one image mini-batch."""
    run = lab.run
    spec = run.effective_alignment
    mt_inference = run.mt_inference
    dataset = lab.splits.train

    def encode(source: TextSource) -> Tensor:
        return lab.encode(source.tokens, source.lang)

    total = None
    for lang in run.train_languages:
        batch = build_batch(dataset, lab.bank, image_ids, lang)
        loss = combined_loss(batch, spec, encode, mt_inference)
        total = loss if total is None else total + loss

    if run.train.include_mt_views:
        for lang in dataset.languages:
            if lang == dataset.pivot:
                continue
            batch = build_batch(dataset, lab.bank, image_ids, lang)
            total = total + contrastive_it_loss(batch.images, encode(batch.source("mt_from_pivot")), spec.tau)
    return total


def train(lab: "Lab") -> TrainResult:
    """Adam with cosine decay over shuffled epochs, keeping the parameters with the best mean dev Recall@1."""
    run = lab.run
    cfg = run.train
    if cfg.scenario == "zero_shot":
        raise NoTrainingError()

    params = lab.trainable()
    if not params:
        raise ConfigurationError(f"PEFT spec '{run.peft.type}' with unfreeze {sorted(run.peft.unfreeze)} leaves nothing to train")

    frozen = frozen_parameters(lab.encoder, lab.peft)
    frozen_digest = array_digest({name: t.data for name, t in frozen.items()})

    train_ids = lab.splits.train.image_ids
    steps = total_steps(len(train_ids), cfg.batch_size, cfg.epochs)
    if steps < 1:
        raise ConfigurationError("Training would run zero steps")

    languages = run.train_languages
    text_view = "mt_to_pivot" if run.mt_inference else "natural"
    config_hash = run.config_hash()
    metadata = {"requires_mt_inference": run.mt_inference, "peft": run.peft.type, "languages": languages}

    def dev_eval(step: int) -> DevRow:
        mean, scores = mean_recall(lab, "dev", languages, text_view)
        logger.info(f"Dev eval at step {step}: mean R@1 {mean:.2f}")
        return DevRow(step, scores, mean)

    result = TrainResult(Checkpoint.capture(params, config_hash, 0, float("-inf"), **metadata), total_steps=steps)

    def consider(row: DevRow):
        result.dev.append(row)
        if row.mean > result.checkpoint.metric:
            result.checkpoint = Checkpoint.capture(params, config_hash, row.step, row.mean, **metadata)
            if row.step > 0:
                logger.info(f"New best checkpoint at step {row.step} (mean dev R@1 {row.mean:.2f})")

    consider(dev_eval(0))

    rng = rng_stream(run.seed, "train", "shuffle")
    state = AdamState()
    step = 0
    progress = tqdm(total=steps, desc=f"train {run.name}", disable=not SHOW_PROGRESS, leave=False)
    try:
        for _ in range(cfg.epochs):
            order = rng.permutation(len(train_ids))
            for start in range(0, len(order), cfg.batch_size):
                batch_ids = [train_ids[i] for i in order[start : start + cfg.batch_size]]
                lr = cosine_lr(cfg.learning_rate, step, steps)
                for p in params.values():
                    p.zero_grad()

                with Tape() as tape:
                    loss = step_loss(lab, batch_ids)
                    value = loss.item()
                    if not np.isfinite(value):
                        logger.error(f"Training diverged at step {step + 1} (loss={value})")
                        raise TrainingDivergedError(step + 1, value, result.checkpoint)
                    loss.backward()
                tape.clear()

                adam_step(params, state, lr)
                step += 1
                result.trace.append(TraceRow(step, lr, value))
                progress.update(1)

                if step % cfg.eval_every == 0 or step == steps:
                    consider(dev_eval(step))
    finally:
        progress.close()

    if array_digest({name: t.data for name, t in frozen.items()}) != frozen_digest:
        raise XlignException("Freeze contract violated: a frozen parameter changed during training")

    result.checkpoint.restore(params)
    logger.info(
        f"Training finished: {steps} steps, best mean dev R@1 {result.checkpoint.metric:.2f} at step {result.checkpoint.step}"
    )
    return result
