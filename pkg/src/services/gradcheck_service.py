"""Finite-difference audit of the combined objective over every alignment combo and trainable PEFT variant."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Sequence

from tqdm import tqdm

from src.container import build_lab
from src.core.gradcheck import grad_check
from src.extensions import PIVOT, SHOW_PROGRESS
from src.models.peft import perturb
from src.schemas.run_config_schemas import ALIGNMENT_COMBOS, RunConfig
from src.services.objective_service import TextSource, build_batch, combined_loss
from src.utils.io_utils import write_csv
from src.utils.mixins import SerializationMixin
from src.utils.random_utils import rng_stream

logger = logging.getLogger(__name__)

GRADCHECK_VARIANTS: dict[str, dict] = {
    "adapter": {"type": "adapter"},
    "compacter": {"type": "compacter"},
    "lora": {"type": "lora"},
    "soft_prompt": {"type": "soft_prompt", "n_tokens": 2, "init": "random"},
}

TINY_ENCODER = {"vocab_size": 32, "d_model": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16, "max_len": 16, "d_proj": 8}
TINY_CORPUS = {"languages": [PIVOT, "de"], "n_items": 12, "seq_len": 4, "latent_dim": 8, "vocab_size": 32}
BATCH_SIZE = 4


def tiny_run(combo: str, variant: str, seed: int, lambda_: float = 0.5, tau: float = 0.1) -> RunConfig:
    return RunConfig.model_validate({
        "name": f"gradcheck-{combo}-{variant}",
        "seed": seed,
        "encoder": TINY_ENCODER,
        "corpus": TINY_CORPUS,
        "split": {"train": 1 / 3, "dev": 1 / 3, "test": 1 / 3},
        "peft": GRADCHECK_VARIANTS[variant],
        "alignment": {**ALIGNMENT_COMBOS[combo], "lambda": lambda_, "tau": tau},
    })


@dataclass
class GradCheckRow(SerializationMixin):
    combo: str
    variant: str
    seed: int
    max_error: float
    worst: str | None
    passed: bool


@dataclass
class GradCheckMatrix(SerializationMixin):
    rows: list[GradCheckRow] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def cells(self) -> dict[tuple[str, str], bool]:
        """Pass/fail per (combo, variant) over all seeds."""
        cells: dict[tuple[str, str], bool] = {}
        for row in self.rows:
            key = (row.combo, row.variant)
            cells[key] = cells.get(key, True) and row.passed
        return cells

    def save(self, out_dir: str | Path) -> tuple[Path, int]:
        path = Path(out_dir) / "gradcheck.csv"
        count = write_csv(
            path,
            ["combo", "variant", "seed", "max_error", "worst", "passed"],
            ([r.combo, r.variant, r.seed, f"{r.max_error:.3e}", r.worst or "", str(r.passed).lower()] for r in self.rows),
        )
        return path, count


def check_cell(
    combo: str,
    variant: str,
    seed: int,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_checks_per_param: int | None = 12,
) -> GradCheckRow:
    run = tiny_run(combo, variant, seed)
    lab = build_lab(run)
    perturb(lab.peft, seed)

    train = lab.splits.train
    batch = build_batch(train, lab.bank, train.image_ids[:BATCH_SIZE], "de")
    spec = run.effective_alignment

    def encode(source: TextSource):
        return lab.encode(source.tokens, source.lang)

    def loss():
        return combined_loss(batch, spec, encode, run.mt_inference)

    report = grad_check(loss, lab.trainable(), eps, tol, max_checks_per_param, rng_stream(seed, "gradcheck", combo, variant))
    if not report.passed:
        logger.warning(f"Gradient check {combo}/{variant} seed {seed} failed on '{report.worst}' ({report.max_error:.2e})")
    return GradCheckRow(combo, variant, seed, report.max_error, report.worst, report.passed)


def run_gradcheck(
    seeds: Sequence[int] = (0, 1, 2),
    combos: Sequence[str] = tuple(ALIGNMENT_COMBOS),
    variants: Sequence[str] = tuple(GRADCHECK_VARIANTS),
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_checks_per_param: int | None = 12,
) -> GradCheckMatrix:
    matrix = GradCheckMatrix(tol=tol)
    cells = list(product(combos, variants, seeds))
    for combo, variant, seed in tqdm(cells, desc="gradcheck", disable=not SHOW_PROGRESS, leave=False):
        matrix.rows.append(check_cell(combo, variant, seed, eps, tol, max_checks_per_param))
    passed = sum(matrix.cells().values())
    logger.info(f"Gradient checks: {passed}/{len(matrix.cells())} combo/variant cells pass at tol {tol}")
    return matrix
