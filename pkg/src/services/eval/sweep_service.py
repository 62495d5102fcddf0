from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Callable, Optional

from tqdm import tqdm

from src.extensions import SHOW_PROGRESS
from src.schemas.run_config_schemas import RunConfig, SweepGrid
from src.utils.errors import ErrorResponse
from src.utils.io_utils import fmt, write_csv, write_json
from src.utils.mixins import SerializationMixin

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["language", "lr", "lambda", "dev_r1", "test_r1", "selected"]


@dataclass
class SweepCell(SerializationMixin):
    lr: float
    lambda_: float
    languages: Optional[list[str]] = None
    dev: dict[str, float] = field(default_factory=dict)
    test: dict[str, float] = field(default_factory=dict)
    status: str = "ok"
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.status != "ok"


CellRunner = Callable[[dict, float, float, Optional[list[str]]], SweepCell]


def run_sweep_cell(run_data: dict, lr: float, lambda_: float, languages: Optional[list[str]]) -> SweepCell:
    """Train one grid cell from scratch and score it on dev and test."""
    from src.container import build_lab
    from src.services.eval.eval_service import evaluate
    from src.services.trainer.trainer_service import train

    overrides: dict[str, Any] = {"train.learning_rate": lr}
    if run_data.get("alignment") is not None:
        overrides["alignment.lambda"] = lambda_
    if languages is not None:
        overrides["train.languages"] = languages
    run = RunConfig.model_validate(run_data).with_overrides(**overrides)

    lab = build_lab(run)
    train(lab)
    eval_languages = languages or run.eval_languages
    dev = evaluate(lab, split="dev", languages=eval_languages, k=1)
    test = evaluate(lab, split="test", languages=eval_languages, k=1)
    return SweepCell(lr, lambda_, languages, dev.scores, test.scores)


@dataclass
class SweepResult(SerializationMixin):
    cells: list[SweepCell]
    best: dict[str, SweepCell]
    languages: list[str]

    def rows(self) -> list[list[Any]]:
        rows = []
        for cell in self.cells:
            for lang in cell.languages or self.languages:
                selected = self.best.get(lang) is cell
                if cell.failed:
                    rows.append([lang, repr(cell.lr), repr(cell.lambda_), "", "", "false"])
                    continue
                if lang not in cell.dev:
                    continue
                rows.append([
                    lang, repr(cell.lr), repr(cell.lambda_),
                    fmt(cell.dev[lang]), fmt(cell.test.get(lang, float("nan"))),
                    "true" if selected else "false",
                ])
        return rows

    def best_config(self) -> dict[str, dict[str, float]]:
        return {
            lang: {"lr": cell.lr, "lambda": cell.lambda_, "dev_r1": cell.dev[lang], "test_r1": cell.test.get(lang)}
            for lang, cell in sorted(self.best.items())
        }

    def save(self, out_dir: str | Path) -> tuple[Path, int, Path]:
        out_dir = Path(out_dir)
        csv_path = out_dir / "sweep.csv"
        count = write_csv(csv_path, SWEEP_COLUMNS, self.rows())
        json_path = write_json(out_dir / "best.json", self.best_config())
        return csv_path, count, json_path


def select_best(cells: list[SweepCell], languages: list[str]) -> dict[str, SweepCell]:
    """Per-language argmax of dev Recall@1; ties go to the smaller lambda, then the smaller learning rate."""
    best = {}
    for lang in languages:
        candidates = [c for c in cells if not c.failed and lang in c.dev]
        if candidates:
            best[lang] = min(candidates, key=lambda c: (-c.dev[lang], c.lambda_, c.lr))
    return best


def sweep(
    run: RunConfig,
    grid: SweepGrid | None = None,
    jobs: int = 1,
    runner: CellRunner = run_sweep_cell,
) -> SweepResult:
    grid = grid or run.sweep
    lrs = grid.lr_axis(run.peft)
    lambdas = list(grid.lambdas) if run.alignment is not None else [0.0]
    eval_languages = run.eval_languages
    groups: list[Optional[list[str]]] = [None]
    if grid.per_language:
        groups = [[lang] for lang in run.train_languages]

    jobs_list = [(langs, lam, lr) for langs, lam, lr in product(groups, lambdas, lrs)]
    run_data = run.to_json_dict()
    cells: list[SweepCell | None] = [None] * len(jobs_list)

    def failed(index: int, error: BaseException) -> SweepCell:
        langs, lam, lr = jobs_list[index]
        message = ErrorResponse.from_exception(error).message
        logger.error(f"Sweep cell lr={lr} lambda={lam} languages={langs} failed: {message}")
        return SweepCell(lr, lam, langs, status="failed", error=message)

    progress = tqdm(total=len(jobs_list), desc="sweep", disable=not SHOW_PROGRESS, leave=False)
    if jobs <= 1:
        for index, (langs, lam, lr) in enumerate(jobs_list):
            try:
                cells[index] = runner(run_data, lr, lam, langs)
            except Exception as e:
                cells[index] = failed(index, e)
            progress.update(1)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = {
                executor.submit(runner, run_data, lr, lam, langs): index
                for index, (langs, lam, lr) in enumerate(jobs_list)
            }
            for future in as_completed(futures):
                index = futures[future]
                try:
                    cells[index] = future.result()
                except Exception as e:
                    cells[index] = failed(index, e)
                progress.update(1)
    progress.close()

    selection_languages = eval_languages if not grid.per_language else run.train_languages
    best = select_best(cells, selection_languages)
    for lang, cell in best.items():
        logger.info(f"Best for {lang}: lr={cell.lr} lambda={cell.lambda_} (dev R@1 {cell.dev[lang]:.2f})")
    return SweepResult(cells, best, selection_languages)
