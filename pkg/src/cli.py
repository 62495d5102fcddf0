from __future__ import annotations

import functools
import logging
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click

from src.config import Config, resolve_seed
from src.container import build_lab
from src.extensions import configure_logging, console
from src.handlers.recipe_handler import RecipeHandler
from src.schemas.run_config_schemas import RunConfig
from src.services.corpus.corpus_service import generate
from src.services.corpus.tsv_service import save_tsv
from src.services.eval.eval_service import evaluate, select_prompt
from src.services.eval.sweep_service import sweep
from src.services.gradcheck_service import run_gradcheck
from src.services.trainer.trainer_service import train
from src.utils.console_utils import print_banner, print_gradcheck, print_report, print_sweep
from src.utils.errors import ErrorResponse, TrainingDivergedError, XlignException
from src.utils.io_utils import Manifest, write_json

logger = logging.getLogger(__name__)


@dataclass
class Options:
    config: Optional[str] = None
    seed: Optional[int] = None
    jobs: Optional[int] = None
    out: Optional[str] = None

    def merge(self, other: "Options") -> "Options":
        return Options(
            config=other.config or self.config,
            seed=other.seed if other.seed is not None else self.seed,
            jobs=other.jobs or self.jobs,
            out=other.out or self.out,
        )


def global_options(f):
    f = click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory.")(f)
    f = click.option("--jobs", type=click.IntRange(min=1), default=None, help="Parallel sweep cells.")(f)
    f = click.option("--seed", type=click.IntRange(min=0), default=None, help="Seed (overrides XLIGN_SEED and the config).")(f)
    f = click.option("--config", "config", default=None, help="Config file path or shipped recipe name.")(f)
    return f


class Session:
    """Resolved options of one command plus the artifacts it produced."""

    def __init__(self, command: str, options: Options):
        self.command = command
        self.options = options
        self.out_dir: Path | None = None
        self.manifest: Manifest | None = None

    def load_run(self, default: str = "demo") -> RunConfig:
        data = RecipeHandler.resolve(self.options.config or default)
        run = RunConfig.model_validate(data)
        seed = resolve_seed(run.seed, self.options.seed)
        if seed != run.seed:
            run = run.with_overrides(seed=seed)
        self.open(Path(self.options.out or run.output_dir or Path(Config.OUTPUT_DIR) / run.name))
        write_json(self.out_dir / "config.json", run.to_json_dict())
        self.manifest.add(self.out_dir / "config.json")
        return run

    def open(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        self.out_dir = out_dir
        self.manifest = Manifest(out_dir, self.command)

    def add(self, path: Path, rows: int | None = None):
        self.manifest.add(path, rows)

    def close(self):
        if self.manifest is not None:
            self.manifest.write()

    @property
    def jobs(self) -> int:
        return self.options.jobs or Config.jobs()


def command(name: str):
    """Register a subcommand that maps exceptions to exit codes and always writes its manifest."""

    def decorator(f):
        @cli.command(name)
        @global_options
        @click.pass_context
        @functools.wraps(f)
        def wrapper(ctx: click.Context, config, seed, jobs, out, **kwargs):
            options = ctx.obj.merge(Options(config, seed, jobs, out))
            session = Session(name, options)
            try:
                f(session, **kwargs)
            except Exception as e:
                response = ErrorResponse.from_exception(e)
                console.print(f"[bold red]Error:[/bold red] {response.message}")
                if response.code == 1 and session.out_dir is not None:
                    path = write_json(session.out_dir / "error.json", {
                        **response.to_dict(),
                        "command": name,
                        "traceback": traceback.format_exception(e),
                    })
                    session.add(path)
                    logger.error(f"{name} failed, diagnostics written to {path}")
                ctx.exit(response.code)
            finally:
                session.close()

        return wrapper

    return decorator


@click.group()
@global_options
@click.option("--log-level", default=None, help="Logging level (defaults to XLIGN_LOG_LEVEL).")
@click.pass_context
def cli(ctx: click.Context, config, seed, jobs, out, log_level):
    """Parameter-efficient cross-lingual alignment lab."""
    configure_logging(log_level.upper() if log_level else None)
    ctx.obj = Options(config, seed, jobs, out)


@command("gen-corpus")
def gen_corpus(session: Session):
    run = session.load_run()
    print_banner("gen-corpus", run, session.out_dir)
    dataset, bank, _ = generate(run.corpus, seed=run.corpus_seed, encoder=run.encoder)

    corpus_path = session.out_dir / "corpus.tsv"
    images_path = session.out_dir / "images.tsv"
    rows = save_tsv(dataset, corpus_path)
    bank.save_tsv(images_path)
    session.add(corpus_path, rows)
    session.add(images_path, len(bank))
    logger.info(f"Corpus written: {rows} text rows to {corpus_path}, {len(bank)} image vectors to {images_path}")


@command("train")
def train_command(session: Session):
    run = session.load_run("few_shot")
    print_banner("train", run, session.out_dir)
    lab = build_lab(run)
    try:
        result = train(lab)
    except TrainingDivergedError as e:
        if e.last_good is not None:
            session.add(e.last_good.save(session.out_dir / "checkpoint.last_good.json"))
        raise

    session.add(result.checkpoint.save(session.out_dir / "checkpoint.json"))
    trace_path, trace_rows, dev_path, dev_rows = result.save_trace(session.out_dir)
    session.add(trace_path, trace_rows)
    session.add(dev_path, dev_rows)

    lab.requires_mt_inference = run.mt_inference
    report = evaluate(lab)
    csv_path, json_path, count = report.save(session.out_dir)
    session.add(csv_path, count)
    session.add(json_path)
    print_report(report)


@command("eval")
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None, help="Checkpoint to evaluate.")
@click.option("--split", type=click.Choice(["dev", "test"]), default=None)
@click.option("--mt-inference/--no-mt-inference", default=None, help="Evaluate on text translated into the pivot.")
def eval_command(session: Session, checkpoint: str | None, split: str | None, mt_inference: bool | None):
    run = session.load_run("zero_shot")
    if mt_inference is not None:
        run = run.with_overrides(**{"train.mt_inference": mt_inference})
    print_banner("eval", run, session.out_dir)
    lab = build_lab(run, checkpoint)

    template = None
    if run.eval.prompt_candidates:
        selection = select_prompt(lab, run.eval.prompt_candidates, combo=run.eval.prompt_combo or 1)
        session.add(write_json(session.out_dir / "prompt_selection.json", selection.to_dict()))
        template = selection.best

    report = evaluate(lab, split=split, template=template)
    csv_path, json_path, count = report.save(session.out_dir)
    session.add(csv_path, count)
    session.add(json_path)
    print_report(report)


@command("sweep")
def sweep_command(session: Session):
    run = session.load_run("sweep")
    print_banner("sweep", run, session.out_dir)
    result = sweep(run, jobs=session.jobs)
    csv_path, count, json_path = result.save(session.out_dir)
    session.add(csv_path, count)
    session.add(json_path)
    print_sweep(result)
    if not result.best:
        raise XlignException("Every sweep cell failed")


@command("gradcheck")
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--eps", type=float, default=1e-5, show_default=True)
@click.option("--max-checks", type=click.IntRange(min=1), default=12, show_default=True, help="Sampled coordinates per tensor.")
def gradcheck_command(session: Session, tol: float, eps: float, max_checks: int):
    base = resolve_seed(0, session.options.seed)
    session.open(Path(session.options.out or Path(Config.OUTPUT_DIR) / "gradcheck"))
    matrix = run_gradcheck(seeds=(base, base + 1, base + 2), eps=eps, tol=tol, max_checks_per_param=max_checks)
    path, count = matrix.save(session.out_dir)
    session.add(path, count)
    print_gradcheck(matrix)
    if not matrix.passed:
        failed = [f"{combo}/{variant}" for (combo, variant), ok in matrix.cells().items() if not ok]
        raise XlignException(f"Gradient check failed for {', '.join(failed)}")
