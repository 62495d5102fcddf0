from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

from rich.panel import Panel
from rich.table import Table

from src.extensions import console
from src.models.peft import count_trainable

if TYPE_CHECKING:
    from src.schemas.run_config_schemas import RunConfig
    from src.services.eval.eval_service import RetrievalReport
    from src.services.eval.sweep_service import SweepResult
    from src.services.gradcheck_service import GradCheckMatrix


def print_banner(command: str, run: "RunConfig", out_dir: Path):
    count, ratio = count_trainable(run.peft, run.encoder)
    alignment = run.alignment
    aligned = (
        f"routine {alignment.routine} / {alignment.loss} / {alignment.pair} / lambda {alignment.lambda_}"
        if alignment is not None
        else "none"
    )
    console.print(
        Panel.fit(
            f"[bold yellow]{command}[/bold yellow] [dim]{run.name}[/dim]\n"
            f"[green]Seed: {run.seed}[/green]\n"
            f"[violet]PEFT: {run.peft.type} ({count} trainable, {ratio:.2%})[/violet]\n"
            f"[violet]Alignment: {aligned}[/violet]\n"
            f"[cyan]Output: {out_dir}[/cyan]",
            border_style="bright_blue",
            title="[bold]XLIGN[/bold]",
            title_align="left",
        )
    )


def print_report(report: "RetrievalReport", title: str = "Retrieval"):
    table = Table(title=f"{title} R@{report.k} ({report.split}, {report.text_view}, {report.direction})")
    table.add_column("language")
    table.add_column(f"R@{report.k}", justify="right")
    for lang, score in report.scores.items():
        table.add_row(lang, f"{score:.2f}")
    if report.aggregate is not None:
        table.add_section()
        for name, value in report.aggregate.to_dict().items():
            table.add_row(f"[bold]{name}[/bold]", f"{value:.2f}")
    console.print(table)


def print_gradcheck(matrix: "GradCheckMatrix"):
    cells = matrix.cells()
    combos = sorted({combo for combo, _ in cells})
    variants = list(dict.fromkeys(variant for _, variant in cells))
    table = Table(title=f"Gradient checks (tol {matrix.tol:g})")
    table.add_column("combo")
    for variant in variants:
        table.add_column(variant, justify="center")
    for combo in combos:
        marks = ["[green]pass[/green]" if cells[(combo, v)] else "[red]FAIL[/red]" for v in variants]
        table.add_row(combo, *marks)
    console.print(table)
    console.print(f"{sum(cells.values())}/{len(cells)} pass")


def print_sweep(result: "SweepResult"):
    table = Table(title="Sweep selection (dev R@1)")
    for column in ("language", "lr", "lambda", "dev R@1", "test R@1"):
        table.add_column(column, justify="right" if column != "language" else "left")
    for lang, cell in sorted(result.best.items()):
        test = cell.test.get(lang)
        table.add_row(lang, f"{cell.lr:g}", f"{cell.lambda_:g}", f"{cell.dev[lang]:.2f}", "-" if test is None else f"{test:.2f}")
    failed = sum(1 for c in result.cells if c.failed)
    console.print(table)
    if failed:
        console.print(f"[red]{failed} sweep cell(s) failed[/red]")
