"""
Command Line Interface for dg-multigrid.
"""

import logging
import sys
from pathlib import Path
from typing import Any, List, Mapping, NoReturn, Optional, Sequence

import typer
from pydantic import ValidationError
from rich.console import Console

from dg_multigrid.cli.experiments import (OutputFormat, render_csv,
                                          render_markdown, render_table,
                                          run_bank_analysis,
                                          run_partition, run_phase_analysis,
                                          run_solve, run_table, table_specs)
from dg_multigrid.core.bankmodel import BankConfig
from dg_multigrid.core.models import (BANK_COLUMNS, PHASE_COLUMNS,
                                      SOLVE_COLUMNS, ExperimentSpec,
                                      KernelKind, LayoutKind,
                                      OwnershipPolicy, Precision,
                                      PrecisionMode)
from dg_multigrid.utils import configure_logging
from dg_multigrid.utils.common.constants import (DEFAULT_MAX_ITERATIONS,
                                                 DEFAULT_RTOL)

# Set up consoles
console = Console()
stderr_console = Console(stderr=True)


def version_callback(value: bool):
    """Show the version and exit."""
    if value:
        from dg_multigrid import __version__

        print(f"dg-multigrid version: {__version__}")
        raise typer.Exit()


# Create the CLI app
app = typer.Typer(
    name="dg-multigrid",
    help="dg-multigrid: matrix-free multigrid experiments for DG Poisson problems",
    add_completion=False,
)


# Global options
class GlobalOptions:
    verbose: bool = False
    log_file: Optional[str] = None


# Create a single instance
global_options = GlobalOptions()


def print_error(message: str) -> None:
    """Print an error message to stderr."""
    stderr_console.print(f"[bold red]Error:[/bold red] {message}")


def usage_error(message: str) -> NoReturn:
    print_error(message)
    raise typer.Exit(code=2)


def validation_message(error: ValidationError) -> str:
    """One-line summary of all pydantic errors."""
    parts = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        message = item["msg"].removeprefix("Value error, ")
        parts.append(f"{location}: {message}" if location else message)
    return "; ".join(parts)


def make_spec(**fields: Any) -> ExperimentSpec:
    try:
        return ExperimentSpec(**fields)
    except ValidationError as e:
        usage_error(validation_message(e))


def emit(
    rows: Sequence[Mapping[str, Any]],
    columns: Sequence[str],
    fmt: OutputFormat,
    output: Optional[Path],
    title: str,
) -> None:
    """Write rows in the chosen format to output or stdout."""
    if fmt is OutputFormat.TABLE and output is None:
        console.print(render_table(rows, columns, title))
        return
    text = render_markdown(rows, columns) if fmt is OutputFormat.MARKDOWN else render_csv(rows, columns)
    if output is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        output.write_text(text, encoding="utf-8")
    except OSError as e:
        print_error(f"Cannot write {output}: {e}")
        raise typer.Exit(code=1)
    logging.getLogger("dg-multigrid").info(f"Wrote {len(rows)} rows to {output}")


# Define callback for global options
@app.callback()
def main(
    verbose: bool = typer.Option(
        False, "--verbose", "-v", help="Enable verbose logging"
    ),
    log_file: Optional[str] = typer.Option(None, "--log-file", help="Log file path"),
    version: bool = typer.Option(
        None,
        "--version",
        "-V",
        is_flag=True,
        callback=version_callback,
        help="Show version and exit",
    ),
):
    """dg-multigrid: matrix-free multigrid experiments for DG Poisson problems"""
    # Store options
    global_options.verbose = verbose
    global_options.log_file = log_file

    # Configure logging
    log_level = logging.DEBUG if verbose else logging.INFO
    configure_logging(log_level, file_path=log_file)


@app.command("solve")
def solve_command(
    dim: int = typer.Option(3, "--dim", help="Spatial dimension (2 or 3)"),
    degree: int = typer.Option(3, "--degree", help="Polynomial degree k"),
    levels: int = typer.Option(2, "--levels", help="Finest level L"),
    kernel: KernelKind = typer.Option(KernelKind.FULL, "--kernel", help="Local solver kernel"),
    precision: PrecisionMode = typer.Option(
        PrecisionMode.DOUBLE, "--precision", help="Preconditioner precision"
    ),
    ranks: int = typer.Option(1, "--ranks", help="Number of simulated ranks"),
    rtol: float = typer.Option(DEFAULT_RTOL, "--rtol", help="Relative residual target"),
    max_iterations: int = typer.Option(
        DEFAULT_MAX_ITERATIONS, "--max-iterations", help="GMRES iteration limit"
    ),
    serial: bool = typer.Option(False, "--serial", help="Run simulated ranks sequentially"),
    output: Optional[Path] = typer.Option(None, "--output", help="Write results to a file"),
    fmt: OutputFormat = typer.Option(OutputFormat.CSV, "--format", help="Output format"),
):
    """Solve -Δu = 1 once and print the convergence row."""
    spec = make_spec(
        dim=dim,
        degree=degree,
        levels=levels,
        kernel=kernel,
        precision=precision,
        ranks=ranks,
        rtol=rtol,
        max_iterations=max_iterations,
        output=output,
    )
    _, row = run_solve(spec, spec.solver_config(), serial=serial)
    emit([row], SOLVE_COLUMNS, fmt, output, "Convergence")


@app.command("table")
def table_command(
    dim: int = typer.Option(3, "--dim", help="Spatial dimension (2 or 3)"),
    degree: List[int] = typer.Option([3, 4, 5], "--degree", help="Degrees, repeatable"),
    levels: List[int] = typer.Option([2, 3], "--levels", help="Finest levels, repeatable"),
    kernel: KernelKind = typer.Option(KernelKind.FULL, "--kernel", help="Local solver kernel"),
    precision: PrecisionMode = typer.Option(
        PrecisionMode.DOUBLE, "--precision", help="Preconditioner precision"
    ),
    ranks: int = typer.Option(1, "--ranks", help="Number of simulated ranks"),
    rtol: float = typer.Option(DEFAULT_RTOL, "--rtol", help="Relative residual target"),
    serial: bool = typer.Option(False, "--serial", help="Run simulated ranks sequentially"),
    output: Optional[Path] = typer.Option(None, "--output", help="Write results to a file"),
    fmt: OutputFormat = typer.Option(OutputFormat.CSV, "--format", help="Output format"),
):
    """Iteration counts for every combination of levels and degrees."""
    if ranks < 1:
        usage_error(f"Rank count must be >= 1, got {ranks}")
    base = dict(dim=dim, kernel=kernel, precision=precision, ranks=ranks, rtol=rtol)
    # only the options shared by all rows here; each row is validated when it runs
    make_spec(**{**base, "ranks": 1, "levels": 0, "degree": 3})
    specs = table_specs(base, levels, degree)
    emit(run_table(specs, serial=serial), SOLVE_COLUMNS, fmt, output, "Iteration counts")


@app.command("partition")
def partition_command(
    ranks: List[int] = typer.Option([1, 2, 3, 4], "--ranks", help="Rank counts, repeatable"),
    dim: int = typer.Option(3, "--dim", help="Spatial dimension (2 or 3)"),
    degree: int = typer.Option(3, "--degree", help="Polynomial degree k"),
    levels: int = typer.Option(2, "--levels", help="Finest level L"),
    kernel: KernelKind = typer.Option(
        KernelKind.DIRICHLET, "--kernel", help="Local solver kernel"
    ),
    policy: OwnershipPolicy = typer.Option(
        OwnershipPolicy.FEWEST_GHOSTS, "--policy", help="Ghost patch ownership policy"
    ),
    precision: PrecisionMode = typer.Option(
        PrecisionMode.DOUBLE, "--precision", help="Preconditioner precision"
    ),
    rtol: float = typer.Option(DEFAULT_RTOL, "--rtol", help="Relative residual target"),
    serial: bool = typer.Option(False, "--serial", help="Run simulated ranks sequentially"),
    output: Optional[Path] = typer.Option(None, "--output", help="Write results to a file"),
    fmt: OutputFormat = typer.Option(OutputFormat.CSV, "--format", help="Output format"),
):
    """The same solve on several simulated rank counts."""
    if min(ranks) < 1:
        usage_error(f"Rank counts must be >= 1, got {min(ranks)}")
    spec = make_spec(
        dim=dim,
        degree=degree,
        levels=levels,
        kernel=kernel,
        precision=precision,
        ranks=max(ranks),
        rtol=rtol,
    )
    rows = run_partition(spec, ranks, policy=policy, serial=serial)
    emit(rows, SOLVE_COLUMNS, fmt, output, f"Rank counts ({policy.value})")


@app.command("bank")
def bank_command(
    degree: List[int] = typer.Option([3, 4, 5, 6, 7], "--degree", help="Degrees, repeatable"),
    layout: List[LayoutKind] = typer.Option(
        [LayoutKind.BASIC, LayoutKind.CONFLICT_FREE], "--layout", help="Layouts, repeatable"
    ),
    dim: int = typer.Option(3, "--dim", help="Spatial dimension (2 or 3)"),
    precision: Precision = typer.Option(
        Precision.DOUBLE, "--precision", help="Word size: double (16 banks) or single (32)"
    ),
    per_phase: bool = typer.Option(
        False, "--per-phase", help="Per-phase table for the first degree and layout"
    ),
    output: Optional[Path] = typer.Option(None, "--output", help="Write results to a file"),
    fmt: OutputFormat = typer.Option(OutputFormat.CSV, "--format", help="Output format"),
):
    """Shared-memory bank conflicts of the patch contraction kernels."""
    config = BankConfig.for_precision(precision)
    try:
        if per_phase:
            rows: List[Any] = run_phase_analysis(degree[0], layout[0], config, dim)
            emit(rows, PHASE_COLUMNS, fmt, output, f"Bank phases, k={degree[0]}")
        else:
            rows = run_bank_analysis(degree, layout, config, dim)
            emit(rows, BANK_COLUMNS, fmt, output, "Excess wavefronts")
    except ValueError as e:
        usage_error(str(e))


def entry_point():
    """Entry point for the CLI."""
    try:
        app()
    except Exception as e:
        stderr_console.print(f"[bold red]Error:[/bold red] {str(e)}")
        if "--verbose" in sys.argv or "-v" in sys.argv:
            stderr_console.print_exception()
        sys.exit(1)


if __name__ == "__main__":
    entry_point()
