"""
Experiment drivers behind the CLI commands.

Each driver returns plain rows; rendering to CSV, markdown or a rich
table is left to the writers at the bottom of this module.
"""

import csv
import io
import logging
import math
from enum import Enum
from typing import (Any, Dict, Iterable, List, Mapping, Optional, Sequence,
                    TextIO, Tuple, Union)

from pydantic import ValidationError
from rich.table import Table

from dg_multigrid.core.bankmodel import (BankConfig, contraction_trace,
                                         count_excess_wavefronts, phase_table)
from dg_multigrid.core.krylov import (ConvergenceHistory, gmres,
                                      mixed_precision_vcycle)
from dg_multigrid.core.mesh import build_hierarchy
from dg_multigrid.core.models import (BankRow, ExperimentSpec, KernelKind,
                                      LayoutKind, OwnershipPolicy, PhaseRow,
                                      PrecisionMode, SolveRow, SolverConfig)
from dg_multigrid.core.multigrid import MultigridPreconditioner
from dg_multigrid.core.operator import GlobalOperator
from dg_multigrid.core.partition import DistributedMultigrid
from dg_multigrid.utils.common.constants import ErrorCode
from dg_multigrid.utils.common.error_handling import error_handler
from dg_multigrid.utils.common.validation import estimate_memory_bytes

logger = logging.getLogger("dg-multigrid.experiments")


class OutputFormat(str, Enum):
    CSV = "csv"
    MARKDOWN = "markdown"
    TABLE = "table"


def run_solve(
    spec: ExperimentSpec,
    config: Optional[SolverConfig] = None,
    serial: bool = False,
    policy: OwnershipPolicy = OwnershipPolicy.FEWEST_GHOSTS,
) -> Tuple[ConvergenceHistory, SolveRow]:
    """
    Solve -Δu = 1 on the unit cube and report the fractional iteration count.

    Raises:
        MemoryError: If the estimated footprint exceeds the memory cap
    """
    config = config or spec.solver_config()
    estimate = spec.memory_estimate()
    if estimate > config.memory_cap_bytes:
        logger.warning(f"Refusing experiment needing about {estimate} bytes")
        raise MemoryError(
            f"Estimated {estimate} bytes exceed the cap of {config.memory_cap_bytes} bytes"
        )

    hierarchy = build_hierarchy(spec.dim, spec.levels)
    operator = GlobalOperator(hierarchy, spec.degree, spec.basis_kind)
    finest = spec.levels
    b = operator.assemble_rhs(finest)

    if spec.ranks > 1:
        preconditioner: Any = DistributedMultigrid(
            operator, spec.kernel, spec.ranks, config, policy=policy, serial=serial
        )
        apply = preconditioner.apply_finest
    else:
        preconditioner = MultigridPreconditioner(operator, spec.kernel, config)

        def apply(v: Any) -> Any:
            return operator.matvec(finest, v)

    if spec.precision is PrecisionMode.MIXED:
        preconditioner = mixed_precision_vcycle(preconditioner)

    _, history = gmres(apply, b, preconditioner, config)
    row = SolveRow(
        dim=spec.dim,
        k=spec.degree,
        L=spec.levels,
        kernel=spec.kernel.value,
        precision=spec.precision.value,
        ranks=spec.ranks,
        n=history.iterations,
        nu=history.fractional_iterations,
        final_relres=history.relative_residual,
        status="converged" if history.converged else ErrorCode.NOT_CONVERGED,
    )
    logger.info(
        f"dim={spec.dim} k={spec.degree} L={spec.levels} {spec.kernel.value}: "
        f"n={row['n']} nu={row['nu']:.2f}"
    )
    return history, row


@error_handler
def _solve_row(spec: ExperimentSpec, serial: bool, policy: OwnershipPolicy) -> SolveRow:
    return run_solve(spec, serial=serial, policy=policy)[1]


def _failed_row(spec: ExperimentSpec, code: str) -> SolveRow:
    return SolveRow(
        dim=spec.dim,
        k=spec.degree,
        L=spec.levels,
        kernel=KernelKind(spec.kernel).value,
        precision=PrecisionMode(spec.precision).value,
        ranks=spec.ranks,
        n=0,
        nu=math.nan,
        final_relres=math.nan,
        status=code,
    )


def _rejected_row(fields: Mapping[str, Any], error: ValidationError) -> SolveRow:
    """Status row for fields that do not form a valid experiment."""
    spec = ExperimentSpec.model_construct(**fields)
    estimate = estimate_memory_bytes(spec.dim, spec.degree, spec.levels, spec.max_iterations)
    code = ErrorCode.MEMORY_LIMIT if estimate > spec.memory_cap_bytes else ErrorCode.INVALID_INPUT
    logger.warning(f"Skipping L={spec.levels} k={spec.degree}: {code} ({error.error_count()} errors)")
    return _failed_row(spec, code)


def run_table(
    specs: Iterable[Union[ExperimentSpec, Mapping[str, Any]]],
    serial: bool = False,
    policy: OwnershipPolicy = OwnershipPolicy.FEWEST_GHOSTS,
) -> List[SolveRow]:
    """
    One row per experiment, in the given order; failures become status rows.

    Entries given as field mappings are validated here, one row at a time,
    so an invalid or oversized row does not stop the others.
    """
    rows: List[SolveRow] = []
    for item in specs:
        if isinstance(item, ExperimentSpec):
            spec = item
        else:
            try:
                spec = ExperimentSpec(**item)
            except ValidationError as e:
                rows.append(_rejected_row(item, e))
                continue
        result: Mapping[str, Any] = _solve_row(spec, serial, policy)
        if "error" in result:
            rows.append(_failed_row(spec, result["error"]["code"]))
        else:
            rows.append(result)  # type: ignore[arg-type]
    return rows


def table_specs(
    base: Mapping[str, Any], levels: Sequence[int], degrees: Sequence[int]
) -> List[Dict[str, Any]]:
    """Unvalidated fields of every (level, degree) cell, levels outermost."""
    return [
        {**base, "levels": level, "degree": degree}
        for level in levels
        for degree in degrees
    ]


def run_partition(
    spec: ExperimentSpec,
    rank_counts: Sequence[int],
    policy: OwnershipPolicy = OwnershipPolicy.FEWEST_GHOSTS,
    serial: bool = False,
) -> List[SolveRow]:
    """The same solve on several simulated rank counts."""
    specs = [{**spec.model_dump(), "ranks": n} for n in rank_counts]
    return run_table(specs, serial=serial, policy=policy)


def run_bank_analysis(
    degrees: Iterable[int],
    layouts: Iterable[LayoutKind],
    config: Optional[BankConfig] = None,
    dim: int = 3,
) -> List[BankRow]:
    """Excess wavefronts per degree and layout, degrees outermost."""
    config = config or BankConfig()
    layouts = [LayoutKind(layout) for layout in layouts]
    rows = []
    for k in degrees:
        for layout in layouts:
            trace = contraction_trace(k, dim, layout, config)
            rows.append(
                BankRow(k=k, layout=layout.value, excess=count_excess_wavefronts(trace, config))
            )
    return rows


def run_phase_analysis(
    k: int, layout: LayoutKind, config: Optional[BankConfig] = None, dim: int = 3
) -> List[PhaseRow]:
    config = config or BankConfig()
    return phase_table(contraction_trace(k, dim, layout, config), config)


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


def write_csv(rows: Sequence[Mapping[str, Any]], columns: Sequence[str], stream: TextIO) -> None:
    """Fixed-header CSV with floats written by repr."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row[column]) for column in columns])


def render_csv(rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> str:
    buffer = io.StringIO()
    write_csv(rows, columns, buffer)
    return buffer.getvalue()


def render_markdown(rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> str:
    lines = [
        "| " + " | ".join(columns) + " |",
        "|" + "|".join("---" for _ in columns) + "|",
    ]
    for row in rows:
        lines.append("| " + " | ".join(_cell(row[column]) for column in columns) + " |")
    return "\n".join(lines) + "\n"


def render_table(
    rows: Sequence[Mapping[str, Any]], columns: Sequence[str], title: str
) -> Table:
    table = Table(title=title)
    for column in columns:
        table.add_column(column, style="green" if column in ("nu", "excess") else None)
    for row in rows:
        table.add_row(*(_cell(row[column]) for column in columns))
    return table


def parse_csv(text: str) -> List[Dict[str, str]]:
    """Read rows back as strings keyed by column."""
    return list(csv.DictReader(io.StringIO(text)))
