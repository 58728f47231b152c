"""Command-line interface for AGCA multigrid."""

from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.table import Table

from . import report as artifacts
from .bench import run_cagca_study, run_convergence_sweep, run_nu_sweep
from .coarsening import OperatorKind, build_gca_store, dump_plan, plan_for_mode
from .config import ConfigManager
from .fem import CoefficientEval
from .logs import configure_logging
from .memory import memory_model_3d
from .mesh import dump_mesh
from .models import ExperimentResult, MemoryModel3D, RunConfig, SolveReport, SweepGrid
from .poisson import solve_diffusion
from .problems import viscosity
from .selftest import run_selftest
from .stokes import build_hierarchy, build_stokes_system, solve_stokes

app = typer.Typer(
    name="agca-mg",
    help="Matrix-free geometric multigrid with adaptive Galerkin coarse-grid approximation",
    add_completion=False,
)

console = Console()

EXIT_NOT_CONVERGED = 2

CONFIG_OPTION = typer.Option(
    Path(ConfigManager.DEFAULT_CONFIG_PATH), "--config", "-c", help="Path of the YAML config"
)
OUT_OPTION = typer.Option(None, "--out", "-o", help="Output directory (overrides the config)")
THREADS_OPTION = typer.Option(None, "--threads", "-t", min=1, help="Parallel sweep workers")
CAP_OPTION = typer.Option(None, "--cap", min=1, help="FGMRES iteration cap")
VERBOSE_OPTION = typer.Option(False, "--verbose", "-v", help="Verbose output")


def _load(config_path: Path, out: Optional[Path], threads: Optional[int] = None) -> RunConfig:
    """Load a config and apply command-line overrides."""
    config = ConfigManager(config_path).load()
    updates: dict[str, object] = {}
    if out is not None:
        updates["output"] = config.output.model_copy(update={"directory": str(out)})
    if threads is not None:
        updates["threads"] = threads
    return config.model_copy(update=updates) if updates else config


def _fail(error: Exception, verbose: bool) -> None:
    if verbose:
        console.print_exception()
    else:
        console.print(f"✗ Error: {error}", style="red")


def _solve_table(report: SolveReport) -> Table:
    table = Table(show_header=True, header_style="bold")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("method", report.method)
    table.add_row("iterations", str(report.iterations))
    table.add_row("converged", str(report.converged))
    table.add_row("relative residual", f"{report.relative_residuals[-1]:.3e}")
    if report.c_agca is not None:
        table.add_row("c_agca", f"{report.c_agca:.4f}")
    if report.memory is not None:
        table.add_row("stored GCA bytes", str(report.memory.stored_bytes))
    for name, seconds in report.timings.items():
        table.add_row(f"time {name} [s]", f"{seconds:.3f}")
    return table


def _results_table(results: list[ExperimentResult]) -> Table:
    table = Table(show_header=True, header_style="bold")
    for column in ("DR", "omega", "eval", "mode", "nu", "macros", "iterations", "c_agca"):
        table.add_column(column)
    for r in results:
        table.add_row(
            f"{r.dynamic_ratio:.0e}",
            f"{r.omega:g}",
            r.eval_mode.value,
            r.coarsening_mode.value,
            f"{r.nu:g}",
            f"{r.macro_nx}x{r.macro_nx}",
            "error" if r.error else f"{r.iterations}{'' if r.converged else '*'}",
            f"{r.c_agca:.3f}",
        )
    return table


def _write_results(
    results: list[ExperimentResult], config: RunConfig, filename: str
) -> Path:
    out_dir = Path(config.output.directory)
    ConfigManager.echo(config, out_dir)
    path = artifacts.write_results_csv(
        results, out_dir / filename, config.output.record_timings
    )
    console.print(_results_table(results))
    failed = sum(1 for r in results if r.error)
    if failed:
        console.print(f"  {failed} run(s) failed; see the log", style="yellow")
    console.print(f"✓ Wrote {len(results)} rows to {path}", style="green")
    return path


@app.command()
def init(config_path: Path = CONFIG_OPTION) -> None:
    """Write a documented default configuration file."""
    try:
        manager = ConfigManager(config_path)
        config = manager.init()
        console.print(f"✓ Initialized configuration at {manager.config_path}", style="green")
        console.print(
            f"  Mesh: {config.mesh.nx}x{config.mesh.ny} macros, L={config.mesh.levels}",
            style="dim",
        )
    except FileExistsError as e:
        console.print(f"✗ {e}", style="red")
        raise typer.Exit(1)
    except Exception as e:
        console.print(f"✗ Error: {e}", style="red")
        raise typer.Exit(1)


@app.command()
def solve(
    config_path: Path = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    cap: Optional[int] = CAP_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Run one Stokes solve, or the scalar diffusion solve for family 'poisson'."""
    configure_logging(verbose)
    try:
        # Load configuration
        config = _load(config_path, out)
        if cap is not None:
            config.solver.krylov.max_iter = cap
        out_dir = Path(config.output.directory)
        ConfigManager.echo(config, out_dir)

        # Solve
        if config.problem.is_poisson:
            _, report = solve_diffusion(config)
        else:
            system = build_stokes_system(config)
            u, p, report = solve_stokes(config, system)
            if config.output.write_solution:
                artifacts.write_solution_csv(system.hierarchy, u, p, out_dir)

        # Write artifacts
        timings = config.output.record_timings
        artifacts.write_report_json(report, out_dir / artifacts.REPORT_JSON, timings)
        artifacts.write_residuals_csv(report, out_dir / artifacts.RESIDUALS_CSV)
        console.print(_solve_table(report))
    except Exception as e:
        _fail(e, verbose)
        raise typer.Exit(1)

    if not report.converged:
        console.print(
            f"✗ Not converged after {report.iterations} iterations", style="yellow"
        )
        raise typer.Exit(EXIT_NOT_CONVERGED)
    console.print(f"✓ Converged in {report.iterations} iterations", style="green")


@app.command()
def sweep(
    config_path: Path = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    cap: Optional[int] = CAP_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Run the convergence sweep over DR, omega, sinkers, evaluation and coarsening."""
    configure_logging(verbose)
    try:
        config = _load(config_path, out, threads)
        # Apply iteration cap
        if cap is not None:
            grid = (config.sweep or SweepGrid()).model_copy(update={"cap": cap})
            config = config.model_copy(update={"sweep": grid})
        results = run_convergence_sweep(config)
        _write_results(results, config, artifacts.SWEEP_CSV)
    except Exception as e:
        _fail(e, verbose)
        raise typer.Exit(1)


@app.command("nu-sweep")
def nu_sweep(
    config_path: Path = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Vary the AGCA threshold nu and record GCA macros, bytes and iterations."""
    configure_logging(verbose)
    try:
        config = _load(config_path, out, threads)
        results = run_nu_sweep(config)
        _write_results(results, config, artifacts.NU_SWEEP_CSV)
    except Exception as e:
        _fail(e, verbose)
        raise typer.Exit(1)


@app.command()
def cagca(
    config_path: Path = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Record c_agca over a sequence of macro grid sizes."""
    configure_logging(verbose)
    try:
        config = _load(config_path, out, threads)
        results = run_cagca_study(config)
        _write_results(results, config, artifacts.CAGCA_CSV)
    except Exception as e:
        _fail(e, verbose)
        raise typer.Exit(1)


def _memory_table(model: MemoryModel3D) -> Table:
    table = Table(show_header=True, header_style="bold")
    table.add_column("[N_L]", style="cyan")
    for column in MemoryModel3D.COLUMNS:
        table.add_column(column, justify="right")
    for row in MemoryModel3D.ROWS:
        table.add_row(row, *(f"{model.table[c][row]:.1f}" for c in MemoryModel3D.COLUMNS))
    table.add_row(
        "total",
        *(f"{model.total(c):.1f}" for c in MemoryModel3D.COLUMNS),
        style="bold",
    )
    return table


@app.command("memory-model")
def memory_model(
    n_fill_in: float = typer.Option(1.0, "--n-fill-in", help="Sparse Galerkin fill-in factor"),
    n_restart: int = typer.Option(30, "--n-restart", help="FGMRES restart length"),
    c_agca: float = typer.Option(1.0, "--c-agca", help="Fraction of GCA macro elements"),
    c_u: float = typer.Option(0.95, "--c-u", help="Velocity fraction of N_L"),
) -> None:
    """Print the 3D memory model in fine-grid vectors."""
    try:
        model = memory_model_3d(n_fill_in, n_restart, c_agca, c_u)
    except ValueError as e:
        console.print(f"✗ Error: {e}", style="red")
        raise typer.Exit(1)

    console.print(f"Mem_A = {model.mem_a:.1f} N_L", style="bold cyan")
    console.print(f"Mem_K = {model.mem_k:.1f} N_L", style="bold cyan")
    console.print(f"  sparse GCA:        {model.sparse_gca:.1f} N_L", style="dim")
    console.print(f"  element-wise GCA:  {model.elementwise_gca:.1f} N_L", style="dim")
    console.print(f"  stencil GCA:       {model.stencil:.1f} N_L", style="dim")
    console.print()
    console.print(_memory_table(model))


@app.command()
def selftest(verbose: bool = VERBOSE_OPTION) -> None:
    """Run the oracle and invariant checks."""
    configure_logging(verbose)
    results = run_selftest()

    table = Table(show_header=True, header_style="bold")
    table.add_column("Check", style="cyan")
    table.add_column("Result")
    table.add_column("Value", justify="right")
    table.add_column("Threshold", justify="right")
    table.add_column("Detail", style="dim")
    for r in results:
        table.add_row(
            r.name,
            "[green]pass[/green]" if r.passed else "[red]FAIL[/red]",
            f"{r.value:.3e}",
            f"{r.threshold:.0e}",
            r.detail,
        )
    console.print(table)

    failed = [r.name for r in results if not r.passed]
    if failed:
        console.print(f"✗ {len(failed)} check(s) failed: {', '.join(failed)}", style="red")
        raise typer.Exit(1)
    console.print(f"✓ All {len(results)} checks passed", style="green")


@app.command()
def report(
    out: Path = typer.Option(..., "--out", "-o", help="Output directory holding result CSVs"),
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Render plots for the result files of an output directory."""
    configure_logging(verbose)
    try:
        if not out.is_dir():
            raise FileNotFoundError(f"Output directory not found: {out}")
        written = artifacts.render_report(out)
    except Exception as e:
        _fail(e, verbose)
        raise typer.Exit(1)

    if not written:
        console.print(f"No result files found in {out}", style="yellow")
        return
    for path in written:
        console.print(f"✓ Wrote {path}", style="green")


@app.command("dump-mesh")
def dump_mesh_command(
    config_path: Path = CONFIG_OPTION,
    level: int = typer.Option(0, "--level", "-l", help="Refinement level"),
    macro: Optional[int] = typer.Option(None, "--macro", "-m", help="Restrict to one macro"),
) -> None:
    """Print the vertices and elements of one level."""
    try:
        config = _load(config_path, None)
        hierarchy = build_hierarchy(config)
        typer.echo(dump_mesh(hierarchy, level, macro), nl=False)
    except Exception as e:
        console.print(f"✗ Error: {e}", style="red")
        raise typer.Exit(1)


@app.command("dump-plan")
def dump_plan_command(
    config_path: Path = CONFIG_OPTION,
    store: bool = typer.Option(
        False, "--store", help="Build the GCA store and list stored matrices per level"
    ),
) -> None:
    """Print c_agca, the GCA macro set and, optionally, the stored matrix counts."""
    try:
        config = _load(config_path, None)
        hierarchy = build_hierarchy(config)
        source = viscosity(config.problem)
        plan = plan_for_mode(config.coarsening.mode, source, hierarchy, config.coarsening.nu)
        # Build the GCA store on request
        gca_store = None
        if store:
            kind = OperatorKind.DIFFUSION if config.problem.is_poisson else OperatorKind.VISCOUS
            eta = CoefficientEval(config.problem.eval_mode, source, hierarchy)
            gca_store = build_gca_store(hierarchy, eta, kind, plan)
        typer.echo(dump_plan(plan, gca_store), nl=False)
    except Exception as e:
        console.print(f"✗ Error: {e}", style="red")
        raise typer.Exit(1)


if __name__ == "__main__":
    app()
