"""Result files and plots.

File names inside an output directory:
    sweep.csv, nu-sweep.csv, cagca.csv   one ExperimentResult per row
    report.json                          SolveReport of a single solve
    residuals.csv                        iteration, residual, relative residual
    velocity.csv, pressure.csv           optional solution dumps
    *.png                                plots written by ``render_report``
"""

import csv
import logging
from collections import defaultdict
from collections.abc import Iterable
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from numpy.typing import NDArray  # noqa: E402

from .mesh import MeshHierarchy  # noqa: E402
from .models import ExperimentResult, SolveReport  # noqa: E402

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

SWEEP_CSV = "sweep.csv"
NU_SWEEP_CSV = "nu-sweep.csv"
CAGCA_CSV = "cagca.csv"
REPORT_JSON = "report.json"
RESIDUALS_CSV = "residuals.csv"


def write_results_csv(
    results: Iterable[ExperimentResult], path: Path, record_timings: bool = True
) -> Path:
    """Write experiment rows with the fixed sweep schema."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ExperimentResult.CSV_FIELDS)
        for result in results:
            writer.writerow(result.csv_row(record_timings))
    return path


def read_results_csv(path: Path) -> list[dict[str, str]]:
    """Read a sweep CSV into dictionaries keyed by column name."""
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_residuals_csv(report: SolveReport, path: Path) -> Path:
    """Write the residual history of a solve."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iteration", "residual", "relative_residual"])
        for i, (r, rel) in enumerate(zip(report.residuals, report.relative_residuals)):
            writer.writerow([i, f"{r:.16e}", f"{rel:.16e}"])
    return path


def write_report_json(report: SolveReport, path: Path, record_timings: bool = True) -> Path:
    """Write a solve report as JSON."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if not record_timings:
        report = report.model_copy(update={"seconds": 0.0, "timings": {}})
    path.write_text(report.model_dump_json(indent=2) + "\n")
    return path


def write_solution_csv(
    hierarchy: MeshHierarchy, u: FloatArray, p: FloatArray, directory: Path
) -> list[Path]:
    """Dump velocity (x, y, u_x, u_y) and pressure (x, y, p) at their vertices."""
    directory.mkdir(parents=True, exist_ok=True)
    finest = hierarchy.max_level
    n = hierarchy.num_vertices(finest)
    paths = []
    for name, coords, columns in (
        ("velocity.csv", hierarchy.coordinates(finest), [u[:n], u[n:]]),
        ("pressure.csv", hierarchy.coordinates(finest - 1), [p]),
    ):
        path = directory / name
        data = np.column_stack([coords, *columns])
        header = "x,y,u_x,u_y" if len(columns) == 2 else "x,y,p"
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.10e")
        paths.append(path)
    return paths


def _float(row: dict[str, str], key: str) -> float:
    return float(row[key])


def plot_iterations_vs_dr(rows: list[dict[str, str]], path: Path) -> Path:
    """Plot FGMRES iterations over the dynamic ratio, one line per coarsening/eval mode."""
    series: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for row in rows:
        label = f"{row['coarsening_mode']} / {row['eval_mode']} / omega={row['omega']}"
        series[label].append((_float(row, "DR"), _float(row, "iterations")))
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, points in sorted(series.items()):
        points.sort()
        ax.plot([p[0] for p in points], [p[1] for p in points], marker="o", label=label)
    ax.set_xscale("log")
    ax.set_xlabel("dynamic ratio")
    ax.set_ylabel("FGMRES iterations")
    ax.legend(fontsize="small")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_nu_sweep(rows: list[dict[str, str]], path: Path) -> Path:
    """Plot iterations and stored bytes over the AGCA threshold."""
    finite = sorted(
        (_float(r, "nu"), _float(r, "iterations"), _float(r, "stored_bytes"))
        for r in rows
        if np.isfinite(_float(r, "nu"))
    )
    fig, ax = plt.subplots(figsize=(6, 4))
    nus = [p[0] for p in finite]
    ax.plot(nus, [p[1] for p in finite], marker="o", color="tab:blue")
    ax.set_xscale("log")
    ax.set_xlabel("nu")
    ax.set_ylabel("FGMRES iterations", color="tab:blue")
    twin = ax.twinx()
    twin.plot(nus, [p[2] / 2**20 for p in finite], marker="s", color="tab:red")
    twin.set_ylabel("stored GCA matrices [MiB]", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_cagca(rows: list[dict[str, str]], path: Path) -> Path:
    """Plot c_agca over the macro grid size."""
    points = sorted((_float(r, "macro_nx"), _float(r, "c_agca")) for r in rows)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([p[0] for p in points], [p[1] for p in points], marker="o")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("macro cells per axis")
    ax.set_ylabel("c_agca")
    ax.set_ylim(bottom=0.0)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_residuals(report: SolveReport, path: Path) -> Path:
    """Plot the relative residual history of a solve."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(report.relative_residuals, marker=".")
    ax.set_xlabel("iteration")
    ax.set_ylabel("||r|| / ||b||")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_report(directory: Path) -> list[Path]:
    """Render plots for every result file found in an output directory."""
    written: list[Path] = []
    plots = (
        (SWEEP_CSV, "iterations-vs-dr.png", plot_iterations_vs_dr),
        (NU_SWEEP_CSV, "nu-sweep.png", plot_nu_sweep),
        (CAGCA_CSV, "cagca.png", plot_cagca),
    )
    for source, target, plot in plots:
        path = directory / source
        if not path.exists():
            continue
        rows = read_results_csv(path)
        if rows:
            written.append(plot(rows, directory / target))
            logger.info("Wrote %s", directory / target)
    report_path = directory / REPORT_JSON
    if report_path.exists():
        report = SolveReport.model_validate_json(report_path.read_text())
        written.append(plot_residuals(report, directory / "residuals.png"))
    return written
