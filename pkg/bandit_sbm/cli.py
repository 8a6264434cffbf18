"""
Command-line interface for the cooperative bandit simulator

Commands:
    run     Run every configured algorithm over a batch of seeds
    sweep   Repeat `run` along one parameter axis
    detect  Detect clusters from an edge list and node covariates
    check   Compare a configuration against the edge-probability assumptions
"""
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.panel import Panel
from rich.syntax import Syntax
from rich.table import Table

from bandit_sbm import __version__
from bandit_sbm.clustering import initialize_assignment, ir_lss, match_labels
from bandit_sbm.config import (
    SWEEP_AXES,
    CliConfig,
    ExperimentConfig,
    apply_axis,
    load_config,
    load_settings,
)
from bandit_sbm.environment import global_stats
from bandit_sbm.errors import BanditSbmError, ExitCode, TheoryParameterError
from bandit_sbm.graph import load_edge_list
from bandit_sbm.results_store import ResultsStore, error_rows, summary_rows
from bandit_sbm.rng import derive_repetition_seed
from bandit_sbm.sim import BatchSummary, run_batch
from bandit_sbm.theory import check_assumptions, regret_bound

# ============================================================================
# SETUP AND CONFIGURATION
# ============================================================================

console = Console()
logger = logging.getLogger(__name__)

APP_NAME = "Cooperative Bandits on Stochastic Block Models"
DEFAULT_OUTPUT_DIR = Path("./results")

app = typer.Typer(
    help="Simulate cooperative multi-agent bandits on time-varying SBM graphs.",
    no_args_is_help=True,
)


def setup_logging(verbose: bool) -> int:
    """Route package logs through rich; returns the configured job count"""
    settings = load_settings()
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, rich_tracebacks=True)],
        force=True,
    )
    return settings.jobs


def fail(message: str, code: ExitCode) -> None:
    console.print(f"[bold red]❌ {escape(message)}[/bold red]")
    raise typer.Exit(code=int(code))


def read_config(config_path: Path) -> CliConfig:
    """Load and validate a config, mapping failures to exit code 2"""
    try:
        return load_config(config_path)
    except FileNotFoundError:
        fail(f"Config file not found: {config_path}", ExitCode.INPUT_ERROR)
    except json.JSONDecodeError as e:
        fail(f"Config is not valid JSON: {e}", ExitCode.INPUT_ERROR)
    except ValidationError as e:
        fail(f"Invalid config {config_path}:\n{e}", ExitCode.INPUT_ERROR)
    except OSError as e:
        fail(f"Cannot read config {config_path}: {e}", ExitCode.IO_ERROR)


def resolve_seeds(cfg: ExperimentConfig, seeds: Optional[int], seed_list: Optional[str]) -> List[int]:
    if seed_list:
        try:
            values = [int(s) for s in seed_list.split(",") if s.strip()]
        except ValueError:
            fail(f"--seed-list must be comma-separated integers, got '{seed_list}'", ExitCode.INPUT_ERROR)
        if not values or len(set(values)) != len(values):
            fail("--seed-list must contain distinct seeds", ExitCode.INPUT_ERROR)
        return values
    n_runs = seeds if seeds is not None else cfg.n_runs
    if n_runs < 1:
        fail("--seeds must be positive", ExitCode.INPUT_ERROR)
    return [derive_repetition_seed(cfg.master_seed, i) for i in range(n_runs)]


def run_all(cfg: ExperimentConfig, seeds: Sequence[int], jobs: int, base_dir: Path) -> list:
    return [
        run_batch(cfg, seeds, algorithm, jobs=jobs, base_dir=base_dir)
        for algorithm in cfg.algorithms
    ]


def write_batches(out: Path, cfg: ExperimentConfig, batches: list, seeds: Sequence[int]) -> None:
    store = ResultsStore(str(out))
    store.save_regret_csv([summary for summary, _ in batches])
    store.save_results_json(
        cfg.model_dump(mode="json", exclude={"out_dir", "sweep"}),
        batches,
        seeds,
        full_trace=cfg.full_trace,
    )


# ============================================================================
# DISPLAY HELPERS
# ============================================================================

def display_header(title: str):
    console.print(Panel(f"[bold cyan]{APP_NAME}[/bold cyan]\n[dim]{title}[/dim]", expand=False, border_style="cyan"))


def display_summaries(summaries: Sequence[BatchSummary], title: str = "📈 Final Regret"):
    table = Table(title=title)
    table.add_column("Algorithm", style="cyan")
    table.add_column("Runs", justify="right")
    table.add_column("Mean regret", justify="right", style="green")
    table.add_column("95% CI", justify="right")
    for s in summaries:
        ci = "degenerate" if s.degenerate else f"[{s.ci_lower[-1]:.4f}, {s.ci_upper[-1]:.4f}]"
        table.add_row(s.algorithm.value, str(s.n_runs), f"{s.final_mean:.4f}", ci)
    console.print(table)


# ============================================================================
# COMMANDS
# ============================================================================

@app.command()
def run(
    config_path: Path = typer.Argument(..., help="JSON experiment config"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    seeds: Optional[int] = typer.Option(None, "--seeds", help="Number of seeded runs"),
    seed_list: Optional[str] = typer.Option(None, "--seed-list", help="Explicit comma-separated seeds"),
    jobs: Optional[int] = typer.Option(None, "--jobs", "-j", help="Concurrent episodes (env BANDIT_SBM_JOBS)"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    """Run every configured algorithm and write regret.csv and results.json"""
    env_jobs = setup_logging(verbose)
    cfg = read_config(config_path)
    seed_values = resolve_seeds(cfg, seeds, seed_list)
    out_dir = out or Path(cfg.out_dir or DEFAULT_OUTPUT_DIR)
    display_header(f"run: {', '.join(a.value for a in cfg.algorithms)} × {len(seed_values)} seeds")

    try:
        batches = run_all(cfg, seed_values, jobs or env_jobs, config_path.parent)
    except (BanditSbmError, ValueError) as e:
        fail(f"Invalid experiment: {e}", ExitCode.INPUT_ERROR)
    except OSError as e:
        fail(f"I/O error while running: {e}", ExitCode.IO_ERROR)

    try:
        write_batches(out_dir, cfg, batches, seed_values)
    except OSError as e:
        fail(f"Cannot write results to {out_dir}: {e}", ExitCode.IO_ERROR)

    display_summaries([summary for summary, _ in batches])
    console.print(f"[green]✅ Results written to {out_dir}[/green]")


def _format_value(axis: str, value: float) -> str:
    if axis in ("M", "C", "K") and float(value) == int(value):
        return str(int(value))
    return format(value, "g")


@app.command()
def sweep(
    config_path: Path = typer.Argument(..., help="JSON experiment config"),
    axis: Optional[str] = typer.Option(None, "--axis", help=f"One of {', '.join(SWEEP_AXES)}"),
    values: Optional[str] = typer.Option(None, "--values", help="Comma-separated axis values"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    seeds: Optional[int] = typer.Option(None, "--seeds", help="Number of seeded runs"),
    seed_list: Optional[str] = typer.Option(None, "--seed-list", help="Explicit comma-separated seeds"),
    jobs: Optional[int] = typer.Option(None, "--jobs", "-j", help="Concurrent episodes (env BANDIT_SBM_JOBS)"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    """Run the experiment once per axis value and write sweep_summary.csv"""
    env_jobs = setup_logging(verbose)
    cfg = read_config(config_path)
    axis = axis or (cfg.sweep.axis if cfg.sweep else None)
    if axis not in SWEEP_AXES:
        fail(f"Sweep axis must be one of {sorted(SWEEP_AXES)}, got {axis}", ExitCode.INPUT_ERROR)
    if values:
        try:
            axis_values = [float(v) for v in values.split(",") if v.strip()]
        except ValueError:
            fail(f"--values must be comma-separated numbers, got '{values}'", ExitCode.INPUT_ERROR)
    elif cfg.sweep:
        axis_values = list(cfg.sweep.values)
    else:
        fail("Sweep needs --values or a 'sweep' section in the config", ExitCode.INPUT_ERROR)

    seed_values = resolve_seeds(cfg, seeds, seed_list)
    out_dir = out or Path(cfg.out_dir or DEFAULT_OUTPUT_DIR)
    display_header(f"sweep over {axis}: {', '.join(_format_value(axis, v) for v in axis_values)}")

    rows = []
    failed = []
    for value in axis_values:
        label = _format_value(axis, value)
        try:
            point = apply_axis(cfg, axis, value)
            batches = run_all(point, seed_values, jobs or env_jobs, config_path.parent)
        except (ValidationError, BanditSbmError, ValueError) as e:
            logger.error(f"Sweep point {axis}={label} failed: {e}")
            console.print(f"[red]✗ {axis}={label}: invalid ({e.__class__.__name__})[/red]")
            rows.extend(error_rows(axis, label, [a.value for a in cfg.algorithms]))
            failed.append(label)
            continue
        try:
            write_batches(out_dir / f"{axis}={label}", point, batches, seed_values)
        except OSError as e:
            fail(f"Cannot write results for {axis}={label}: {e}", ExitCode.IO_ERROR)
        summaries = [summary for summary, _ in batches]
        rows.extend(summary_rows(axis, label, summaries))
        display_summaries(summaries, title=f"📈 {axis}={label}")

    try:
        ResultsStore(str(out_dir)).save_sweep_summary(rows)
    except OSError as e:
        fail(f"Cannot write sweep summary: {e}", ExitCode.IO_ERROR)

    if failed:
        fail(f"Sweep values failed: {', '.join(failed)}", ExitCode.INPUT_ERROR)
    console.print(f"[green]✅ Sweep written to {out_dir}[/green]")


def _read_labels(path: Path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        return np.array([int(line) for line in f if line.strip()], dtype=np.int64)


@app.command()
def detect(
    edge_list: Path = typer.Argument(..., help="Edge list: 'u v' per line, 0-based"),
    covariates: Path = typer.Argument(..., help="Covariates CSV: one row per vertex, no header"),
    n_clusters: int = typer.Option(..., "--C", help="Number of clusters"),
    sigma2: float = typer.Option(1.0, "--sigma2", help="Covariate noise variance"),
    iters: int = typer.Option(10, "--iters", help="Refinement iterations"),
    seed: int = typer.Option(0, "--seed", help="Seed of the spectral initialization"),
    truth: Optional[Path] = typer.Option(None, "--truth", help="Ground-truth labels, one per line"),
    out: Path = typer.Option(DEFAULT_OUTPUT_DIR, "--out", "-o", help="Output directory"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    """Detect clusters from a graph plus node covariates and write assignment.json"""
    setup_logging(verbose)
    try:
        V = np.loadtxt(covariates, delimiter=",", ndmin=2)
        graph = load_edge_list(edge_list.read_text(encoding="utf-8"), V.shape[0])
        truth_labels = _read_labels(truth) if truth is not None else None
    except FileNotFoundError as e:
        fail(f"Input file not found: {e.filename}", ExitCode.INPUT_ERROR)
    except (BanditSbmError, ValueError) as e:
        fail(f"Cannot parse input: {e}", ExitCode.INPUT_ERROR)

    if not 1 <= n_clusters <= V.shape[0]:
        fail(f"--C must lie in [1, {V.shape[0]}], got {n_clusters}", ExitCode.INPUT_ERROR)
    if truth_labels is not None and truth_labels.size != V.shape[0]:
        fail(
            f"Truth file has {truth_labels.size} labels for {V.shape[0]} vertices",
            ExitCode.INPUT_ERROR,
        )
    if sigma2 <= 0 or iters < 1:
        fail("--sigma2 must be positive and --iters at least 1", ExitCode.INPUT_ERROR)

    Z0 = initialize_assignment(graph, V, n_clusters, np.random.default_rng(seed))
    result = ir_lss(graph, V, sigma2, Z0, iters)
    labels = result.assignment.labels
    accuracy = match_labels(labels, truth_labels).accuracy if truth_labels is not None else None

    try:
        ResultsStore(str(out)).save_assignment(labels.tolist(), result.status.value, result.iterations, accuracy)
    except OSError as e:
        fail(f"Cannot write assignment: {e}", ExitCode.IO_ERROR)

    table = Table(title="🔍 Cluster Detection", show_header=False)
    table.add_column("Property", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("Vertices", str(V.shape[0]))
    table.add_row("Status", result.status.value)
    table.add_row("Iterations", str(result.iterations))
    table.add_row("Cluster sizes", str(result.assignment.sizes.tolist()))
    if accuracy is not None:
        table.add_row("Accuracy", f"{accuracy:.4f}")
    console.print(table)


@app.command()
def check(
    config_path: Path = typer.Argument(..., help="JSON experiment config"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Directory for assumption_report.json"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    """Evaluate edge-probability assumptions; exit 1 if any applicable one fails"""
    setup_logging(verbose)
    cfg = read_config(config_path)
    try:
        bm = cfg.build_block_model()
        stats = global_stats(cfg.build_reward_model(bm), bm)
        params = cfg.theory_params(stats.gaps.tolist())
        report = check_assumptions(bm, params, cfg.theory.theorems)
    except (BanditSbmError, ValidationError, ValueError) as e:
        fail(f"Invalid parameters: {e}", ExitCode.INPUT_ERROR)

    document = report.model_dump(mode="json")
    bounds = {}
    for theorem in cfg.theory.theorems:
        try:
            bounds[theorem.value] = regret_bound(
                theorem, params.model_copy(update={"l": report.l, "min_cluster_size": bm.min_cluster_size})
            )
        except (TheoryParameterError, ValueError) as e:
            logger.info(f"No regret bound for {theorem.value}: {e}")
            bounds[theorem.value] = None
    document["regret_bounds"] = bounds

    if out is not None:
        try:
            ResultsStore(str(out)).save_report(document)
        except OSError as e:
            fail(f"Cannot write report: {e}", ExitCode.IO_ERROR)

    syntax = Syntax(json.dumps(document, indent=2, sort_keys=True), "json", theme="monokai", line_numbers=False)
    console.print(Panel(syntax, title="📐 Assumption Report"))

    if not report.all_passed:
        failing = [c.theorem.value for c in report.checks if c.applicable and not c.passed]
        console.print(f"[yellow]⚠️  Assumptions not met for: {', '.join(failing)}[/yellow]")
        raise typer.Exit(code=int(ExitCode.ASSUMPTION_FAILED))
    console.print("[green]✅ All applicable assumptions hold[/green]")


@app.command()
def version():
    """Show version information"""
    console.print(f"[bold cyan]{APP_NAME}[/bold cyan] v{__version__}")
