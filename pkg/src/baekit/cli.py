"""CLI application."""

from __future__ import annotations

import time
from importlib.metadata import version
from pathlib import Path
from typing import Annotated

import numpy as np
import pyarrow as pa
import pyarrow.csv as pv
import typer
from rich.table import Table

from baekit import experiment, modelio
from baekit._console import console, error, status, warning
from baekit.autoencoder import ArchitectureSpec
from baekit.bayes import InferenceMethod
from baekit.config import INFINITE_ARCH, ConfigError, ExperimentConfig, load_config
from baekit.data import load_csv
from baekit.eval import export_grid, score_grid
from baekit.lr_finder import lr_range_test
from baekit.nn.layers import ShapeError
from baekit.nn.rng import RngStream
from baekit.nngp import NNGPConfig, export_kernel, infbae_reconstruct, kernel_matrix
from baekit.writers import OutputExistsError, get_writer

app: typer.Typer = typer.Typer(no_args_is_help=True)


def _version_callback(value: bool) -> None:
    if value:
        console.print(f"baekit {version('baekit')}")
        raise typer.Exit()


@app.callback()
def _callback(
    version: Annotated[  # noqa: ARG001
        bool | None,
        typer.Option(
            "--version",
            callback=_version_callback,
            is_eager=True,
            help="Show version and exit.",
        ),
    ] = None,
) -> None:
    """baekit: Bayesian autoencoders with and without bottlenecks"""


ConfigOption = Annotated[Path, typer.Option("--config", "-c", help="Experiment TOML file")]
SeedOption = Annotated[
    list[int] | None,
    typer.Option("--seed", help="Seed to run (repeatable); replaces the config's seeds"),
]


def _load(config: Path) -> ExperimentConfig:
    try:
        return load_config(config)
    except ConfigError as exc:
        error(exc)
        raise typer.Exit(1) from None


def _fail(exc: BaseException) -> typer.Exit:
    if isinstance(exc, KeyboardInterrupt):
        console.print("\n  [yellow]Interrupted[/]")
        return typer.Exit(130)
    error(exc)
    return typer.Exit(1)


def _print_table(result: experiment.ExperimentResult, *, verbose: bool) -> None:
    if verbose:
        runs = Table(title="Runs", show_edge=False, title_style="bold")
        for col in ("Method", "Type", "Factor", "Skip", "Seed"):
            runs.add_column(col, style="cyan" if col == "Method" else None)
        runs.add_column("AUROC", justify="right")
        runs.add_column("Train NLL", justify="right", style="dim")
        runs.add_column("Time", justify="right", style="dim")
        for r in result.records:
            auroc = "[yellow]failed[/]" if r["error"] else f"{r['auroc']:.3f}"
            train_nll = "" if r["error"] else f"{r['train_nll']:.4f}"
            runs.add_row(
                r["method"], r["arch_type"], f"{r['latent_factor']:g}", "yes" if r["skip"] else "no",
                str(r["seed"]), auroc, train_nll, f"{r['wall_time_ms'] / 1000:.2f}s",
            )
        console.print(runs)
        console.print()

    tbl = Table(title="Mean ± standard error AUROC", show_edge=False, title_style="bold")
    tbl.add_column("Method", style="cyan")
    tbl.add_column("Type")
    tbl.add_column("Latent", justify="right")
    tbl.add_column("AUROC", justify="right")
    tbl.add_column("Runs", justify="right", style="dim")
    for (_, method, arch_type, factor), cell in sorted(result.table.cells.items()):
        latent = "" if arch_type == INFINITE_ARCH else f"×{factor:g}"
        tbl.add_row(method, arch_type, latent, f"{cell.mean:.3f} ± {cell.stderr:.3f}", str(cell.runs))
    if result.ate:
        tbl.add_section()
        for arch_type, effect in result.ate.items():
            tbl.add_row("ATE", arch_type, "", f"{effect:+.3f}", "")
    console.print(tbl)


@app.command()
def run(
    config: ConfigOption,
    seed: SeedOption = None,
    out: Annotated[Path | None, typer.Option("--out", "-o", help="Output directory (overrides output.dir)")] = None,
    workers: Annotated[
        int | None,
        typer.Option(envvar="BAEKIT_WORKERS", help="Parallel run workers (overrides output.workers)"),
    ] = None,
    overwrite: Annotated[bool, typer.Option(help="Overwrite existing output files")] = False,
    progress: Annotated[bool, typer.Option(help="Show a progress bar instead of per-run output")] = True,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Also print every run")] = False,
) -> None:
    """Run an experiment sweep: every run in the config for every seed."""
    cfg = _load(config)
    try:
        cfg = cfg.with_overrides(seeds=seed, out=out, workers=workers)
        writer = get_writer(
            cfg.output.format, Path(cfg.output.dir), compression=cfg.output.compression, overwrite=overwrite
        )
    except (ConfigError, ValueError) as exc:
        error(exc)
        raise typer.Exit(1) from None

    console.print()
    console.print(f"[bold green]{cfg.dataset.name}[/]  [dim]{config.name}[/]")
    try:
        result = experiment.run_experiment(cfg, writer, progress=progress, overwrite=overwrite)
    except OutputExistsError as exc:
        error(exc)
        raise typer.Exit(1) from None
    except KeyboardInterrupt:
        console.print("\n  [yellow]Interrupted, stopping workers...[/]")
        raise typer.Exit(130) from None
    except Exception as exc:
        error(exc)
        raise typer.Exit(1) from None
    finally:
        writer.close()

    console.print()
    _print_table(result, verbose=verbose)
    console.print()
    if result.n_failed:
        warning(f"{result.n_failed} of {len(result.records)} runs failed (see the error field in {result.records_path.name})")
    if result.all_failed:
        error("every run failed")
        raise typer.Exit(1)
    console.print(
        f"  [green]✓[/] {len(result.records) - result.n_failed} runs -> {result.records_path} "
        f"[dim][{result.t_total:.2f}s][/]"
    )


@app.command()
def score(
    model: Annotated[Path, typer.Argument(help="Model file (.baemodel)")],
    data: Annotated[Path, typer.Argument(help="CSV file with one sample per row")],
    out: Annotated[Path, typer.Option("--out", "-o", help="Output CSV with one score per row")] = Path("scores.csv"),
    label_column: Annotated[
        str | None, typer.Option(help="Column to drop from the features before scoring")
    ] = None,
    overwrite: Annotated[bool, typer.Option(help="Overwrite an existing output file")] = False,
) -> None:
    """Score every row of a CSV file with a saved model (E[NLL], higher = more anomalous)."""
    try:
        if out.exists() and not overwrite:
            raise OutputExistsError(f"Output file {out} already exists. Use --overwrite to replace it.")
        t0 = time.perf_counter()
        loaded = modelio.load_model(model)
        dataset = load_csv(data, label_column)
        if dataset.n_features != loaded.input_dim:
            raise ShapeError(
                f"model expects {loaded.input_dim} features, {data.name} has {dataset.n_features}"
            )
        scores = loaded.scorer()(dataset.X)
        pv.write_csv(pa.table({"score": scores}), out)
    except (Exception, KeyboardInterrupt) as exc:
        raise _fail(exc) from None
    status("Score", f"{len(scores):,} rows -> {out}", f"[{time.perf_counter() - t0:.2f}s]")


def _parse_bounds(bounds: list[str], dim: int) -> list[tuple[float, float]]:
    if not bounds:
        return [(0.0, 1.0)] * dim
    parsed = []
    for b in bounds:
        try:
            lo, hi = (float(v) for v in b.split(","))
        except ValueError:
            raise typer.BadParameter(f"bounds must look like 'lo,hi', got {b!r}") from None
        parsed.append((lo, hi))
    if len(parsed) != dim:
        raise ShapeError(f"model has {dim} input features but {len(parsed)} bounds were given")
    return parsed


@app.command()
def grid(
    model: Annotated[Path | None, typer.Option("--model", "-m", help="Model file to evaluate")] = None,
    config: Annotated[
        Path | None,
        typer.Option("--config", "-c", help="Build an infinite BAE inline from this config's data and [nngp]"),
    ] = None,
    seed: Annotated[int, typer.Option(help="Data seed for --config")] = 0,
    bounds: Annotated[
        list[str] | None,
        typer.Option("--bounds", help="Per-axis 'lo,hi' in scaled input space (repeat per axis; default 0,1)"),
    ] = None,
    resolution: Annotated[int, typer.Option(help="Lattice points per axis")] = 100,
    log: Annotated[bool, typer.Option(help="Write log(score + 1e-12) instead of the score")] = False,
    variance: Annotated[
        bool, typer.Option(help="Add the GP predictive variance column (infinite BAE only)")
    ] = False,
    out: Annotated[Path, typer.Option("--out", "-o", help="Output CSV")] = Path("grid.csv"),
    overwrite: Annotated[bool, typer.Option(help="Overwrite an existing output file")] = False,
) -> None:
    """Evaluate E[NLL] on a 1-D or 2-D lattice (the data behind contour plots)."""
    if (model is None) == (config is None):
        error("give exactly one of --model or --config")
        raise typer.Exit(1)
    try:
        if out.exists() and not overwrite:
            raise OutputExistsError(f"Output file {out} already exists. Use --overwrite to replace it.")
        t0 = time.perf_counter()
        if model is not None:
            loaded = modelio.load_model(model)
        else:
            cfg = _load(config)  # type: ignore[arg-type]
            split, scaler = experiment.prepare_data(cfg, seed)
            loaded = modelio.from_table(modelio.infinite_table(split.train.X, cfg.nngp, scaler))
        if variance and loaded.method is not InferenceMethod.INFINITE:
            raise ValueError("--variance needs an infinite BAE (method 'infinite')")
        result = score_grid(
            loaded.scorer(scaled=True), _parse_bounds(bounds or [], loaded.input_dim), resolution, log=log
        )
        if variance:
            assert loaded.train_x is not None and loaded.nngp is not None
            _, var = infbae_reconstruct(result.points, loaded.train_x, loaded.nngp)
            pv.write_csv(result.to_table().append_column("variance", pa.array(var)), out)
        else:
            export_grid(result, out)
    except typer.Exit:
        raise
    except (Exception, KeyboardInterrupt) as exc:
        raise _fail(exc) from None
    status("Grid", f"{len(result.scores):,} points -> {out}", f"[{time.perf_counter() - t0:.2f}s]")


@app.command("lr-find")
def lr_find(
    config: ConfigOption,
    seed: Annotated[int, typer.Option(help="Seed for data and initialisation")] = 0,
    run_index: Annotated[int, typer.Option(help="Which [[runs]] entry supplies the architecture")] = 0,
    lr_min: Annotated[float, typer.Option(help="Smallest learning rate of the sweep")] = 1e-6,
    lr_max: Annotated[float, typer.Option(help="Largest learning rate of the sweep")] = 1.0,
    steps: Annotated[int, typer.Option(help="Number of sweep steps")] = 100,
) -> None:
    """Learning-rate range test on the training split of a config."""
    cfg = _load(config)
    try:
        if not 0 <= run_index < len(cfg.runs):
            raise ValueError(f"--run-index must be in 0..{len(cfg.runs) - 1}, got {run_index}")
        run_spec = cfg.runs[run_index]
        if run_spec.method is InferenceMethod.INFINITE:
            raise ValueError("the infinite BAE is not trained; pick a finite run with --run-index")
        t0 = time.perf_counter()
        split, _ = experiment.prepare_data(cfg, seed)
        arch = cfg.architecture
        spec = ArchitectureSpec(
            input_dim=split.train.n_features,
            hidden_widths=arch.hidden_widths,
            latent_factor=run_spec.latent_factor,
            skip=run_spec.skip,
            activation=arch.activation,
            use_layer_norm=arch.use_layer_norm,
            skip_mode=arch.skip_mode,
        )
        result = lr_range_test(
            spec, split.train.X, lr_min, lr_max, steps, rng=RngStream(seed), cfg=cfg.train
        )
    except (Exception, KeyboardInterrupt) as exc:
        raise _fail(exc) from None

    elapsed = f"[{time.perf_counter() - t0:.2f}s]"
    if result.diverged_at is not None:
        status("Diverged", f"lr {result.diverged_at:.3g}")
    else:
        status("Diverged", "no (sweep reached lr_max)")
    status("Suggested", f"[bold]{result.suggested_lr:.3g}[/]", elapsed)


@app.command()
def kernel(
    data: Annotated[Path, typer.Argument(help="CSV file; rows are the kernel's points")],
    out: Annotated[Path, typer.Option("--out", "-o", help="Output text file")] = Path("kernel.txt"),
    depth: Annotated[int, typer.Option(help="Number of infinitely-wide layers")] = 7,
    activation: Annotated[str, typer.Option(help="relu, leaky_relu, erf, identity, gelu or selu")] = "leaky_relu",
    label_column: Annotated[str | None, typer.Option(help="Column to drop from the features")] = None,
    overwrite: Annotated[bool, typer.Option(help="Overwrite an existing output file")] = False,
) -> None:
    """Export the NNGP kernel matrix of a CSV's rows as plain text."""
    try:
        if out.exists() and not overwrite:
            raise OutputExistsError(f"Output file {out} already exists. Use --overwrite to replace it.")
        t0 = time.perf_counter()
        dataset = load_csv(data, label_column)
        k = kernel_matrix(dataset.X, None, NNGPConfig(depth=depth, activation=activation))
        export_kernel(k, out)
    except (Exception, KeyboardInterrupt) as exc:
        raise _fail(exc) from None
    status(
        "Kernel",
        f"{k.shape[0]}x{k.shape[1]}, min eigenvalue {np.linalg.eigvalsh(k.entries).min():.3g} -> {out}",
        f"[{time.perf_counter() - t0:.2f}s]",
    )
