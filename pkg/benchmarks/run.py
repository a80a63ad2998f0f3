#!/usr/bin/env python3
"""Benchmark scoring cost: the infinite BAE's cubic GP solve against finite posteriors."""

from __future__ import annotations

import json
import os
import platform
import statistics
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Annotated, Any

import numpy as np
import typer
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from baekit.autoencoder import ArchitectureSpec
from baekit.bayes import InferenceMethod, TrainConfig, predictive_nll, train
from baekit.data import ToyKind, gen_toy, scaler_fit, scaler_transform
from baekit.nn.rng import RngStream
from baekit.nngp import NNGPConfig, infbae_score

console = Console()

SCRIPT_DIR = Path(__file__).parent
DEFAULT_RESULTS_DIR = SCRIPT_DIR / "results"
DEFAULT_SIZES = "250,500,1000,2000"
N_QUERY = 200


# ---------------------------------------------------------------------------
# System info
# ---------------------------------------------------------------------------


def _cpu_model() -> str:
    """Return the CPU model string."""
    if sys.platform == "linux":
        try:
            for line in Path("/proc/cpuinfo").read_text().splitlines():
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
        except OSError:
            pass
    return platform.processor() or "unknown"


def _collect_system_info() -> dict[str, Any]:
    return {
        "cpu_model": _cpu_model(),
        "cpu_count": os.cpu_count(),
        "os": platform.system(),
        "os_version": platform.release(),
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
    }


# ---------------------------------------------------------------------------
# Cases
# ---------------------------------------------------------------------------


@dataclass
class CaseResult:
    """Timings of one (method, N) case over several repetitions."""

    method: str
    n_train: int
    fit_seconds: list[float] = field(default_factory=list)
    score_seconds: list[float] = field(default_factory=list)

    def stats(self, values: list[float]) -> dict[str, Any]:
        return {
            "median": statistics.median(values),
            "stddev": statistics.stdev(values) if len(values) > 1 else None,
            "min": min(values),
            "max": max(values),
        }


def _data(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    stream = RngStream(seed, 9)
    x = gen_toy(ToyKind.BLOBS, n + N_QUERY, 0.3, stream).X
    scaler = scaler_fit(x[:n])
    return scaler_transform(scaler, x[:n]), scaler_transform(scaler, x[n:])


def _time_infinite(train_x: np.ndarray, query: np.ndarray, config: NNGPConfig) -> tuple[float, float]:
    t0 = time.perf_counter()
    infbae_score(query, train_x, config)
    # conditioning and scoring share one solve, so fit time is zero
    return 0.0, time.perf_counter() - t0


def _time_finite(
    method: InferenceMethod, train_x: np.ndarray, query: np.ndarray, epochs: int, seed: int
) -> tuple[float, float]:
    spec = ArchitectureSpec(input_dim=train_x.shape[1], latent_factor=2.0, skip=True)
    cfg = TrainConfig(epochs=epochs, method=method)
    t0 = time.perf_counter()
    posterior = train(spec, train_x, cfg, RngStream(seed))
    t1 = time.perf_counter()
    predictive_nll(posterior, query)
    return t1 - t0, time.perf_counter() - t1


def run_case(method: str, n: int, reps: int, epochs: int, config: NNGPConfig) -> CaseResult:
    result = CaseResult(method=method, n_train=n)
    for rep in range(reps):
        train_x, query = _data(n, rep)
        if method == InferenceMethod.INFINITE:
            fit_s, score_s = _time_infinite(train_x, query, config)
        else:
            fit_s, score_s = _time_finite(InferenceMethod(method), train_x, query, epochs, rep)
        result.fit_seconds.append(fit_s)
        result.score_seconds.append(score_s)
    return result


# ---------------------------------------------------------------------------
# Results output
# ---------------------------------------------------------------------------


def _print_results_table(results: list[CaseResult]) -> None:
    table = Table(show_header=True, header_style="bold")
    table.add_column("Method")
    table.add_column("N", justify="right")
    table.add_column("Fit", justify="right")
    table.add_column("Score", justify="right")
    table.add_column("Score ratio", justify="right")

    previous: dict[str, float] = {}
    for r in results:
        score = r.stats(r.score_seconds)
        score_str = f"{score['median']:.3f}s"
        if score["stddev"] is not None:
            score_str += f" [dim](±{score['stddev']:.3f}s)[/]"
        base = previous.get(r.method)
        ratio = f"{score['median'] / base:.1f}x" if base else "[dim]baseline[/]"
        previous.setdefault(r.method, score["median"])
        table.add_row(
            r.method, f"{r.n_train:,}", f"{r.stats(r.fit_seconds)['median']:.2f}s", score_str, ratio
        )

    console.print()
    console.print(table)


def _save_results(results: list[CaseResult], config: NNGPConfig, results_dir: Path) -> Path:
    results_dir.mkdir(parents=True, exist_ok=True)
    timestamp = datetime.now(timezone.utc)
    output_path = results_dir / f"{timestamp.strftime('%Y%m%d_%H%M%S')}_scoring.json"
    data = {
        "timestamp": timestamp.isoformat(),
        "system_info": _collect_system_info(),
        "nngp": config.to_dict(),
        "n_query": N_QUERY,
        "results": [
            {
                "method": r.method,
                "n_train": r.n_train,
                "fit_seconds": r.fit_seconds,
                "score_seconds": r.score_seconds,
                "stats": {"fit": r.stats(r.fit_seconds), "score": r.stats(r.score_seconds)},
            }
            for r in results
        ],
    }
    output_path.write_text(json.dumps(data, indent=2) + "\n")
    return output_path


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

app = typer.Typer(help="Benchmark baekit scoring cost against training-set size.")


@app.command()
def main(
    sizes: Annotated[str, typer.Option(help="Comma-separated training-set sizes.")] = DEFAULT_SIZES,
    methods: Annotated[
        str, typer.Option(help="Comma-separated methods (infinite, ae, ensemble, mcd, bbb, vae).")
    ] = "infinite",
    runs: Annotated[int, typer.Option(help="Repetitions per case.")] = 3,
    epochs: Annotated[int, typer.Option(help="Training epochs for finite methods.")] = 20,
    depth: Annotated[int, typer.Option(help="NNGP depth.")] = 7,
    results_dir: Annotated[Path, typer.Option(help="Directory to save results JSON.")] = DEFAULT_RESULTS_DIR,
) -> None:
    """Time scoring of a fixed query set as the training set grows."""
    try:
        ns = [int(s) for s in sizes.split(",") if s.strip()]
    except ValueError:
        raise typer.BadParameter(f"sizes must be integers, got {sizes!r}") from None
    method_names = [m.strip() for m in methods.split(",") if m.strip()]
    for name in method_names:
        if name not in {m.value for m in InferenceMethod}:
            raise typer.BadParameter(f"Unknown method: {name}. Available: {', '.join(InferenceMethod)}")
    if runs < 1 or not ns:
        console.print("[red]Error:[/] need at least one size and one run.")
        raise typer.Exit(1)

    config = NNGPConfig(depth=depth)
    info = _collect_system_info()
    console.print(
        Panel(
            f"[bold]Scoring benchmark[/]\n"
            f"Methods: {', '.join(method_names)}  Sizes: {', '.join(map(str, ns))}\n"
            f"System: {info['cpu_model']} ({info['cpu_count']} cores)",
        )
    )

    results: list[CaseResult] = []
    try:
        for method in method_names:
            for n in ns:
                with console.status(f"[bold green]{method}[/] N={n:,}..."):
                    results.append(run_case(method, n, runs, epochs, config))
                console.print(
                    f"  {method} N={n:,}: [cyan]{statistics.median(results[-1].score_seconds):.3f}s[/]"
                )
    except KeyboardInterrupt:
        console.print("\n  [yellow]Interrupted[/]")
        raise typer.Exit(130) from None

    _print_results_table(results)
    path = _save_results(results, config, results_dir)
    console.print(f"\n  Results saved to [cyan]{path}[/]")


if __name__ == "__main__":
    app()
