"""Experiment sweeps: every (run, seed) pair of a config, trained and scored.

Architecture
============

::

    ExperimentConfig
        |  expand runs x seeds
        v
    N jobs
        |
        +---> [Run workers]  multiprocessing.Pool (or inline when workers == 1)
        |         Each worker preprocesses its seed's data, trains the
        |         posterior (or builds the infinite BAE), scores the test
        |         split and returns a plain record dict plus, optionally,
        |         the model file bytes.
        |              |
        |              v  queue.Queue (bounded, backpressure)
        |              |
        +---> [Writer thread]
                  Appends each record to the run-record file and writes
                  model files, so output is serialized.
                       |
                       v
                  [Aggregate]  records sorted by (run index, seed) ->
                  ResultTable, ATE row, summary.json

A failing run is caught inside the worker and recorded with its ``error``
message and NaN metrics; it never stops the sweep.
"""

from __future__ import annotations

import json
import math
import queue
import signal
import threading
import time
import zlib
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import TYPE_CHECKING

import pyarrow as pa
from rich.progress import BarColumn, Progress, ProgressColumn, Task, TextColumn
from rich.text import Text

from baekit import bayes, modelio
from baekit._console import console, status, warning
from baekit.autoencoder import ArchitectureSpec, classify_architecture
from baekit.bayes import InferenceMethod
from baekit.config import ConfigError, ExperimentConfig, RunSpec
from baekit.data import (
    MinMaxScaler,
    SplitDataset,
    downsample,
    gen_toy,
    load_csv,
    scaler_fit,
    scaler_transform,
    segment,
    split_70_30,
)
from baekit.eval import CellKey, MissingBaselineError, ResultTable, ate, auroc
from baekit.nn.rng import RngStream
from baekit.nngp import infbae_score
from baekit.writers import RUN_RECORD_SCHEMA, OutputExistsError, Writer

if TYPE_CHECKING:
    from rich.progress import TaskID

SUMMARY_FILE = "summary.json"
DATA_STREAM = 1
TRAIN_STREAM = 2


class _ElapsedEstTotalColumn(ProgressColumn):
    """Shows ``elapsed / ~estimated_total``."""

    def render(self, task: Task) -> Text:
        elapsed = task.elapsed or 0.0
        elapsed_str = _fmt_time(elapsed)
        if task.total and task.completed and task.completed < task.total:  # pragma: no cover
            est_total = elapsed * task.total / task.completed
            return Text(f"{elapsed_str}/~{_fmt_time(est_total)}", style="cyan")
        return Text(elapsed_str, style="cyan")


def _fmt_time(seconds: float) -> str:
    m, s = divmod(int(seconds), 60)
    if m:
        return f"{m}:{s:02d}"
    return f"{s}s"


class _ProgressBar:
    """Advances once per finished run and shows the run rate."""

    def __init__(self, progress: Progress, task_id: TaskID, total: int) -> None:
        self._progress = progress
        self._task_id = task_id
        self._total = total
        self._started = False

    def update(self, done: int, failed: int, rate_per_min: float) -> None:
        if not self._started:
            self._progress.update(self._task_id, total=self._total)
            self._started = True
        failed_str = f", [yellow]{failed} failed[/]" if failed else ""
        self._progress.update(
            self._task_id,
            advance=1,
            description=f"[cyan]{done}/{self._total} runs, {rate_per_min:,.1f} runs/min{failed_str}",
        )


@dataclass(frozen=True)
class Job:
    index: int
    run: RunSpec
    seed: int


@dataclass
class JobResult:
    job: Job
    record: dict
    model_bytes: bytes | None = None


@dataclass
class ExperimentResult:
    records: list[dict]
    table: ResultTable
    ate: dict[str, float]
    summary_path: Path
    records_path: Path
    t_total: float
    n_failed: int = 0
    model_paths: list[Path] = field(default_factory=list)

    @property
    def all_failed(self) -> bool:
        return self.n_failed == len(self.records)


# ----------------------------------------------------------------------------------------------------------------------
# One run
# ----------------------------------------------------------------------------------------------------------------------


def prepare_data(cfg: ExperimentConfig, seed: int) -> tuple[SplitDataset, MinMaxScaler | None]:
    """Generate or load the dataset, split it 70:30 and min-max scale both sides on the train fit."""
    ds = cfg.dataset
    pre = cfg.preprocess
    if ds.kind == "csv":
        assert ds.path is not None
        loaded = load_csv(Path(ds.path), ds.label_column, deviation_column=ds.deviation_column)
        X, labels = loaded.X, loaded.labels
        if pre.segment is not None:
            X = segment(X, *pre.segment)
            labels = segment(labels, *pre.segment) if labels is not None else None
        if pre.downsample > 1:
            X = downsample(X, pre.downsample)
            labels = downsample(labels, pre.downsample) if labels is not None else None
        if labels is None:
            inliers, anomalies = X, None
        else:
            inliers, anomalies = X[labels == 0], X[labels == 1]
    else:
        stream = RngStream(seed, DATA_STREAM)
        inliers = gen_toy(ds.toy, ds.n, ds.noise, stream.child(0)).X
        anomalies = None
        if ds.anomaly is not None and ds.n_anomalies > 0:
            anomalies = gen_toy(
                ds.anomaly, ds.n_anomalies, ds.anomaly_noise, stream.child(1),
                radius=ds.anomaly_radius, center=ds.anomaly_center,
            ).X
    split = split_70_30(inliers, anomalies, seed)
    if not pre.scale:
        return split, None
    scaler = scaler_fit(split.train.X)
    split.train.X = scaler_transform(scaler, split.train.X)
    split.test.X = scaler_transform(scaler, split.test.X)
    return split, scaler


def architecture_spec(cfg: ExperimentConfig, run: RunSpec, input_dim: int) -> ArchitectureSpec:
    arch = cfg.architecture
    return ArchitectureSpec(
        input_dim=input_dim,
        hidden_widths=arch.hidden_widths,
        latent_factor=run.latent_factor,
        skip=run.skip,
        activation=arch.activation,
        use_layer_norm=arch.use_layer_norm,
        skip_mode=arch.skip_mode,
    )


def _check_arch_type(index: int, run: RunSpec, spec: ArchitectureSpec) -> None:
    actual = classify_architecture(spec).value
    if actual != run.arch_type:
        raise ConfigError(
            f"runs[{index}]: arch_type {run.arch_type} with latent_factor={run.latent_factor:g} has a latent size of "
            f"{spec.latent_dim} for {spec.input_dim} feature(s), which is type {actual}"
        )


def check_architectures(cfg: ExperimentConfig, input_dim: int) -> None:
    """Reject runs whose declared type does not hold once the latent size is rounded for ``input_dim``."""
    for index, run in enumerate(cfg.runs):
        if run.method is not InferenceMethod.INFINITE:
            _check_arch_type(index, run, architecture_spec(cfg, run, input_dim))


def _run_stream(run: RunSpec, seed: int) -> RngStream:
    # keyed by the run itself so reordering [[runs]] does not change results
    return RngStream(seed, TRAIN_STREAM).child(zlib.crc32(run.key.encode()))


def execute(cfg: ExperimentConfig, job: Job) -> JobResult:
    """Run one job; failures become a record with an ``error`` message."""
    run = job.run
    record = {
        "fingerprint": cfg.fingerprint(),
        "dataset": cfg.dataset.name,
        "method": run.method.value,
        "arch_type": run.arch_type,
        "latent_factor": run.latent_factor,
        "skip": run.skip,
        "seed": job.seed,
        "auroc": math.nan,
        "train_nll": math.nan,
        "wall_time_ms": 0.0,
        "error": None,
    }
    t0 = time.perf_counter()
    model_bytes = None
    try:
        split, scaler = prepare_data(cfg, job.seed)
        train_x, test = split.train.X, split.test
        if run.method is InferenceMethod.INFINITE:
            nngp_cfg = cfg.nngp
            scores = infbae_score(test.X, train_x, nngp_cfg)
            record["train_nll"] = float(infbae_score(train_x, train_x, nngp_cfg).mean())
            if cfg.output.save_models:
                model_bytes = modelio.to_bytes(modelio.infinite_table(train_x, nngp_cfg, scaler))
        else:
            spec = architecture_spec(cfg, run, train_x.shape[1])
            _check_arch_type(job.index, run, spec)
            ensemble = bayes.train(spec, train_x, cfg.train.with_method(run.method), _run_stream(run, job.seed))
            scores = bayes.predictive_nll(ensemble, test.X)
            record["train_nll"] = float(bayes.predictive_nll(ensemble, train_x).mean())
            if cfg.output.save_models:
                model_bytes = modelio.to_bytes(modelio.ensemble_table(ensemble, scaler))
        assert test.labels is not None
        record["auroc"] = auroc(scores, test.labels)
    except Exception as exc:  # noqa: BLE001
        record["error"] = f"{type(exc).__name__}: {exc}"
        model_bytes = None
    record["wall_time_ms"] = (time.perf_counter() - t0) * 1000.0
    return JobResult(job, record, model_bytes)


def _execute_packed(args: tuple[ExperimentConfig, Job]) -> JobResult:
    return execute(*args)


def model_filename(record: dict) -> str:
    return (
        f"{record['method']}-{record['arch_type']}-f{record['latent_factor']:g}"
        f"-{'skip' if record['skip'] else 'noskip'}-seed{record['seed']}{modelio.SUFFIX}"
    )


# ----------------------------------------------------------------------------------------------------------------------
# Sweep
# ----------------------------------------------------------------------------------------------------------------------


def _writer_thread_fn(
    writer: Writer,
    write_q: queue.Queue,
    n_jobs: int,
    result: dict,
    *,
    model_dir: Path | None,
    overwrite: bool,
    progress_bar: _ProgressBar | None = None,
) -> None:
    """Writer thread: pull job results from the queue, append records, write model files."""
    try:
        done = 0
        failed = 0
        t_start = time.perf_counter()
        collected: list[JobResult] = []
        model_paths: list[Path] = []
        while True:
            item: JobResult | None = write_q.get()
            if item is None:
                break
            writer.write_batch(pa.RecordBatch.from_pylist([item.record], schema=RUN_RECORD_SCHEMA))
            if item.model_bytes is not None and model_dir is not None:
                model_paths.append(
                    modelio.write_model(model_dir / model_filename(item.record), item.model_bytes, overwrite=overwrite)
                )
            collected.append(item)
            done += 1
            failed += item.record["error"] is not None
            elapsed = time.perf_counter() - t_start
            if progress_bar is not None:
                progress_bar.update(done, failed, done / elapsed * 60 if elapsed > 0 else 0.0)
            else:
                rec = item.record
                outcome = (
                    f"[yellow]failed: {rec['error']}[/]" if rec["error"] else f"AUROC {rec['auroc']:.3f}"
                )
                console.print(
                    f"  run {done}/{n_jobs}: {rec['method']} {rec['arch_type']} seed {rec['seed']} "
                    f"{outcome} [dim][{rec['wall_time_ms'] / 1000:.2f}s][/]"
                )
        result["collected"] = collected
        result["model_paths"] = model_paths
    except Exception as exc:
        result["error"] = exc
        # keep draining so producers never block on a full queue
        while write_q.get() is not None:
            pass


def expand_jobs(cfg: ExperimentConfig) -> list[Job]:
    return [Job(i, run, seed) for i, run in enumerate(cfg.runs) for seed in cfg.seeds]


def _cell_runs(records: list[dict], dataset: str) -> list[tuple[CellKey, float]]:
    return [
        ((dataset, r["method"], r["arch_type"], r["latent_factor"]), r["auroc"])
        for r in records
        if r["error"] is None and math.isfinite(r["auroc"])
    ]


def write_summary(path: Path, cfg: ExperimentConfig, table: ResultTable, effects: dict[str, float], n_failed: int) -> None:
    payload = {
        "fingerprint": cfg.fingerprint(),
        "dataset": cfg.dataset.name,
        "seeds": list(cfg.seeds),
        "failed_runs": n_failed,
        "cells": table.to_dict(),
        "ate": effects,
    }
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def run_experiment(
    cfg: ExperimentConfig,
    writer: Writer,
    *,
    progress: bool = True,
    overwrite: bool = False,
    write_queue: int = 4,
) -> ExperimentResult:
    """Execute every (run, seed) job of ``cfg`` and aggregate the results."""
    out_dir = Path(cfg.output.dir)
    summary_path = out_dir / SUMMARY_FILE
    if summary_path.exists() and not overwrite:
        raise OutputExistsError(f"Output file {summary_path} already exists. Use --overwrite to replace it.")

    split, _ = prepare_data(cfg, cfg.seeds[0])
    check_architectures(cfg, split.train.n_features)

    jobs = expand_jobs(cfg)
    workers = min(cfg.output.workers, len(jobs))
    if not progress:
        status("Jobs", f"{len(cfg.runs)} runs x {len(cfg.seeds)} seeds = {len(jobs)}")
        status("Workers", str(workers))
        status("Fingerprint", cfg.fingerprint()[:16])

    writer.setup()
    t0 = time.perf_counter()

    progress_bar: _ProgressBar | None = None
    progress_ctx: Progress | None = None
    if progress:
        progress_ctx = Progress(
            TextColumn("  [bold]{task.fields[label]:<14s}[/]"),
            BarColumn(),
            TextColumn("[progress.description]{task.description}"),
            TextColumn("[dim]·[/]"),
            _ElapsedEstTotalColumn(),
            console=console,
            transient=True,
            redirect_stdout=True,
            redirect_stderr=True,
        )
        task_id = progress_ctx.add_task("", total=None, label="Train")
        progress_bar = _ProgressBar(progress_ctx, task_id, total=len(jobs))
        progress_ctx.start()

    write_q: queue.Queue = queue.Queue(maxsize=write_queue)
    writer_result: dict = {}
    writer_thread = threading.Thread(
        target=_writer_thread_fn,
        args=(writer, write_q, len(jobs), writer_result),
        kwargs={
            "model_dir": out_dir / "models" if cfg.output.save_models else None,
            "overwrite": overwrite,
            "progress_bar": progress_bar,
        },
        daemon=True,
    )
    writer_thread.start()

    try:
        if workers <= 1:
            for job in jobs:
                write_q.put(execute(cfg, job))
        else:
            # Workers ignore SIGINT; the parent handles Ctrl-C and terminates them.
            pool = Pool(workers, initializer=signal.signal, initargs=(signal.SIGINT, signal.SIG_IGN))
            try:
                for result in pool.imap_unordered(_execute_packed, [(cfg, job) for job in jobs]):
                    write_q.put(result)  # blocks if queue full (backpressure)
            except KeyboardInterrupt:  # pragma: no cover
                pool.terminate()
                pool.join()
                raise
            else:
                pool.close()
                pool.join()
    except KeyboardInterrupt:  # pragma: no cover
        if progress_ctx is not None:
            progress_ctx.stop()
        raise

    write_q.put(None)
    writer_thread.join()
    if progress_ctx is not None:
        progress_ctx.stop()
    if "error" in writer_result:
        raise writer_result["error"]
    writer.finalize()

    collected: list[JobResult] = sorted(writer_result["collected"], key=lambda r: (r.job.index, r.job.seed))
    records = [r.record for r in collected]
    n_failed = sum(r["error"] is not None for r in records)
    table = ResultTable.from_runs(_cell_runs(records, cfg.dataset.name))
    effects: dict[str, float] = {}
    try:
        effects = ate(table)
    except MissingBaselineError as exc:
        warning(f"ATE skipped: {exc}")
    write_summary(summary_path, cfg, table, effects, n_failed)

    t_total = time.perf_counter() - t0
    status("Summary", f"{summary_path}", f"[{t_total:.2f}s]")
    return ExperimentResult(
        records=records,
        table=table,
        ate=effects,
        summary_path=summary_path,
        records_path=writer.path,
        t_total=t_total,
        n_failed=n_failed,
        model_paths=writer_result.get("model_paths", []),
    )

