"""
CLI interface for rtprobe.

Commands:
- init: Write a default config file
- bench: Run the cyclic latency benchmark
- load: Generate background load
- configure: Apply/verify/tear down CPU isolation, show the environment
- experiment: Run configuration matrices, list presets and past runs
- analyze: Statistics, overshoot and deadline verdicts for sample files
- report: Tables, CSV, JSON and SVG boxplots

Exit codes: 0 ok, 1 failure, 2 missing RT privileges (strict), 3 configuration
error, 4 degraded series refused, 5 corrupt sample file, 6 persistence failure,
64 usage error, 130 interrupted.
"""

import asyncio
import json
import sys
from contextlib import contextmanager
from pathlib import Path

import click
import typer
import yaml
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from . import CSV_SCHEMA_VERSION, QUANTILE_METHOD, SAMPLE_FORMAT_VERSION, __version__
from .analysis import boxplot_data, feasibility_report, histogram
from .bench import BenchConfig, measure_loop_overhead, run_cyclic
from .config import Settings, create_default_config, get_settings, setup_logging
from .errors import ConfigurationError, RtprobeError
from .experiment import (
    PRESETS,
    ExperimentPlan,
    ExperimentRunner,
    RunArtifacts,
    build_preset,
    load_plan,
    open_samples,
    persist_samples,
)
from .experiment.samplefile import series_path
from .load import LoadSpec, start_load, stop_load
from .report import DEFAULT_REFERENCE_LINES, ReportSpec, emit_boxplot_svg, emit_csv, emit_json, emit_table
from .report.table import ReportRow, make_row, read_csv
from .state import StateDB
from .sysconfig import CpuSet, IsolationManager, IsolationPlan, capture_environment
from .timing import deadline_threshold, format_duration, load_task, parse_duration

EX_USAGE = 64
EX_INTERRUPTED = 130

app = typer.Typer(
    name="rtprobe",
    help="Real-time latency benchmarking and deadline feasibility toolkit",
    no_args_is_help=True,
)
configure_app = typer.Typer(help="CPU isolation, IRQ affinity and environment", no_args_is_help=True)
experiment_app = typer.Typer(help="Configuration matrices", no_args_is_help=True)
app.add_typer(configure_app, name="configure")
app.add_typer(experiment_app, name="experiment")

console = Console()
err_console = Console(stderr=True)


def version_info() -> dict:
    return {
        "toolkit_version": __version__,
        "sample_format_version": SAMPLE_FORMAT_VERSION,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "quantile_method": QUANTILE_METHOD,
    }


def _version_callback(value: bool):
    if value:
        typer.echo(json.dumps(version_info(), sort_keys=True))
        raise typer.Exit()


@app.callback()
def root(
    version: bool = typer.Option(
        False, "--version", callback=_version_callback, is_eager=True, help="Print versions as JSON"
    ),
):
    """Real-time latency benchmarking and deadline feasibility toolkit."""


def load_cli_settings() -> Settings:
    """Load settings with error handling and set up logging."""
    try:
        settings = get_settings()
    except Exception as e:
        err_console.print(f"[red]Error loading settings:[/red] {e}")
        err_console.print("Run [bold]rtprobe init[/bold] to create a config file.")
        raise typer.Exit(ConfigurationError.exit_code)
    setup_logging(settings)
    return settings


@contextmanager
def cli_errors():
    """Turn toolkit errors into a red message and their exit code."""
    try:
        yield
    except RtprobeError as e:
        err_console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(e.exit_code)
    except KeyboardInterrupt:
        err_console.print("[yellow]Interrupted[/yellow]")
        raise typer.Exit(EX_INTERRUPTED)


def _duration(value: str | None, name: str) -> int | None:
    if value is None:
        return None
    try:
        return parse_duration(value)
    except ConfigurationError as e:
        raise ConfigurationError(f"--{name}: {e}") from e


def _cpus(value: str | None) -> CpuSet | None:
    if value is None:
        return None
    try:
        return CpuSet.parse(value)
    except ValueError as e:
        raise ConfigurationError(f"--cpus: {e}") from e


def _read_model(path: Path, model):
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8-sig"))
        return model.model_validate(data or {})
    except (OSError, yaml.YAMLError, ValidationError) as e:
        raise ConfigurationError(f"Invalid {model.__name__} file {path}: {e}") from e


def _online_cpus(settings: Settings) -> CpuSet:
    online = settings.sysconfig.sys_root / "devices" / "system" / "cpu" / "online"
    if online.exists():
        return CpuSet.parse(online.read_text(encoding="utf-8"))
    return CpuSet.allowed()


# ============================================================================
# Init Command
# ============================================================================

@app.command()
def init():
    """
    Initialize configuration.

    Creates ~/.rtprobe/config.yaml with default settings.
    """
    config_path = create_default_config()
    if config_path:
        console.print(f"[green]Created config file:[/green] {config_path}")
    else:
        console.print("[yellow]Config file already exists.[/yellow]")


# ============================================================================
# Bench Command
# ============================================================================

@app.command()
def bench(
    out: Path = typer.Option(..., "--out", help="Sample file (.rtfs); x.cpu<N>.rtfs per worker when several"),
    interval: str | None = typer.Option(None, "--interval", help="Cycle time, e.g. 1ms"),
    loops: int | None = typer.Option(None, "--loops", min=0, help="Iterations per worker"),
    cpus: str | None = typer.Option(None, "--cpus", help="CPU list, e.g. 2-3 (default: all allowed)"),
    workers: int | None = typer.Option(None, "--workers", min=1, help="Default: one per CPU"),
    priority: int | None = typer.Option(None, "--priority", help="SCHED_FIFO priority"),
    simulate: Path | None = typer.Option(None, "--simulate", help="Replay a delay trace instead of sleeping"),
    warmup: int | None = typer.Option(None, "--warmup", min=0, help="Discard the first N samples"),
    offset: str | None = typer.Option(None, "--distribute-offset", help="Start stagger between workers"),
    strict: bool | None = typer.Option(None, "--strict/--no-strict", help="Exit 2 instead of degrading"),
    label: str | None = typer.Option(None, "--label", help="Series label (default: file stem)"),
):
    """
    Measure cyclic firing latency.

    Examples:
        rtprobe bench --interval 1ms --loops 60000 --out idle.rtfs
        rtprobe bench --cpus 2-3 --priority 98 --strict --out iso.rtfs
        rtprobe bench --simulate trace.txt --loops 1000 --out sim.rtfs
    """
    settings = load_cli_settings()
    with cli_errors():
        config = BenchConfig.from_settings(
            settings,
            interval=_duration(interval, "interval"),
            loops=loops,
            cpu_set=_cpus(cpus),
            workers=workers,
            priority=priority,
            clock="simulated" if simulate else "monotonic",
            trace=simulate,
            warmup=warmup,
            distribute_offset=_duration(offset, "distribute-offset"),
            strict=strict,
        )
        cfg = settings.sysconfig
        env = capture_environment(proc_root=cfg.proc_root, sys_root=cfg.sys_root)
        series_list = run_cyclic(config, env=env, label=label or out.name.split(".")[0])
        for series in series_list:
            path = series_path(out, series.metadata.cpu, len(series_list) > 1)
            persist_samples(series, path)
            typer.echo(str(path))
        if any(s.degraded for s in series_list):
            err_console.print("[yellow]Measured without RT privileges (degraded)[/yellow]")


@app.command()
def calibrate(
    iterations: int = typer.Option(10_000, "--iterations", min=2, help="Loop iterations to time"),
):
    """Report the median cost of one measurement loop iteration."""
    load_cli_settings()
    overhead = measure_loop_overhead(iterations)
    typer.echo(f"{overhead}ns per iteration ({format_duration(overhead)})")


# ============================================================================
# Load Command
# ============================================================================

@app.command()
def load(
    cpu: int = typer.Option(0, "--cpu", min=0, help="CPU spin workers"),
    vm: int = typer.Option(0, "--vm", min=0, help="Memory allocate/touch/free workers"),
    io: int = typer.Option(0, "--io", min=0, help="sync() workers"),
    hdd: int = typer.Option(0, "--hdd", min=0, help="Disk write workers"),
    vm_bytes: int | None = typer.Option(None, "--vm-bytes", min=1, help="Bytes per allocation"),
    hdd_bytes: int | None = typer.Option(None, "--hdd-bytes", min=1, help="Bytes per file"),
    cpus: str | None = typer.Option(None, "--cpus", help="CPU list the workers may use"),
    timeout: str | None = typer.Option(None, "--timeout", help="Stop after this long (default: Ctrl-C)"),
    scratch: Path | None = typer.Option(None, "--scratch", help="Directory for disk worker files"),
):
    """
    Generate stress-style background load.

    Examples:
        rtprobe load --cpu 2 --vm 1 --io 1 --hdd 1 --cpus 2-3 --timeout 60s
    """
    settings = load_cli_settings()
    with cli_errors():
        try:
            spec = LoadSpec(
                cpu_workers=cpu,
                mem_workers=vm,
                mem_bytes=vm_bytes or settings.load.mem_bytes,
                io_workers=io,
                disk_workers=hdd,
                disk_bytes=hdd_bytes or settings.load.hdd_bytes,
                cpu_set=_cpus(cpus),
                duration=_duration(timeout, "timeout"),
                scratch_dir=scratch or settings.load.scratch_dir,
            )
        except ValidationError as e:
            raise ConfigurationError(str(e)) from e
        handle = start_load(spec)
        try:
            while not handle.wait(1.0):
                pass
        except KeyboardInterrupt:
            err_console.print("[yellow]Stopping load...[/yellow]")
        finally:
            report = stop_load(handle)
        typer.echo(report.model_dump_json(indent=2))


# ============================================================================
# Configure Commands
# ============================================================================

def _manager_run(settings: Settings, action):
    async def _run():
        async with StateDB(settings.db_path) as state:
            manager = IsolationManager.from_settings(settings, state)
            return await action(manager)

    return asyncio.run(_run())


@configure_app.command("apply")
def configure_apply(plan: Path = typer.Option(..., "--plan", help="IsolationPlan (JSON or YAML)")):
    """Create the RT and system partitions, migrate tasks and route IRQs."""
    settings = load_cli_settings()
    with cli_errors():
        isolation = _read_model(plan, IsolationPlan)
        applied = _manager_run(settings, lambda m: m.apply_isolation(isolation))
        typer.echo(applied.model_dump_json(indent=2))
        failed = [r for r in applied.irq_results if not r.ok]
        if failed or applied.unmovable_tasks:
            err_console.print(
                f"[yellow]{len(applied.unmovable_tasks)} unmovable tasks, {len(failed)} IRQs not moved[/yellow]"
            )


@configure_app.command("verify")
def configure_verify(
    plan: Path | None = typer.Option(None, "--plan", help="Plan to compare against (default: unconfigured)"),
):
    """Show differences between the live system and a plan. Exit 1 when any."""
    settings = load_cli_settings()
    with cli_errors():
        if plan is not None:
            isolation = _read_model(plan, IsolationPlan)
            diffs = _manager_run(settings, lambda m: m.verify_config(isolation))
        else:
            diffs = _manager_run(settings, lambda m: m.verify_default())
    if not diffs:
        console.print("[green]No differences[/green]")
        return
    table = Table(title="Configuration differences")
    table.add_column("Field")
    table.add_column("Expected")
    table.add_column("Actual")
    for diff in diffs:
        table.add_row(diff.field, diff.expected, diff.actual)
    console.print(table)
    raise typer.Exit(1)


@configure_app.command("teardown")
def configure_teardown():
    """Remove the partitions and restore the saved IRQ masks."""
    settings = load_cli_settings()
    with cli_errors():
        result = _manager_run(settings, lambda m: m.teardown())
    typer.echo(result.model_dump_json(indent=2))


@configure_app.command("env")
def configure_env():
    """Print the environment manifest (kernel, RT flavour, topology, virtualisation)."""
    settings = load_cli_settings()
    cfg = settings.sysconfig
    env = capture_environment(proc_root=cfg.proc_root, sys_root=cfg.sys_root)
    typer.echo(env.model_dump_json(indent=2))


# ============================================================================
# Experiment Commands
# ============================================================================

@experiment_app.command("run")
def experiment_run(
    out_dir: Path = typer.Option(..., "--out-dir", help="Directory for sample files and artifacts.json"),
    plan: Path | None = typer.Option(None, "--plan", help="Plan file (YAML or JSON)"),
    preset: str | None = typer.Option(None, "--preset", help="Built-in plan, see 'experiment presets'"),
    loops: int | None = typer.Option(None, "--loops", min=0, help="Override every case's loop count"),
):
    """
    Run a configuration matrix.

    Examples:
        rtprobe experiment run --preset table1 --loops 60000 --out-dir runs/desk
        rtprobe experiment run --plan my-plan.yaml --out-dir runs/full
    """
    settings = load_cli_settings()
    with cli_errors():
        if (plan is None) == (preset is None):
            raise ConfigurationError("Give exactly one of --plan and --preset")
        experiment = load_plan(plan) if plan else build_preset(preset, _online_cpus(settings), settings)
        if loops is not None:
            experiment = experiment.with_loops(loops)
        artifacts = asyncio.run(_run_experiment(settings, experiment, out_dir))

    table = Table(title=f"Run {artifacts.run_id}")
    table.add_column("Case")
    table.add_column("Rep", justify="right")
    table.add_column("Status")
    table.add_column("Files / error")
    for case in artifacts.cases:
        status = "[green]ok[/green]" if case.status == "ok" else "[red]failed[/red]"
        detail = case.error or ", ".join(str(p) for p in case.series_paths)
        table.add_row(case.label, str(case.repetition), status, detail)
    console.print(table)
    if artifacts.interrupted:
        raise typer.Exit(EX_INTERRUPTED)
    if artifacts.failed():
        raise typer.Exit(1)


async def _run_experiment(settings: Settings, plan: ExperimentPlan, out_dir: Path) -> RunArtifacts:
    async with StateDB(settings.db_path) as state:
        try:
            manager = IsolationManager.from_settings(settings, state)
        except ConfigurationError as e:
            manager = None
            err_console.print(f"[yellow]Isolation unavailable:[/yellow] {e}")
        runner = ExperimentRunner(settings, state, manager=manager)
        return await runner.run_matrix(plan, out_dir)


@experiment_app.command("presets")
def experiment_presets():
    """List the built-in plans."""
    load_cli_settings()
    table = Table(title="Presets")
    table.add_column("Name")
    table.add_column("Description")
    for name, builder in PRESETS.items():
        table.add_row(name, (builder.__doc__ or "").strip())
    console.print(table)


@experiment_app.command("history")
def experiment_history(
    limit: int = typer.Option(20, "--limit", min=1, help="Runs to show"),
    run_id: str | None = typer.Option(None, "--run", help="Show the cases of one run"),
):
    """Show past experiment runs from the state database."""
    settings = load_cli_settings()

    async def _history():
        async with StateDB(settings.db_path) as state:
            if run_id:
                return await state.get_run_cases(run_id)
            return await state.list_runs(limit)

    rows = asyncio.run(_history())
    if run_id:
        table = Table(title=f"Cases of {run_id}")
        for column in ("label", "repetition", "status", "error"):
            table.add_column(column)
        for row in rows:
            table.add_row(row["label"], str(row["repetition"]), row["status"], row["error"] or "")
    else:
        table = Table(title="Runs")
        for column in ("run_id", "plan_name", "status", "started_at", "out_dir"):
            table.add_column(column)
        for row in rows:
            table.add_row(*(str(row[c] or "") for c in ("run_id", "plan_name", "status", "started_at", "out_dir")))
    console.print(table)


@experiment_app.command("verify")
def experiment_verify(run_dir: Path = typer.Argument(..., help="Output directory of a run")):
    """Re-check every sample file referenced by a run's artifacts.json."""
    load_cli_settings()
    with cli_errors():
        artifacts = RunArtifacts.load(run_dir)
        artifacts.out_dir = run_dir
        problems = artifacts.verify()
    bad = {path: problem for path, problem in problems.items() if problem}
    for path, problem in problems.items():
        mark = "[green]ok[/green]" if problem is None else f"[red]{problem}[/red]"
        console.print(f"{path}: {mark}")
    if bad:
        raise typer.Exit(5)


# ============================================================================
# Analyze / Report Commands
# ============================================================================

def _open_inputs(paths: list[Path]):
    return [open_samples(path) for path in paths]


@app.command()
def analyze(
    inputs: list[Path] = typer.Option(..., "--in", help="Sample files (repeatable)"),
    task: Path | None = typer.Option(None, "--task", help="TaskSpec (JSON or YAML) for deadline verdicts"),
    threshold: str | None = typer.Option(None, "--threshold", help="Overshoot threshold, or 'auto' (period/10)"),
    statistic: str | None = typer.Option(None, "--statistic", help="max, mean or q<percent> for verdicts"),
    fmt: str = typer.Option("table", "--format", help="table, csv or json"),
    allow_degraded: bool = typer.Option(False, "--allow-degraded", help="Judge series measured without RT"),
    show_histogram: bool = typer.Option(False, "--histogram", help="Append non-empty histogram buckets"),
):
    """
    Summary statistics, threshold overshoot and deadline verdicts.

    Examples:
        rtprobe analyze --in run.rtfs --threshold 100us
        rtprobe analyze --in a.rtfs --in b.rtfs --task task.yaml --threshold auto --format json
    """
    settings = load_cli_settings()
    with cli_errors():
        if fmt not in ("table", "csv", "json"):
            raise ConfigurationError(f"--format must be table, csv or json (got {fmt!r})")
        spec = load_task(task) if task else None
        limit = None
        if threshold == "auto":
            if spec is None:
                raise ConfigurationError("--threshold auto needs --task")
            limit = deadline_threshold(spec.period)
        elif threshold is not None:
            limit = _duration(threshold, "threshold")

        files = _open_inputs(inputs)
        rows = [make_row(f, threshold=limit) for f in files]
        verdicts = []
        if spec is not None:
            verdicts = [
                feasibility_report(
                    f, spec, statistic or settings.analysis.statistic, allow_degraded=allow_degraded
                )
                for f in files
            ]

    if fmt == "csv":
        typer.echo(emit_csv(rows), nl=False)
    elif fmt == "json":
        document = json.loads(emit_json(rows))
        document["verdicts"] = [
            {"label": row.label, **verdict.model_dump(mode="json")} for row, verdict in zip(rows, verdicts, strict=False)
        ]
        typer.echo(json.dumps(document, indent=2, ensure_ascii=False))
    else:
        typer.echo(emit_table(rows), nl=False)
        for row, verdict in zip(rows, verdicts, strict=False):
            state = "feasible" if verdict.feasible else "INFEASIBLE"
            typer.echo(
                f"{row.label}: {state} f={format_duration(verdict.firing_latency_used)} ({verdict.statistic}) "
                f"c={format_duration(verdict.completion_time)} d={format_duration(spec.deadline)} "
                f"margin={verdict.margin}ns"
            )
        if show_histogram:
            for f in files:
                h = histogram(f, settings.analysis.bucket_width, settings.analysis.buckets)
                typer.echo(f"# histogram {f.metadata.label} (bucket {format_duration(h.bucket_width)})")
                for i, count in enumerate(h.counts):
                    if count:
                        low, _ = h.bucket_range(i)
                        typer.echo(f"{low}\t{count}")
                typer.echo(f">={h.overflow_threshold}\t{h.overflow}")


@app.command()
def report(
    inputs: list[Path] = typer.Argument(..., help="Sample files (.rtfs) or summary CSV files"),
    fmt: str = typer.Option("table", "--format", help="table, csv, json or svg"),
    refs: list[str] | None = typer.Option(None, "--ref", help="Reference line (repeatable), default 100us and 10ms"),
    threshold: str | None = typer.Option(None, "--threshold", help="Overshoot threshold"),
    title: str = typer.Option("", "--title", help="Report title"),
    labels: list[str] | None = typer.Option(None, "--label", help="Label per input (repeatable)"),
    out: Path | None = typer.Option(None, "--out", help="Write to file instead of stdout"),
):
    """
    Render latency tables and boxplots.

    Examples:
        rtprobe report runs/desk/*.rtfs --format svg --out boxplot.svg
        rtprobe report summary.csv --format table
    """
    load_cli_settings()
    with cli_errors():
        try:
            spec = ReportSpec(
                inputs=inputs,
                format=fmt,
                reference_lines=refs or list(DEFAULT_REFERENCE_LINES),
                title=title,
                labels=labels or None,
            )
        except ValidationError as e:
            raise ConfigurationError(str(e)) from e
        limit = _duration(threshold, "threshold")
        text = _render_report(spec, limit)

    if out is None:
        typer.echo(text, nl=False)
    else:
        out.write_text(text, encoding="utf-8")
        err_console.print(f"Wrote {out}")


def _render_report(spec: ReportSpec, limit: int | None) -> str:
    rows: list[ReportRow] = []
    samples = []
    for i, path in enumerate(spec.inputs):
        label = spec.labels[i] if spec.labels else None
        if path.suffix == ".csv":
            if spec.format == "svg":
                raise ConfigurationError(f"{path}: SVG boxplots need sample files, not summaries")
            rows.extend(read_csv(path))
            continue
        sample_file = open_samples(path)
        samples.append((label or sample_file.metadata.label or path.stem, sample_file))
        rows.append(make_row(sample_file, label, limit))

    if spec.format == "svg":
        return emit_boxplot_svg(boxplot_data(samples, limit), spec.reference_lines, spec.title)
    if spec.format == "csv":
        return emit_csv(rows)
    if spec.format == "json":
        return emit_json(rows)
    return emit_table(rows, spec.title or None)


def main(argv: list[str] | None = None) -> int:
    """Entry point. Usage errors exit with 64 (EX_USAGE)."""
    command = typer.main.get_command(app)
    try:
        code = command.main(args=argv, prog_name="rtprobe", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EX_USAGE
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        err_console.print("[yellow]Aborted[/yellow]")
        return EX_INTERRUPTED
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
