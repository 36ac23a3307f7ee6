"""
Experiment matrix runner.

For every case (and repetition), in order:
apply isolation -> start load -> ramp -> bench -> stop load -> persist
-> teardown -> verify default -> settle.

A failing case is recorded and the matrix moves on; only a persistence
failure aborts the whole run. SIGINT/SIGTERM finish the current case,
tear it down and stop.
"""

import asyncio
import functools
import logging
import os
import shutil
import signal
from collections.abc import Callable
from datetime import UTC, datetime
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, ValidationError

from rtprobe import SAMPLE_FORMAT_VERSION, __version__
from rtprobe.bench.runner import SampleSeries, run_cyclic
from rtprobe.bench.worker import RECORD_DTYPE
from rtprobe.config import Settings
from rtprobe.errors import CorruptSampleFileError, PersistenceError, RtprobeError
from rtprobe.load.generator import LoadHandle, LoadReport, start_load, stop_load
from rtprobe.state import StateDB
from rtprobe.sysconfig.environment import EnvReport, capture_environment
from rtprobe.sysconfig.isolation import AppliedConfig, ConfigDiff, IsolationManager, IsolationPlan

from .plan import Case, ExperimentPlan
from .samplefile import SUFFIX, open_samples, persist_samples, series_path

logger = logging.getLogger(__name__)

ARTIFACTS_FILE = "artifacts.json"
# header, metadata and checksum allowance per file
FILE_OVERHEAD = 64 * 1024


class CaseTimeline(BaseModel):
    load_started_at: datetime | None = None
    bench_started_at: datetime | None = None
    bench_ended_at: datetime | None = None
    load_stopped_at: datetime | None = None


class CaseResult(BaseModel):
    """Outcome of one case repetition."""

    label: str
    title: str | None = None
    repetition: int = 0
    status: Literal["ok", "failed"] = "ok"
    error: str | None = None
    series_paths: list[Path] = Field(default_factory=list)
    plan_checksum: str | None = None
    applied: AppliedConfig | None = None
    external_requirements: list[IsolationPlan] = Field(default_factory=list)
    load_report: LoadReport | None = None
    timeline: CaseTimeline = Field(default_factory=CaseTimeline)
    residual_config: list[ConfigDiff] = Field(default_factory=list)


class RunArtifacts(BaseModel):
    """Everything a run produced, with enough provenance to re-check it later."""

    run_id: str = ""
    plan_name: str = ""
    plan_checksum: str = ""
    toolkit_version: str = __version__
    sample_format_version: int = SAMPLE_FORMAT_VERSION
    out_dir: Path = Path(".")
    env: EnvReport | None = None
    started_at: datetime | None = None
    ended_at: datetime | None = None
    interrupted: bool = False
    cases: list[CaseResult] = Field(default_factory=list)

    def series_paths(self) -> list[Path]:
        return [path for case in self.cases for path in case.series_paths]

    def failed(self) -> list[CaseResult]:
        return [case for case in self.cases if case.status != "ok"]

    def save(self, path: Path | None = None) -> Path:
        path = Path(path or self.out_dir / ARTIFACTS_FILE)
        try:
            path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        except OSError as e:
            raise PersistenceError(f"Cannot write {path}: {e}") from e
        return path

    @classmethod
    def load(cls, path: Path) -> "RunArtifacts":
        path = Path(path)
        if path.is_dir():
            path = path / ARTIFACTS_FILE
        try:
            return cls.model_validate_json(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise CorruptSampleFileError(f"Cannot read {path}: {e}") from e
        except ValidationError as e:
            raise CorruptSampleFileError(f"Invalid artifacts file {path}: {e}") from e

    def verify(self) -> dict[Path, str | None]:
        """Check every referenced sample file. Maps path to None (ok) or the problem."""
        problems: dict[Path, str | None] = {}
        for path in self.series_paths():
            resolved = path if path.is_absolute() else self.out_dir / path
            if not resolved.exists():
                problems[path] = "missing"
                continue
            try:
                open_samples(resolved)
                problems[path] = None
            except CorruptSampleFileError as e:
                problems[path] = str(e)
        return problems


def estimate_bytes(plan: ExperimentPlan) -> int:
    """Sample files of the whole run plus the largest scratch footprint of any one case."""
    files = sum(len(case.bench.worker_cpus()) * case.repetitions for case in plan.cases)
    scratch = max(
        (case.load.disk_workers * case.load.disk_bytes for case in plan.cases if case.load is not None),
        default=0,
    )
    return plan.total_samples() * RECORD_DTYPE.itemsize + files * FILE_OVERHEAD + scratch


class ExperimentRunner:
    """Runs an ExperimentPlan case by case and records the outcome."""

    def __init__(
        self,
        settings: Settings,
        state: StateDB,
        manager: IsolationManager | None = None,
        env: EnvReport | None = None,
        bench_runner: Callable[..., list[SampleSeries]] = run_cyclic,
    ):
        self.settings = settings
        self.state = state
        self.manager = manager
        self.env = env
        self.bench_runner = bench_runner
        self.stop_requested = False

    def _capture_env(self) -> EnvReport:
        if self.env is None:
            cfg = self.settings.sysconfig
            self.env = capture_environment(proc_root=cfg.proc_root, sys_root=cfg.sys_root)
        return self.env

    def _split_isolation(self, case: Case) -> tuple[IsolationPlan | None, list[IsolationPlan]]:
        """The plan to apply on this machine, and the ones that must be set up elsewhere."""
        scope = self.settings.sysconfig.scope
        local = None
        external = []
        for plan in (case.isolation, case.host_isolation):
            if plan is None:
                continue
            if local is None and plan.scope == scope:
                local = plan
            else:
                external.append(plan)
        return local, external

    def _check_disk_space(self, plan: ExperimentPlan, out_dir: Path):
        needed = estimate_bytes(plan)
        free = shutil.disk_usage(out_dir).free
        if needed > free:
            raise PersistenceError(
                f"Plan needs about {needed / 2**30:.1f}GiB in {out_dir}, only {free / 2**30:.1f}GiB free"
            )

    def _install_signal_handlers(self) -> list[signal.Signals]:
        loop = asyncio.get_running_loop()
        installed = []
        for sig in (signal.SIGTERM, signal.SIGINT):
            try:
                loop.add_signal_handler(sig, self._request_stop, sig)
                installed.append(sig)
            except (NotImplementedError, RuntimeError, ValueError):
                pass
        return installed

    def _request_stop(self, sig: signal.Signals):
        logger.info(f"Received signal {sig.name}, stopping after the current case...")
        self.stop_requested = True

    def _case_file(self, out_dir: Path, case: Case, repetition: int) -> Path:
        name = case.label if case.repetitions == 1 else f"{case.label}.r{repetition}"
        return out_dir / f"{name}{SUFFIX}"

    async def _run_case(
        self,
        case: Case,
        repetition: int,
        out_dir: Path,
        run_id: str = "",
        plan_checksum: str | None = None,
    ) -> CaseResult:
        local, external = self._split_isolation(case)
        result = CaseResult(
            label=case.label,
            title=case.title,
            repetition=repetition,
            external_requirements=external,
        )
        for plan in external:
            logger.info(f"[{case.label}] requires {plan.scope} configuration: {plan.describe()}")

        handle: LoadHandle | None = None
        applied = False
        try:
            if local is not None:
                if self.manager is None:
                    raise RtprobeError("case needs isolation but no cgroup backend is available")
                applied = True
                result.applied = await self.manager.apply_isolation(local)
                result.plan_checksum = local.checksum()
                self.manager.attach(os.getpid(), rt=True)

            env = self._capture_env().model_copy(update={"applied_plan_checksum": result.plan_checksum})

            if case.load is not None:
                handle = start_load(case.load)
                result.timeline.load_started_at = datetime.now(UTC)
                await asyncio.sleep(self.settings.experiment.load_ramp_seconds)

            loop = asyncio.get_running_loop()
            result.timeline.bench_started_at = datetime.now(UTC)
            series_list = await loop.run_in_executor(
                None,
                functools.partial(
                    self.bench_runner,
                    case.bench,
                    env=env,
                    plan_checksum=plan_checksum or result.plan_checksum,
                    label=case.label,
                ),
            )
            result.timeline.bench_ended_at = datetime.now(UTC)

            if handle is not None:
                result.load_report = stop_load(handle)
                handle = None
                result.timeline.load_stopped_at = datetime.now(UTC)

            out = self._case_file(out_dir, case, repetition)
            for series in series_list:
                series.metadata.extra.update(
                    {
                        "run_id": run_id,
                        "title": case.title,
                        "isolation_checksum": result.plan_checksum,
                        "repetition": repetition,
                        "external_requirements": [p.describe() for p in external],
                        "load": result.load_report.model_dump(mode="json") if result.load_report else None,
                    }
                )
                path = series_path(out, series.metadata.cpu, len(series_list) > 1)
                persist_samples(series, path)
                result.series_paths.append(path.relative_to(out_dir))
        except PersistenceError:
            raise
        except RtprobeError as e:
            logger.error(f"[{case.label}] failed: {e}")
            result.status, result.error = "failed", str(e)
        except Exception as e:
            logger.error(f"[{case.label}] failed: {e}", exc_info=True)
            result.status, result.error = "failed", f"{type(e).__name__}: {e}"
        finally:
            if handle is not None:
                stop_load(handle)
            if applied:
                await self._teardown(result)
        return result

    async def _teardown(self, result: CaseResult):
        try:
            await self.manager.teardown()
            result.residual_config = await self.manager.verify_default()
        except Exception as e:
            logger.error(f"[{result.label}] teardown failed: {e}")
            if result.status == "ok":
                result.status, result.error = "failed", f"teardown: {e}"
            return
        if result.residual_config:
            logger.warning(f"[{result.label}] configuration still active after teardown")

    async def run_matrix(self, plan: ExperimentPlan, out_dir: Path, run_id: str | None = None) -> RunArtifacts:
        """Run every case of the plan and return (and save) the run artifacts."""
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise PersistenceError(f"Cannot create {out_dir}: {e}") from e
        self._check_disk_space(plan, out_dir)

        started_at = datetime.now(UTC)
        run_id = run_id or f"{started_at:%Y%m%dT%H%M%SZ}-{plan.checksum()[:8]}"
        artifacts = RunArtifacts(
            run_id=run_id,
            plan_name=plan.name,
            plan_checksum=plan.checksum(),
            out_dir=out_dir,
            env=self._capture_env() if plan.cases else self.env,
            started_at=started_at,
        )
        await self.state.record_run_start(run_id, plan.name, plan.checksum(), out_dir, __version__)
        logger.info(f"Run {run_id}: {len(plan.cases)} cases from plan {plan.name!r} into {out_dir}")

        installed = self._install_signal_handlers()
        status = "aborted"
        try:
            runs = [(case, rep) for case in plan.cases for rep in range(case.repetitions)]
            for i, (case, rep) in enumerate(runs):
                if self.stop_requested:
                    artifacts.interrupted = True
                    break
                logger.info(f"Case {i + 1}/{len(runs)}: {case.label} ({case.describe()})")
                result = await self._run_case(case, rep, out_dir, run_id, artifacts.plan_checksum)
                artifacts.cases.append(result)
                await self.state.record_case(
                    run_id,
                    case.label,
                    rep,
                    result.status,
                    result.error,
                    [str(p) for p in result.series_paths],
                )
                if i + 1 < len(runs) and not self.stop_requested:
                    await asyncio.sleep(self.settings.experiment.settle_seconds)

            if artifacts.interrupted or self.stop_requested:
                artifacts.interrupted = True
                status = "interrupted"
            else:
                status = "failed" if artifacts.failed() else "completed"
        finally:
            loop = asyncio.get_running_loop()
            for sig in installed:
                loop.remove_signal_handler(sig)
            artifacts.ended_at = datetime.now(UTC)
            await self.state.finish_run(run_id, status)

        artifacts.save()
        logger.info(
            f"Run {run_id} {status}: {len(artifacts.cases) - len(artifacts.failed())} ok, "
            f"{len(artifacts.failed())} failed"
        )
        return artifacts

