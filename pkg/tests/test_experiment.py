import os

import numpy as np
import pytest
from pydantic import ValidationError

from rtprobe.bench.runner import BenchConfig, run_cyclic
from rtprobe.bench.worker import RECORD_DTYPE
from rtprobe.config import Settings
from rtprobe.errors import ConfigurationError, CorruptSampleFileError, PersistenceError
from rtprobe.experiment import (
    Case,
    ExperimentPlan,
    ExperimentRunner,
    RunArtifacts,
    build_preset,
    load_plan,
    load_samples,
    open_samples,
    persist_samples,
)
from rtprobe.experiment import runner as runner_module
from rtprobe.experiment.plan import split_online
from rtprobe.experiment.samplefile import series_path
from rtprobe.load import LoadSpec
from rtprobe.sysconfig import CpuSet, EnvReport, IsolationPlan

from .conftest import make_series

ONLINE = CpuSet.parse("0-15")


def _bench(cpus="8", loops=10, **kwargs) -> BenchConfig:
    return BenchConfig(clock="simulated", loops=loops, cpu_set=cpus, interval="1ms", **kwargs)


def _iso(scope="guest") -> IsolationPlan:
    return IsolationPlan(rt_cpus="8-15", system_cpus="0-7", irq_policy="off-rt", scope=scope)


# Sample files


def test_sample_file_round_trip(tmp_path):
    series = make_series([5, 1, 400_000, 7, 0], label="rt")
    path = persist_samples(series, tmp_path / "rt.rtfs")
    opened = open_samples(path)
    assert opened.count == 5
    assert opened.records_offset % 8 == 0
    assert opened.metadata == series.metadata
    assert opened.load() == series
    assert [len(c) for c in opened.latency_chunks(2)] == [2, 2, 1]
    assert not (tmp_path / "rt.rtfs.tmp").exists()


def test_empty_sample_file(tmp_path):
    path = persist_samples(make_series([]), tmp_path / "empty.rtfs")
    opened = open_samples(path)
    assert len(opened) == 0
    assert len(opened.records()) == 0
    assert list(opened.latency_chunks()) == []


@pytest.mark.parametrize(
    "damage, message",
    [
        (lambda data: data[:-3], "size"),
        (lambda data: b"XXXX" + data[4:], "magic"),
        (lambda data: data[:-20] + bytes([data[-20] ^ 1]) + data[-19:], "checksum"),
        (lambda data: data[:3], "truncated"),
    ],
)
def test_corrupt_sample_files(tmp_path, damage, message):
    path = persist_samples(make_series([1, 2, 3, 4]), tmp_path / "s.rtfs")
    path.write_bytes(damage(path.read_bytes()))
    with pytest.raises(CorruptSampleFileError, match=message):
        load_samples(path)


def test_unverified_open_skips_checksum(tmp_path):
    path = persist_samples(make_series([1, 2, 3, 4]), tmp_path / "s.rtfs")
    data = bytearray(path.read_bytes())
    data[-9] ^= 0xFF
    path.write_bytes(bytes(data))
    assert open_samples(path, verify=False).count == 4
    with pytest.raises(CorruptSampleFileError):
        open_samples(path)


def test_persist_failure(tmp_path):
    (tmp_path / "file").write_text("x")
    with pytest.raises(PersistenceError):
        persist_samples(make_series([1]), tmp_path / "file" / "s.rtfs")


def test_series_path():
    assert series_path("runs/x.rtfs", 3, True).name == "x.cpu3.rtfs"
    assert series_path("runs/x.rtfs", 3, False).name == "x.rtfs"
    assert series_path("runs/x", 0, True).name == "x.cpu0.rtfs"


@pytest.mark.slow
def test_ten_million_record_file_is_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    n = 10**7
    series = make_series(rng.integers(0, 2**40, size=n, dtype=np.uint64))
    path = persist_samples(series, tmp_path / "big.rtfs")
    opened = open_samples(path)
    assert opened.count == n
    assert np.array_equal(opened.records(), series.records)


# Plans


def test_case_bench_defaults_to_rt_cpus():
    case = Case(label="iso", isolation=_iso(), bench=BenchConfig(loops=5))
    assert case.bench.cpu_set == CpuSet.parse("8-15")
    assert case.describe() == "iso irq"
    with pytest.raises(ValidationError, match="⊆"):
        Case(label="bad", isolation=_iso(), bench=BenchConfig(cpu_set="0"))
    with pytest.raises(ValidationError, match="label"):
        Case(label="no spaces")


def test_plan_labels_unique_and_checksum_stable():
    cases = [Case(label="a", bench=_bench()), Case(label="b", bench=_bench())]
    plan = ExperimentPlan(name="p", cases=cases)
    assert plan.checksum() == ExperimentPlan(name="p", cases=cases).checksum()
    assert plan.with_loops(3).checksum() != plan.checksum()
    with pytest.raises(ValidationError, match="duplicate"):
        ExperimentPlan(cases=[Case(label="a"), Case(label="a")])


def test_with_loops_and_total_samples():
    plan = ExperimentPlan(
        cases=[Case(label="a", bench=_bench("8-9", loops=10), repetitions=3)]
    ).with_loops(100)
    assert plan.cases[0].bench.loops == 100
    assert plan.total_samples() == 100 * 2 * 3


def test_load_plan(tmp_path):
    path = tmp_path / "matrix.yaml"
    path.write_text(
        "- label: idle\n"
        "  bench: {loops: 5, interval: 100us, cpu_set: '8'}\n"
        "- label: iso\n"
        "  isolation: {rt_cpus: 8-15, system_cpus: 0-7, load_balancer_on_rt: false}\n"
        "  load: {cpu_workers: 1}\n",
        encoding="utf-8",
    )
    plan = load_plan(path)
    assert plan.name == "matrix"
    assert [c.label for c in plan.cases] == ["idle", "iso"]
    assert plan.cases[0].bench.interval == 100_000
    assert plan.cases[1].describe() == "iso nlb w. stress"

    path.write_text('{"cases": [{"label": "x", "repetitions": 0}]}', encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_plan(path)


def test_table1_preset():
    plan = build_preset("table1", ONLINE)
    assert len(plan.cases) == 12
    assert plan.cases[0].label == "default" and plan.cases[0].isolation is None
    for case in plan.cases:
        assert case.bench.cpu_set == CpuSet([8])
        assert case.bench.workers == 1
        if case.load is not None:
            assert case.load.counts() == {"cpu": 8, "mem": 8, "io": 8, "hdd": 8}
            assert case.load.cpu_set == CpuSet.parse("8-15")
    host = {c.label: c for c in plan.cases}["host-iso-nlb-irq"]
    assert host.host_isolation.scope == "host"
    assert not host.host_isolation.load_balancer_on_rt
    assert host.isolation.scope == "guest"


def test_phase1_and_hardware_presets():
    matrix = build_preset("phase1-guest-host-matrix", ONLINE)
    assert len(matrix.cases) == 50
    assert len({c.label for c in matrix.cases}) == 50
    [case] = build_preset("hardware-comparison", ONLINE).cases
    assert case.label == "iso-lb-w-stress"
    assert case.isolation.load_balancer_on_rt
    assert case.bench.cpu_set == CpuSet.parse("8-15")
    unsized = build_preset("hardware-comparison", ONLINE).cases[0].load
    assert unsized.disk_bytes == LoadSpec.model_fields["disk_bytes"].default
    with pytest.raises(ConfigurationError, match="Unknown preset"):
        build_preset("nope", ONLINE)
    with pytest.raises(ConfigurationError):
        split_online(CpuSet([0]))


# Runner


@pytest.fixture
def runner(settings, state, manager):
    return ExperimentRunner(settings, state, manager=manager, env=EnvReport(kernel_version="test"))


async def test_run_matrix(runner, state, tmp_path):
    plan = ExperimentPlan(
        name="mixed",
        cases=[
            Case(label="idle", bench=_bench("0")),
            Case(label="iso", isolation=_iso(), bench=_bench("8-9")),
            Case(label="guest-only", host_isolation=_iso("host"), bench=_bench("8")),
            Case(label="broken", bench=_bench("0", trace=tmp_path / "missing.txt")),
            Case(label="twice", bench=_bench("0"), repetitions=2),
        ],
    )
    out = tmp_path / "run"
    artifacts = await runner.run_matrix(plan, out, run_id="r1")

    by_label = {(c.label, c.repetition): c for c in artifacts.cases}
    assert [c.status for c in artifacts.cases] == ["ok", "ok", "ok", "failed", "ok", "ok"]
    assert "missing.txt" in by_label["broken", 0].error
    assert [str(p) for p in by_label["idle", 0].series_paths] == ["idle.rtfs"]
    assert [str(p) for p in by_label["iso", 0].series_paths] == ["iso.cpu8.rtfs", "iso.cpu9.rtfs"]
    assert [str(p) for p in by_label["twice", 1].series_paths] == ["twice.r1.rtfs"]

    iso = by_label["iso", 0]
    assert iso.applied is not None
    assert iso.plan_checksum == _iso().checksum()
    assert iso.residual_config == []
    sample = open_samples(out / "iso.cpu9.rtfs")
    assert sample.metadata.plan_checksum == plan.checksum()
    assert sample.metadata.extra["isolation_checksum"] == iso.plan_checksum
    assert sample.metadata.env.applied_plan_checksum == iso.plan_checksum
    assert sample.metadata.env.kernel_version == "test"
    assert sample.metadata.label == "iso"

    idle = open_samples(out / "idle.rtfs").metadata
    assert idle.plan_checksum == plan.checksum() == artifacts.plan_checksum
    assert idle.extra["run_id"] == "r1"
    assert idle.extra["isolation_checksum"] is None
    assert idle.env.applied_plan_checksum is None

    guest_only = by_label["guest-only", 0]
    assert guest_only.applied is None
    assert [p.scope for p in guest_only.external_requirements] == ["host"]
    extra = open_samples(out / "guest-only.rtfs").metadata.extra
    assert extra["external_requirements"] == ["iso irq"]

    assert RunArtifacts.load(out).verify() == {p: None for p in artifacts.series_paths()}
    assert (await state.list_runs())[0]["status"] == "failed"
    assert len(await state.get_run_cases("r1")) == 6
    assert await runner.manager.verify_default() == []


async def test_load_brackets_the_measurement(runner, tmp_path):
    load = LoadSpec(cpu_workers=1, cpu_set=[min(os.sched_getaffinity(0))])
    plan = ExperimentPlan(cases=[Case(label="stress", load=load, bench=_bench("0"))])
    artifacts = await runner.run_matrix(plan, tmp_path / "run")
    [case] = artifacts.cases
    assert case.status == "ok", case.error
    t = case.timeline
    assert t.load_started_at <= t.bench_started_at <= t.bench_ended_at <= t.load_stopped_at
    assert case.load_report.worker_counts()["cpu"] == 1
    assert open_samples(tmp_path / "run" / "stress.rtfs").metadata.extra["load"] is not None


async def test_isolation_without_backend_fails_the_case(settings, state, tmp_path):
    runner = ExperimentRunner(settings, state, manager=None, env=EnvReport())
    plan = ExperimentPlan(cases=[Case(label="iso", isolation=_iso(), bench=_bench())])
    artifacts = await runner.run_matrix(plan, tmp_path / "run")
    assert artifacts.cases[0].status == "failed"
    assert "cgroup" in artifacts.cases[0].error


async def test_stop_request_finishes_current_case(runner, tmp_path):
    def bench_then_stop(config, **kwargs):
        runner.stop_requested = True
        return run_cyclic(config, **kwargs)

    runner.bench_runner = bench_then_stop
    plan = ExperimentPlan(
        cases=[Case(label="a", isolation=_iso(), bench=_bench()), Case(label="b", bench=_bench())]
    )
    artifacts = await runner.run_matrix(plan, tmp_path / "run")
    assert artifacts.interrupted
    assert [c.label for c in artifacts.cases] == ["a"]
    assert artifacts.cases[0].residual_config == []
    assert await runner.manager.verify_default() == []


async def test_persistence_failure_aborts_the_run(runner, state, tmp_path, monkeypatch):
    def no_disk(series, path):
        raise PersistenceError("disk full")

    monkeypatch.setattr(runner_module, "persist_samples", no_disk)
    plan = ExperimentPlan(cases=[Case(label="a", isolation=_iso(), bench=_bench())])
    with pytest.raises(PersistenceError, match="disk full"):
        await runner.run_matrix(plan, tmp_path / "run", run_id="r2")
    assert (await state.list_runs())[0]["status"] == "aborted"
    assert await runner.manager.verify_default() == []


async def test_disk_space_is_checked_up_front(runner, tmp_path, monkeypatch):
    class Usage:
        free = 0

    monkeypatch.setattr(runner_module.shutil, "disk_usage", lambda path: Usage())
    plan = ExperimentPlan(cases=[Case(label="a", bench=_bench())])
    with pytest.raises(PersistenceError, match="free"):
        await runner.run_matrix(plan, tmp_path / "run")


async def test_verify_reports_damaged_and_missing_files(runner, tmp_path):
    plan = ExperimentPlan(cases=[Case(label="a", bench=_bench()), Case(label="b", bench=_bench())])
    out = tmp_path / "run"
    await runner.run_matrix(plan, out)
    (out / "a.rtfs").unlink()
    data = bytearray((out / "b.rtfs").read_bytes())
    data[-9] ^= 0xFF
    (out / "b.rtfs").write_bytes(bytes(data))
    problems = {str(k): v for k, v in RunArtifacts.load(out / "artifacts.json").verify().items()}
    assert problems["a.rtfs"] == "missing"
    assert "checksum" in problems["b.rtfs"]


def test_estimate_bytes():
    plan = ExperimentPlan(cases=[Case(label="a", bench=_bench("8-9", loops=1000))])
    assert runner_module.estimate_bytes(plan) == 2 * 1000 * RECORD_DTYPE.itemsize + 2 * runner_module.FILE_OVERHEAD


def test_presets_take_load_sizes_from_settings(settings, monkeypatch, tmp_path):
    monkeypatch.setenv("RTPROBE_LOAD__MEM_BYTES", "4096")
    monkeypatch.setenv("RTPROBE_LOAD__HDD_BYTES", "8192")
    monkeypatch.setenv("RTPROBE_LOAD__SCRATCH_DIR", str(tmp_path / "scratch"))
    sized = Settings()
    for name in ("table1", "phase1-guest-host-matrix", "hardware-comparison"):
        loads = [case.load for case in build_preset(name, ONLINE, sized).cases if case.load is not None]
        assert loads
        for load in loads:
            assert (load.mem_bytes, load.disk_bytes) == (4096, 8192)
            assert load.scratch_dir == tmp_path / "scratch"


def test_estimate_bytes_counts_scratch_files_of_the_largest_case():
    small = LoadSpec(disk_workers=2, disk_bytes=1_000)
    large = LoadSpec(disk_workers=8, disk_bytes=5_000)
    plan = ExperimentPlan(
        cases=[
            Case(label="a", bench=_bench("8", loops=10), load=small),
            Case(label="b", bench=_bench("8", loops=10), load=large),
            Case(label="c", bench=_bench("8", loops=10)),
        ]
    )
    samples = 3 * 10 * RECORD_DTYPE.itemsize + 3 * runner_module.FILE_OVERHEAD
    assert runner_module.estimate_bytes(plan) == samples + 8 * 5_000


async def test_scratch_files_count_against_free_space(runner, tmp_path, monkeypatch):
    class Usage:
        free = 10 * 2**20

    monkeypatch.setattr(runner_module.shutil, "disk_usage", lambda path: Usage())
    load = LoadSpec(disk_workers=1, disk_bytes=2**30)
    plan = ExperimentPlan(cases=[Case(label="hdd", bench=_bench("0"), load=load)])
    with pytest.raises(PersistenceError, match="1.0GiB"):
        await runner.run_matrix(plan, tmp_path / "run")
