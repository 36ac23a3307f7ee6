import os
from pathlib import Path

import numpy as np
import pytest

from rtprobe import config
from rtprobe.bench.runner import BenchConfig, SampleSeries, SeriesMetadata
from rtprobe.bench.worker import RECORD_DTYPE
from rtprobe.state import StateDB
from rtprobe.sysconfig.cgroup import CgroupBackend, PartitionState
from rtprobe.sysconfig.cpuset import CpuSet
from rtprobe.sysconfig.irq import IrqController
from rtprobe.sysconfig.isolation import IsolationManager

ONLINE = "0-15"
IRQS = (0, 1, 8, 9, 16, 24)
KERNEL_THREADS = (2, 3)
USER_TASKS = (1, 100, 200, 300)


def pytest_collection_modifyitems(config, items):
    live = os.environ.get("RTPROBE_LIVE") == "1"
    root = hasattr(os, "geteuid") and os.geteuid() == 0
    for item in items:
        if "live" in item.keywords and not live:
            item.add_marker(pytest.mark.skip(reason="needs real timers and idle CPUs; set RTPROBE_LIVE=1"))
        if "privileged" in item.keywords and not root:
            item.add_marker(pytest.mark.skip(reason="needs root for RT scheduling, cgroups and IRQ affinity"))


def write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def sys_root(tmp_path) -> Path:
    """sysfs of a 2-socket, 8-core, 16-thread machine: cpu N and N+8 share a core."""
    root = tmp_path / "sys"
    cpu_root = root / "devices" / "system" / "cpu"
    write(cpu_root / "online", ONLINE + "\n")
    for cpu in range(16):
        core = cpu % 8
        topo = cpu_root / f"cpu{cpu}" / "topology"
        write(topo / "thread_siblings_list", f"{core},{core + 8}\n")
        write(topo / "core_id", f"{core % 4}\n")
        write(topo / "physical_package_id", f"{core // 4}\n")
    write(root / "class" / "dmi" / "id" / "sys_vendor", "Dell Inc.\n")
    write(root / "class" / "dmi" / "id" / "product_name", "PowerEdge R610\n")
    return root


@pytest.fixture
def proc_root(tmp_path) -> Path:
    root = tmp_path / "proc"
    write(root / "version", "Linux version 4.14.59-rt37 (gcc version 7.3.0) #1 SMP PREEMPT RT\n")
    write(root / "cpuinfo", "processor\t: 0\nflags\t\t: fpu vme de pse tsc msr\n")
    lines = ["           CPU0       CPU1"]
    lines += [f" {irq:>3}:        10          0   IO-APIC   {irq}-edge      dev{irq}" for irq in IRQS]
    lines += [" NMI:          0          0   Non-maskable interrupts", " LOC:       1000       1000   Local timer interrupts"]
    write(root / "interrupts", "\n".join(lines) + "\n")
    for irq in IRQS:
        write(root / "irq" / str(irq) / "smp_affinity", "ffff\n")
    write(root / "1" / "cgroup", "0::/init.scope\n")
    return root


class FakeCgroupBackend(CgroupBackend):
    """In-memory cpuset hierarchy; pids in `pinned` refuse to move like per-CPU kthreads."""

    generation = "fake"

    def __init__(self, tasks=USER_TASKS + KERNEL_THREADS, pinned=KERNEL_THREADS, with_root_lb=True):
        super().__init__(Path("/fake-cgroup"))
        self.partitions: dict[str, PartitionState] = {}
        self.tasks: dict[str | None, set[int]] = {None: set(tasks)}
        self.pinned = set(pinned)
        self.root_lb = True if with_root_lb else None

    def create_partition(self, name, cpus, mems, exclusive, load_balance):
        self.partitions[name] = PartitionState(
            name=name, cpus=cpus, mems=mems, exclusive=exclusive, load_balance=load_balance
        )
        self.tasks.setdefault(name, set())

    def read_partition(self, name):
        return self.partitions.get(name)

    def list_tasks(self, name=None):
        return sorted(self.tasks.get(name, set()))

    def move_task(self, pid, name=None):
        if pid in self.pinned and name is not None:
            return False
        for members in self.tasks.values():
            members.discard(pid)
        self.tasks.setdefault(name, set()).add(pid)
        return True

    def root_mems(self):
        return "0-1"

    def root_load_balance(self):
        return self.root_lb

    def set_root_load_balance(self, enabled):
        self.root_lb = enabled

    def remove_partition(self, name):
        if name not in self.partitions:
            return
        self.migrate(name, None)
        del self.partitions[name]
        del self.tasks[name]


@pytest.fixture
def cgroup() -> FakeCgroupBackend:
    return FakeCgroupBackend()


@pytest.fixture
async def state(tmp_path):
    async with StateDB(tmp_path / "state.db") as db:
        yield db


@pytest.fixture
def manager(cgroup, proc_root, state) -> IsolationManager:
    return IsolationManager(
        backend=cgroup,
        irq=IrqController(proc_root),
        state=state,
        online_cpus=CpuSet.parse(ONLINE),
    )


@pytest.fixture
def settings(tmp_path, monkeypatch, proc_root, sys_root):
    """Settings under a private RTPROBE_HOME, pointed at the fixture trees, without settle delays."""
    monkeypatch.setenv("RTPROBE_HOME", str(tmp_path / "home"))
    monkeypatch.setenv("RTPROBE_EXPERIMENT__SETTLE_SECONDS", "0")
    monkeypatch.setenv("RTPROBE_EXPERIMENT__LOAD_RAMP_SECONDS", "0")
    monkeypatch.setenv("RTPROBE_SYSCONFIG__PROC_ROOT", str(proc_root))
    monkeypatch.setenv("RTPROBE_SYSCONFIG__SYS_ROOT", str(sys_root))
    monkeypatch.setenv("RTPROBE_SYSCONFIG__CGROUP_ROOT", str(tmp_path / "no-cgroup"))
    monkeypatch.setattr(config, "_settings", None)
    return config.get_settings()


def make_series(
    latencies,
    label: str = "series",
    degraded: bool = False,
    first_seq: int = 0,
    interval: int = 1_000_000,
) -> SampleSeries:
    values = np.asarray(latencies, dtype=np.uint64)
    records = np.zeros(len(values), dtype=RECORD_DTYPE)
    records["seq"] = np.arange(first_seq, first_seq + len(values), dtype=np.uint64)
    records["latency_ns"] = values
    metadata = SeriesMetadata(
        label=label,
        cpu=0,
        config=BenchConfig(interval=interval, loops=len(values), clock="simulated"),
        degraded=degraded,
        clock="simulated",
    )
    return SampleSeries(metadata, records)


@pytest.fixture
def series_factory():
    return make_series
