"""
Environment manifest: kernel, RT flavour, CPU/SMT topology, virtualisation.

Every probe reads from configurable proc/sys roots so a captured tree (or a
test fixture) can stand in for the live system. Missing information is
reported as None ("unknown"), never guessed.
"""

import logging
import re
from itertools import combinations
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from .cpuset import CpuSet

logger = logging.getLogger(__name__)

RtFlavor = Literal["none", "preempt_rt", "xenomai"]
HypervisorHint = Literal["bare-metal", "kvm/hvm", "other"]

_KVM_VENDORS = ("kvm", "qemu", "amazon ec2", "hvm")
_CONTAINER_MARKERS = ("docker", "kubepods", "containerd", "lxc", "libpod", "balena")


class CpuTopology(BaseModel):
    """Placement of one logical CPU."""

    model_config = ConfigDict(frozen=True)

    cpu: int
    core_id: int | None = None
    package_id: int | None = None
    siblings: CpuSet = Field(default_factory=CpuSet)


class EnvReport(BaseModel):
    """Provenance of a measurement: what kernel, what CPUs, what virtualisation."""

    model_config = ConfigDict(frozen=True)

    kernel_version: str | None = None
    kernel_build: str | None = None
    rt_flavor: RtFlavor = "none"
    online_cpus: CpuSet | None = None
    topology: list[CpuTopology] = Field(default_factory=list)
    hypervisor: HypervisorHint | None = None
    hypervisor_vendor: str | None = None
    container: bool | None = None
    applied_plan_checksum: str | None = None

    def sibling_groups(self) -> list[CpuSet]:
        """Distinct SMT sibling groups with more than one thread."""
        groups = {t.siblings for t in self.topology if len(t.siblings) > 1}
        return sorted(groups, key=lambda g: min(g))

    def sibling_pairs(self) -> list[tuple[int, int]]:
        """Unordered sibling pairs (a, b) with a < b."""
        pairs = []
        for group in self.sibling_groups():
            pairs.extend(combinations(list(group), 2))
        return pairs

    def siblings_of(self, cpu: int) -> CpuSet:
        """SMT siblings of cpu, excluding cpu itself."""
        for t in self.topology:
            if t.cpu == cpu:
                return t.siblings - CpuSet([cpu])
        return CpuSet()


def _read(path: Path) -> str | None:
    try:
        return path.read_text(encoding="utf-8", errors="replace").strip()
    except OSError:
        logger.debug(f"Probe not available: {path}")
        return None


def _read_int(path: Path) -> int | None:
    text = _read(path)
    if text is None:
        return None
    try:
        return int(text)
    except ValueError:
        return None


def _probe_kernel(proc_root: Path) -> tuple[str | None, str | None]:
    build = _read(proc_root / "version")
    if not build:
        return None, None
    match = re.match(r"Linux version (\S+)", build)
    return (match.group(1) if match else None), build


def _probe_rt_flavor(proc_root: Path, sys_root: Path, build: str | None) -> RtFlavor:
    if _read(sys_root / "kernel" / "realtime") == "1":
        return "preempt_rt"
    if build and "PREEMPT_RT" in build:
        return "preempt_rt"
    if (proc_root / "xenomai").exists() or (sys_root / "module" / "xenomai").exists():
        return "xenomai"
    return "none"


def _probe_topology(sys_root: Path) -> tuple[CpuSet | None, list[CpuTopology]]:
    cpu_root = sys_root / "devices" / "system" / "cpu"
    online_text = _read(cpu_root / "online")
    online = CpuSet.parse(online_text) if online_text is not None else None

    cpus = []
    for entry in sorted(cpu_root.glob("cpu[0-9]*")):
        match = re.fullmatch(r"cpu(\d+)", entry.name)
        if not match:
            continue
        topo = entry / "topology"
        siblings_text = _read(topo / "thread_siblings_list")
        cpu = int(match.group(1))
        cpus.append(
            CpuTopology(
                cpu=cpu,
                core_id=_read_int(topo / "core_id"),
                package_id=_read_int(topo / "physical_package_id"),
                siblings=CpuSet.parse(siblings_text) if siblings_text else CpuSet([cpu]),
            )
        )
    cpus.sort(key=lambda t: t.cpu)
    return online, cpus


def _probe_hypervisor(proc_root: Path, sys_root: Path) -> tuple[HypervisorHint | None, str | None]:
    vendor_parts = [
        _read(sys_root / "class" / "dmi" / "id" / "sys_vendor"),
        _read(sys_root / "class" / "dmi" / "id" / "product_name"),
        _read(sys_root / "hypervisor" / "type"),
    ]
    vendor = " ".join(p for p in vendor_parts if p) or None

    cpuinfo = _read(proc_root / "cpuinfo")
    flags_lines = [line for line in (cpuinfo or "").splitlines() if line.startswith("flags")]
    if not flags_lines and vendor is None:
        return None, None

    has_flag = any(re.search(r"\bhypervisor\b", line) for line in flags_lines)
    if any(v in (vendor or "").lower() for v in _KVM_VENDORS):
        return "kvm/hvm", vendor
    if has_flag or (sys_root / "hypervisor" / "type").exists():
        return "other", vendor
    if flags_lines:
        return "bare-metal", vendor
    return None, vendor


def _probe_container(proc_root: Path, fs_root: Path) -> bool | None:
    if (fs_root / ".dockerenv").exists() or (fs_root / "run" / ".containerenv").exists():
        return True
    cgroup = _read(proc_root / "1" / "cgroup")
    if cgroup is None:
        return None
    return any(marker in cgroup for marker in _CONTAINER_MARKERS)


def capture_environment(
    proc_root: Path = Path("/proc"),
    sys_root: Path = Path("/sys"),
    fs_root: Path = Path("/"),
    applied_plan_checksum: str | None = None,
) -> EnvReport:
    """Collect the environment manifest embedded into every sample file."""
    kernel_version, build = _probe_kernel(proc_root)
    online, topology = _probe_topology(sys_root)
    hypervisor, vendor = _probe_hypervisor(proc_root, sys_root)

    report = EnvReport(
        kernel_version=kernel_version,
        kernel_build=build,
        rt_flavor=_probe_rt_flavor(proc_root, sys_root, build),
        online_cpus=online,
        topology=topology,
        hypervisor=hypervisor,
        hypervisor_vendor=vendor,
        container=_probe_container(proc_root, fs_root),
        applied_plan_checksum=applied_plan_checksum,
    )
    logger.debug(
        f"Environment: kernel={report.kernel_version} rt={report.rt_flavor} "
        f"cpus={len(report.topology)} hypervisor={report.hypervisor}"
    )
    return report
