"""
cpuset partitions on either control-group filesystem generation.

Backends:
- CgroupV1Backend: legacy cpuset hierarchy (cpuset.cpu_exclusive, cpuset.sched_load_balance, tasks)
- CgroupV2Backend: unified hierarchy (cpuset.cpus.partition root/isolated, cgroup.procs)

detect_backend() probes the mount and returns the matching one.
"""

import errno
import logging
from abc import ABC, abstractmethod
from pathlib import Path

from pydantic import BaseModel, ConfigDict

from rtprobe.errors import ConfigurationError, PrivilegeError

from .cpuset import CpuSet

logger = logging.getLogger(__name__)


class PartitionState(BaseModel):
    """Live settings of one cpuset partition."""

    model_config = ConfigDict(frozen=True)

    name: str
    cpus: CpuSet
    mems: str
    exclusive: bool
    load_balance: bool


class CgroupBackend(ABC):
    """Base class for cpuset backends. Partition names are direct children of the mount."""

    generation: str = "base"

    def __init__(self, mount: Path):
        self.mount = Path(mount)

    def _path(self, name: str | None) -> Path:
        return self.mount if name is None else self.mount / name

    def _read(self, path: Path) -> str:
        return path.read_text(encoding="utf-8").strip()

    def _write(self, path: Path, value: str):
        try:
            with open(path, "w", encoding="utf-8") as f:
                f.write(value)
        except PermissionError as e:
            raise PrivilegeError(f"Permission denied writing {path}") from e
        except OSError as e:
            raise ConfigurationError(f"Kernel rejected {value!r} for {path}: {e}") from e

    def _mkdir(self, name: str) -> Path:
        path = self._path(name)
        try:
            path.mkdir(exist_ok=True)
        except PermissionError as e:
            raise PrivilegeError(f"Permission denied creating cpuset {path}") from e
        except OSError as e:
            raise ConfigurationError(f"Cannot create cpuset {path}: {e}") from e
        return path

    @abstractmethod
    def create_partition(
        self, name: str, cpus: CpuSet, mems: str, exclusive: bool, load_balance: bool
    ):
        """Create (or update) a partition with the given settings."""
        pass

    @abstractmethod
    def read_partition(self, name: str) -> PartitionState | None:
        """Current settings, or None if the partition does not exist."""
        pass

    @abstractmethod
    def list_tasks(self, name: str | None = None) -> list[int]:
        """Task ids in a partition (None = root)."""
        pass

    @abstractmethod
    def move_task(self, pid: int, name: str | None = None) -> bool:
        """Move a task; False if the kernel refuses (e.g. per-CPU kernel threads)."""
        pass

    @abstractmethod
    def root_mems(self) -> str:
        """Memory nodes available at the root."""
        pass

    def root_load_balance(self) -> bool | None:
        """Root scheduler load-balancing flag, where the generation has one."""
        return None

    def set_root_load_balance(self, enabled: bool):
        pass

    def migrate(self, source: str | None, target: str | None) -> tuple[int, list[int]]:
        """Move every task from source to target. Returns (moved, unmovable pids)."""
        moved = 0
        unmovable = []
        for pid in self.list_tasks(source):
            if self.move_task(pid, target):
                moved += 1
            else:
                unmovable.append(pid)
        return moved, sorted(unmovable)

    def remove_partition(self, name: str):
        """Return a partition's tasks to the root and delete it."""
        path = self._path(name)
        if not path.exists():
            return
        self.migrate(name, None)
        try:
            path.rmdir()
        except OSError as e:
            if e.errno in (errno.EACCES, errno.EPERM):
                raise PrivilegeError(f"Permission denied removing cpuset {path}") from e
            raise ConfigurationError(f"Cannot remove cpuset {path}: {e}") from e

    def _move(self, procs_file: Path, pid: int) -> bool:
        try:
            with open(procs_file, "w", encoding="utf-8") as f:
                f.write(str(pid))
            return True
        except PermissionError as e:
            raise PrivilegeError(f"Permission denied moving task {pid}") from e
        except OSError as e:
            # EINVAL: bound kernel thread; ESRCH: task exited meanwhile
            if e.errno == errno.ESRCH:
                return True
            logger.debug(f"Task {pid} not movable: {e}")
            return False


class CgroupV1Backend(CgroupBackend):
    """Legacy cpuset controller hierarchy."""

    generation = "v1"

    def create_partition(
        self, name: str, cpus: CpuSet, mems: str, exclusive: bool, load_balance: bool
    ):
        path = self._mkdir(name)
        # cpus and mems must be populated before any task can join
        self._write(path / "cpuset.cpus", cpus.to_list())
        self._write(path / "cpuset.mems", mems)
        self._write(path / "cpuset.cpu_exclusive", "1" if exclusive else "0")
        self._write(path / "cpuset.sched_load_balance", "1" if load_balance else "0")

    def read_partition(self, name: str) -> PartitionState | None:
        path = self._path(name)
        if not (path / "cpuset.cpus").exists():
            return None
        return PartitionState(
            name=name,
            cpus=CpuSet.parse(self._read(path / "cpuset.cpus")),
            mems=self._read(path / "cpuset.mems"),
            exclusive=self._read(path / "cpuset.cpu_exclusive") == "1",
            load_balance=self._read(path / "cpuset.sched_load_balance") == "1",
        )

    def list_tasks(self, name: str | None = None) -> list[int]:
        text = self._read(self._path(name) / "tasks")
        return [int(line) for line in text.split() if line.strip()]

    def move_task(self, pid: int, name: str | None = None) -> bool:
        return self._move(self._path(name) / "tasks", pid)

    def root_mems(self) -> str:
        return self._read(self.mount / "cpuset.mems")

    def root_load_balance(self) -> bool | None:
        path = self.mount / "cpuset.sched_load_balance"
        if not path.exists():
            return None
        return self._read(path) == "1"

    def set_root_load_balance(self, enabled: bool):
        self._write(self.mount / "cpuset.sched_load_balance", "1" if enabled else "0")


class CgroupV2Backend(CgroupBackend):
    """Unified hierarchy; an isolated partition has no scheduler load balancing."""

    generation = "v2"

    def create_partition(
        self, name: str, cpus: CpuSet, mems: str, exclusive: bool, load_balance: bool
    ):
        control = self.mount / "cgroup.subtree_control"
        if "cpuset" not in self._read(control).split():
            self._write(control, "+cpuset")
        path = self._mkdir(name)
        self._write(path / "cpuset.cpus", cpus.to_list())
        self._write(path / "cpuset.mems", mems)
        if not load_balance:
            partition = "isolated"
        elif exclusive:
            partition = "root"
        else:
            partition = "member"
        self._write(path / "cpuset.cpus.partition", partition)

    def read_partition(self, name: str) -> PartitionState | None:
        path = self._path(name)
        if not (path / "cpuset.cpus").exists():
            return None
        partition_file = path / "cpuset.cpus.partition"
        partition = self._read(partition_file) if partition_file.exists() else "member"
        # the kernel appends " invalid (...)" when it could not honour the request
        kind = partition.split()[0] if partition else "member"
        valid = "invalid" not in partition
        return PartitionState(
            name=name,
            cpus=CpuSet.parse(self._read(path / "cpuset.cpus")),
            mems=self._read(path / "cpuset.mems"),
            exclusive=valid and kind in ("root", "isolated"),
            load_balance=not (valid and kind == "isolated"),
        )

    def list_tasks(self, name: str | None = None) -> list[int]:
        text = self._read(self._path(name) / "cgroup.procs")
        return [int(line) for line in text.split() if line.strip()]

    def move_task(self, pid: int, name: str | None = None) -> bool:
        return self._move(self._path(name) / "cgroup.procs", pid)

    def root_mems(self) -> str:
        for candidate in ("cpuset.mems.effective", "cpuset.mems"):
            path = self.mount / candidate
            if path.exists():
                return self._read(path)
        return "0"


def detect_backend(root: Path = Path("/sys/fs/cgroup")) -> CgroupBackend:
    """Probe the cgroup mount and return a backend for the cpuset controller."""
    root = Path(root)
    controllers = root / "cgroup.controllers"
    if controllers.is_file():
        if "cpuset" not in controllers.read_text(encoding="utf-8").split():
            raise ConfigurationError(f"cpuset controller not available in {root}")
        logger.debug(f"Using cgroup v2 hierarchy at {root}")
        return CgroupV2Backend(root)

    for mount in (root / "cpuset", root):
        if (mount / "cpuset.cpus").is_file():
            logger.debug(f"Using cgroup v1 cpuset hierarchy at {mount}")
            return CgroupV1Backend(mount)

    raise ConfigurationError(f"No cpuset controller mounted under {root}")
