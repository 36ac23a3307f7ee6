# Host configuration: CPU sets, cgroup partitions, IRQ affinity, environment manifest
from .cgroup import CgroupBackend, CgroupV1Backend, CgroupV2Backend, detect_backend
from .cpuset import CpuSet
from .environment import EnvReport, capture_environment
from .irq import IrqController, IrqMove, IrqMoveResult, set_irq_affinity
from .isolation import AppliedConfig, ConfigDiff, IsolationManager, IsolationPlan

__all__ = [
    "AppliedConfig",
    "CgroupBackend",
    "CgroupV1Backend",
    "CgroupV2Backend",
    "ConfigDiff",
    "CpuSet",
    "EnvReport",
    "IrqController",
    "IrqMove",
    "IrqMoveResult",
    "IsolationManager",
    "IsolationPlan",
    "capture_environment",
    "detect_backend",
    "set_irq_affinity",
]
