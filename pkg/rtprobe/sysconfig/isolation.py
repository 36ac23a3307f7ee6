"""
CPU isolation plans: apply, verify and roll back.

An IsolationPlan splits the machine into an RT partition and a system
partition, optionally switches scheduler load balancing off inside the RT
partition ("nlb") and routes IRQs away from the RT CPUs ("irq").

The first apply snapshots everything it is about to change into the state
database; teardown restores that snapshot and forgets it.
"""

import hashlib
import logging
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from rtprobe.config import Settings
from rtprobe.errors import ConfigurationError
from rtprobe.state import StateDB

from .cgroup import CgroupBackend, PartitionState, detect_backend
from .cpuset import CpuSet
from .irq import IrqController, IrqMove, IrqMoveResult

logger = logging.getLogger(__name__)

SNAPSHOT_KEY = "isolation"


class IsolationPlan(BaseModel):
    """Desired CPU partitioning, load-balancer state and IRQ routing."""

    model_config = ConfigDict(frozen=True)

    rt_cpus: CpuSet
    system_cpus: CpuSet
    load_balancer_on_rt: bool = True
    irq_moves: list[IrqMove] = Field(default_factory=list)
    irq_policy: Literal["none", "off-rt"] = "none"
    scope: Literal["host", "guest"] = "guest"

    @model_validator(mode="after")
    def _check_partition(self) -> "IsolationPlan":
        if not self.rt_cpus:
            raise ValueError("rt_cpus must not be empty")
        if not self.system_cpus:
            raise ValueError("system_cpus must not be empty")
        overlap = self.rt_cpus & self.system_cpus
        if overlap:
            raise ValueError(f"rt_cpus ∩ system_cpus must be empty (both contain {overlap})")
        return self

    def checksum(self) -> str:
        """Stable short hash of the plan, embedded into every sample file."""
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()[:16]

    def describe(self) -> str:
        parts = ["iso"]
        if not self.load_balancer_on_rt:
            parts.append("nlb")
        if self.irq_policy != "none" or self.irq_moves:
            parts.append("irq")
        return " ".join(parts)


class AppliedConfig(BaseModel):
    """What apply_isolation left behind."""

    plan_checksum: str
    backend: str
    rt_partition: PartitionState
    system_partition: PartitionState
    unmovable_tasks: list[int] = Field(default_factory=list)
    irq_results: list[IrqMoveResult] = Field(default_factory=list)


class ConfigDiff(BaseModel):
    """One mismatch between the live system and a plan."""

    field: str
    expected: str
    actual: str


class TeardownResult(BaseModel):
    removed_partitions: list[str] = Field(default_factory=list)
    irq_results: list[IrqMoveResult] = Field(default_factory=list)


class IsolationManager:
    """Applies IsolationPlans through a cgroup backend and an IRQ controller."""

    def __init__(
        self,
        backend: CgroupBackend,
        irq: IrqController,
        state: StateDB,
        rt_partition: str = "rtprobe-rt",
        system_partition: str = "rtprobe-sys",
        online_cpus: CpuSet | None = None,
    ):
        self.backend = backend
        self.irq = irq
        self.state = state
        self.rt_partition = rt_partition
        self.system_partition = system_partition
        self.online_cpus = online_cpus

    @classmethod
    def from_settings(cls, settings: Settings, state: StateDB) -> "IsolationManager":
        cfg = settings.sysconfig
        online_file = cfg.sys_root / "devices" / "system" / "cpu" / "online"
        online = None
        if online_file.exists():
            online = CpuSet.parse(online_file.read_text(encoding="utf-8"))
        return cls(
            backend=detect_backend(cfg.cgroup_root),
            irq=IrqController(cfg.proc_root),
            state=state,
            rt_partition=cfg.rt_partition,
            system_partition=cfg.system_partition,
            online_cpus=online,
        )

    def _check_coverage(self, plan: IsolationPlan):
        if self.online_cpus is None:
            return
        covered = plan.rt_cpus | plan.system_cpus
        if covered != self.online_cpus:
            raise ConfigurationError(
                f"rt_cpus ∪ system_cpus must cover exactly the online CPUs "
                f"({self.online_cpus}), plan covers {covered}"
            )

    async def _snapshot(self) -> dict:
        snapshot = await self.state.get_snapshot(SNAPSHOT_KEY)
        if snapshot is None:
            snapshot = {
                "root_load_balance": self.backend.root_load_balance(),
                "irq_masks": {str(irq): mask for irq, mask in self.irq.snapshot().items()},
                "irq_failed": [],
            }
            await self.state.save_snapshot(SNAPSHOT_KEY, snapshot)
            logger.info(f"Saved pre-isolation snapshot ({len(snapshot['irq_masks'])} IRQ masks)")
        return snapshot

    def _planned_moves(self, plan: IsolationPlan, snapshot: dict | None) -> list[IrqMove]:
        """Explicit moves plus the off-rt policy, judged on the pre-apply masks."""
        moves: dict[int, IrqMove] = {}
        if plan.irq_policy == "off-rt":
            if snapshot is not None:
                for irq, mask in snapshot["irq_masks"].items():
                    if not CpuSet.from_mask(mask).isdisjoint(plan.rt_cpus):
                        moves[int(irq)] = IrqMove(irq=int(irq), cpus=plan.system_cpus)
            else:
                for move in self.irq.moves_off(plan.rt_cpus, plan.system_cpus):
                    moves[move.irq] = move
        for move in plan.irq_moves:
            moves[move.irq] = move
        return [moves[irq] for irq in sorted(moves)]

    async def apply_isolation(self, plan: IsolationPlan) -> AppliedConfig:
        """Create the partitions, migrate movable tasks and route IRQs."""
        self._check_coverage(plan)
        snapshot = await self._snapshot()
        mems = self.backend.root_mems()

        logger.info(f"Applying isolation plan {plan.checksum()} ({plan.describe()})")
        self.backend.create_partition(
            self.system_partition, plan.system_cpus, mems, exclusive=False, load_balance=True
        )
        self.backend.create_partition(
            self.rt_partition,
            plan.rt_cpus,
            mems,
            exclusive=True,
            load_balance=plan.load_balancer_on_rt,
        )
        if not plan.load_balancer_on_rt and self.backend.root_load_balance() is not None:
            # v1: children only decide for themselves once the root stops balancing
            self.backend.set_root_load_balance(False)

        moved, unmovable = self.backend.migrate(None, self.system_partition)
        logger.info(f"Migrated {moved} tasks to {self.system_partition}, {len(unmovable)} unmovable")

        irq_results = self.irq.set_irq_affinity(self._planned_moves(plan, snapshot))
        failed = sorted({r.irq for r in irq_results if not r.ok})
        if failed:
            logger.warning(f"IRQs left in place: {failed}")
        if sorted(snapshot.get("irq_failed", [])) != failed:
            snapshot["irq_failed"] = failed
            await self.state.save_snapshot(SNAPSHOT_KEY, snapshot)

        return AppliedConfig(
            plan_checksum=plan.checksum(),
            backend=self.backend.generation,
            rt_partition=self.backend.read_partition(self.rt_partition),
            system_partition=self.backend.read_partition(self.system_partition),
            unmovable_tasks=unmovable,
            irq_results=irq_results,
        )

    def attach(self, pid: int, rt: bool = True) -> bool:
        """Move pid into the RT partition, or back into the system partition."""
        return self.backend.move_task(pid, self.rt_partition if rt else self.system_partition)

    async def verify_config(self, plan: IsolationPlan) -> list[ConfigDiff]:
        """Field-level differences between the live system and the plan (read-only)."""
        diffs: list[ConfigDiff] = []
        snapshot = await self.state.get_snapshot(SNAPSHOT_KEY)

        rt = self.backend.read_partition(self.rt_partition)
        if rt is None:
            diffs.append(ConfigDiff(field="rt_partition", expected="present", actual="missing"))
        else:
            if rt.cpus != plan.rt_cpus:
                diffs.append(
                    ConfigDiff(field="rt_partition.cpus", expected=str(plan.rt_cpus), actual=str(rt.cpus))
                )
            if not rt.exclusive:
                diffs.append(
                    ConfigDiff(field="rt_partition.exclusive", expected="True", actual="False")
                )
            if rt.load_balance != plan.load_balancer_on_rt:
                diffs.append(
                    ConfigDiff(
                        field="rt_partition.load_balance",
                        expected=str(plan.load_balancer_on_rt),
                        actual=str(rt.load_balance),
                    )
                )

        system = self.backend.read_partition(self.system_partition)
        if system is None:
            diffs.append(ConfigDiff(field="system_partition", expected="present", actual="missing"))
        elif system.cpus != plan.system_cpus:
            diffs.append(
                ConfigDiff(
                    field="system_partition.cpus",
                    expected=str(plan.system_cpus),
                    actual=str(system.cpus),
                )
            )

        if not plan.load_balancer_on_rt:
            root_lb = self.backend.root_load_balance()
            if root_lb:
                diffs.append(ConfigDiff(field="root.load_balance", expected="False", actual="True"))

        immovable = set(snapshot.get("irq_failed", [])) if snapshot else set()
        for move in self._planned_moves(plan, snapshot):
            if move.irq in immovable:
                continue
            try:
                actual = self.irq.read_affinity(move.irq)
            except OSError:
                actual_text = "unreadable"
            else:
                if actual == move.cpus:
                    continue
                actual_text = str(actual)
            diffs.append(
                ConfigDiff(field=f"irq.{move.irq}.affinity", expected=str(move.cpus), actual=actual_text)
            )
        return diffs

    async def verify_default(self) -> list[ConfigDiff]:
        """Differences from an unconfigured system: no partitions, no pending snapshot."""
        diffs = []
        for name in (self.rt_partition, self.system_partition):
            if self.backend.read_partition(name) is not None:
                diffs.append(ConfigDiff(field=name, expected="absent", actual="present"))
        if await self.state.get_snapshot(SNAPSHOT_KEY) is not None:
            diffs.append(ConfigDiff(field="snapshot", expected="absent", actual="present"))
        return diffs

    async def teardown(self) -> TeardownResult:
        """Return all CPUs to the root partition and restore saved IRQ masks."""
        snapshot = await self.state.get_snapshot(SNAPSHOT_KEY)
        result = TeardownResult()

        for name in (self.rt_partition, self.system_partition):
            if self.backend.read_partition(name) is not None:
                self.backend.remove_partition(name)
                result.removed_partitions.append(name)

        if snapshot is None:
            logger.info("No isolation snapshot; nothing to restore")
            return result

        root_lb = snapshot.get("root_load_balance")
        if root_lb is not None and self.backend.root_load_balance() != root_lb:
            self.backend.set_root_load_balance(root_lb)

        changed = {}
        for irq, mask in snapshot["irq_masks"].items():
            try:
                if self.irq.read_mask(int(irq)) != mask:
                    changed[int(irq)] = mask
            except OSError:
                continue
        result.irq_results = self.irq.restore(changed)

        await self.state.delete_snapshot(SNAPSHOT_KEY)
        logger.info(
            f"Teardown complete: removed {result.removed_partitions}, restored {len(changed)} IRQ masks"
        )
        return result
