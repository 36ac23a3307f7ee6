"""
IRQ affinity through /proc/irq/<n>/smp_affinity.

IRQs are discovered from /proc/interrupts. Writes are per IRQ: a rejected
write is recorded in that IRQ's result and never aborts the batch.
"""

import errno
import logging
from pathlib import Path

from pydantic import BaseModel, ConfigDict

from .cpuset import CpuSet

logger = logging.getLogger(__name__)


class IrqMove(BaseModel):
    """Request to route one IRQ to a CPU set."""

    model_config = ConfigDict(frozen=True)

    irq: int
    cpus: CpuSet


class IrqMoveResult(BaseModel):
    """Outcome of one IRQ affinity write."""

    model_config = ConfigDict(frozen=True)

    irq: int
    requested: str
    ok: bool
    error: str | None = None


class IrqController:
    """Reads and writes IRQ affinity masks under a procfs root."""

    def __init__(self, proc_root: Path = Path("/proc")):
        self.proc_root = Path(proc_root)

    def _affinity_path(self, irq: int) -> Path:
        return self.proc_root / "irq" / str(irq) / "smp_affinity"

    def list_irqs(self) -> list[int]:
        """Numeric IRQ ids listed in /proc/interrupts (NMI, LOC etc. are skipped)."""
        irqs = []
        try:
            lines = (self.proc_root / "interrupts").read_text(encoding="utf-8").splitlines()
        except OSError as e:
            logger.warning(f"Cannot read interrupts table: {e}")
            return []
        for line in lines[1:]:
            head = line.split(":", 1)[0].strip()
            if head.isdigit():
                irqs.append(int(head))
        return irqs

    def exists(self, irq: int) -> bool:
        return self._affinity_path(irq).is_file()

    def read_mask(self, irq: int) -> str:
        """Raw mask text exactly as the kernel reports it."""
        return self._affinity_path(irq).read_text(encoding="ascii").strip()

    def read_affinity(self, irq: int) -> CpuSet:
        return CpuSet.from_mask(self.read_mask(irq))

    def _write_mask(self, irq: int, mask: str):
        with open(self._affinity_path(irq), "w", encoding="ascii") as f:
            f.write(mask)

    def write_mask(self, irq: int, mask: str, expected: CpuSet) -> IrqMoveResult:
        """Write one mask and read it back."""
        if not self.exists(irq):
            return IrqMoveResult(irq=irq, requested=mask, ok=False, error="no such IRQ")
        try:
            logger.debug(f"Setting SMP affinity of IRQ {irq} to '{mask}'")
            self._write_mask(irq, mask)
        except OSError as e:
            # EIO: kernel/irq/proc.c refuses affinity changes for this IRQ
            if e.errno == errno.EIO:
                logger.debug(f"SMP affinity of IRQ {irq} cannot be changed")
                return IrqMoveResult(irq=irq, requested=mask, ok=False, error="immovable")
            logger.error(f"Failed to set SMP affinity of IRQ {irq} to '{mask}': {e}")
            return IrqMoveResult(irq=irq, requested=mask, ok=False, error=str(e))

        try:
            actual = self.read_affinity(irq)
        except OSError as e:
            return IrqMoveResult(irq=irq, requested=mask, ok=False, error=f"read-back failed: {e}")
        if actual != expected:
            return IrqMoveResult(
                irq=irq,
                requested=mask,
                ok=False,
                error=f"kernel kept affinity {actual.to_list()}",
            )
        return IrqMoveResult(irq=irq, requested=mask, ok=True)

    def set_irq_affinity(self, moves: list[IrqMove]) -> list[IrqMoveResult]:
        return [self.write_mask(m.irq, m.cpus.to_mask(), m.cpus) for m in moves]

    def snapshot(self, irqs: list[int] | None = None) -> dict[int, str]:
        """Raw masks of the given (default: all) IRQs."""
        masks = {}
        for irq in irqs if irqs is not None else self.list_irqs():
            try:
                masks[irq] = self.read_mask(irq)
            except OSError:
                continue
        return masks

    def restore(self, masks: dict[int, str]) -> list[IrqMoveResult]:
        """Write back raw masks captured by snapshot()."""
        return [self.write_mask(irq, mask, CpuSet.from_mask(mask)) for irq, mask in masks.items()]

    def moves_off(self, avoid: CpuSet, target: CpuSet) -> list[IrqMove]:
        """Moves routing every IRQ whose mask touches `avoid` onto `target`."""
        moves = []
        for irq in self.list_irqs():
            try:
                current = self.read_affinity(irq)
            except OSError:
                continue
            if not current.isdisjoint(avoid):
                moves.append(IrqMove(irq=irq, cpus=target))
        return moves


def set_irq_affinity(moves: list[IrqMove], proc_root: Path = Path("/proc")) -> list[IrqMoveResult]:
    """Apply IRQ moves; one result per move, in order."""
    return IrqController(proc_root).set_irq_affinity(moves)
