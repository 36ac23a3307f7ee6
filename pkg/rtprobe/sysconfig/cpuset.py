"""
CPU sets in the notations the kernel uses.

- CPU lists as in /sys/devices/system/cpu/online or cpuset.cpus: "0-3,6"
- hex masks as in /proc/irq/<n>/smp_affinity: "ff" or "ff,ffffffff"
"""

import os
from collections.abc import Iterable, Iterator
from typing import Any

from pydantic_core import core_schema

from rtprobe.errors import ConfigurationError


class CpuSet:
    """Immutable set of logical CPU indices."""

    __slots__ = ("_cpus",)

    def __init__(self, cpus: Iterable[int] = ()):
        cpus = frozenset(cpus)
        for cpu in cpus:
            if isinstance(cpu, bool) or not isinstance(cpu, int) or cpu < 0:
                raise ConfigurationError(f"Invalid CPU index: {cpu!r}")
        self._cpus = cpus

    @classmethod
    def parse(cls, text: str) -> "CpuSet":
        """Parse a CPU list such as "0-3,6". Empty or "(null)" gives an empty set."""
        text = text.strip()
        if not text or text == "(null)":
            return cls()

        cpus: set[int] = set()
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            try:
                if "-" in part:
                    first, last = part.split("-", 1)
                    first_i, last_i = int(first), int(last)
                    if last_i < first_i:
                        raise ValueError(part)
                    cpus.update(range(first_i, last_i + 1))
                else:
                    cpus.add(int(part))
            except ValueError as e:
                raise ConfigurationError(f"Invalid CPU list {text!r}: bad element {part!r}") from e
        return cls(cpus)

    @classmethod
    def from_mask(cls, mask: str) -> "CpuSet":
        """Parse a hex affinity mask; comma-separated 32-bit groups are allowed."""
        digits = mask.strip().replace(",", "")
        if not digits:
            return cls()
        try:
            value = int(digits, 16)
        except ValueError as e:
            raise ConfigurationError(f"Invalid CPU mask: {mask!r}") from e
        return cls(bit for bit in range(value.bit_length()) if value >> bit & 1)

    @classmethod
    def coerce(cls, value: Any) -> "CpuSet":
        if isinstance(value, CpuSet):
            return value
        if isinstance(value, str):
            return cls.parse(value)
        if isinstance(value, int) and not isinstance(value, bool):
            return cls([value])
        if isinstance(value, Iterable):
            return cls(value)
        raise ConfigurationError(f"Cannot interpret {value!r} as a CPU set")

    @classmethod
    def allowed(cls) -> "CpuSet":
        """CPUs this process may run on."""
        return cls(os.sched_getaffinity(0))

    def to_mask(self) -> str:
        """Hex mask with comma-separated 32-bit groups, most significant first."""
        value = 0
        for cpu in self._cpus:
            value |= 1 << cpu
        digits = f"{value:x}"
        groups = []
        while digits:
            groups.append(digits[-8:])
            digits = digits[:-8]
        groups.reverse()
        # Inner groups are zero padded to full width.
        return ",".join([groups[0]] + [g.rjust(8, "0") for g in groups[1:]])

    def to_list(self) -> str:
        """Compact CPU list ("0-3,6")."""
        ranges = []
        cpus = sorted(self._cpus)
        i = 0
        while i < len(cpus):
            j = i
            while j + 1 < len(cpus) and cpus[j + 1] == cpus[j] + 1:
                j += 1
            ranges.append(str(cpus[i]) if i == j else f"{cpus[i]}-{cpus[j]}")
            i = j + 1
        return ",".join(ranges)

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self._cpus))

    def __len__(self) -> int:
        return len(self._cpus)

    def __contains__(self, cpu: object) -> bool:
        return cpu in self._cpus

    def __bool__(self) -> bool:
        return bool(self._cpus)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, CpuSet):
            return self._cpus == other._cpus
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._cpus)

    def __and__(self, other: "CpuSet") -> "CpuSet":
        return CpuSet(self._cpus & other._cpus)

    def __or__(self, other: "CpuSet") -> "CpuSet":
        return CpuSet(self._cpus | other._cpus)

    def __sub__(self, other: "CpuSet") -> "CpuSet":
        return CpuSet(self._cpus - other._cpus)

    def issubset(self, other: "CpuSet") -> bool:
        return self._cpus <= other._cpus

    def isdisjoint(self, other: "CpuSet") -> bool:
        return self._cpus.isdisjoint(other._cpus)

    def __str__(self) -> str:
        return self.to_list()

    def __repr__(self) -> str:
        return f"CpuSet({self.to_list()!r})"

    @classmethod
    def __get_pydantic_core_schema__(cls, source: Any, handler: Any) -> core_schema.CoreSchema:
        return core_schema.no_info_plain_validator_function(
            cls._validate,
            serialization=core_schema.plain_serializer_function_ser_schema(
                lambda cpus: cpus.to_list(),
                return_schema=core_schema.str_schema(),
            ),
        )

    @classmethod
    def __get_pydantic_json_schema__(cls, schema: Any, handler: Any) -> dict[str, Any]:
        return {"type": "string", "description": "CPU list, e.g. '0-3,6'"}

    @classmethod
    def _validate(cls, value: Any) -> "CpuSet":
        try:
            return cls.coerce(value)
        except ConfigurationError as e:
            raise ValueError(str(e)) from e
