"""
Experiment plans: ordered cases of isolation + load + benchmark.

Plans load from YAML or JSON files. Built-in presets cover the usual
isolation x load-balancing x IRQ x stress matrices for guests and hosts.
"""

import hashlib
import itertools
import logging
import re
from collections.abc import Callable
from pathlib import Path

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from rtprobe.bench.runner import BenchConfig
from rtprobe.config import Settings
from rtprobe.errors import ConfigurationError
from rtprobe.load.generator import LoadSpec
from rtprobe.sysconfig.cpuset import CpuSet
from rtprobe.sysconfig.isolation import IsolationPlan

logger = logging.getLogger(__name__)

_LABEL_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class Case(BaseModel):
    """One row of the matrix."""

    label: str
    title: str | None = None
    isolation: IsolationPlan | None = None
    host_isolation: IsolationPlan | None = None
    load: LoadSpec | None = None
    bench: BenchConfig = Field(default_factory=BenchConfig)
    repetitions: int = Field(default=1, ge=1)

    @field_validator("label")
    @classmethod
    def _check_label(cls, value: str) -> str:
        if not _LABEL_RE.match(value):
            raise ValueError(f"label {value!r} must be alphanumeric with . _ -")
        return value

    @model_validator(mode="after")
    def _bench_inside_rt(self) -> "Case":
        if self.isolation is None:
            return self
        if self.bench.cpu_set is None:
            self.bench = self.bench.model_copy(update={"cpu_set": self.isolation.rt_cpus})
        elif not self.bench.cpu_set.issubset(self.isolation.rt_cpus):
            raise ValueError(
                f"bench cpu_set {self.bench.cpu_set} ⊆ rt_cpus {self.isolation.rt_cpus} violated"
            )
        return self

    def describe(self) -> str:
        parts = [self.isolation.describe() if self.isolation else "default"]
        if self.load:
            parts.append("w. stress")
        if self.host_isolation:
            parts.append(f"--host {self.host_isolation.describe()}")
        return " ".join(parts)


class ExperimentPlan(BaseModel):
    """An ordered list of uniquely labelled cases."""

    name: str = "custom"
    description: str = ""
    cases: list[Case] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_labels(self) -> "ExperimentPlan":
        seen = set()
        for case in self.cases:
            if case.label in seen:
                raise ValueError(f"duplicate case label {case.label!r}")
            seen.add(case.label)
        return self

    def checksum(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()[:16]

    def with_loops(self, loops: int) -> "ExperimentPlan":
        """Copy with every case's loop count replaced (desk-scale runs)."""
        cases = [
            case.model_copy(update={"bench": case.bench.model_copy(update={"loops": loops})})
            for case in self.cases
        ]
        return self.model_copy(update={"cases": cases})

    def total_samples(self) -> int:
        return sum(
            case.bench.loops * len(case.bench.worker_cpus()) * case.repetitions for case in self.cases
        )


def load_plan(path: Path) -> ExperimentPlan:
    """Load a plan from YAML or JSON. A bare list is taken as the case list."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8-sig"))
    except (OSError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Cannot read plan {path}: {e}") from e
    if isinstance(data, list):
        data = {"name": Path(path).stem, "cases": data}
    try:
        return ExperimentPlan.model_validate(data or {})
    except ValidationError as e:
        raise ConfigurationError(f"Invalid plan {path}: {e}") from e


# Presets


def split_online(online: CpuSet) -> tuple[CpuSet, CpuSet]:
    """RT CPUs are the upper half of the online CPUs, the rest stay with the system."""
    cpus = list(online)
    if len(cpus) < 2:
        raise ConfigurationError(f"Isolation presets need at least 2 online CPUs (have {online})")
    half = len(cpus) // 2
    return CpuSet(cpus[half:]), CpuSet(cpus[:half])


def _isolation(rt: CpuSet, system: CpuSet, nlb: bool, irq: bool, scope: str) -> IsolationPlan:
    return IsolationPlan(
        rt_cpus=rt,
        system_cpus=system,
        load_balancer_on_rt=not nlb,
        irq_policy="off-rt" if irq else "none",
        scope=scope,
    )


# (label, title, guest (nlb, irq) or None, host (nlb, irq) or None, stress)
_TABLE1_ROWS = [
    ("default", "Default", None, None, False),
    ("w-stress", "W. stress", None, None, True),
    ("iso", "Isolated (iso)", (False, False), None, False),
    ("iso-w-stress", "Isolated (iso) w. stress", (False, False), None, True),
    ("iso-nlb-irq", "Isolated & nlb & IRQ affinity (irq)", (True, True), None, False),
    ("iso-nlb-irq-w-stress", "Isolated & nlb & irq & w. stress", (True, True), None, True),
    ("host-iso", "Isolated --host iso", (False, False), (False, False), False),
    ("host-iso-w-stress", "Isolated w. stress --host iso", (False, False), (False, False), True),
    ("host-iso-nlb-irq", "Isolated --host iso nlb irq", (False, False), (True, True), False),
    (
        "host-iso-nlb-irq-w-stress",
        "Isolated w. stress --host iso nlb irq",
        (False, False),
        (True, True),
        True,
    ),
    ("nlb-irq-host-iso-irq", "Isolated-nlb irq --host iso irq", (False, True), (False, True), False),
    (
        "nlb-irq-w-stress-host-iso-irq",
        "Isolated-nlb irq with stress --host iso irq",
        (False, True),
        (False, True),
        True,
    ),
]


def table1_plan(online: CpuSet, settings: Settings | None = None) -> ExperimentPlan:
    """The twelve configurations of the offline comparison table, single test thread."""
    rt, system = split_online(online)
    bench = BenchConfig(cpu_set=CpuSet([min(rt)]), workers=1)
    cases = []
    for label, title, guest, host, stress in _TABLE1_ROWS:
        cases.append(
            Case(
                label=label,
                title=title,
                isolation=_isolation(rt, system, *guest, "guest") if guest else None,
                host_isolation=_isolation(rt, system, *host, "host") if host else None,
                load=LoadSpec.one_of_each_per_cpu(rt, settings) if stress else None,
                bench=bench,
            )
        )
    return ExperimentPlan(
        name="table1",
        description="Offline comparison: isolation, nlb, irq and stress for guest and host",
        cases=cases,
    )


_PHASE1_CONFIGS = {
    "none": None,
    "iso": (False, False),
    "iso-nlb": (True, False),
    "iso-irq": (False, True),
    "iso-nlb-irq": (True, True),
}


def phase1_plan(online: CpuSet, settings: Settings | None = None) -> ExperimentPlan:
    """Every guest x host combination of isolation, nlb and irq, with and without stress."""
    rt, system = split_online(online)
    bench = BenchConfig(cpu_set=CpuSet([min(rt)]), workers=1)
    cases = []
    for (guest_name, guest), (host_name, host), stress in itertools.product(
        _PHASE1_CONFIGS.items(), _PHASE1_CONFIGS.items(), (False, True)
    ):
        label = f"guest-{guest_name}.host-{host_name}" + (".stress" if stress else "")
        cases.append(
            Case(
                label=label,
                isolation=_isolation(rt, system, *guest, "guest") if guest else None,
                host_isolation=_isolation(rt, system, *host, "host") if host else None,
                load=LoadSpec.one_of_each_per_cpu(rt, settings) if stress else None,
                bench=bench,
            )
        )
    return ExperimentPlan(
        name="phase1-guest-host-matrix",
        description="Full guest/host configuration matrix of the offline phase",
        cases=cases,
    )


def hardware_comparison_plan(online: CpuSet, settings: Settings | None = None) -> ExperimentPlan:
    """Isolation with load balancer under stress: one cyclic and one stress thread of each kind per RT CPU."""
    rt, system = split_online(online)
    case = Case(
        label="iso-lb-w-stress",
        title="Isolation, with load balancer, w. stress",
        isolation=_isolation(rt, system, False, False, "guest"),
        load=LoadSpec.one_of_each_per_cpu(rt, settings),
        bench=BenchConfig(cpu_set=rt),
    )
    return ExperimentPlan(
        name="hardware-comparison",
        description="Favourable configuration used to compare hardware platforms",
        cases=[case],
    )


PRESETS: dict[str, Callable[[CpuSet, Settings | None], ExperimentPlan]] = {
    "phase1-guest-host-matrix": phase1_plan,
    "table1": table1_plan,
    "hardware-comparison": hardware_comparison_plan,
}


def build_preset(name: str, online: CpuSet, settings: Settings | None = None) -> ExperimentPlan:
    """A named plan for the online CPUs, with load sizes taken from settings when given."""
    try:
        builder = PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"Unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
    return builder(online, settings)
