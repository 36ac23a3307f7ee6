"""
rtprobe - real-time latency benchmarking and deadline feasibility toolkit

Measures the cyclic firing latency of periodic real-time tasks under
configurable conditions and checks task sets against their deadlines:
- Cyclic latency benchmark (cyclictest-style)
- Background load generation (stress-style)
- CPU isolation, IRQ affinity and load-balancer configuration
- Experiment matrices with provenance-tagged sample files
- Table/CSV/JSON/SVG reports
"""

__version__ = "0.1.0"

# Bumped whenever the on-disk sample layout changes.
SAMPLE_FORMAT_VERSION = 1
CSV_SCHEMA_VERSION = 1
QUANTILE_METHOD = "R-7"
