"""Report records and CSV emission.

Percentiles are nearest-rank (the ceil(q*N/100)-th smallest sample), no
interpolation. Throughput is successful transactions divided by the wall
time from first submission to inclusion of the last one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence


def nearest_rank(values: Sequence[float], q: float) -> float:
    """The q-th percentile by nearest rank; q in (0, 100]."""
    if not values:
        raise ValueError("no samples")
    if not 0 < q <= 100:
        raise ValueError(f"percentile {q} out of range")
    ordered = sorted(values)
    rank = math.ceil(q * len(ordered) / 100)
    return ordered[max(rank, 1) - 1]


@dataclass(frozen=True)
class LatencyReport:
    target_rps: int
    duration_s: int
    achieved_rps: float
    p50_ms: float
    p90_ms: float
    p99_ms: float
    errors: int

    CSV_HEADER = "target_rps,duration_s,achieved_rps,p50_ms,p90_ms,p99_ms,errors"

    def __post_init__(self):
        if not (self.p50_ms <= self.p90_ms <= self.p99_ms):
            raise ValueError("percentiles are not monotone")
        if self.achieved_rps > self.target_rps + 1e-9:
            raise ValueError("achieved rate above target in an open-loop run")

    def csv_row(self) -> str:
        return (
            f"{self.target_rps},{self.duration_s},{self.achieved_rps:.3f},"
            f"{self.p50_ms:.3f},{self.p90_ms:.3f},{self.p99_ms:.3f},{self.errors}"
        )

    @classmethod
    def from_samples(
        cls, target_rps: int, duration_s: int, latencies_ms: Sequence[float], errors: int
    ) -> "LatencyReport":
        return cls(
            target_rps=target_rps,
            duration_s=duration_s,
            achieved_rps=len(latencies_ms) / duration_s,
            p50_ms=nearest_rank(latencies_ms, 50),
            p90_ms=nearest_rank(latencies_ms, 90),
            p99_ms=nearest_rank(latencies_ms, 99),
            errors=errors,
        )


@dataclass(frozen=True)
class StressReport:
    consensus: str
    gas_limit: int
    n_t: int
    t_t_s: float  # mean across repeats
    tps: float  # mean across repeats
    repeats: int
    tps_stddev: float

    CSV_HEADER = "consensus,gas_limit,n_tx,t_t_s,tps,repeats,tps_stddev"

    def csv_row(self) -> str:
        return (
            f"{self.consensus},{self.gas_limit},{self.n_t},{self.t_t_s:.3f},"
            f"{self.tps:.3f},{self.repeats},{self.tps_stddev:.3f}"
        )

    @classmethod
    def from_runs(
        cls, consensus: str, gas_limit: int, n_t: int, t_ts: Sequence[float]
    ) -> "StressReport":
        tps_values = [n_t / t for t in t_ts]
        mean_tps = sum(tps_values) / len(tps_values)
        if len(tps_values) > 1:
            var = sum((x - mean_tps) ** 2 for x in tps_values) / (len(tps_values) - 1)
            stddev = math.sqrt(var)
        else:
            stddev = 0.0
        return cls(
            consensus=consensus,
            gas_limit=gas_limit,
            n_t=n_t,
            t_t_s=sum(t_ts) / len(t_ts),
            tps=mean_tps,
            repeats=len(t_ts),
            tps_stddev=stddev,
        )


@dataclass(frozen=True)
class CpuSample:
    t_s: float
    percent_one_core: float  # 100 = one full core; >100 means several

    CSV_HEADER = "t_s,percent_one_core"

    def __post_init__(self):
        if self.percent_one_core < 0:
            raise ValueError("negative CPU percentage")

    def csv_row(self) -> str:
        return f"{self.t_s:.3f},{self.percent_one_core:.2f}"


_REPORT_TYPES = (LatencyReport, StressReport, CpuSample)


def emit_csv(reports: Sequence, path, report_type: Optional[type] = None) -> None:
    """Write reports as CSV with a header row. The list must be homogeneous;
    pass report_type explicitly to emit a header-only file for an empty list.
    Re-emitting the same reports yields a byte-identical file."""
    if reports:
        kinds = {type(r) for r in reports}
        if len(kinds) > 1:
            raise ValueError(f"mixed report types: {sorted(k.__name__ for k in kinds)}")
        inferred = kinds.pop()
        if report_type is not None and report_type is not inferred:
            raise ValueError("report_type does not match the reports")
        report_type = inferred
    if report_type is None or report_type not in _REPORT_TYPES:
        raise ValueError("cannot determine report type")
    lines = [report_type.CSV_HEADER]
    lines.extend(r.csv_row() for r in reports)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
