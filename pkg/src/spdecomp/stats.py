"""Run telemetry, one record per solver run."""

from __future__ import annotations

from dataclasses import dataclass, field

CSV_COLUMNS = (
    "run",
    "points_evaluated",
    "sigma_or_K",
    "tasks_C",
    "clusters_T",
    "max_procs",
    "avg_procs",
    "parallel_efficiency",
    "max_cuts",
    "master_time",
    "wall_clock",
)


@dataclass
class RunStats:
    points_evaluated: int = 0
    max_cuts: int = 0
    master_time: float = 0.0
    wall_clock: float = 0.0
    avg_workers: float = 0.0
    max_workers: int = 0
    busy_time: float = 0.0
    owned_time: float = 0.0
    parallel_efficiency: float = 0.0
    efficiency_defined: bool = True
    tasks_executed: int = 0
    tasks_dispatched: int = 0
    results_applied: int = 0
    results_discarded: int = 0
    total_worker_cpu: float = 0.0
    worker_series: list = field(default_factory=list)

    def csv_row(self, run: str, sigma_or_K, C: int, T: int) -> list[str]:
        return [
            run,
            str(self.points_evaluated),
            f"{sigma_or_K:g}" if isinstance(sigma_or_K, float) else str(sigma_or_K),
            str(C),
            str(T),
            str(self.max_workers),
            f"{self.avg_workers:.3f}",
            f"{self.parallel_efficiency:.4f}",
            str(self.max_cuts),
            f"{self.master_time:.6f}",
            f"{self.wall_clock:.6f}",
        ]
