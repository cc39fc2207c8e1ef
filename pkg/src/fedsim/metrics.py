"""Per-round reports and the data series behind the dashboard charts."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .datasets import data_distribution  # noqa: F401  (re-exported for the data-spread chart)

CSV_HEADER = (
    "round,participants,comms_bytes,loss_min,loss_mean,loss_max,"
    "global_train_loss,global_test_loss"
)
BYTES_PER_REAL = 8


@dataclass
class RoundReport:
    round: int
    participants: list[int] = field(default_factory=list)
    per_client_loss: dict[int, float] = field(default_factory=dict)
    comms_bytes: int = 0
    global_train_loss: float = 0.0
    global_test_loss: float = 0.0
    per_cluster_sizes: list[int] = field(default_factory=list)
    centralized: bool = False
    config_version: int = 0

    def to_record(self) -> dict:
        return {
            "round": self.round,
            "participants": list(self.participants),
            "per_client_loss": {str(k): v for k, v in sorted(self.per_client_loss.items())},
            "comms_bytes": self.comms_bytes,
            "global_train_loss": self.global_train_loss,
            "global_test_loss": self.global_test_loss,
            "per_cluster_sizes": list(self.per_cluster_sizes),
            "centralized": self.centralized,
            "config_version": self.config_version,
        }

    @classmethod
    def from_record(cls, rec: dict) -> RoundReport:
        return cls(
            round=int(rec["round"]),
            participants=[int(p) for p in rec["participants"]],
            per_client_loss={int(k): float(v) for k, v in rec["per_client_loss"].items()},
            comms_bytes=int(rec["comms_bytes"]),
            global_train_loss=float(rec["global_train_loss"]),
            global_test_loss=float(rec["global_test_loss"]),
            per_cluster_sizes=[int(s) for s in rec["per_cluster_sizes"]],
            centralized=bool(rec.get("centralized", False)),
            config_version=int(rec.get("config_version", 0)),
        )


def comms_cost(participants_count: int, n_params: int, scaffold: bool = False) -> int:
    """Simulated bytes moved in one round.

    Each participant downloads the model and uploads its delta, one
    ``n_params``-long float64 vector each way. SCAFFOLD also uploads the
    control-variate delta, doubling the upload term.
    """
    if participants_count < 0 or n_params < 0:
        raise ValueError("counts must be nonnegative")
    vector = n_params * BYTES_PER_REAL
    upload = 2 * vector if scaffold else vector
    return participants_count * (vector + upload)


def loss_distribution(report: RoundReport) -> tuple[float, float, float] | None:
    """(min, mean, max) of final local losses; None when nobody participated."""
    if not report.per_client_loss:
        return None
    losses = np.fromiter(report.per_client_loss.values(), dtype=float)
    return float(losses.min()), float(losses.mean()), float(losses.max())


class MetricsSeries:
    """Append-only sequence of round reports."""

    def __init__(self, reports=None):
        self.reports: list[RoundReport] = []
        for r in reports or ():
            self.append(r)

    def __len__(self) -> int:
        return len(self.reports)

    def __iter__(self):
        return iter(self.reports)

    def append(self, report: RoundReport) -> None:
        if self.reports and report.round <= self.reports[-1].round:
            raise ValueError(
                f"round {report.round} does not follow round {self.reports[-1].round}"
            )
        self.reports.append(report)

    def to_records(self) -> list[dict]:
        return [r.to_record() for r in self.reports]

    @classmethod
    def from_records(cls, records) -> MetricsSeries:
        return cls(RoundReport.from_record(r) for r in records)

    def csv_rows(self) -> list[list[str]]:
        rows = []
        for r in self.reports:
            dist = loss_distribution(r)
            stats = ["", "", ""] if dist is None else [_fmt(v) for v in dist]
            rows.append([
                str(r.round),
                str(len(r.participants)),
                str(r.comms_bytes),
                *stats,
                _fmt(r.global_train_loss),
                _fmt(r.global_test_loss),
            ])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for row in self.csv_rows():
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def participation_histogram(series: MetricsSeries, n_clients: int) -> dict:
    counts = np.zeros(n_clients, dtype=np.int64)
    rounds = 0
    for r in series:
        if r.centralized:
            continue
        rounds += 1
        for cid in r.participants:
            counts[cid] += 1
    rates = counts / rounds if rounds else np.zeros(n_clients)
    return {"rounds": rounds, "counts": counts.tolist(), "rates": rates.tolist()}


def convergence_series(series: MetricsSeries) -> list[tuple[int, float, float]]:
    return [(r.round, r.global_train_loss, r.global_test_loss) for r in series]


def cumulative_comms(series: MetricsSeries) -> list[int]:
    return np.cumsum([r.comms_bytes for r in series], dtype=np.int64).tolist()
