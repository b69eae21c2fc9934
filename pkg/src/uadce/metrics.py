"""Session accuracy records and the run-level indicators (PD, average accuracy)."""

from __future__ import annotations

import csv
import io
from decimal import ROUND_HALF_UP, Decimal
from dataclasses import asdict, dataclass, field


def performance_drop(first_acc: float, last_acc: float) -> float:
    """Accuracy lost between the first and the last session, in points."""
    return first_acc - last_acc


def average_accuracy(accs) -> float:
    accs = list(accs)
    if not accs:
        raise ValueError("average_accuracy of an empty list")
    return sum(accs) / len(accs)


def round2(x: float) -> float:
    """Two-decimal fixed point as reported in tables (half away from zero, on the shortest repr)."""
    return float(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class SessionMetrics:
    session_index: int
    overall_acc: float
    base_acc: float
    novel_acc: float | None = None
    cnn_acc: float | None = None
    seen_classes: int = 0
    timestamp: str = ""
    wall_time: float = 0.0

    def __post_init__(self):
        for name in ("overall_acc", "base_acc", "novel_acc", "cnn_acc"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} outside [0, 100]")


CSV_FIELDS = ("session_index", "overall", "base", "novel")


def metrics_csv(sessions: list[SessionMetrics]) -> str:
    """Deterministic CSV: no timestamps, two-decimal percentages."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for s in sessions:
        w.writerow([s.session_index, f"{round2(s.overall_acc):.2f}", f"{round2(s.base_acc):.2f}",
                    "" if s.novel_acc is None else f"{round2(s.novel_acc):.2f}"])
    return buf.getvalue()


def read_metrics_csv(path) -> list[SessionMetrics]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(SessionMetrics(
                int(row["session_index"]), float(row["overall"]), float(row["base"]),
                float(row["novel"]) if row["novel"] else None))
    return out


@dataclass
class RunReport:
    sessions: list[SessionMetrics]
    pd: float = 0.0
    average_acc: float = 0.0
    config: dict = field(default_factory=dict)
    audit_files: dict = field(default_factory=dict)

    @classmethod
    def from_sessions(cls, sessions, config=None, audit_files=None) -> "RunReport":
        accs = [s.overall_acc for s in sessions]
        return cls(list(sessions), performance_drop(accs[0], accs[-1]), average_accuracy(accs),
                   dict(config or {}), dict(audit_files or {}))

    @property
    def final_acc(self) -> float:
        return self.sessions[-1].overall_acc

    def to_json(self) -> dict:
        return {
            "sessions": [asdict(s) for s in self.sessions],
            "pd": self.pd,
            "average_acc": self.average_acc,
            "final_acc": self.final_acc,
            "config": self.config,
            "audit_files": self.audit_files,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RunReport":
        return cls([SessionMetrics(**s) for s in data["sessions"]], data["pd"], data["average_acc"],
                   data.get("config", {}), data.get("audit_files", {}))

    def table(self) -> str:
        lines = [f"{'session':>7} {'overall':>8} {'base':>8} {'novel':>8}"]
        for s in self.sessions:
            novel = "-" if s.novel_acc is None else f"{s.novel_acc:.2f}"
            lines.append(f"{s.session_index:>7} {s.overall_acc:>8.2f} {s.base_acc:>8.2f} {novel:>8}")
        lines.append(f"PD {round2(self.pd):.2f}  average {round2(self.average_acc):.2f}")
        return "\n".join(lines)
