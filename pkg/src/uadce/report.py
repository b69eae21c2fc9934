"""Accuracy-vs-session plots and report rendering from stored run artifacts."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import RunReport, read_metrics_csv


def plot_accuracy(sessions, stem) -> list[Path]:
    """Write ``<stem>.png`` and ``<stem>.svg``; returns the paths."""
    idx = [s.session_index for s in sessions]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(idx, [s.overall_acc for s in sessions], "o-", label="overall")
    ax.plot(idx, [s.base_acc for s in sessions], "s--", label="base")
    novel = [(s.session_index, s.novel_acc) for s in sessions if s.novel_acc is not None]
    if novel:
        ax.plot(*zip(*novel), "^:", label="novel")
    ax.set_xlabel("session")
    ax.set_ylabel("accuracy (%)")
    ax.set_xticks(idx)
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    stem = Path(stem)
    paths = [stem.with_suffix(".png"), stem.with_suffix(".svg")]
    fig.savefig(paths[0], dpi=120, metadata={"Software": None})
    fig.savefig(paths[1], metadata={"Date": None})
    plt.close(fig)
    return paths


def load_report(run_dir) -> RunReport:
    """RunReport from ``report.json`` if present, otherwise rebuilt from ``metrics.csv``."""
    run_dir = Path(run_dir)
    if (run_dir / "report.json").exists():
        return RunReport.from_json(json.loads((run_dir / "report.json").read_text()))
    return RunReport.from_sessions(read_metrics_csv(run_dir / "metrics.csv"))


def render(run_dir, plot: bool = True) -> str:
    report = load_report(run_dir)
    if plot:
        plot_accuracy(report.sessions, Path(run_dir) / "accuracy")
    return report.table()
