"""
File-based storage for experiment outputs
Writes regret curves and sweep summaries as CSV and run metadata as JSON
"""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from bandit_sbm.sim import BatchSummary, event_frequencies

logger = logging.getLogger(__name__)

REGRET_HEADER = ["t", "algorithm", "mean_regret", "ci_lower", "ci_upper", "n_runs"]
SWEEP_HEADER = [
    "axis", "value", "algorithm", "status",
    "final_mean_regret", "ci_lower", "ci_upper", "n_runs",
]


def _num(x: float) -> str:
    return format(float(x), ".12g")


class ResultsStore:
    """Manages the output directory of one command invocation"""

    def __init__(self, base_path: str):
        """Initialize results store

        Args:
            base_path: Directory receiving the output files
        """
        self.base_path = Path(base_path)
        self.base_path.mkdir(parents=True, exist_ok=True)

    def _write_json(self, name: str, payload: Any) -> Path:
        path = self.base_path / name
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        logger.info(f"Wrote {path}")
        return path

    def save_regret_csv(self, summaries: Sequence[BatchSummary]) -> Path:
        """One row per (checkpoint, algorithm)"""
        path = self.base_path / "regret.csv"
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(REGRET_HEADER)
            for summary in summaries:
                for i, t in enumerate(summary.checkpoints):
                    writer.writerow([
                        int(t),
                        summary.algorithm.value,
                        _num(summary.mean[i]),
                        _num(summary.ci_lower[i]),
                        _num(summary.ci_upper[i]),
                        summary.n_runs,
                    ])
        logger.info(f"Wrote {path}")
        return path

    def save_results_json(
        self,
        config: Dict[str, Any],
        batches: Sequence[tuple],
        seeds: Sequence[int],
        full_trace: bool = False,
    ) -> Path:
        """Config echo plus per-algorithm summary and run records

        Args:
            config: JSON-ready config document
            batches: (BatchSummary, list of RunResult) pairs
            seeds: Seeds the batch ran with
        """
        algorithms: Dict[str, Any] = {}
        for summary, results in batches:
            checkpoints = summary.checkpoints
            algorithms[summary.algorithm.value] = {
                "n_runs": summary.n_runs,
                "degenerate_ci": summary.degenerate,
                "final_mean_regret": summary.final_mean,
                "final_ci_half_width": float(summary.half_width[-1]),
                "event_frequencies": event_frequencies(results).as_dict(),
                "runs": [r.to_record(checkpoints, full_trace) for r in results],
            }
        return self._write_json(
            "results.json",
            {"config": config, "seeds": list(seeds), "algorithms": algorithms},
        )

    def save_sweep_summary(self, rows: List[Dict[str, Any]]) -> Path:
        path = self.base_path / "sweep_summary.csv"
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SWEEP_HEADER)
            for row in rows:
                writer.writerow([
                    row["axis"],
                    row["value"],
                    row["algorithm"],
                    row["status"],
                    "" if row.get("final_mean_regret") is None else _num(row["final_mean_regret"]),
                    "" if row.get("ci_lower") is None else _num(row["ci_lower"]),
                    "" if row.get("ci_upper") is None else _num(row["ci_upper"]),
                    "" if row.get("n_runs") is None else row["n_runs"],
                ])
        logger.info(f"Wrote {path}")
        return path

    def save_assignment(
        self,
        labels: Sequence[int],
        status: str,
        iterations: int,
        accuracy: Optional[float] = None,
    ) -> Path:
        payload: Dict[str, Any] = {
            "labels": {str(vertex): int(label) for vertex, label in enumerate(labels)},
            "status": status,
            "iterations": iterations,
        }
        if accuracy is not None:
            payload["accuracy"] = accuracy
        return self._write_json("assignment.json", payload)

    def save_report(self, report: Dict[str, Any]) -> Path:
        return self._write_json("assumption_report.json", report)


def summary_rows(axis: str, value: Any, summaries: Sequence[BatchSummary]) -> List[Dict[str, Any]]:
    return [
        {
            "axis": axis,
            "value": value,
            "algorithm": s.algorithm.value,
            "status": "ok",
            "final_mean_regret": s.final_mean,
            "ci_lower": float(s.ci_lower[-1]),
            "ci_upper": float(s.ci_upper[-1]),
            "n_runs": s.n_runs,
        }
        for s in summaries
    ]


def error_rows(axis: str, value: Any, algorithms: Sequence[str]) -> List[Dict[str, Any]]:
    return [
        {"axis": axis, "value": value, "algorithm": algorithm, "status": "error"}
        for algorithm in algorithms
    ]
