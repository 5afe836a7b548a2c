"""
Evaluation metrics, the per-step metrics TSV and seed-run report aggregation.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import DataError

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
METRICS_FILE = "metrics.tsv"


def _pair(preds: Sequence, labels: Sequence, minimum: int = 1):
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise DataError(f"length mismatch: {preds.shape[0] if preds.ndim else 0} predictions vs "
                        f"{labels.shape[0] if labels.ndim else 0} labels")
    if preds.ndim != 1 or preds.shape[0] < minimum:
        raise DataError(f"need at least {minimum} paired values, got shape {preds.shape}")
    return preds, labels


def _confusion(preds: Sequence[int], labels: Sequence[int]):
    p, y = _pair(preds, labels)
    values = set(np.unique(p).tolist()) | set(np.unique(y).tolist())
    if not values <= {0, 1}:
        raise DataError(f"binary metrics need 0/1 labels, got {sorted(values)}")
    tp = int(np.sum((p == 1) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    return tp, tn, fp, fn


def accuracy(preds: Sequence, labels: Sequence) -> float:
    p, y = _pair(preds, labels)
    return float(np.mean(p == y))


def f1_binary(preds: Sequence[int], labels: Sequence[int]) -> float:
    """F1 of the positive class; 0 when there are no true positives."""
    tp, _, fp, fn = _confusion(preds, labels)
    if tp == 0:
        return 0.0
    return tp / (tp + 0.5 * (fp + fn))


def mcc(preds: Sequence[int], labels: Sequence[int]) -> float:
    """Matthews correlation; 0 when any marginal is empty."""
    tp, tn, fp, fn = _confusion(preds, labels)
    denominator = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denominator == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denominator)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    a, b = _pair(x, y, minimum=2)
    a, b = a.astype(np.float64), b.astype(np.float64)
    da, db = a - a.mean(), b - b.mean()
    norm = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if norm == 0.0:
        raise DataError("pearson is undefined for a constant input")
    return float(np.clip(np.sum(da * db) / norm, -1.0, 1.0))


def mean_squared_error(x: Sequence[float], y: Sequence[float]) -> float:
    a, b = _pair(x, y)
    return float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))


@dataclass
class MetricsRow:
    step: int
    stage: str
    loss_total: float
    loss_latent: float
    loss_soft: float
    loss_hard: float
    dev_metric: Optional[float] = None
    timestamp: str = ""

    def __post_init__(self):
        if not self.timestamp:
            self.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")


COLUMNS = [f.name for f in fields(MetricsRow)]


def _frame(rows: Iterable[MetricsRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(row) for row in rows], columns=COLUMNS)


class MetricsWriter:
    """Appends rows to a TSV file, writing the header once; every call flushes to disk."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def append(self, rows: Sequence[MetricsRow]):
        new_file = not self.path.exists() or self.path.stat().st_size == 0
        if not rows and not new_file:
            return
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8", newline="") as handle:
                _frame(rows).to_csv(handle, sep="\t", index=False, header=new_file)
        except OSError as e:
            raise OSError(f"cannot write metrics to {self.path}: {e}") from e


def write_metrics(rows: Sequence[MetricsRow], path: Union[str, Path]):
    """Write ``rows`` as a fresh TSV with a header row."""
    path = Path(path)
    if path.exists():
        path.unlink()
    MetricsWriter(path).append(list(rows))


def read_metrics(path: Union[str, Path]) -> List[MetricsRow]:
    frame = pd.read_csv(path, sep="\t", float_precision="round_trip", dtype={"stage": str, "timestamp": str})
    missing = set(COLUMNS) - set(frame.columns)
    if missing:
        raise DataError(f"{path} is missing metrics columns {sorted(missing)}")
    rows = []
    for record in frame.to_dict("records"):
        dev = record["dev_metric"]
        rows.append(
            MetricsRow(
                step=int(record["step"]),
                stage=str(record["stage"]),
                loss_total=float(record["loss_total"]),
                loss_latent=float(record["loss_latent"]),
                loss_soft=float(record["loss_soft"]),
                loss_hard=float(record["loss_hard"]),
                dev_metric=None if pd.isna(dev) else float(dev),
                timestamp=str(record["timestamp"]),
            )
        )
    return rows


def write_summary(run_dir: Union[str, Path], summary: Dict):
    path = Path(run_dir) / SUMMARY_FILE
    path.write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")


def aggregate_summaries(run_dirs: Sequence[Union[str, Path]]) -> pd.DataFrame:
    """
    Mean and population std of every numeric final metric across run directories.

    Only directories holding a summary.json (completed runs) are read.

    Returns:
        DataFrame indexed by metric with columns mean, std, n.
    """
    records = []
    for run_dir in run_dirs:
        path = Path(run_dir) / SUMMARY_FILE
        if not path.exists():
            logger.warning(f"⚠️ Skipping {run_dir}: no {SUMMARY_FILE} (run incomplete?)")
            continue
        summary = json.loads(path.read_text(encoding="utf-8"))
        records.append({k: v for k, v in summary.get("metrics", {}).items() if isinstance(v, (int, float))})
    if not records:
        raise DataError("no completed runs to aggregate")
    frame = pd.DataFrame(records)
    table = pd.DataFrame({"mean": frame.mean(), "std": frame.std(ddof=0), "n": frame.count()})
    table.index.name = "metric"
    return table


def format_table(table: pd.DataFrame) -> str:
    lines = [f"{'metric':<24} {'mean':>10} {'std':>10} {'n':>4}"]
    for metric, row in table.iterrows():
        lines.append(f"{metric:<24} {row['mean']:>10.4f} {row['std']:>10.4f} {int(row['n']):>4}")
    return "\n".join(lines)
