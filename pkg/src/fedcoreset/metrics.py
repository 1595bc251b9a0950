"""Evaluation and reporting: accuracy, coreset composition, round logs.

Per-round series go to CSV (floats rendered with 9 significant digits);
run summaries go to JSON with a versioned schema.  Files are UTF-8 with LF
newlines.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np

from .data import ClientChunk, Dataset
from .model import ParamVector, predict_proba

if TYPE_CHECKING:
    from .coreset import Coreset
    from .federation import CostLedger

__all__ = [
    "SCHEMA_VERSION",
    "RoundMetrics",
    "RunManifest",
    "evaluate_accuracy",
    "coreset_composition",
    "dataset_fingerprint",
    "write_round_log",
    "read_round_log",
    "write_summary",
]

SCHEMA_VERSION = 1

ROUND_LOG_HEADER = (
    "round,test_accuracy,mean_train_loss,coreset_clean_fraction,"
    "grad_evals,sgd_visits,params_bcast,grads_bcast,uploads"
)


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    test_accuracy: float
    mean_train_loss: float
    coreset_clean_fraction: float | None  # None for non-coreset algorithms
    ledger_snapshot: "CostLedger"

    def __post_init__(self) -> None:
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError("test_accuracy out of [0, 1]")
        frac = self.coreset_clean_fraction
        if frac is not None and not 0.0 <= frac <= 1.0:
            raise ValueError("coreset_clean_fraction out of [0, 1]")


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run byte-for-byte."""

    config: dict[str, Any]
    version: str
    seed: int
    dataset_fingerprint: str

    def as_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "version": self.version,
            "seed": self.seed,
            "dataset_fingerprint": self.dataset_fingerprint,
        }


def evaluate_accuracy(params: ParamVector, test: Dataset) -> float:
    """Fraction of argmax-correct predictions (ties to the lowest class)."""
    if test.n == 0:
        raise ValueError("test set is empty")
    pred = np.argmax(predict_proba(params, test.features), axis=1)
    return float(np.mean(pred == test.labels))


def coreset_composition(coreset: "Coreset", chunk: ClientChunk) -> float:
    """Fraction of selected samples the injectors left untouched.

    Empty coresets score 1.0 (vacuously clean).
    """
    if coreset.size == 0:
        return 1.0
    if coreset.indices.min() < 0 or coreset.indices.max() >= chunk.n:
        raise ValueError("coreset indices out of range for chunk")
    return float(np.mean(chunk.clean_flags[coreset.indices]))


def dataset_fingerprint(chunks: list[ClientChunk], val: Dataset, test: Dataset) -> str:
    """SHA-256 over the realized (noisy) data, for arm-isolation checks."""
    h = hashlib.sha256()
    for chunk in chunks:
        h.update(chunk.dataset.features.tobytes())
        h.update(chunk.dataset.labels.tobytes())
        h.update(chunk.clean_flags.tobytes())
    for part in (val, test):
        h.update(part.features.tobytes())
        h.update(part.labels.tobytes())
    return h.hexdigest()


def _fmt(value: float | None) -> str:
    return "" if value is None else format(float(value), ".9g")


def write_round_log(path: str, series: list[RoundMetrics]) -> None:
    """One CSV row per round; see ROUND_LOG_HEADER for the columns."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(ROUND_LOG_HEADER + "\n")
            for rm in series:
                led = rm.ledger_snapshot
                fh.write(
                    ",".join(
                        [
                            str(rm.round),
                            _fmt(rm.test_accuracy),
                            _fmt(rm.mean_train_loss),
                            _fmt(rm.coreset_clean_fraction),
                            str(led.per_sample_grad_evals),
                            str(led.sgd_sample_visits),
                            str(led.params_broadcast),
                            str(led.grads_broadcast),
                            str(led.update_uploads),
                        ]
                    )
                    + "\n"
                )
    except OSError as exc:
        raise OSError(f"failed to write round log {path}: {exc}") from exc


def read_round_log(path: str) -> list[dict[str, Any]]:
    """Parse a round log back into dicts (None for empty optional fields)."""
    rows: list[dict[str, Any]] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != ROUND_LOG_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        names = header.split(",")
        for line in fh:
            cells = line.strip().split(",")
            row: dict[str, Any] = {}
            for name, cell in zip(names, cells):
                if cell == "":
                    row[name] = None
                elif name in ("test_accuracy", "mean_train_loss", "coreset_clean_fraction"):
                    row[name] = float(cell)
                else:
                    row[name] = int(cell)
            rows.append(row)
    return rows


def write_summary(
    path: str,
    manifest: RunManifest,
    arms: dict[str, Any],
    comparisons: dict[str, Any] | None = None,
) -> None:
    """JSON summary: manifest echo, one entry per algorithm arm, and any
    cross-arm comparisons (cost ratios)."""
    payload = {
        "schema_version": SCHEMA_VERSION,
        "manifest": manifest.as_dict(),
        "arms": arms,
        "comparisons": comparisons or {},
    }
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed to write summary {path}: {exc}") from exc
