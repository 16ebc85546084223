"""Test-time decision rules and the accuracy, bitrate and ITR metrics."""

from __future__ import annotations

import csv
import json
import logging
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .dataset import Dataset, ProtocolMeta
from .linsvm import Hyperplane
from .scoring import DvTensor, ScoreProfile, ZoneTensor, cumulative_tensor

logger = logging.getLogger("osbf-speller.evaluation")

METHODS = ("dv_med", "erp_avg", "sbf", "osbf")
CSV_COLUMNS = (
    "dataset",
    "subject",
    "classifier",
    "method",
    "mode",
    "accuracy",
    "mean_iters",
    "bitrate",
    "duration_min",
    "itr",
)


class MetricError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrialPrediction:
    trial: int
    flashes: tuple[int, ...]
    stop_iteration: int
    predicted_symbol: int
    correct: bool
    levels_correct: int
    fallback: bool = False


@dataclass
class EvalReport:
    method: str
    mode: str
    accuracy: float
    mean_iterations: float
    bitrate_bits: float
    trial_duration_min: float
    itr_bits_per_min: float
    level_accuracy: float
    fallback_count: int
    per_trial: list[TrialPrediction] = field(default_factory=list)
    classifier: str = ""
    subject: str = ""
    dataset: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> dict[str, str]:
        return {
            "dataset": self.dataset,
            "subject": self.subject,
            "classifier": self.classifier,
            "method": self.method,
            "mode": self.mode,
            "accuracy": f"{self.accuracy:.6f}",
            "mean_iters": f"{self.mean_iterations:.6f}",
            "bitrate": f"{self.bitrate_bits:.6f}",
            "duration_min": f"{self.trial_duration_min:.6f}",
            "itr": f"{self.itr_bits_per_min:.6f}",
        }

    @classmethod
    def from_csv_row(cls, row: Mapping[str, str]) -> EvalReport:
        """Inverse of ``csv_row``; per-level accuracy is not stored there and comes back as NaN."""
        try:
            return cls(
                method=row["method"],
                mode=row["mode"],
                accuracy=float(row["accuracy"]),
                mean_iterations=float(row["mean_iters"]),
                bitrate_bits=float(row["bitrate"]),
                trial_duration_min=float(row["duration_min"]),
                itr_bits_per_min=float(row["itr"]),
                level_accuracy=float("nan"),
                fallback_count=0,
                classifier=row["classifier"],
                subject=row["subject"],
                dataset=row["dataset"],
            )
        except (KeyError, ValueError) as exc:
            raise MetricError(f"malformed results row {dict(row)!r}: {exc}") from exc


def symbol_index(flashes: Iterable[int], n_flashes: int) -> int:
    """Row-major combination of 1-based per-level flashes into a 0-based symbol index."""
    index = 0
    for f in flashes:
        index = index * n_flashes + (int(f) - 1)
    return index


def _predictions(
    flashes: np.ndarray,
    stops: np.ndarray,
    fallback: np.ndarray,
    truth: np.ndarray,
    n_f: int,
) -> list[TrialPrediction]:
    hits = flashes == truth
    out: list[TrialPrediction] = []
    for k in range(flashes.shape[0]):
        chosen = tuple(int(f) for f in flashes[k])
        out.append(
            TrialPrediction(
                trial=k + 1,
                flashes=chosen,
                stop_iteration=int(stops[k]),
                predicted_symbol=symbol_index(chosen, n_f),
                correct=bool(hits[k].all()),
                levels_correct=int(hits[k].sum()),
                fallback=bool(fallback[k]),
            )
        )
    return out


def _argmax_flash(values: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the smallest flash index on ties
    return np.argmax(values, axis=-1) + 1


def predict_dv_med(dv: DvTensor, d: Dataset) -> list[TrialPrediction]:
    if dv.values.shape != d.labels.shape:
        raise MetricError(f"decision tensor of shape {dv.values.shape} does not cover dataset {d.labels.shape}")
    flashes = _argmax_flash(dv.values.mean(axis=1))
    n_k = d.n_trials
    return _predictions(flashes, np.full(n_k, d.n_iterations), np.zeros(n_k, dtype=bool), d.truth, d.n_flashes)


def predict_erp_avg(h: Hyperplane, d: Dataset) -> list[TrialPrediction]:
    if h.dim != d.feature_dim:
        raise MetricError(f"dimension mismatch: hyperplane has {h.dim} weights, dataset has {d.feature_dim} features")
    averaged = d.features.mean(axis=1)
    flashes = _argmax_flash(averaged @ h.w + h.b)
    n_k = d.n_trials
    return _predictions(flashes, np.full(n_k, d.n_iterations), np.zeros(n_k, dtype=bool), d.truth, d.n_flashes)


def predict_scorebased(
    z: ZoneTensor,
    p: ScoreProfile,
    mode: str,
    n_r: int | None = None,
    truth: np.ndarray | None = None,
) -> list[TrialPrediction]:
    """Score-based prediction over the first ``n_r`` iterations.

    Early stopping stops a level at the first iteration whose leader is ahead
    of the runner-up by at least delta; a trial ends when its last level
    stops. Levels that never trigger fall back to the no-stopping choice at
    ``n_r`` and flag the trial.
    """
    if mode not in ("nostop", "earlystop"):
        raise MetricError(f"mode must be nostop or earlystop, got {mode!r}")
    n_k, total_r, _, n_f = z.shape
    n_r = total_r if n_r is None else n_r
    if not 1 <= n_r <= total_r:
        raise MetricError(f"n_r={n_r} outside [1, {total_r}]")
    if truth is None:
        raise MetricError("score-based prediction needs the truth map to mark trials")
    cum = cumulative_tensor(z, p)[:, :n_r]
    final = _argmax_flash(cum[:, -1])
    if mode == "nostop":
        return _predictions(final, np.full(n_k, n_r), np.zeros(n_k, dtype=bool), np.asarray(truth), n_f)

    ordered = np.sort(cum, axis=-1)
    fired = (ordered[..., -1] - ordered[..., -2]) >= p.delta
    triggered = fired.any(axis=1)
    first = np.argmax(fired, axis=1)
    leaders = _argmax_flash(cum)
    at_first = np.take_along_axis(leaders, first[:, None, :], axis=1)[:, 0, :]
    flashes = np.where(triggered, at_first, final)
    level_stops = np.where(triggered, first + 1, n_r)
    return _predictions(flashes, level_stops.max(axis=1), ~triggered.all(axis=1), np.asarray(truth), n_f)


def bitrate(n_symbols: int, p: float) -> float:
    """Bits per selection for N equiprobable symbols at accuracy P; 0 log 0 is taken as 0."""
    if n_symbols < 2:
        raise MetricError(f"bitrate needs at least 2 symbols, got {n_symbols}")
    if not 0.0 <= p <= 1.0:
        raise MetricError(f"accuracy must lie in [0, 1], got {p}")
    bits = float(np.log2(n_symbols))
    if p > 0.0:
        bits += p * float(np.log2(p))
    if p < 1.0:
        bits += (1.0 - p) * float(np.log2((1.0 - p) / (n_symbols - 1)))
    return bits


def itr(b_bits: float, soa: float, f_s: int, mean_iters: float) -> tuple[float, float]:
    """Returns (trial duration in minutes, bits per minute)."""
    if not (soa > 0 and f_s > 0 and mean_iters > 0):
        raise MetricError(f"zero trial duration from soa={soa}, f_s={f_s}, mean_iters={mean_iters}")
    duration = soa * f_s * mean_iters / 60.0
    return duration, b_bits / duration


def build_report(
    predictions: list[TrialPrediction],
    method: str,
    mode: str,
    meta: ProtocolMeta,
    classifier: str = "",
    subject: str = "",
    dataset: str = "",
) -> EvalReport:
    if not predictions:
        raise MetricError("cannot build a report from zero trials")
    n = len(predictions)
    accuracy = sum(p.correct for p in predictions) / n
    mean_iters = sum(p.stop_iteration for p in predictions) / n
    bits = bitrate(meta.n_symbols, accuracy)
    duration, rate = itr(bits, meta.soa_seconds, meta.flashes_per_iteration, mean_iters)
    return EvalReport(
        method=method,
        mode=mode,
        accuracy=accuracy,
        mean_iterations=mean_iters,
        bitrate_bits=bits,
        trial_duration_min=duration,
        itr_bits_per_min=rate,
        level_accuracy=sum(p.levels_correct for p in predictions) / (n * meta.n_levels),
        fallback_count=sum(p.fallback for p in predictions),
        per_trial=predictions,
        classifier=classifier,
        subject=subject,
        dataset=dataset,
    )


def class_split(reports_std: Mapping[str, EvalReport], reports_msvm: Mapping[str, EvalReport]) -> dict[str, Any]:
    """Class 1: subjects where the standard SVM beats the M-SVM; class 2: the converse; ties drop out."""
    if set(reports_std) != set(reports_msvm):
        missing = sorted(set(reports_std) ^ set(reports_msvm))
        raise MetricError(f"subject sets differ between classifiers: {missing}")

    def summary(subjects: list[str]) -> dict[str, Any]:
        if not subjects:
            return {"subjects": [], "standard": None, "msvm": None}
        return {
            "subjects": subjects,
            "standard": sum(reports_std[s].accuracy for s in subjects) / len(subjects),
            "msvm": sum(reports_msvm[s].accuracy for s in subjects) / len(subjects),
        }

    subjects = sorted(reports_std)
    class1 = [s for s in subjects if reports_std[s].accuracy > reports_msvm[s].accuracy]
    class2 = [s for s in subjects if reports_std[s].accuracy < reports_msvm[s].accuracy]
    return {"class1": summary(class1), "class2": summary(class2), "ties": [s for s in subjects if s not in class1 + class2]}


def write_results_csv(reports: Iterable[EvalReport], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for report in reports:
            writer.writerow(report.csv_row())
    return path


def read_results_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))
