"""Run metrics: accuracy, AIA, forgetting rate, category drift rate, memory
accounting, PCA projections, and report assembly/serialization.

The category drift rate counts a class as drifted when, among test samples
predicted as that class, strictly more than half are wrong; a class that
attracts no predictions at all also counts as drifted (its prototype lost
its region entirely).  Reports state this convention.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

REPORT_SCHEMA_VERSION = 1

CDR_CONVENTION = "classes with zero predicted samples count as drifted"


def accuracy(predictions, labels) -> float:
    """Fraction of exact matches."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ParameterError("predictions and labels must have equal length")
    if predictions.size == 0:
        raise ParameterError("empty inputs")
    return float(np.mean(predictions == labels))


def aia(per_phase_accuracies) -> float:
    """Average incremental accuracy: mean of all phases' accuracies."""
    accs = list(per_phase_accuracies)
    if not accs:
        raise ParameterError("empty accuracy list")
    return float(np.mean(accs))


def forgetting_rate(report: "RunReport") -> float | None:
    """Accuracy drop on the initial phase's classes, in percentage points.

    Positive means forgetting, negative means positive backward transfer.
    Undefined (None) for single-phase runs.
    """
    return _fr_from_results(report.phase_results)


def cdr(predictions, labels, num_classes: int) -> float:
    """Category drift rate: fraction of classes whose predicted-as samples
    are majority-wrong (or that attract no predictions at all)."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    drifted = 0
    for cls in range(num_classes):
        mask = predictions == cls
        total = int(mask.sum())
        if total == 0:
            drifted += 1
            continue
        wrong = int((labels[mask] != cls).sum())
        if wrong * 2 > total:
            drifted += 1
    return drifted / num_classes


def confusion_matrix(predictions, labels, num_classes: int) -> np.ndarray:
    """Counts indexed [predicted, true]."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (predictions, labels), 1)
    return m


def extra_memory_proportion(
    num_classes: int, n_e: int, dim: int, bytes_per_scalar: int, backbone_bytes: float
) -> float:
    """Share of prototype memory in the total model memory."""
    if backbone_bytes <= 0:
        raise ParameterError("backbone_bytes must be positive")
    extra = num_classes * (1 + n_e) * dim * bytes_per_scalar
    return extra / (extra + backbone_bytes)


def pca_project(vectors, k: int = 2) -> np.ndarray:
    """Project onto the top-k principal directions of the centered data.

    Components are orthonormal with a deterministic sign convention (the
    entry of largest magnitude is positive), so outputs are reproducible.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ParameterError("need at least 2 vectors")
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:k]
    for i in range(comps.shape[0]):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


# ---------------------------------------------------------------------------
# run reports


@dataclass
class RunReport:
    phase_results: list
    confusion: np.ndarray
    aia: float
    final_accuracy: float
    fr: float | None
    cdr: float
    seed: int
    config_echo: dict
    protocol: dict
    final_predictions: np.ndarray
    final_labels: np.ndarray
    schema_version: int = REPORT_SCHEMA_VERSION
    bank: object = field(default=None, repr=False, compare=False)


def build_report(
    phase_results,
    final_predictions,
    final_labels,
    num_classes,
    schedule,
    config,
    bank=None,
) -> RunReport:
    from .trainer import config_to_dict  # local import to avoid a cycle

    return RunReport(
        phase_results=list(phase_results),
        confusion=confusion_matrix(final_predictions, final_labels, num_classes),
        aia=aia([p.accuracy for p in phase_results]),
        final_accuracy=phase_results[-1].accuracy,
        fr=_fr_from_results(phase_results),
        cdr=cdr(final_predictions, final_labels, num_classes),
        seed=config.seed,
        config_echo=config_to_dict(config),
        protocol={
            "name": schedule.protocol,
            "num_incremental_phases": schedule.num_incremental_phases,
            "boundaries": list(schedule.boundaries),
            "class_order": list(schedule.class_order),
        },
        final_predictions=np.asarray(final_predictions, dtype=np.int64),
        final_labels=np.asarray(final_labels, dtype=np.int64),
        bank=bank,
    )


def _fr_from_results(phase_results) -> float | None:
    if len(phase_results) < 2:
        return None
    return (phase_results[0].phase0_accuracy - phase_results[-1].phase0_accuracy) * 100.0


def report_to_dict(report: RunReport) -> dict:
    """Deterministic JSON-ready dict; wall-clock timings are deliberately
    excluded (they go to the separate timing file) so equal configs produce
    byte-identical reports."""
    out = {
        "schema_version": report.schema_version,
        "seed": report.seed,
        "config": report.config_echo,
        "protocol": report.protocol,
        "phases": [
            {
                "phase": p.phase,
                "accuracy": p.accuracy,
                "phase0_accuracy": p.phase0_accuracy,
            }
            for p in report.phase_results
        ],
        "aia": report.aia,
        "final_accuracy": report.final_accuracy,
        "cdr": report.cdr,
        "cdr_convention": CDR_CONVENTION,
        "confusion": report.confusion.tolist(),
        "final_predictions": report.final_predictions.tolist(),
        "final_labels": report.final_labels.tolist(),
    }
    if report.fr is not None:
        out["fr"] = report.fr
    return out


def report_to_json(report: RunReport) -> str:
    return json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n"


def accuracies_to_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["phase", "accuracy", "phase0_accuracy"])
    for p in report.phase_results:
        writer.writerow([p.phase, repr(p.accuracy), repr(p.phase0_accuracy)])
    return buf.getvalue()


def timing_to_json(report: RunReport) -> str:
    return (
        json.dumps(
            {
                "per_phase_seconds": [p.wall_time for p in report.phase_results],
                "total_seconds": sum(p.wall_time for p in report.phase_results),
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )


def summary_line(label: str, report: RunReport) -> str:
    fr = f"{report.fr:7.2f}" if report.fr is not None else "    n/a"
    return (
        f"{label:<24} AIA {report.aia * 100:6.2f}%  final {report.final_accuracy * 100:6.2f}%"
        f"  FR {fr}  CDR {report.cdr * 100:5.1f}%"
    )
