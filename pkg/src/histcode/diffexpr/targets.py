"""Expression records, fold-change targets and the text formats they travel in."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

EPS = 1e-6
EXPRESSION_HEADER = ["patient_id", "gene", "tumor_fpkm_uq", "normal_fpkm_uq"]
PREDICTION_HEADER = ["patient_id", "gene", "predicted", "actual", "mode"]
MAX_DRIVERS = 200


def fold_change(tumor_expr, normal_expr, eps: float = EPS):
    """``tumor / max(normal, eps)``; scalar in, scalar out."""
    t = np.asarray(tumor_expr, dtype=np.float64)
    n = np.asarray(normal_expr, dtype=np.float64)
    if np.any(t < 0) or np.any(n < 0):
        raise ValueError("expression values must be nonnegative")
    fc = t / np.maximum(n, eps)
    return float(fc) if fc.ndim == 0 else fc


def de_target(fc):
    """``log10(fc + 1)``."""
    fc = np.asarray(fc, dtype=np.float64)
    if np.any(fc < 0):
        raise ValueError("fold change must be nonnegative")
    out = np.log10(fc + 1.0)
    return float(out) if out.ndim == 0 else out


def binarize_de(fc, threshold: float = 1.5):
    """1 when ``|log2 fc| > threshold`` (strict); ``fc == 0`` counts as 1."""
    fc = np.asarray(fc, dtype=np.float64)
    if np.any(fc < 0):
        raise ValueError("fold change must be nonnegative")
    with np.errstate(divide="ignore"):
        out = (np.abs(np.log2(fc)) > threshold).astype(np.int64)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GeneRecord:
    patient_id: str
    gene_symbol: str
    tumor_expr: float
    normal_expr: float

    def __post_init__(self):
        if self.tumor_expr < 0 or self.normal_expr < 0:
            raise ValueError(f"{self.patient_id}/{self.gene_symbol}: negative expression")

    @property
    def fc(self) -> float:
        return fold_change(self.tumor_expr, self.normal_expr)

    @property
    def target(self) -> float:
        return de_target(self.fc)

    @property
    def binary_label(self) -> int:
        return binarize_de(self.fc)


def read_expression(path) -> list[GeneRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header != EXPRESSION_HEADER:
            raise ValueError(f"{path}: expected header {EXPRESSION_HEADER}, got {header}")
        return [GeneRecord(p, g, float(t), float(n)) for p, g, t, n in reader]


def write_expression(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(EXPRESSION_HEADER)
        for r in records:
            w.writerow([r.patient_id, r.gene_symbol, repr(float(r.tumor_expr)), repr(float(r.normal_expr))])


def target_table(records, genes, mode: str = "regression"):
    """``(patients, Y)`` with ``Y[i, g]`` the regression target or binary label."""
    if mode not in ("regression", "classification"):
        raise ValueError(f"unknown mode {mode!r}")
    patients = sorted({r.patient_id for r in records})
    row = {p: i for i, p in enumerate(patients)}
    col = {g: j for j, g in enumerate(genes)}
    Y = np.full((len(patients), len(genes)), np.nan)
    for r in records:
        if r.gene_symbol in col:
            Y[row[r.patient_id], col[r.gene_symbol]] = r.target if mode == "regression" else r.binary_label
    return patients, Y


def read_driver_list(path) -> list[str]:
    with open(path) as fh:
        genes = [line.strip() for line in fh if line.strip() and not line.startswith("#")]
    if len(set(genes)) != len(genes):
        raise ValueError(f"{path}: duplicate gene symbols")
    return genes[:MAX_DRIVERS]


def write_driver_list(path, genes) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{g}\n" for g in genes)


def write_predictions(path, rows) -> None:
    """``rows``: iterable of (patient_id, gene, predicted, actual, mode)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for p, g, pred, actual, mode in rows:
            w.writerow([p, g, repr(float(pred)), repr(float(actual)), mode])


def read_predictions(path) -> list[tuple]:
    with open(path, newline="") as fh:
        return [(r["patient_id"], r["gene"], float(r["predicted"]), float(r["actual"]), r["mode"]) for r in csv.DictReader(fh)]
