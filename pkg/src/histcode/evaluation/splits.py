"""Patient-level cross-validation splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TooFewPatients


@dataclass(frozen=True)
class SplitPlan:
    fold_id: int
    train: tuple
    val: tuple
    test: tuple

    def role(self, patient_id) -> str | None:
        for name in ("train", "val", "test"):
            if patient_id in getattr(self, name):
                return name
        return None


def patient_split(patients, k: int = 5, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> list[SplitPlan]:
    """``k`` train/val/test partitions of the unique patient ids.

    A seeded permutation is rotated by ``n_test`` positions per fold; test is
    the head of the rotated order, val the next ``n_val``, train the rest.
    With ``ratios[2] * k == 1`` the test sets partition all patients.
    """
    ids = sorted(set(patients))
    n = len(ids)
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    n_test = max(1, int(round(ratios[2] * n)))
    n_val = max(1, int(round(ratios[1] * n))) if ratios[1] > 0 else 0
    if n < k or n - n_test - n_val < 1:
        raise TooFewPatients(f"{n} patients cannot form {k} folds with ratios {ratios}")
    order = [ids[i] for i in np.random.default_rng(seed).permutation(n)]
    plans = []
    for fold in range(k):
        shift = (fold * n_test) % n
        rot = order[shift:] + order[:shift]
        plans.append(
            SplitPlan(
                fold,
                tuple(sorted(rot[n_test + n_val :])),
                tuple(sorted(rot[n_test : n_test + n_val])),
                tuple(sorted(rot[:n_test])),
            )
        )
    return plans
