"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import math

import numpy as np

from .exceptions import EmptyDataset, InvalidMap


def check_positive(value, name: str) -> float:
    v = float(value)
    if not (math.isfinite(v) and v > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return v


def check_dataset(dataset) -> None:
    frames = getattr(dataset, "frames", None)
    if frames is None:
        raise TypeError(f"expected a Dataset, got {type(dataset).__name__}")
    if len(frames) == 0:
        raise EmptyDataset("dataset has no frames")
    check_positive(dataset.dt, "dt")
    check_positive(dataset.wheelbase, "wheelbase")


def check_trace(trace, name: str = "trace") -> np.ndarray:
    arr = np.asarray(trace, dtype=float)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValueError(f"{name} must have shape (n, 2) or (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_map(smap) -> None:
    if not hasattr(smap, "slots") or not hasattr(smap, "tags"):
        raise TypeError(f"expected a SemanticMap, got {type(smap).__name__}")
    for s in smap.slots:
        if not np.all(np.isfinite(s.corners)):
            raise InvalidMap(f"slot {s.label} has non-finite corners")
    for t in smap.tags:
        if not np.all(np.isfinite(t.position)):
            raise InvalidMap(f"tag {t.tag_id} has a non-finite position")
