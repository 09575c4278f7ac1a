"""Map and trace metrics against ground truth or a reference trace."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import InvalidMap, LengthMismatch
from .factors import rect_angle_error

FORMAT_VERSION = 1
ID_MATCH_RADIUS = 1.25  # half a slot width


# ---------------------------------------------------------------------------
# semantic map


@dataclass
class MapSlotEntry:
    label: str
    corners: np.ndarray

    def __post_init__(self) -> None:
        self.corners = np.array(self.corners, dtype=float).reshape(4, 2)

    @property
    def is_temporary(self) -> bool:
        return not self.label.isdigit()

    @property
    def centroid(self) -> np.ndarray:
        return self.corners.mean(axis=0)

    def __eq__(self, other) -> bool:
        return (isinstance(other, MapSlotEntry) and self.label == other.label
                and np.array_equal(self.corners, other.corners))


@dataclass
class MapTag:
    tag_id: int
    position: np.ndarray

    def __post_init__(self) -> None:
        self.tag_id = int(self.tag_id)
        self.position = np.array(self.position, dtype=float).reshape(2)

    def __eq__(self, other) -> bool:
        return (isinstance(other, MapTag) and self.tag_id == other.tag_id
                and np.array_equal(self.position, other.position))


@dataclass
class SemanticMap:
    """Frozen output of mapping: slots, tags and the mapped vehicle trace."""

    slots: list = field(default_factory=list)
    tags: list = field(default_factory=list)
    reference_trace: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        self.reference_trace = np.array(self.reference_trace, dtype=float).reshape(-1, 3)

    def __eq__(self, other) -> bool:
        return (isinstance(other, SemanticMap)
                and self.format_version == other.format_version
                and self.slots == other.slots
                and self.tags == other.tags
                and np.array_equal(self.reference_trace, other.reference_trace))

    def slot(self, label: str) -> MapSlotEntry:
        for s in self.slots:
            if s.label == label:
                return s
        raise KeyError(label)

    def check(self, angle_tol: float = 0.1) -> None:
        """Raise InvalidMap unless IDs are unique and every slot is rectangular."""
        labels = [s.label for s in self.slots if not s.is_temporary]
        if len(labels) != len(set(labels)):
            dup = sorted({x for x in labels if labels.count(x) > 1})
            raise InvalidMap(f"duplicate slot IDs {dup}")
        ids = [t.tag_id for t in self.tags]
        if len(ids) != len(set(ids)):
            raise InvalidMap("duplicate tag IDs")
        for s in self.slots:
            c = s.corners
            err = rect_angle_error(np.roll(c, 1, axis=0), c, np.roll(c, -1, axis=0))
            if not np.all(np.abs(err) < angle_tol):
                raise InvalidMap(f"slot {s.label} is not rectangular (max angle error {np.abs(err).max():.3f} rad)")


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    """Evaluation metrics; ``None`` marks a metric that was not computed."""

    landmark_rmse: float | None = None
    trace_lateral_std: float | None = None
    trace_lateral_mean: float | None = None
    trace_rmse: float | None = None
    id_accuracy: float | None = None
    association_precision: float | None = None
    chi2_final: float | None = None
    lost_track: bool = False
    frames_per_second: float | None = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("lost_track", "format_version") or v is None:
                continue
            if not math.isfinite(v):
                raise ValueError(f"{f.name} is not finite: {v}")
            # the mean lateral offset is signed; everything else is a magnitude
            if f.name != "trace_lateral_mean" and v < 0:
                raise ValueError(f"{f.name} is negative: {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    def merge(self, other: "EvalReport") -> "EvalReport":
        """Fields of ``other`` fill the ones missing here."""
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        for f in fields(other):
            if vals[f.name] is None:
                vals[f.name] = getattr(other, f.name)
        vals["lost_track"] = self.lost_track or other.lost_track
        return EvalReport(**vals)


# ---------------------------------------------------------------------------
# trace metrics


def lateral_deviations(estimated, reference, window: int = 50) -> np.ndarray:
    """Signed perpendicular distance of each estimated position to the reference polyline.

    Positive means left of the reference direction of travel.  The nearest
    segment is searched within ``window`` indices of the time-aligned frame,
    so a closed loop does not snap onto its own far side.
    """
    est = np.asarray(estimated, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if est.ndim != 2 or ref.ndim != 2 or est.shape[1] < 2 or ref.shape[1] < 2:
        raise ValueError("traces must be (n, 2) or (n, 3) arrays")
    if len(est) != len(ref):
        raise LengthMismatch(f"estimated trace has {len(est)} poses, reference has {len(ref)}")
    n = len(ref)
    if n == 0:
        return np.zeros(0)
    pts = ref[:, :2]
    if n == 1:
        return np.zeros(1)
    seg_a = pts[:-1]
    seg_d = pts[1:] - pts[:-1]
    seg_len2 = np.einsum("ij,ij->i", seg_d, seg_d)
    out = np.empty(n)
    for k in range(n):
        lo = max(0, k - window)
        hi = min(n - 1, k + window + 1)
        a, d, l2 = seg_a[lo:hi], seg_d[lo:hi], seg_len2[lo:hi]
        p = est[k, :2]
        t = np.where(l2 > 0, np.einsum("ij,ij->i", p - a, d) / np.where(l2 > 0, l2, 1.0), 0.0)
        t = np.clip(t, 0.0, 1.0)
        foot = a + t[:, None] * d
        dist = np.hypot(*(p - foot).T)
        j = int(np.argmin(dist))
        dj = d[j] if l2[j] > 0 else _fallback_direction(seg_d, lo + j)
        cross = dj[0] * (p[1] - a[j][1]) - dj[1] * (p[0] - a[j][0])
        out[k] = math.copysign(dist[j], cross) if dist[j] > 0 else 0.0
    return out


def _fallback_direction(seg_d: np.ndarray, j: int) -> np.ndarray:
    # zero-length segment (vehicle standing still): borrow a neighbour's direction
    nz = np.nonzero(np.einsum("ij,ij->i", seg_d, seg_d) > 0)[0]
    if len(nz) == 0:
        return np.array([1.0, 0.0])
    return seg_d[nz[np.argmin(np.abs(nz - j))]]


def evaluate(estimated_trace, reference_trace, ground_truth_trace=None) -> EvalReport:
    """Lateral deviation statistics, plus true RMSE when ground truth is given."""
    lat = lateral_deviations(estimated_trace, reference_trace)
    rmse = None
    if ground_truth_trace is not None:
        est = np.asarray(estimated_trace, dtype=float)
        gt = np.asarray(ground_truth_trace, dtype=float)
        if len(est) != len(gt):
            raise LengthMismatch(f"estimated trace has {len(est)} poses, ground truth has {len(gt)}")
        rmse = float(np.sqrt(np.mean(np.sum((est[:, :2] - gt[:, :2]) ** 2, axis=1)))) if len(est) else 0.0
    if len(lat) == 0:
        return EvalReport(trace_lateral_std=0.0, trace_lateral_mean=0.0, trace_rmse=rmse)
    return EvalReport(trace_lateral_std=float(np.std(lat)), trace_lateral_mean=float(np.mean(lat)), trace_rmse=rmse)


# ---------------------------------------------------------------------------
# map metrics


def _truth_corners(lot) -> dict[str, np.ndarray]:
    return {f"{s.slot_id:02d}": np.asarray(s.corners, dtype=float) for s in lot.slots}


def landmark_errors(smap: SemanticMap, lot, slot_ids=None, include_tags: bool = True) -> np.ndarray:
    """Per-point position errors of map landmarks matched to ground truth by ID.

    Every labelled map slot contributes its four corners; a duplicated label
    contributes once per copy.  Temporary slots have no ID and are skipped.
    """
    truth = _truth_corners(lot)
    wanted = None if slot_ids is None else {f"{int(i):02d}" for i in slot_ids}
    errs = []
    for s in smap.slots:
        if s.label not in truth or (wanted is not None and s.label not in wanted):
            continue
        errs.extend(np.hypot(*(s.corners - truth[s.label]).T))
    if include_tags and wanted is None:
        tag_truth = {t.tag_id: np.asarray(t.position, dtype=float) for t in lot.tags}
        for t in smap.tags:
            if t.tag_id in tag_truth:
                errs.append(float(np.hypot(*(t.position - tag_truth[t.tag_id]))))
    return np.asarray(errs, dtype=float)


def landmark_rmse(smap: SemanticMap, lot, slot_ids=None, include_tags: bool = True) -> float:
    e = landmark_errors(smap, lot, slot_ids, include_tags)
    return float(np.sqrt(np.mean(e**2))) if len(e) else 0.0


def id_accuracy(smap: SemanticMap, lot, radius: float = ID_MATCH_RADIUS) -> float:
    """Fraction of true slots carried by a map slot with the right ID near the right place."""
    if not lot.slots:
        return 1.0
    by_label: dict[str, list] = {}
    for s in smap.slots:
        by_label.setdefault(s.label, []).append(s.centroid)
    hits = 0
    for gt in lot.slots:
        cands = by_label.get(f"{gt.slot_id:02d}", [])
        if len(cands) == 1 and np.hypot(*(cands[0] - gt.centroid)) < radius:
            hits += 1
    return hits / len(lot.slots)


def nearest_truth_slot(centroid, lot, radius: float = ID_MATCH_RADIUS):
    """ID of the true slot whose centroid lies within ``radius``, else None."""
    best, best_d = None, radius
    for gt in lot.slots:
        d = float(np.hypot(*(np.asarray(centroid) - gt.centroid)))
        if d < best_d:
            best, best_d = gt.slot_id, d
    return best


def map_report(smap: SemanticMap, lot) -> EvalReport:
    return EvalReport(landmark_rmse=landmark_rmse(smap, lot), id_accuracy=id_accuracy(smap, lot))
