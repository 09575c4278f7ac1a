"""Front-end data association for slot detections.

Slot detections are matched to map slots by their read IDs and by a
nearest-neighbour search around the dead-reckoned pose.  Every surviving
hypothesis becomes one component of a max-mixture factor; detections with no
usable hypothesis go to a provisional store and only enter the graph after
repeated sightings.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import factors as fx
from .exceptions import EmptyCandidates
from .geometry import Pose2, bicycle_increment, compose, normalize_angle, to_world_array

EXACT_ID = "exact_id"
PARTIAL_ID = "partial_id"
NEAREST_NEIGHBOR = "nearest_neighbor"
SOURCES = (EXACT_ID, PARTIAL_ID, NEAREST_NEIGHBOR)

FULL, PARTIAL, MISSING = "full", "partial", "missing"


@dataclass(frozen=True)
class SlotId:
    """Two-digit slot ID as read by the detector; ``None`` marks an unreadable digit."""

    digits: tuple
    confidence: tuple = (1.0, 1.0)

    def __post_init__(self) -> None:
        if len(self.digits) != 2 or len(self.confidence) != 2:
            raise ValueError("slot IDs have exactly two digits")
        for d in self.digits:
            if d is not None and not (isinstance(d, (int, np.integer)) and 0 <= d <= 9):
                raise ValueError(f"bad digit {d!r}")
        for c in self.confidence:
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"confidence {c} outside [0, 1]")
        object.__setattr__(self, "digits", tuple(None if d is None else int(d) for d in self.digits))
        object.__setattr__(self, "confidence", tuple(float(c) for c in self.confidence))

    @classmethod
    def from_label(cls, label: str, confidence=(1.0, 1.0)) -> "SlotId":
        digits = tuple(None if ch == "?" else int(ch) for ch in label)
        conf = tuple(0.0 if d is None else c for d, c in zip(digits, confidence))
        return cls(digits, conf)

    @property
    def status(self) -> str:
        unread = sum(d is None for d in self.digits)
        return (FULL, PARTIAL, MISSING)[unread]

    @property
    def label(self) -> str:
        return "".join("?" if d is None else str(d) for d in self.digits)

    @property
    def confidence_product(self) -> float:
        """Product of the confidences of the readable digits (0 when nothing is read)."""
        read = [c for d, c in zip(self.digits, self.confidence) if d is not None]
        return float(np.prod(read)) if read else 0.0

    def matches(self, label: str) -> bool:
        if len(label) != 2 or not label.isdigit():
            return False
        return all(d is None or str(d) == ch for d, ch in zip(self.digits, label))


@dataclass
class SlotDetection:
    """One detected slot: corners in the vehicle frame plus the ID reading.

    Corners run counter-clockwise starting at the entrance corner whose
    successor is the other entrance corner.  ``truth_id`` is filled by the
    simulator for evaluation and never read by the estimator.
    """

    corners: np.ndarray
    slot_id: SlotId
    truth_id: int | None = None

    def __post_init__(self) -> None:
        self.corners = np.asarray(self.corners, dtype=float).reshape(4, 2)


# ---------------------------------------------------------------------------
# dead reckoning


@dataclass
class DeadReckoner:
    """Bicycle-model extrapolation with a scalar Kalman heading correction."""

    state: Pose2 = field(default_factory=Pose2.identity)
    covariance: np.ndarray = field(default_factory=lambda: np.diag([1e-6, 1e-6, 1e-8]))
    wheelbase: float = 2.7
    velocity: float = 0.0
    heading: float = 0.0
    sigma_distance: float = 0.2  # per meter travelled
    sigma_lateral: float = 0.1  # per meter travelled
    sigma_heading_rate: float = 0.05  # rad per sqrt(s)
    compass_sigma: float = 0.02

    def __post_init__(self) -> None:
        self.covariance = np.array(self.covariance, dtype=float)
        self.heading = self.state.theta

    def reset(self, pose: Pose2, covariance=None) -> None:
        self.state = pose
        self.heading = pose.theta
        if covariance is not None:
            self.covariance = np.array(covariance, dtype=float)

    def predict(self, speed: float, steering_angle: float, compass: float, dt: float) -> Pose2:
        if not dt > 0:
            raise ValueError("dt must be positive")
        inc = bicycle_increment(speed, steering_angle, self.wheelbase, dt)
        prior = compose(self.state, inc)
        c, s = math.cos(self.state.theta), math.sin(self.state.theta)
        dxw = prior.x - self.state.x
        dyw = prior.y - self.state.y
        F = np.array([[1.0, 0.0, -dyw], [0.0, 1.0, dxw], [0.0, 0.0, 1.0]])
        dist = abs(speed) * dt
        q_body = np.diag([(self.sigma_distance * dist) ** 2, (self.sigma_lateral * dist) ** 2])
        rot = np.array([[c, -s], [s, c]])
        Q = np.zeros((3, 3))
        Q[:2, :2] = rot @ q_body @ rot.T
        Q[2, 2] = self.sigma_heading_rate**2 * dt
        P = F @ self.covariance @ F.T + Q

        innovation = normalize_angle(compass - prior.theta)
        S = P[2, 2] + self.compass_sigma**2
        K = P[:, 2] / S
        state = prior.as_array() + K * innovation
        P = P - np.outer(K, P[2, :])
        self.covariance = 0.5 * (P + P.T)
        self.state = Pose2.from_array(state)
        self.velocity = speed
        self.heading = compass
        return self.state

    def position_sigma(self) -> float:
        """Largest standard deviation of the planar position."""
        return float(math.sqrt(max(np.linalg.eigvalsh(self.covariance[:2, :2]).max(), 0.0)))


def gate_radius(dr: DeadReckoner, slot_width: float, cap: float = 2.5) -> float:
    """Half the entrance width plus three sigma of prediction uncertainty, capped."""
    return min(0.5 * slot_width + 3.0 * dr.position_sigma(), cap)


# ---------------------------------------------------------------------------
# candidates


@dataclass(frozen=True)
class SlotRecord:
    """What the association step needs to know about a map slot."""

    key: int
    label: str
    corners: np.ndarray

    @property
    def centroid(self) -> np.ndarray:
        return np.asarray(self.corners).mean(axis=0)


@dataclass
class Candidate:
    slot: int
    source: str
    weight: float


@dataclass
class CandidateSet:
    detection: int
    candidates: list = field(default_factory=list)
    high_confidence: bool = False
    in_gate: tuple = ()  # map slots near the predicted location, whatever their source

    @property
    def has_nearest_neighbor(self) -> bool:
        return any(c.source == NEAREST_NEIGHBOR for c in self.candidates)

    @property
    def supported_by_location(self) -> bool:
        """Whether some hypothesis lies inside the gate."""
        return bool(self.in_gate) or self.has_nearest_neighbor

    @property
    def slots(self) -> list[int]:
        return [c.slot for c in self.candidates]

    def __len__(self) -> int:
        return len(self.candidates)

    def best(self) -> Candidate:
        """Highest-weight candidate; earliest wins ties."""
        return max(self.candidates, key=lambda c: c.weight)


def pre_associate(
    detections: Sequence[SlotDetection],
    slots: Sequence[SlotRecord],
    predicted_pose: Pose2,
    gate_radius: float,
    high_confidence: float = 0.9,
    nn_floor: float = 0.2,
) -> list[CandidateSet]:
    """Candidate map slots for each detection.

    Exact-ID matches are always kept.  Partial reads admit every slot whose
    label agrees on the readable digit.  A nearest-neighbour search inside
    ``gate_radius`` runs whenever the read is not high-confidence or its ID
    is not in the map yet.
    """
    if not gate_radius > 0:
        raise ValueError("gate_radius must be positive")
    by_label = {s.label: s for s in slots}
    centroids = np.array([s.centroid for s in slots]).reshape(-1, 2)
    out = []
    for i, det in enumerate(detections):
        sid = det.slot_id
        conf = sid.confidence_product
        high = sid.status == FULL and conf >= high_confidence
        cands: list[Candidate] = []
        seen = set()
        exact_present = False
        near = []
        if sid.status == FULL:
            hit = by_label.get(sid.label)
            if hit is not None:
                exact_present = True
                cands.append(Candidate(hit.key, EXACT_ID, conf))
                seen.add(hit.key)
        elif sid.status == PARTIAL:
            for s in slots:
                if s.key not in seen and sid.matches(s.label):
                    cands.append(Candidate(s.key, PARTIAL_ID, conf))
                    seen.add(s.key)
        if (not high or not exact_present) and len(slots):
            centroid = to_world_array(predicted_pose, det.corners).mean(axis=0)
            dist = np.linalg.norm(centroids - centroid, axis=1)
            id_mass = sum(c.weight for c in cands)
            w_nn = nn_floor * id_mass if id_mass > 0 else nn_floor
            for j in np.argsort(dist, kind="stable"):
                if dist[j] >= gate_radius:
                    break
                near.append(slots[j].key)
                if slots[j].key not in seen:
                    cands.append(Candidate(slots[j].key, NEAREST_NEIGHBOR, w_nn))
                    seen.add(slots[j].key)
        out.append(CandidateSet(i, cands, high, tuple(near)))
    return out


def corner_information(sigma: float) -> np.ndarray:
    return np.eye(8) / sigma**2


def build_mixture(
    cands: CandidateSet,
    detection: SlotDetection,
    pose_var: fx.VariableId,
    slot_vars,
    information: np.ndarray | None = None,
) -> fx.MaxMixtureFactor:
    """One mixture component per candidate, weights normalized to one.

    ``slot_vars`` maps a slot key to its four corner variables.
    """
    if not cands.candidates:
        raise EmptyCandidates(f"detection {cands.detection} has no candidates; route it to lazy_add")
    info = corner_information(0.1) if information is None else information
    total = sum(c.weight for c in cands.candidates)
    comps = []
    for c in cands.candidates:
        w = c.weight / total if total > 0 else 1.0 / len(cands.candidates)
        comps.append(fx.MaxMixtureComponent(w, tuple(slot_vars[c.slot]), info))
    return fx.MaxMixtureFactor(
        pose_var,
        detection.corners,
        comps,
        label=MixtureLabel(detection.slot_id, tuple(cands.slots), tuple(c.source for c in cands.candidates)),
    )


@dataclass(frozen=True)
class MixtureLabel:
    """Bookkeeping attached to a slot mixture factor."""

    slot_id: SlotId
    slots: tuple
    sources: tuple


# ---------------------------------------------------------------------------
# lazy landmark creation


@dataclass(eq=False)
class ProvisionalLandmark:
    corners: np.ndarray
    sighting_count: int
    first_seen_frame: int
    temp_id: str
    sightings: list = field(default_factory=list)
    promoted_key: int | None = None

    @property
    def centroid(self) -> np.ndarray:
        return self.corners.mean(axis=0)


class ProvisionalStore:
    def __init__(self, match_radius: float = 1.0, promotion_threshold: int = 2) -> None:
        if promotion_threshold < 1:
            raise ValueError("promotion_threshold must be >= 1")
        self.match_radius = match_radius
        self.promotion_threshold = promotion_threshold
        self.pending: list[ProvisionalLandmark] = []
        self._counter = 0

    def next_temp_id(self) -> str:
        label = f"t{self._counter}"
        self._counter += 1
        return label

    def observe(self, detection: SlotDetection, predicted_pose: Pose2, frame: int, pose_var=None):
        world = to_world_array(predicted_pose, detection.corners)
        centroid = world.mean(axis=0)
        best, best_d = None, self.match_radius
        for p in self.pending:
            d = float(np.linalg.norm(p.centroid - centroid))
            if d < best_d:
                best, best_d = p, d
        if best is None:
            best = ProvisionalLandmark(world, 1, frame, self.next_temp_id())
            self.pending.append(best)
        else:
            n = best.sighting_count
            best.corners = (best.corners * n + world) / (n + 1)
            best.sighting_count = n + 1
        best.sightings.append((frame, pose_var, detection))
        return best

    def ready(self, p: ProvisionalLandmark) -> bool:
        return p.sighting_count >= self.promotion_threshold


@dataclass
class MapSlot:
    key: int
    corner_vars: tuple
    temp_id: str
    label: str
    votes: dict = field(default_factory=lambda: defaultdict(float))


class SlotMap:
    """Slot landmarks living in a graph, with their ID bookkeeping."""

    def __init__(
        self,
        graph,
        width: float = 2.5,
        depth: float = 5.3,
        angle_sigma: float = 0.1,
        distance_sigma: float = 0.25,
        corner_sigma: float = 0.1,
    ) -> None:
        self.graph = graph
        self.width = width
        self.depth = depth
        self.angle_information = 1.0 / angle_sigma**2
        self.distance_information = 1.0 / distance_sigma**2
        self.corner_info = corner_information(corner_sigma)
        self.slots: dict[int, MapSlot] = {}

    def slot_vars(self) -> dict:
        return {k: s.corner_vars for k, s in self.slots.items()}

    def corners(self, key: int) -> np.ndarray:
        return np.array([self.graph.value(v) for v in self.slots[key].corner_vars])

    def records(self) -> list[SlotRecord]:
        return [SlotRecord(k, s.label, self.corners(k)) for k, s in self.slots.items()]

    def insert(self, corners: np.ndarray, temp_id: str) -> MapSlot:
        """Add four corner variables and the rectangle constraint set."""
        key = len(self.slots)
        vars_ = tuple(self.graph.new_point(c) for c in np.asarray(corners))
        for f in fx.rect_factors(vars_, self.width, self.depth, self.angle_information, self.distance_information):
            self.graph.add_factor(f)
        slot = MapSlot(key, vars_, temp_id, temp_id)
        self.slots[key] = slot
        return slot

    def promote(self, p: ProvisionalLandmark) -> MapSlot:
        slot = self.insert(p.corners, p.temp_id)
        p.promoted_key = slot.key
        for _frame, pose_var, det in p.sightings:
            if pose_var is None:
                continue
            cs = CandidateSet(-1, [Candidate(slot.key, NEAREST_NEIGHBOR, 1.0)])
            self.graph.add_factor(build_mixture(cs, det, pose_var, self.slot_vars(), self.corner_info))
        return slot


def lazy_add(
    detection: SlotDetection,
    predicted_pose: Pose2,
    store: ProvisionalStore,
    slot_map: SlotMap | None = None,
    frame: int = 0,
    pose_var=None,
):
    """Record a sighting of a possibly new slot; promote it once confirmed.

    Returns ``(provisional, promoted_slot_or_None)``.
    """
    p = store.observe(detection, predicted_pose, frame, pose_var)
    promoted = None
    if slot_map is not None and store.ready(p):
        store.pending.remove(p)
        promoted = slot_map.promote(p)
    return p, promoted


# ---------------------------------------------------------------------------
# ID resolution


def collect_votes(factors: Iterable, active: dict, slot_of_var: dict) -> dict[int, dict[str, float]]:
    """Confidence-weighted ID votes per slot from the active mixture components."""
    votes: dict[int, dict[str, float]] = defaultdict(lambda: defaultdict(float))
    for i, f in enumerate(factors):
        label = getattr(f, "label", None)
        if not isinstance(label, MixtureLabel):
            continue
        j = active.get(i, 0)
        slot = slot_of_var.get(f.components[j].targets[0])
        if slot is None:
            continue
        sid = label.slot_id
        if sid.status == FULL:
            votes[slot][sid.label] += sid.confidence_product
        else:
            votes[slot]  # register the slot even without a usable vote
    return votes


def resolve_ids(votes: dict, temp_ids: dict) -> dict[int, str]:
    """Majority ID per slot, unique across slots.

    ``votes`` maps slot key to ``{id_label: weight}``; ``temp_ids`` maps slot
    key to its temporary label.  A slot without a strict winner keeps its
    temporary label, and when two slots claim one ID the weaker is demoted.
    """
    ranked = []
    for key in temp_ids:
        tally = votes.get(key, {})
        if not tally:
            continue
        items = sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))
        if len(items) > 1 and math.isclose(items[0][1], items[1][1], rel_tol=1e-12, abs_tol=0.0):
            continue
        ranked.append((items[0][1], key, items[0][0]))
    labels = dict(temp_ids)
    taken = set()
    for weight, key, lab in sorted(ranked, key=lambda t: (-t[0], t[1])):
        if lab in taken:
            continue
        labels[key] = lab
        taken.add(lab)
    return labels
