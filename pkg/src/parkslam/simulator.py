"""Deterministic parking-lot simulator.

Lot layout (world x east, y north)::

    y ^  north lane
      |  [row 1 slots, entrances face south]
      |  aisle
      |  [row 0 slots, entrances face north]
      |  south lane
      +--------------------------------------> x
        free zone (tags) | slot block | east lane

Further row pairs stack northwards, back to back.  Trajectories are produced
by exact-arc integration of bicycle controls, so noiseless odometry
reproduces the ground truth bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .association import SlotDetection, SlotId
from .exceptions import InfeasiblePath, SpecOverlap
from .fiducial import DEFAULT_TAG_SIDE, CameraIntrinsics, TagDetection, project
from .geometry import Pose2, bicycle_increment, compose, steering_for_curvature, to_body_array

FRAME_PERIOD = 0.1  # 10 Hz
WHEELBASE = 2.7


@dataclass(frozen=True)
class TagPlacement:
    tag_id: int
    position: tuple
    facing: float  # direction of the tag's face normal, radians


@dataclass
class LotSpec:
    rows: int = 2
    slots_per_row: int = 20
    slot_width: float = 2.5
    slot_depth: float = 5.3
    aisle_width: float = 6.0
    free_zone_length: float = 50.0
    id_assignment: dict | None = None
    tag_placements: list | None = None
    n_tags: int = 60
    tag_layout: str = "walls"
    entrance_corridor: list = field(default_factory=list)

    @property
    def n_slots(self) -> int:
        return self.rows * self.slots_per_row

    @property
    def n_aisles(self) -> int:
        return (self.rows + 1) // 2

    @property
    def width(self) -> float:
        return self.free_zone_length + self.slots_per_row * self.slot_width + self.aisle_width

    @property
    def height(self) -> float:
        # south and north lanes plus one aisle per row pair; an odd last row uses the north lane
        inner_aisles = self.rows // 2
        return 2 * self.aisle_width + self.rows * self.slot_depth + inner_aisles * self.aisle_width

    @property
    def area(self) -> float:
        return self.width * self.height

    def row_y(self, row: int) -> tuple[float, float]:
        """(entrance y, back y) of a row."""
        A, h = self.aisle_width, self.slot_depth
        pair, upper = divmod(row, 2)
        base = A + pair * (2 * h + A)
        if upper:
            lo = base + h + A
            return lo, lo + h
        return base + h, base

    def aisle_y(self, pair: int) -> float:
        A, h = self.aisle_width, self.slot_depth
        if 2 * pair + 1 >= self.rows:
            return self.height - A / 2
        return A + pair * (2 * h + A) + h + A / 2

    def north_lane_y(self) -> float:
        return self.height - self.aisle_width / 2

    def east_lane_x(self) -> float:
        return self.width - self.aisle_width / 2


def alternating_ids(rows: int, slots_per_row: int) -> dict:
    """Numbering where facing slots across an aisle get consecutive IDs.

    Row ``2p`` gets even offsets and row ``2p+1`` odd ones, like house numbers
    on two sides of a street.
    """
    ids = {}
    nxt = 10
    for pair in range((rows + 1) // 2):
        for i in range(slots_per_row):
            for row in (2 * pair, 2 * pair + 1):
                if row < rows:
                    ids[row * slots_per_row + i] = nxt
                    nxt += 1
    return ids


@dataclass
class GroundTruthSlot:
    slot_id: int
    corners: np.ndarray
    row: int
    column: int

    @property
    def centroid(self) -> np.ndarray:
        return self.corners.mean(axis=0)


@dataclass
class GroundTruthLot:
    spec: LotSpec
    slots: list
    tags: list

    def slot_by_id(self, slot_id: int) -> GroundTruthSlot:
        for s in self.slots:
            if s.slot_id == slot_id:
                return s
        raise KeyError(slot_id)


def default_tag_placements(spec: LotSpec) -> list[TagPlacement]:
    """Tags along the slot-free legs and, for the ``"walls"`` layout, on the
    back wall of every slot row.

    Wall tags face the row's aisle; the ``"walls"`` layout also puts one tag
    on the outer wall ahead of each turn of the loop, so the camera always
    has a tag in view.  Leg tags face oncoming traffic and alternate sides of
    the lane; a leg tag that would land on a slot moves to the outer side.
    Counts are proportional to wall and leg length.  The ``"free"`` layout
    leaves the slot aisles and turns without dedicated tags.
    """
    if spec.tag_layout not in ("walls", "free"):
        raise ValueError(f"unknown tag layout {spec.tag_layout!r}")
    n = spec.n_tags
    if n <= 0:
        return []
    A = spec.aisle_width
    R = A / 2
    x_w = spec.free_zone_length / 2
    x_s = spec.free_zone_length - 0.3
    x_e = spec.east_lane_x()
    y_a, y_n = spec.aisle_y(0), spec.north_lane_y()
    # (start, unit direction of travel, length)
    legs = [
        ((x_w + R, y_a), (1.0, 0.0), x_s - (x_w + R)),
        ((x_e, y_a + R), (0.0, 1.0), y_n - y_a - 2 * R),
        ((x_e - R, y_n), (-1.0, 0.0), x_e - x_w - 2 * R),
        ((x_w, y_n - R), (0.0, -1.0), y_n - y_a - 2 * R),
    ]
    legs = [leg for leg in legs if leg[2] > 0]
    turns = []
    if spec.tag_layout == "walls" and n >= 4:
        turns = [
            ((spec.width - 0.2, y_a), math.pi),
            ((x_e, spec.height - 0.2), -math.pi / 2),
            ((x_w - R - 0.2, y_n), 0.0),
            ((x_w, y_a - R - 0.2), math.pi / 2),
        ]
        n -= len(turns)
    wall_len = spec.slots_per_row * spec.slot_width
    walls = []
    backs = [spec.row_y(r)[1] for r in range(spec.rows)]
    for r in range(spec.rows if spec.tag_layout == "walls" else 0):
        entrance, back = spec.row_y(r)
        up = 1.0 if entrance > back else -1.0
        # a back wall shared with another row carries its tags on the line itself
        shared = sum(math.isclose(back, b) for b in backs) > 1
        walls.append((back if shared else back - 0.2 * up, math.atan2(up, 0.0)))
    lengths = [leg[2] for leg in legs] + [wall_len] * len(walls)
    total = sum(lengths)
    if total <= 0:
        return []
    counts = [int(n * length / total) for length in lengths]
    for i in range(n - sum(counts)):
        counts[i % len(counts)] += 1
    wall_counts = counts[len(legs):]
    counts = counts[:len(legs)]
    block_lo = np.array([spec.free_zone_length, 0.0])
    block_hi = np.array([spec.free_zone_length + spec.slots_per_row * spec.slot_width, spec.height])
    offset = A / 2
    placements = []
    for (start, d, length), count in zip(legs, counts):
        for j in range(count):
            # pairs share a station; the last station sits on the leg end
            station = length * (j // 2 + 1) / ((count + 1) // 2)
            cx, cy = start[0] + d[0] * station, start[1] + d[1] * station
            facing = math.atan2(-d[1], -d[0])
            side = 1.0 if j % 2 == 0 else -1.0
            for flip in (side, -side):
                px, py = cx - d[1] * flip * offset, cy + d[0] * flip * offset
                inside = block_lo[0] - 0.2 < px < block_hi[0] + 0.2 and block_lo[1] + 0.2 < py < block_hi[1] - 0.2
                if not inside:
                    break
            placements.append(TagPlacement(len(placements), (px, py), facing))
    for (y, facing), count in zip(walls, wall_counts):
        for j in range(count):
            x = spec.free_zone_length + wall_len * (j + 0.5) / count
            placements.append(TagPlacement(len(placements), (x, y), facing))
    for pos, facing in turns:
        placements.append(TagPlacement(len(placements), pos, facing))
    return placements


def generate_lot(spec: LotSpec) -> GroundTruthLot:
    if spec.rows < 1 or spec.slots_per_row < 1:
        raise SpecOverlap("lot needs at least one slot")
    if min(spec.slot_width, spec.slot_depth, spec.aisle_width) <= 0 or spec.free_zone_length < 0:
        raise SpecOverlap("lot dimensions must be positive")
    ids = spec.id_assignment if spec.id_assignment is not None else alternating_ids(spec.rows, spec.slots_per_row)
    values = [ids.get(i) for i in range(spec.n_slots)]
    if any(v is None for v in values):
        raise SpecOverlap("id_assignment does not cover every slot")
    if len(set(values)) != len(values):
        raise SpecOverlap("duplicate slot ID in id_assignment")
    if any(not (10 <= int(v) <= 99) for v in values):
        raise SpecOverlap("slot IDs must be two-digit (10-99)")

    w = spec.slot_width
    slots = []
    for row in range(spec.rows):
        ye, yb = spec.row_y(row)
        for col in range(spec.slots_per_row):
            xa = spec.free_zone_length + col * w
            xb = xa + w
            if ye > yb:  # entrance on the north side
                corners = [(xb, ye), (xa, ye), (xa, yb), (xb, yb)]
            else:
                corners = [(xa, ye), (xb, ye), (xb, yb), (xa, yb)]
            slots.append(GroundTruthSlot(int(ids[row * spec.slots_per_row + col]), np.array(corners, dtype=float), row, col))

    tags = spec.tag_placements if spec.tag_placements is not None else default_tag_placements(spec)
    tag_ids = [t.tag_id for t in tags]
    if len(set(tag_ids)) != len(tag_ids):
        raise SpecOverlap("duplicate tag ID")
    for t in tags:
        x, y = t.position
        for s in slots:
            lo, hi = s.corners.min(axis=0), s.corners.max(axis=0)
            if lo[0] < x < hi[0] and lo[1] < y < hi[1]:
                raise SpecOverlap(f"tag {t.tag_id} lies inside slot {s.slot_id}")
    return GroundTruthLot(spec, slots, list(tags))


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Ground-truth poses at 10 Hz and the controls that produced them.

    ``speeds[k]`` / ``steerings[k]`` drive pose ``k-1`` to pose ``k``;
    index 0 holds zeros.
    """

    poses: np.ndarray
    speeds: np.ndarray
    steerings: np.ndarray
    dt: float = FRAME_PERIOD
    wheelbase: float = WHEELBASE

    def __len__(self) -> int:
        return len(self.poses)

    def pose(self, k: int) -> Pose2:
        return Pose2.from_array(self.poses[k])


def _integrate(start: Pose2, steps: list[tuple[float, float]], dt: float, wheelbase: float) -> Trajectory:
    poses = [start.as_array()]
    speeds, steers = [0.0], [0.0]
    p = start
    for v, delta in steps:
        p = compose(p, bicycle_increment(v, delta, wheelbase, dt))
        poses.append(p.as_array())
        speeds.append(v)
        steers.append(delta)
    return Trajectory(np.array(poses), np.array(speeds), np.array(steers), dt, wheelbase)


def _segment_steps(length: float, kappa: float, speed: float, dt: float, wheelbase: float):
    n = max(1, int(round(length / (speed * dt))))
    v = length / (n * dt)
    delta = steering_for_curvature(kappa, wheelbase)
    return [(v, delta)] * n


def loop_start(lot: GroundTruthLot) -> Pose2:
    spec = lot.spec
    return Pose2(spec.free_zone_length / 2 + spec.aisle_width / 2 + 2.0, spec.aisle_y(0), 0.0)


def generate_trajectory(
    lot: GroundTruthLot,
    kind: str = "loop",
    speed: float = 1.25,
    reference: Trajectory | None = None,
    n: int = 1,
    length: float | None = None,
    min_turn_radius: float = 3.0,
    dt: float = FRAME_PERIOD,
    wheelbase: float = WHEELBASE,
) -> Trajectory:
    """Ground-truth pose sequence.

    ``kind`` is ``"loop"`` (rounded rectangle through the first aisle and
    back along the north lane, ``n`` laps), ``"straight"`` (``length``
    metres along the first aisle) or ``"repeat"`` (``reference`` replayed
    ``n`` times).
    """
    if not speed > 0:
        raise ValueError("speed must be positive")
    spec = lot.spec
    if kind == "repeat":
        if reference is None:
            raise ValueError("repeat needs a reference trajectory")
        steps = list(zip(reference.speeds[1:], reference.steerings[1:])) * n
        return _integrate(reference.pose(0), steps, reference.dt, reference.wheelbase)

    R = spec.aisle_width / 2
    if R < min_turn_radius:
        raise InfeasiblePath(f"lane half-width {R} m is below the minimum turn radius {min_turn_radius} m")
    start = loop_start(lot)
    if kind == "straight":
        L = length if length is not None else spec.slots_per_row * spec.slot_width
        return _integrate(start, _segment_steps(L, 0.0, speed, dt, wheelbase), dt, wheelbase)
    if kind != "loop":
        raise ValueError(f"unknown trajectory kind {kind!r}")

    x_w = spec.free_zone_length / 2
    x_e = spec.east_lane_x()
    y_a, y_n = spec.aisle_y(0), spec.north_lane_y()
    a_full = (x_e - x_w) - 2 * R
    b = (y_n - y_a) - 2 * R
    if a_full <= 0 or b < 0:
        raise InfeasiblePath("lot too small for a loop at this turn radius")
    a1 = x_e - R - start.x
    a2 = a_full - a1
    arc = 0.5 * math.pi * R
    k = 1.0 / R
    pieces = [(a1, 0.0), (arc, k), (b, 0.0), (arc, k), (a_full, 0.0), (arc, k), (b, 0.0), (arc, k), (a2, 0.0)]
    lap = []
    for L, kappa in pieces:
        if L > 1e-12:
            lap.extend(_segment_steps(L, kappa, speed, dt, wheelbase))
    return _integrate(start, lap * n, dt, wheelbase)


def path_curvature(traj: Trajectory) -> np.ndarray:
    """Curvature of the circle through each pair of consecutive poses.

    Two poses joined by an arc turn by ``dth`` over a chord of length
    ``2 sin(dth / 2) / kappa``, which is inverted here.
    """
    d = np.diff(traj.poses, axis=0)
    chord = np.hypot(d[:, 0], d[:, 1])
    dth = np.remainder(d[:, 2] + np.pi, 2 * np.pi) - np.pi
    return 2.0 * np.abs(np.sin(dth / 2)) / np.where(chord > 0, chord, np.inf)


# ---------------------------------------------------------------------------
# sensors


@dataclass
class NoiseModel:
    corner_sigma: float = 0.05
    id_p_correct: float = 0.85
    p_one_digit_wrong: float = 0.05
    p_partial: float = 0.05
    p_missing: float = 0.05
    odom_sigma: tuple = (0.02, 0.01, 0.005)
    tag_corner_sigma: float = 0.5
    detection_range: float = 5.0
    tag_detection_range: float = 30.0
    compass_sigma: float = 0.01
    clean_confidence: float = 0.95
    corrupt_confidence: tuple = (0.3, 0.7)

    def __post_init__(self) -> None:
        probs = (self.id_p_correct, self.p_one_digit_wrong, self.p_partial, self.p_missing)
        if any(p < 0 for p in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
            raise ValueError("ID outcome probabilities must be non-negative and sum to 1")
        sigmas = (self.corner_sigma, self.tag_corner_sigma, self.compass_sigma, *self.odom_sigma)
        if any(s < 0 for s in sigmas):
            raise ValueError("noise sigmas must be non-negative")
        self.odom_sigma = tuple(float(s) for s in self.odom_sigma)
        self.corrupt_confidence = tuple(float(c) for c in self.corrupt_confidence)


NOISE_PROFILES = {
    "default": NoiseModel(),
    "zero": NoiseModel(
        corner_sigma=0.0,
        id_p_correct=1.0,
        p_one_digit_wrong=0.0,
        p_partial=0.0,
        p_missing=0.0,
        odom_sigma=(0.0, 0.0, 0.0),
        tag_corner_sigma=0.0,
        compass_sigma=0.0,
    ),
    "harsh": NoiseModel(
        corner_sigma=0.08,
        id_p_correct=0.7,
        p_one_digit_wrong=0.1,
        p_partial=0.1,
        p_missing=0.1,
        odom_sigma=(0.03, 0.015, 0.008),
        tag_corner_sigma=1.0,
        compass_sigma=0.02,
    ),
}


def noise_profile(name: str) -> NoiseModel:
    try:
        return replace(NOISE_PROFILES[name])
    except KeyError:
        raise ValueError(f"unknown noise profile {name!r}; choose from {sorted(NOISE_PROFILES)}") from None


@dataclass(frozen=True)
class IdInjection:
    """Force the first ``first_n`` readings of ``true_id`` to read as ``read_id``."""

    true_id: int
    read_id: int
    first_n: int = 1


@dataclass
class Odometry:
    speed: float
    steering: float
    compass: float


@dataclass
class ObservationFrame:
    timestamp: float
    odom: Odometry
    slot_detections: list
    tag_detections: list
    ground_truth_pose: Pose2


@dataclass
class Dataset:
    frames: list
    lot: GroundTruthLot
    seed: int
    origin: Pose2
    dt: float = FRAME_PERIOD
    wheelbase: float = WHEELBASE
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    tag_side: float = DEFAULT_TAG_SIDE
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __len__(self) -> int:
        return len(self.frames)

    def ground_truth_trace(self) -> np.ndarray:
        return np.array([f.ground_truth_pose.as_array() for f in self.frames])


def _digits(v: int) -> tuple[int, int]:
    return divmod(int(v), 10)


def _read_id(true_id: int, rng: np.random.Generator, noise: NoiseModel) -> SlotId:
    d = _digits(true_id)
    clean = noise.clean_confidence
    lo, hi = noise.corrupt_confidence
    u = rng.random()
    p = noise.id_p_correct
    if u < p:
        return SlotId(d, (clean, clean))
    p += noise.p_one_digit_wrong
    if u < p:
        pos = int(rng.integers(2))
        wrong = int(rng.integers(9))
        wrong = wrong if wrong < d[pos] else wrong + 1
        digits = list(d)
        digits[pos] = wrong
        conf = [clean, clean]
        conf[pos] = float(rng.uniform(lo, hi))
        return SlotId(tuple(digits), tuple(conf))
    p += noise.p_partial
    if u < p:
        pos = int(rng.integers(2))
        digits = list(d)
        digits[pos] = None
        conf = [clean, clean]
        conf[pos] = 0.0
        return SlotId(tuple(digits), tuple(conf))
    return SlotId((None, None), (0.0, 0.0))


def _injected_id(read_id: int, rng: np.random.Generator, noise: NoiseModel, true_id: int) -> SlotId:
    lo, hi = noise.corrupt_confidence
    rd, td = _digits(read_id), _digits(true_id)
    conf = tuple(noise.clean_confidence if a == b else float(rng.uniform(lo, hi)) for a, b in zip(rd, td))
    return SlotId(rd, conf)


def tag_world_corners(tag: TagPlacement, tag_side: float) -> np.ndarray:
    """Tag corners (TL, TR, BR, BL) in 3D world coordinates, centre at camera height."""
    h = tag_side / 2
    nx, ny = math.cos(tag.facing), math.sin(tag.facing)
    # a viewer facing the tag looks along -n; their right is -n turned by -90 degrees
    right = np.array([-ny, nx, 0.0])
    up = np.array([0.0, 0.0, 1.0])
    c = np.array([tag.position[0], tag.position[1], 0.0])
    return np.array([c - h * right + h * up, c + h * right + h * up, c + h * right - h * up, c - h * right - h * up])


def world_to_camera(pose: Pose2, pts3: np.ndarray) -> np.ndarray:
    """Camera at the vehicle origin looking along body +x (X right, Y down, Z forward)."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    d = pts3 - np.array([pose.x, pose.y, 0.0])
    forward = d[:, 0] * c + d[:, 1] * s
    left = -d[:, 0] * s + d[:, 1] * c
    return np.column_stack((-left, -d[:, 2], forward))


def visible_tags(lot: GroundTruthLot, pose: Pose2, noise: NoiseModel, camera: CameraIntrinsics,
                 tag_side: float, max_incidence: float = math.radians(75.0)):
    """(tag, projected corners) for tags in range, facing the camera and inside the image."""
    if not lot.tags:
        return []
    cache = getattr(lot, "_tag_cache", None)
    if cache is None or cache[0] != tag_side:
        pos = np.array([t.position for t in lot.tags], dtype=float)
        normal = np.array([[math.cos(t.facing), math.sin(t.facing)] for t in lot.tags])
        corners = np.stack([tag_world_corners(t, tag_side) for t in lot.tags])
        cache = (tag_side, pos, normal, corners)
        lot._tag_cache = cache
    _, pos, normal, corners = cache
    delta = np.array([pose.x, pose.y]) - pos
    dist = np.hypot(delta[:, 0], delta[:, 1])
    facing_ok = np.sum(delta * normal, axis=1) > math.cos(max_incidence) * dist
    cand = np.nonzero((dist < noise.tag_detection_range) & (dist > 0) & facing_ok)[0]
    out = []
    for i in cand:
        pc = world_to_camera(pose, corners[i])
        if np.any(pc[:, 2] <= 0.1):
            continue
        img = project(pc, camera)
        if np.any(img < 0) or np.any(img[:, 0] > camera.width) or np.any(img[:, 1] > camera.height):
            continue
        out.append((lot.tags[i], img))
    return out


def visible_slots(lot: GroundTruthLot, pose: Pose2, detection_range: float):
    """Slots whose entrance corners are both within range and ahead of the vehicle."""
    if not lot.slots:
        return []
    corners = getattr(lot, "_corner_cache", None)
    if corners is None:
        corners = np.stack([s.corners for s in lot.slots])
        lot._corner_cache = corners
    body = to_body_array(pose, corners.reshape(-1, 2)).reshape(-1, 4, 2)
    entrance = body[:, :2]
    ok = np.all(np.hypot(entrance[..., 0], entrance[..., 1]) < detection_range, axis=1) & np.all(entrance[..., 0] > 0, axis=1)
    return [(lot.slots[i], body[i]) for i in np.nonzero(ok)[0]]


def render_frames(
    lot: GroundTruthLot,
    trajectory: Trajectory,
    noise: NoiseModel,
    seed: int,
    camera: CameraIntrinsics | None = None,
    tag_side: float = DEFAULT_TAG_SIDE,
    injections: Sequence[IdInjection] = (),
) -> Dataset:
    camera = camera or CameraIntrinsics()
    rng = np.random.default_rng(seed)
    inject = {inj.true_id: inj for inj in injections}
    injected_so_far: dict[int, int] = {}
    frames = []
    dt = trajectory.dt
    sx, _sy, sth = noise.odom_sigma
    for k in range(len(trajectory)):
        pose = trajectory.pose(k)
        v, delta = float(trajectory.speeds[k]), float(trajectory.steerings[k])
        if k > 0:
            s = v * dt
            v_meas = v + (rng.normal(0.0, sx) / dt if sx > 0 else 0.0)
            if sth > 0 and s > 1e-9:
                kappa = math.tan(delta) / trajectory.wheelbase
                delta_meas = math.atan((kappa * s + rng.normal(0.0, sth)) * trajectory.wheelbase / s)
            else:
                delta_meas = delta
        else:
            v_meas, delta_meas = 0.0, 0.0
        compass = pose.theta + (rng.normal(0.0, noise.compass_sigma) if noise.compass_sigma > 0 else 0.0)
        odom = Odometry(v_meas, delta_meas, compass)

        slots = []
        for s, body in visible_slots(lot, pose, noise.detection_range):
            corners = body + (rng.normal(0.0, noise.corner_sigma, size=(4, 2)) if noise.corner_sigma > 0 else 0.0)
            inj = inject.get(s.slot_id)
            if inj is not None and injected_so_far.get(s.slot_id, 0) < inj.first_n:
                injected_so_far[s.slot_id] = injected_so_far.get(s.slot_id, 0) + 1
                sid = _injected_id(inj.read_id, rng, noise, s.slot_id)
            else:
                sid = _read_id(s.slot_id, rng, noise)
            slots.append(SlotDetection(corners, sid, truth_id=s.slot_id))

        tags = []
        for tag, img in visible_tags(lot, pose, noise, camera, tag_side):
            if noise.tag_corner_sigma > 0:
                img = img + rng.normal(0.0, noise.tag_corner_sigma, size=img.shape)
            tags.append(TagDetection(tag.tag_id, img))
        frames.append(ObservationFrame(k * dt, odom, slots, tags, pose))
    return Dataset(frames, lot, seed, trajectory.pose(0), dt, trajectory.wheelbase, camera, tag_side, noise)


def simulate(
    spec: LotSpec | None = None,
    noise: NoiseModel | str = "default",
    seed: int = 0,
    kind: str = "loop",
    laps: int = 1,
    speed: float = 1.25,
    injections: Sequence[IdInjection] = (),
) -> Dataset:
    """Lot, trajectory and frames in one call."""
    lot = generate_lot(spec or LotSpec())
    noise = noise_profile(noise) if isinstance(noise, str) else noise
    traj = generate_trajectory(lot, kind, speed=speed, n=laps)
    return render_frames(lot, traj, noise, seed, injections=injections)
