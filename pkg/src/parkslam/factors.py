"""Residual models for the landmark graph.

Every kernel here works on arrays with a leading batch axis so the solver can
linearize all factors of one kind with a handful of numpy calls.  The public
``residual_*`` helpers accept scalar geometry types and are what callers and
tests use directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import DegenerateCorner, InvalidFactor
from .geometry import Point2, Pose2, normalize_angles

POSE = "pose"
POINT = "point"

DIMS = {POSE: 3, POINT: 2}

DEGENERATE_RAY = 1e-9


class VariableId(NamedTuple):
    kind: str
    index: int

    @property
    def dim(self) -> int:
        return DIMS[self.kind]


def pose_id(index: int) -> VariableId:
    return VariableId(POSE, int(index))


def point_id(index: int) -> VariableId:
    return VariableId(POINT, int(index))


def _as_vec(value) -> np.ndarray:
    if isinstance(value, (Pose2, Point2)):
        return value.as_array()
    return np.asarray(value, dtype=float)


# ---------------------------------------------------------------------------
# batched kernels


def _rot_t(theta):
    c, s = np.cos(theta), np.sin(theta)
    return c, s


def odometry_error(xi: np.ndarray, xj: np.ndarray, z: np.ndarray) -> np.ndarray:
    c, s = _rot_t(xi[..., 2])
    dx = xj[..., 0] - xi[..., 0]
    dy = xj[..., 1] - xi[..., 1]
    return np.stack(
        (
            c * dx + s * dy - z[..., 0],
            -s * dx + c * dy - z[..., 1],
            normalize_angles(xj[..., 2] - xi[..., 2] - z[..., 2]),
        ),
        axis=-1,
    )


def odometry_jacobians(xi: np.ndarray, xj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c, s = _rot_t(xi[..., 2])
    dx = xj[..., 0] - xi[..., 0]
    dy = xj[..., 1] - xi[..., 1]
    shape = xi.shape[:-1] + (3, 3)
    ji = np.zeros(shape)
    jj = np.zeros(shape)
    ji[..., 0, 0], ji[..., 0, 1], ji[..., 0, 2] = -c, -s, -s * dx + c * dy
    ji[..., 1, 0], ji[..., 1, 1], ji[..., 1, 2] = s, -c, -c * dx - s * dy
    ji[..., 2, 2] = -1.0
    jj[..., 0, 0], jj[..., 0, 1] = c, s
    jj[..., 1, 0], jj[..., 1, 1] = -s, c
    jj[..., 2, 2] = 1.0
    return ji, jj


def point_obs_error(pose: np.ndarray, lm: np.ndarray, z: np.ndarray) -> np.ndarray:
    c, s = _rot_t(pose[..., 2])
    dx = lm[..., 0] - pose[..., 0]
    dy = lm[..., 1] - pose[..., 1]
    return np.stack((c * dx + s * dy - z[..., 0], -s * dx + c * dy - z[..., 1]), axis=-1)


def point_obs_jacobians(pose: np.ndarray, lm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c, s = _rot_t(pose[..., 2])
    dx = lm[..., 0] - pose[..., 0]
    dy = lm[..., 1] - pose[..., 1]
    jp = np.zeros(pose.shape[:-1] + (2, 3))
    jl = np.zeros(pose.shape[:-1] + (2, 2))
    jp[..., 0, 0], jp[..., 0, 1], jp[..., 0, 2] = -c, -s, -s * dx + c * dy
    jp[..., 1, 0], jp[..., 1, 1], jp[..., 1, 2] = s, -c, -c * dx - s * dy
    jl[..., 0, 0], jl[..., 0, 1] = c, s
    jl[..., 1, 0], jl[..., 1, 1] = -s, c
    return jp, jl


def rect_angle_error(p_prev: np.ndarray, p: np.ndarray, p_next: np.ndarray) -> np.ndarray:
    u = p_prev - p
    v = p_next - p
    cross = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
    dot = np.sum(u * v, axis=-1)
    angle = np.arctan2(np.abs(cross), dot)
    return normalize_angles(angle - np.pi / 2)[..., None]


def rect_angle_jacobians(p_prev, p, p_next):
    u = p_prev - p
    v = p_next - p
    cross = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
    dot = np.sum(u * v, axis=-1)
    sgn = np.sign(cross)
    abs_c = np.abs(cross)
    denom = np.sum(u * u, axis=-1) * np.sum(v * v, axis=-1)
    # d|cross|/du = sgn * (v_y, -v_x); d|cross|/dv = sgn * (-u_y, u_x)
    dcu = sgn[..., None] * np.stack((v[..., 1], -v[..., 0]), axis=-1)
    dcv = sgn[..., None] * np.stack((-u[..., 1], u[..., 0]), axis=-1)
    da_du = (dot[..., None] * dcu - abs_c[..., None] * v) / denom[..., None]
    da_dv = (dot[..., None] * dcv - abs_c[..., None] * u) / denom[..., None]
    return da_du[..., None, :], (-(da_du + da_dv))[..., None, :], da_dv[..., None, :]


def rect_distance_error(pi: np.ndarray, pj: np.ndarray, d_nominal) -> np.ndarray:
    return (np.linalg.norm(pi - pj, axis=-1) - d_nominal)[..., None]


def rect_distance_jacobians(pi, pj):
    diff = pi - pj
    n = np.linalg.norm(diff, axis=-1, keepdims=True)
    unit = diff / np.where(n > 0, n, 1.0)
    return unit[..., None, :], (-unit)[..., None, :]


# ---------------------------------------------------------------------------
# scalar front doors


def residual_odometry(xi: Pose2, xj: Pose2, z: Pose2) -> np.ndarray:
    """``between(xi, xj) - z`` with the heading component wrapped."""
    return odometry_error(_as_vec(xi), _as_vec(xj), _as_vec(z))


def residual_point_obs(pose: Pose2, lm: Point2, z: Point2) -> np.ndarray:
    return point_obs_error(_as_vec(pose), _as_vec(lm), _as_vec(z))


def _check_corner(p_prev, p, p_next) -> None:
    for a in (p_prev, p_next):
        if np.linalg.norm(a - p) < DEGENERATE_RAY:
            raise DegenerateCorner(f"corner ray shorter than {DEGENERATE_RAY} m at {tuple(p)}")


def residual_rect_angle(p_prev: Point2, p: Point2, p_next: Point2) -> np.ndarray:
    """Interior angle at ``p`` minus a right angle."""
    a, b, c = _as_vec(p_prev), _as_vec(p), _as_vec(p_next)
    _check_corner(a, b, c)
    return rect_angle_error(a, b, c)


def residual_rect_distance(pi: Point2, pj: Point2, d_nominal: float) -> np.ndarray:
    if not d_nominal > 0:
        raise InvalidFactor("d_nominal must be positive")
    return rect_distance_error(_as_vec(pi), _as_vec(pj), d_nominal)


# ---------------------------------------------------------------------------
# factor records


def _check_information(info: np.ndarray, dim: int) -> np.ndarray:
    info = np.array(info, dtype=float)
    if info.ndim == 0:
        info = info.reshape(1, 1)
    if info.shape != (dim, dim):
        raise InvalidFactor(f"information shape {info.shape} does not match residual dimension {dim}")
    scale = float(np.abs(info).max()) if info.size else 0.0
    if not np.isfinite(scale) or np.abs(info - info.T).max() > 1e-12 * max(scale, 1.0):
        raise InvalidFactor("information matrix is not symmetric")
    if dim == 1:
        pd = info[0, 0] > 0
    elif dim == 2:
        pd = info[0, 0] > 0 and info[0, 0] * info[1, 1] - info[0, 1] * info[1, 0] > 0
    else:
        try:
            np.linalg.cholesky(info)
            pd = True
        except np.linalg.LinAlgError:
            pd = False
    if not pd:
        raise InvalidFactor("information matrix is not positive-definite")
    return info


@dataclass
class Factor:
    variables: tuple[VariableId, ...]
    information: np.ndarray

    dim = 0

    def __post_init__(self) -> None:
        self.variables = tuple(VariableId(*v) for v in self.variables)
        self.information = _check_information(self.information, self.dim)

    def error(self, values: Sequence[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def chi2(self, values: Sequence[np.ndarray]) -> float:
        r = self.error(values)
        return float(r @ self.information @ r)


@dataclass
class OdometryFactor(Factor):
    measurement: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dim = 3

    def __post_init__(self) -> None:
        super().__post_init__()
        self.measurement = _as_vec(self.measurement)

    def error(self, values):
        return odometry_error(values[0], values[1], self.measurement)


@dataclass
class PointObservationFactor(Factor):
    measurement: np.ndarray = field(default_factory=lambda: np.zeros(2))
    dim = 2

    def __post_init__(self) -> None:
        super().__post_init__()
        self.measurement = _as_vec(self.measurement)

    def error(self, values):
        return point_obs_error(values[0], values[1], self.measurement)


@dataclass
class TagObservationFactor(PointObservationFactor):
    """Range/bearing-derived body-frame position of a fiducial tag."""

    tag_id: int = -1


@dataclass
class RectAngleFactor(Factor):
    dim = 1

    def error(self, values):
        return rect_angle_error(values[0], values[1], values[2])


@dataclass
class RectDistanceFactor(Factor):
    d_nominal: float = 1.0
    dim = 1

    def __post_init__(self) -> None:
        super().__post_init__()
        if not self.d_nominal > 0:
            raise InvalidFactor("d_nominal must be positive")

    def error(self, values):
        return rect_distance_error(values[0], values[1], self.d_nominal)


@dataclass
class MaxMixtureComponent:
    """One association hypothesis: the detection's points belong to ``targets``.

    ``information`` is the ``2k x 2k`` matrix over the stacked residual of
    the ``k`` target points.
    """

    weight: float
    targets: tuple[VariableId, ...]
    information: np.ndarray

    def __post_init__(self) -> None:
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise InvalidFactor("mixture component weight must be positive")
        self.targets = tuple(VariableId(*t) for t in self.targets)
        if any(t.kind != POINT for t in self.targets):
            raise InvalidFactor("mixture component targets must be point variables")
        self.information = _check_information(self.information, 2 * len(self.targets))
        self.log_weight = math.log(self.weight)
        self.log_det = float(np.linalg.slogdet(self.information)[1])

    @property
    def penalty(self) -> float:
        """Constant part of the component's negative log-likelihood."""
        return -2.0 * self.log_weight - self.log_det


@dataclass
class MaxMixtureFactor:
    """Max-of-Gaussians observation of ``k`` points from one pose.

    All components share the measurement; they differ in which landmark
    points they attribute it to (and optionally weight/information).
    """

    pose: VariableId
    measurement: np.ndarray
    components: list[MaxMixtureComponent]
    label: object = None

    def __post_init__(self) -> None:
        self.pose = VariableId(*self.pose)
        self.measurement = np.asarray(self.measurement, dtype=float).reshape(-1, 2)
        if not self.components:
            raise InvalidFactor("max-mixture factor needs at least one component")
        k = self.measurement.shape[0]
        for comp in self.components:
            if len(comp.targets) != k:
                raise InvalidFactor("component target count does not match measurement")
        self.min_penalty = min(c.penalty for c in self.components)

    @property
    def variables(self) -> tuple[VariableId, ...]:
        seen = {self.pose: None}
        for comp in self.components:
            for t in comp.targets:
                seen.setdefault(t, None)
        return tuple(seen)

    @property
    def k(self) -> int:
        return self.measurement.shape[0]

    def component_error(self, j: int, pose: np.ndarray, points: Sequence[np.ndarray]) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return point_obs_error(np.broadcast_to(pose, (len(pts), 3)), pts, self.measurement).ravel()

    def component_score(self, j: int, pose: np.ndarray, points) -> float:
        comp = self.components[j]
        r = self.component_error(j, pose, points)
        return float(r @ comp.information @ r) + comp.penalty


def select_component(factor: MaxMixtureFactor, estimates) -> int:
    """Index of the maximum-likelihood component at the current estimates.

    ``estimates`` maps :class:`VariableId` to value arrays.  Ties go to the
    lowest index.
    """
    pose = _as_vec(estimates[factor.pose])
    scores = [
        factor.component_score(j, pose, [_as_vec(estimates[t]) for t in comp.targets])
        for j, comp in enumerate(factor.components)
    ]
    return int(np.argmin(scores))


def rect_factors(
    corners: Sequence[VariableId],
    width: float,
    depth: float,
    angle_information: float,
    distance_information: float,
) -> list[Factor]:
    """Four corner-angle and six pairwise-distance factors for one slot.

    Corners are ordered around the rectangle; edges 0-1 and 2-3 have length
    ``width`` and edges 1-2, 3-0 have length ``depth``.
    """
    if len(corners) != 4:
        raise InvalidFactor("a slot has exactly four corners")
    out: list[Factor] = []
    for i in range(4):
        out.append(
            RectAngleFactor((corners[i - 1], corners[i], corners[(i + 1) % 4]), np.array([[angle_information]]))
        )
    diag = math.hypot(width, depth)
    for (a, b), d in zip(((0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)), (width, depth, width, depth, diag, diag)):
        out.append(RectDistanceFactor((corners[a], corners[b]), np.array([[distance_information]]), d_nominal=d))
    return out
