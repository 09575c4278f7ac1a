"""Square fiducial tag pose from a single pinhole camera.

Camera frame: X right, Y down, Z along the optical axis.  The tag model is a
square of side ``tag_side`` centred at the origin of its own frame, lying in
the ``Z = 0`` plane with corners ordered top-left, top-right, bottom-right,
bottom-left.

The "vehicle relative" frame used for tag positions has x to the right and y
forward, so a tag dead ahead at distance ``d`` sits at ``(0, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateHomography, NoConvergence
from .geometry import Point2, normalize_angle

DEFAULT_TAG_SIDE = 0.488
DEFAULT_VALIDATION_TOL = math.radians(5.0)
DEFAULT_MAX_RANGE = 20.0


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float = 1000.0
    x0: float = 960.0
    y0: float = 540.0
    width: int = 1920
    height: int = 1080

    def __post_init__(self) -> None:
        if not self.f > 0:
            raise ValueError("focal length must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.x0], [0.0, self.f, self.y0], [0.0, 0.0, 1.0]])


@dataclass
class TagDetection:
    tag_id: int
    corners: np.ndarray
    center_x: float | None = None

    def __post_init__(self) -> None:
        self.corners = np.asarray(self.corners, dtype=float).reshape(4, 2)
        if self.center_x is None:
            self.center_x = float(image_center(self.corners)[0])


@dataclass
class TagPoseEstimate:
    tag_id: int
    R: np.ndarray
    t: np.ndarray
    alpha: float
    d: float
    position_vehicle_frame: Point2
    valid: bool


def model_points(tag_side: float) -> np.ndarray:
    h = tag_side / 2.0
    return np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])


def project(points_cam: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    p = np.asarray(points_cam, dtype=float)
    return np.column_stack((cam.f * p[:, 0] / p[:, 2] + cam.x0, cam.f * p[:, 1] / p[:, 2] + cam.y0))


def image_center(corners: np.ndarray) -> np.ndarray:
    """Projected tag centre: intersection of the two diagonals."""
    c = np.asarray(corners, dtype=float)
    p, r = c[0], c[2] - c[0]
    q, s = c[1], c[3] - c[1]
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) < 1e-12:
        return c.mean(axis=0)
    u = ((q[0] - p[0]) * s[1] - (q[1] - p[1]) * s[0]) / denom
    return p + u * r


def _is_strictly_convex(corners: np.ndarray) -> bool:
    crosses = []
    for i in range(4):
        a, b, c = corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]
        crosses.append((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]))
    crosses = np.array(crosses)
    scale = max(np.ptp(corners[:, 0]), np.ptp(corners[:, 1]), 1e-12) ** 2
    return bool(np.all(crosses > 1e-9 * scale) or np.all(crosses < -1e-9 * scale))


def _normalizer(pts: np.ndarray) -> np.ndarray:
    mean = pts.mean(axis=0)
    spread = np.sqrt(((pts - mean) ** 2).sum(axis=1)).mean()
    if spread < 1e-12:
        raise DegenerateHomography("corner points coincide")
    s = math.sqrt(2.0) / spread
    return np.array([[s, 0.0, -s * mean[0]], [0.0, s, -s * mean[1]], [0.0, 0.0, 1.0]])


def homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized DLT homography mapping ``src`` (n x 2) onto ``dst``."""
    Ts, Td = _normalizer(src), _normalizer(dst)
    sh = (Ts @ np.column_stack((src, np.ones(len(src)))).T).T
    dh = (Td @ np.column_stack((dst, np.ones(len(dst)))).T).T
    rows = []
    for (x, y, _), (u, v, _) in zip(sh, dh):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    A = np.array(rows)
    _, sv, vt = np.linalg.svd(A)
    # a rank-8 system has a one-dimensional null space
    if sv[7] < 1e-10 * sv[0]:
        raise DegenerateHomography("corner configuration is rank-deficient")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return H / H[2, 2] if abs(H[2, 2]) > 1e-15 else H


def _nearest_rotation(M: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(M)
    R = u @ vt
    if np.linalg.det(R) < 0:
        u[:, -1] *= -1
        R = u @ vt
    return R


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _so3_exp(w: np.ndarray) -> np.ndarray:
    th = float(np.linalg.norm(w))
    K = _skew(w)
    if th < 1e-12:
        return np.eye(3) + K
    return np.eye(3) + math.sin(th) / th * K + (1 - math.cos(th)) / th**2 * (K @ K)


def _reprojection(R, t, X, cam):
    Pc = X @ R.T + t
    return project(Pc, cam), Pc


def _reprojection_jacobian(Pc: np.ndarray, t: np.ndarray, f: float) -> np.ndarray:
    """d(pixels)/d(rotation left-perturbation, translation), 8 x 6."""
    x, y, z = Pc[:, 0], Pc[:, 1], Pc[:, 2]
    dproj = np.zeros((4, 2, 3))
    dproj[:, 0, 0] = f / z
    dproj[:, 1, 1] = f / z
    dproj[:, 0, 2] = -f * x / z**2
    dproj[:, 1, 2] = -f * y / z**2
    q = Pc - t
    neg_skew = np.zeros((4, 3, 3))
    neg_skew[:, 0, 1], neg_skew[:, 0, 2] = q[:, 2], -q[:, 1]
    neg_skew[:, 1, 0], neg_skew[:, 1, 2] = -q[:, 2], q[:, 0]
    neg_skew[:, 2, 0], neg_skew[:, 2, 1] = q[:, 1], -q[:, 0]
    J = np.concatenate((dproj @ neg_skew, dproj), axis=2)
    return J.reshape(8, 6)


def solve_pnp(det: TagDetection, cam: CameraIntrinsics, tag_side: float = DEFAULT_TAG_SIDE,
              max_iterations: int = 50):
    """Rotation and translation of the tag in the camera frame.

    Initialized from the plane homography and refined by damped Gauss-Newton
    on the pixel reprojection error.
    """
    if not tag_side > 0:
        raise ValueError("tag_side must be positive")
    img = det.corners
    if not _is_strictly_convex(img):
        raise DegenerateHomography("tag corners do not form a strictly convex quadrilateral")
    X = model_points(tag_side)
    H = homography_dlt(X[:, :2], img)
    M = np.linalg.solve(cam.K, H)
    scale = 2.0 / (np.linalg.norm(M[:, 0]) + np.linalg.norm(M[:, 1]))
    if M[2, 2] * scale < 0:
        scale = -scale
    r1, r2, t = M[:, 0] * scale, M[:, 1] * scale, M[:, 2] * scale
    R = _nearest_rotation(np.column_stack((r1, r2, np.cross(r1, r2))))

    obs = img.ravel()
    proj, Pc = _reprojection(R, t, X, cam)
    cost = float(np.sum((proj.ravel() - obs) ** 2))
    lam = 1e-6
    for _ in range(max_iterations):
        if cost < 1e-20:
            break
        J = _reprojection_jacobian(Pc, t, cam.f)
        r = proj.ravel() - obs
        A = J.T @ J
        g = J.T @ r
        damp = np.diag(np.diag(A) + 1e-12)
        improved = False
        while lam < 1e8:
            step = -np.linalg.solve(A + lam * damp, g)
            R_new = _so3_exp(step[:3]) @ R
            t_new = t + step[3:]
            proj_new, Pc_new = _reprojection(R_new, t_new, X, cam)
            if np.all(Pc_new[:, 2] > 0):
                cost_new = float(np.sum((proj_new.ravel() - obs) ** 2))
                if cost_new < cost:
                    improved = True
                    break
            lam *= 10.0
        if not improved:
            break
        rel = (cost - cost_new) / max(cost, 1e-300)
        R, t, proj, Pc, cost = R_new, t_new, proj_new, Pc_new, cost_new
        lam = max(lam * 0.1, 1e-12)
        if rel < 1e-9 or np.max(np.abs(step)) < 1e-10:
            break
    if not (np.all(np.isfinite(t)) and t[2] > 0):
        raise NoConvergence("PnP refinement left the tag behind the camera")
    return _nearest_rotation(R), t


def _batch_convex(img: np.ndarray) -> np.ndarray:
    a, b, c = img, np.roll(img, -1, axis=1), np.roll(img, -2, axis=1)
    cr = (b[..., 0] - a[..., 0]) * (c[..., 1] - b[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - b[..., 0])
    span = np.maximum(np.ptp(img[..., 0], axis=1), np.ptp(img[..., 1], axis=1))
    tol = 1e-9 * np.maximum(span, 1e-12) ** 2
    return np.all(cr > tol[:, None], axis=1) | np.all(cr < -tol[:, None], axis=1)


def _batch_normalizer(pts: np.ndarray):
    mean = pts.mean(axis=1)
    spread = np.sqrt(((pts - mean[:, None]) ** 2).sum(axis=2)).mean(axis=1)
    ok = spread > 1e-12
    s = np.sqrt(2.0) / np.where(ok, spread, 1.0)
    T = np.zeros((len(pts), 3, 3))
    T[:, 0, 0] = T[:, 1, 1] = s
    T[:, 0, 2], T[:, 1, 2] = -s * mean[:, 0], -s * mean[:, 1]
    T[:, 2, 2] = 1.0
    return T, ok


def _batch_homography(src: np.ndarray, dst: np.ndarray):
    """Normalized DLT for a stack of 4-point correspondences; also a validity mask."""
    n = len(dst)
    Ts, _ = _batch_normalizer(np.broadcast_to(src, (n, 4, 2)))
    Td, ok = _batch_normalizer(dst)
    ones = np.ones((n, 4, 1))
    sh = np.einsum("nij,nkj->nki", Ts, np.concatenate((np.broadcast_to(src, (n, 4, 2)), ones), axis=2))
    dh = np.einsum("nij,nkj->nki", Td, np.concatenate((dst, ones), axis=2))
    x, y = sh[..., 0], sh[..., 1]
    u, v = dh[..., 0], dh[..., 1]
    z, o = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack((-x, -y, -o, z, z, z, u * x, u * y, u), axis=2)
    r2 = np.stack((z, z, z, -x, -y, -o, v * x, v * y, v), axis=2)
    A = np.stack((r1, r2), axis=2).reshape(n, 8, 9)
    _, sv, vt = np.linalg.svd(A)
    ok &= sv[:, 7] >= 1e-10 * sv[:, 0]
    Hn = vt[:, -1].reshape(n, 3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    h22 = H[:, 2, 2]
    H = np.where((np.abs(h22) > 1e-15)[:, None, None], H / np.where(h22 == 0, 1.0, h22)[:, None, None], H)
    return H, ok


def _batch_nearest_rotation(M: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(M)
    flip = np.linalg.det(u @ vt) < 0
    u[flip, :, -1] *= -1
    return u @ vt


def _batch_so3_exp(w: np.ndarray) -> np.ndarray:
    th = np.linalg.norm(w, axis=1)
    K = np.zeros((len(w), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -w[:, 2], w[:, 1]
    K[:, 1, 0], K[:, 1, 2] = w[:, 2], -w[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -w[:, 1], w[:, 0]
    small = th < 1e-12
    safe = np.where(small, 1.0, th)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.0, (1 - np.cos(safe)) / safe**2)
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)


def _batch_reprojection(R, t, X, cam):
    Pc = np.einsum("nij,kj->nki", R, X) + t[:, None, :]
    proj = cam.f * Pc[..., :2] / Pc[..., 2:3] + np.array([cam.x0, cam.y0])
    return proj, Pc


def _batch_jacobian(Pc: np.ndarray, t: np.ndarray, f: float) -> np.ndarray:
    x, y, z = Pc[..., 0], Pc[..., 1], Pc[..., 2]
    n = len(Pc)
    dproj = np.zeros((n, 4, 2, 3))
    dproj[..., 0, 0] = f / z
    dproj[..., 1, 1] = f / z
    dproj[..., 0, 2] = -f * x / z**2
    dproj[..., 1, 2] = -f * y / z**2
    q = Pc - t[:, None, :]
    neg_skew = np.zeros((n, 4, 3, 3))
    neg_skew[..., 0, 1], neg_skew[..., 0, 2] = q[..., 2], -q[..., 1]
    neg_skew[..., 1, 0], neg_skew[..., 1, 2] = -q[..., 2], q[..., 0]
    neg_skew[..., 2, 0], neg_skew[..., 2, 1] = q[..., 1], -q[..., 0]
    J = np.concatenate((dproj @ neg_skew, dproj), axis=3)
    return J.reshape(n, 8, 6)


def solve_pnp_batch(corners, cam: CameraIntrinsics, tag_side: float = DEFAULT_TAG_SIDE,
                    max_iterations: int = 50):
    """:func:`solve_pnp` over a stack of detections at once.

    ``corners`` is ``(n, 4, 2)``.  Returns ``(R, t, ok)`` with ``ok`` false
    where :func:`solve_pnp` would raise.  Each tag keeps its own damping, so
    the minimizers agree with the one-at-a-time solver.
    """
    if not tag_side > 0:
        raise ValueError("tag_side must be positive")
    img = np.asarray(corners, dtype=float).reshape(-1, 4, 2)
    n = len(img)
    if n == 0:
        return np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0, dtype=bool)
    X = model_points(tag_side)
    H, ok = _batch_homography(X[:, :2], img)
    ok &= _batch_convex(img)
    H[~ok] = np.eye(3)
    M = np.linalg.solve(cam.K, H)
    scale = 2.0 / (np.linalg.norm(M[:, :, 0], axis=1) + np.linalg.norm(M[:, :, 1], axis=1))
    scale = np.where(M[:, 2, 2] * scale < 0, -scale, scale)
    r1, r2, t = M[:, :, 0] * scale[:, None], M[:, :, 1] * scale[:, None], M[:, :, 2] * scale[:, None]
    R = _batch_nearest_rotation(np.stack((r1, r2, np.cross(r1, r2)), axis=2))
    t[~ok] = (0.0, 0.0, 1.0)

    obs = img.reshape(n, 8)
    proj, Pc = _batch_reprojection(R, t, X, cam)
    cost = np.sum((proj.reshape(n, 8) - obs) ** 2, axis=1)
    lam = np.full(n, 1e-6)
    active = ok & (cost >= 1e-20)
    steps = np.zeros(n, dtype=int)
    # a pass either accepts a step or raises the damping, which is bounded
    for _ in range(max_iterations * 16):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        J = _batch_jacobian(Pc[idx], t[idx], cam.f)
        r = proj[idx].reshape(-1, 8) - obs[idx]
        A = np.einsum("nki,nkj->nij", J, J)
        g = np.einsum("nki,nk->ni", J, r)
        d = np.einsum("nii->ni", A) + 1e-12
        Ad = A + (lam[idx, None] * d)[:, :, None] * np.eye(6)
        step = -np.linalg.solve(Ad, g[..., None])[..., 0]
        R_new = _batch_so3_exp(step[:, :3]) @ R[idx]
        t_new = t[idx] + step[:, 3:]
        proj_new, Pc_new = _batch_reprojection(R_new, t_new, X, cam)
        cost_new = np.sum((proj_new.reshape(-1, 8) - obs[idx]) ** 2, axis=1)
        good = np.all(Pc_new[..., 2] > 0, axis=1) & (cost_new < cost[idx])
        acc, rej = idx[good], idx[~good]
        rel = (cost[acc] - cost_new[good]) / np.maximum(cost[acc], 1e-300)
        R[acc], t[acc], proj[acc], Pc[acc], cost[acc] = R_new[good], t_new[good], proj_new[good], Pc_new[good], cost_new[good]
        lam[acc] = np.maximum(lam[acc] * 0.1, 1e-12)
        steps[acc] += 1
        done = (rel < 1e-9) | (np.max(np.abs(step[good]), axis=1) < 1e-10) | (cost[acc] < 1e-20)
        done |= steps[acc] >= max_iterations
        active[acc[done]] = False
        lam[rej] *= 10.0
        active[rej[lam[rej] >= 1e8]] = False
    ok &= np.all(np.isfinite(t), axis=1) & (t[:, 2] > 0)
    return _batch_nearest_rotation(R), t, ok


def direct_angle(x_i: float, cam: CameraIntrinsics) -> float:
    """Horizontal bearing of an image column from the optical axis."""
    return math.atan((x_i - cam.x0) / cam.f)


def tag_position(alpha: float, d: float) -> Point2:
    """Tag position in the vehicle-relative frame (x right, y forward)."""
    if not d > 0:
        raise ValueError("distance must be positive")
    return Point2(math.sin(alpha) * d, math.cos(alpha) * d)


def pnp_bearing(t: np.ndarray) -> float:
    return math.atan2(t[0], t[2])


def validate(pnp, alpha: float, tol: float = DEFAULT_VALIDATION_TOL) -> bool:
    """Whether the PnP translation bearing agrees with the direct angle."""
    _, t = pnp
    return abs(normalize_angle(pnp_bearing(t) - alpha)) <= tol


def estimate_tag(det: TagDetection, cam: CameraIntrinsics, tag_side: float = DEFAULT_TAG_SIDE,
                 tol: float = DEFAULT_VALIDATION_TOL) -> TagPoseEstimate:
    R, t = solve_pnp(det, cam, tag_side)
    return pose_estimate(det, R, t, cam, tol)


def edge_position(det: TagDetection, cam: CameraIntrinsics, tag_side: float = DEFAULT_TAG_SIDE) -> Point2:
    """Tag centre from its two vertical edges (vehicle-relative, x right, y forward).

    An upright tag's vertical edges each sit at a single depth, so their
    projected lengths give the depths directly as ``f * side / length``.
    Unlike the PnP translation this carries no range-dependent bias.
    """
    c = det.corners
    xs, zs = [], []
    for top, bottom in ((0, 3), (1, 2)):
        length = float(np.hypot(*(c[top] - c[bottom])))
        if not length > 0:
            raise DegenerateHomography("tag edge has zero length")
        z = cam.f * tag_side / length
        xs.append((0.5 * (c[top, 0] + c[bottom, 0]) - cam.x0) * z / cam.f)
        zs.append(z)
    return Point2(0.5 * (xs[0] + xs[1]), 0.5 * (zs[0] + zs[1]))


def pose_estimate(det: TagDetection, R: np.ndarray, t: np.ndarray, cam: CameraIntrinsics,
                  tol: float = DEFAULT_VALIDATION_TOL) -> TagPoseEstimate:
    """Validate a solved PnP pose and pick the tag position from it."""
    alpha = direct_angle(det.center_x, cam)
    d = float(np.linalg.norm(t))
    ok = validate((R, t), alpha, tol)
    pos = Point2(float(t[0]), float(t[2])) if ok else tag_position(alpha, d)
    return TagPoseEstimate(det.tag_id, R, t, alpha, d, pos, ok)


def estimate_tags(dets, cam: CameraIntrinsics, tag_side: float = DEFAULT_TAG_SIDE,
                  tol: float = DEFAULT_VALIDATION_TOL) -> list:
    """:func:`estimate_tag` for many detections; tags without a pose are dropped."""
    dets = list(dets)
    if not dets:
        return []
    R, t, ok = solve_pnp_batch(np.stack([d.corners for d in dets]), cam, tag_side)
    return [pose_estimate(det, Ri, ti, cam, tol) for det, Ri, ti, good in zip(dets, R, t, ok) if good]


def range_filter(estimates, max_range: float = DEFAULT_MAX_RANGE) -> list:
    """Drop tags at ``max_range`` or farther."""
    if not max_range > 0:
        raise ValueError("max_range must be positive")
    return [e for e in estimates if e.d < max_range]


def relative_to_body(p: Point2) -> np.ndarray:
    """Vehicle-relative (x right, y forward) to body frame (x forward, y left)."""
    return np.array([p.y, -p.x])


def tag_information(d: float, sigma_floor: float = 0.1, pixel_sigma: float = 0.5,
                    cam: CameraIntrinsics | None = None, tag_side: float = DEFAULT_TAG_SIDE,
                    bearing: float = 0.0, range_inflation: float = 1.0,
                    inflation_knee: float = math.inf) -> np.ndarray:
    """Body-frame information of a tag position: depth error grows with range squared.

    ``range_inflation`` widens the depth term to absorb the small-target
    depth bias of PnP, which does not average out because tags are always
    seen from the front.  The widening grows as ``1 + (d / inflation_knee)**2``
    since the bias does.
    """
    cam = cam or CameraIntrinsics()
    grow = range_inflation * (1.0 + (d / inflation_knee) ** 2)
    sigma_range = sigma_floor + grow * d * d * pixel_sigma / (cam.f * tag_side)
    sigma_cross = sigma_floor + d * pixel_sigma / cam.f
    # body frame: forward = x; bearing measured to the right of forward
    c, s = math.cos(-bearing), math.sin(-bearing)
    rot = np.array([[c, -s], [s, c]])
    cov = rot @ np.diag([sigma_range**2, sigma_cross**2]) @ rot.T
    info = np.linalg.inv(cov)
    return 0.5 * (info + info.T)
