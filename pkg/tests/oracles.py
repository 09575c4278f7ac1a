"""Independent reference implementations used to check the package.

Nothing here imports the solver internals: residuals are written out with
plain trigonometry and minimized by a dense Gauss-Newton with numerical
Jacobians.  Max-mixture factors are handled by brute force over every
combination of components.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def wrap(a):
    return math.atan2(math.sin(a), math.cos(a))


def odom_residual(xi, xj, z):
    c, s = math.cos(xi[2]), math.sin(xi[2])
    dx, dy = xj[0] - xi[0], xj[1] - xi[1]
    return np.array([c * dx + s * dy - z[0], -s * dx + c * dy - z[1], wrap(xj[2] - xi[2] - z[2])])


def point_residual(pose, lm, z):
    c, s = math.cos(pose[2]), math.sin(pose[2])
    dx, dy = lm[0] - pose[0], lm[1] - pose[1]
    return np.array([c * dx + s * dy - z[0], -s * dx + c * dy - z[1]])


def angle_residual(a, b, c):
    u = (a[0] - b[0], a[1] - b[1])
    v = (c[0] - b[0], c[1] - b[1])
    ang = math.acos(max(-1.0, min(1.0, (u[0] * v[0] + u[1] * v[1]) / (math.hypot(*u) * math.hypot(*v)))))
    return np.array([ang - math.pi / 2])


def distance_residual(a, b, d):
    return np.array([math.hypot(a[0] - b[0], a[1] - b[1]) - d])


def central_jacobian(fun, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2 * h)
    return J


class ToyProblem:
    """A small graph: poses, points, and a list of terms.

    Terms are tuples ``(kind, vars, data, info)`` where ``vars`` index into
    the concatenated state and ``kind`` is ``odom``, ``point`` or ``mix``.
    A ``mix`` term carries ``[(weight, point_index, info), ...]`` and a
    measured body-frame point.
    """

    def __init__(self, poses, points, fixed_poses, fixed_points=()):
        self.poses = [np.asarray(p, float) for p in poses]
        self.points = [np.asarray(p, float) for p in points]
        self.fixed_poses = set(fixed_poses)
        self.fixed_points = set(fixed_points)
        self.terms = []

    def odom(self, i, j, z, info):
        self.terms.append(("odom", (i, j), np.asarray(z, float), np.asarray(info, float)))

    def point(self, i, k, z, info):
        self.terms.append(("point", (i, k), np.asarray(z, float), np.asarray(info, float)))

    def mix(self, i, z, comps):
        self.terms.append(("mix", (i,), np.asarray(z, float), comps))

    # state layout
    def _layout(self):
        slots = []
        for i in range(len(self.poses)):
            if i not in self.fixed_poses:
                slots.append(("pose", i))
        for k in range(len(self.points)):
            if k not in self.fixed_points:
                slots.append(("point", k))
        return slots

    def _unpack(self, v):
        poses = [p.copy() for p in self.poses]
        points = [p.copy() for p in self.points]
        o = 0
        for kind, i in self._layout():
            if kind == "pose":
                poses[i] = v[o:o + 3]
                o += 3
            else:
                points[i] = v[o:o + 2]
                o += 2
        return poses, points

    def _pack(self):
        parts = []
        for kind, i in self._layout():
            parts.append(self.poses[i] if kind == "pose" else self.points[i])
        return np.concatenate(parts) if parts else np.zeros(0)

    def whitened(self, v, choice):
        poses, points = self._unpack(v)
        out = []
        m = 0
        for kind, idx, z, info in self.terms:
            if kind == "odom":
                r, L = odom_residual(poses[idx[0]], poses[idx[1]], z), info
            elif kind == "point":
                r, L = point_residual(poses[idx[0]], points[idx[1]], z), info
            else:
                w, k, L = info[choice[m]]
                r = point_residual(poses[idx[0]], points[k], z)
                m += 1
            out.append(np.linalg.cholesky(L).T @ r)
        return np.concatenate(out)

    def n_mix(self):
        return sum(1 for t in self.terms if t[0] == "mix")

    def penalty(self, choice):
        mixes = [t for t in self.terms if t[0] == "mix"]
        total = 0.0
        for (kind, idx, z, comps), c in zip(mixes, choice):
            pens = [-2 * math.log(w / sum(cc[0] for cc in comps)) - math.log(np.linalg.det(L)) for w, _, L in comps]
            total += pens[c] - min(pens)
        return total

    def gauss_newton(self, choice, iters=100):
        v = self._pack()
        for _ in range(iters):
            r = self.whitened(v, choice)
            J = central_jacobian(lambda x: self.whitened(x, choice), v, h=1e-5)
            dx = np.linalg.solve(J.T @ J, -J.T @ r)
            v = v + dx
            if np.max(np.abs(dx)) < 1e-13:
                break
        r = self.whitened(v, choice)
        return v, float(r @ r) + self.penalty(choice)

    def solve(self):
        """Minimizer over every component assignment; returns (poses, points, cost, choice)."""
        best = None
        for choice in itertools.product(*[range(len(t[3])) for t in self.terms if t[0] == "mix"]):
            v, cost = self.gauss_newton(choice)
            if best is None or cost < best[1] - 1e-12:
                best = (v, cost, choice)
        poses, points = self._unpack(best[0])
        return poses, points, best[1], best[2]


# ---------------------------------------------------------------- camera


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def project_square(R, t, side, f, x0, y0):
    """Pixel corners (TL, TR, BR, BL) of a square in the plane Z=0 of its own frame."""
    h = side / 2
    out = []
    for X, Y in ((-h, -h), (h, -h), (h, h), (-h, h)):
        P = R @ np.array([X, Y, 0.0]) + t
        out.append([f * P[0] / P[2] + x0, f * P[1] / P[2] + y0])
    return np.array(out)


def rotation_angle(Ra, Rb):
    c = (np.trace(Ra.T @ Rb) - 1) / 2
    return math.acos(max(-1.0, min(1.0, c)))


def random_tag_pose(rng, d_range=(1.0, 19.99), yaw=math.radians(60), side=0.488, cam=(1000.0, 960.0, 540.0),
                    size=(1920, 1080)):
    """A tag pose whose corners all land in the image; returns (R, t, corners)."""
    f, x0, y0 = cam
    while True:
        d = rng.uniform(*d_range)
        bearing = rng.uniform(-0.6, 0.6)
        elev = rng.uniform(-0.2, 0.2)
        t = d * np.array([math.sin(bearing) * math.cos(elev), math.sin(elev), math.cos(bearing) * math.cos(elev)])
        R = rot_y(rng.uniform(-yaw, yaw) * 0.999) @ rot_x(rng.uniform(-0.1, 0.1))
        c = project_square(R, t, side, f, x0, y0)
        if np.all((c[:, 0] >= 0) & (c[:, 0] < size[0]) & (c[:, 1] >= 0) & (c[:, 1] < size[1])):
            return R, t, c
