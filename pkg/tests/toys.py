"""Random small graphs built twice: once for the package, once for the oracle."""

from __future__ import annotations

import math

import numpy as np

from oracles import ToyProblem
from parkslam import factors as fx
from parkslam.graph import Graph

ODOM_INFO = np.diag([100.0, 100.0, 400.0])
OBS_INFO = 25.0 * np.eye(2)


def body(pose, lm):
    c, s = math.cos(pose[2]), math.sin(pose[2])
    d = lm - pose[:2]
    return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])


def random_toy(rng, n_poses=None, n_points=None, mixtures=True):
    n_poses = n_poses or int(rng.integers(2, 6))
    n_points = n_points or int(rng.integers(1, 4))
    truth = [np.zeros(3)]
    for _ in range(n_poses - 1):
        p = truth[-1]
        step = rng.uniform(0.5, 2.0)
        truth.append(np.array([p[0] + step * math.cos(p[2]), p[1] + step * math.sin(p[2]),
                               p[2] + rng.uniform(-0.3, 0.3)]))
    lms = [rng.uniform([-2, 2], [8, 8]) for _ in range(n_points)]

    init_p = [truth[0]] + [t + rng.normal(0, [0.1, 0.1, 0.03]) for t in truth[1:]]
    init_l = [l + rng.normal(0, 0.1, 2) for l in lms]
    g = Graph()
    toy = ToyProblem(init_p, init_l, fixed_poses={0})
    for i, p in enumerate(init_p):
        g.add_pose(i, p, fixed=(i == 0))
    for k, l in enumerate(init_l):
        g.add_point(k, l)
    for i in range(1, n_poses):
        z = fx.odometry_error(truth[i - 1], truth[i], np.zeros(3)) + rng.normal(0, [0.05, 0.05, 0.02])
        g.add_factor(fx.OdometryFactor((fx.pose_id(i - 1), fx.pose_id(i)), ODOM_INFO, measurement=z))
        toy.odom(i - 1, i, z, ODOM_INFO)
    for k in range(n_points):
        i = int(rng.integers(0, n_poses))
        z = body(truth[i], lms[k]) + rng.normal(0, 0.1, 2)
        g.add_factor(fx.PointObservationFactor((fx.pose_id(i), fx.point_id(k)), OBS_INFO, measurement=z))
        toy.point(i, k, z, OBS_INFO)
    if mixtures and n_points >= 2:
        for _ in range(int(rng.integers(1, 3))):
            i = int(rng.integers(0, n_poses))
            k_true, k_alt = rng.choice(n_points, 2, replace=False)
            z = body(truth[i], lms[k_true]) + rng.normal(0, 0.1, 2)
            ws = rng.uniform(0.2, 1.0, 2)
            comps = [(ws[0], int(k_true), OBS_INFO), (ws[1], int(k_alt), 2.0 * OBS_INFO)]
            g.add_factor(fx.MaxMixtureFactor(fx.pose_id(i), z[None, :], [
                fx.MaxMixtureComponent(w / ws.sum(), [fx.point_id(k)], L) for w, k, L in comps]))
            toy.mix(i, z, comps)
    return g, toy
