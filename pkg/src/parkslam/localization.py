"""Online localization against a frozen semantic map."""

from __future__ import annotations

import math
import time
from collections import deque

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from . import association as asc
from .evaluation import EvalReport, SemanticMap, evaluate
from . import factors as fx
from .exceptions import SingularSystem
from .factors import OdometryFactor, PointObservationFactor, pose_id
from .geometry import normalize_angles
from .fiducial import relative_to_body
from .graph import Graph, LmConfig, optimize
from .mapping import _Params, dataset_tag_estimates, dead_reckon, odometry_information
from .validation import check_dataset, check_map


class Localizer(_Params, BaseEstimator):
    """Sliding-window pose tracking with all landmarks held fixed.

    ``fit`` takes a :class:`SemanticMap`; ``predict`` takes a dataset and
    returns one pose per frame as an ``(n, 3)`` array.  After ``predict``:
    ``lost_track_``, ``lost_frames_``, ``frames_per_second_``,
    ``matched_per_frame_``.
    """

    def __init__(
        self,
        robust: bool = True,
        window: int = 10,
        lost_after: int = 20,
        slot_width: float = 2.5,
        slot_depth: float = 5.3,
        corner_sigma: float = 0.1,
        angle_sigma: float = 0.1,
        distance_sigma: float = 0.25,
        odom_sigma: tuple = (0.02, 0.01, 0.005),
        high_confidence: float = 0.9,
        nn_floor: float = 0.2,
        gate_cap: float = 2.5,
        tag_max_range: float = 20.0,
        tag_validation_tol: float = math.radians(5.0),
        tag_sigma_floor: float = 0.01,
        tag_pixel_sigma: float = 0.5,
        tag_range_inflation: float = 1.0,
        tag_inflation_knee: float = math.inf,
        tag_edge_ranging: bool = True,
        compass_sigma: float = 0.02,
        convergence_tol: float = 1e-8,
        max_iterations: int = 20,
        solver: str = "dense",
    ) -> None:
        self.robust = robust
        self.window = window
        self.lost_after = lost_after
        self.slot_width = slot_width
        self.slot_depth = slot_depth
        self.corner_sigma = corner_sigma
        self.angle_sigma = angle_sigma
        self.distance_sigma = distance_sigma
        self.odom_sigma = odom_sigma
        self.high_confidence = high_confidence
        self.nn_floor = nn_floor
        self.gate_cap = gate_cap
        self.tag_max_range = tag_max_range
        self.tag_validation_tol = tag_validation_tol
        self.tag_sigma_floor = tag_sigma_floor
        self.tag_pixel_sigma = tag_pixel_sigma
        self.tag_range_inflation = tag_range_inflation
        self.tag_inflation_knee = tag_inflation_knee
        self.tag_edge_ranging = tag_edge_ranging
        self.compass_sigma = compass_sigma
        self.convergence_tol = convergence_tol
        self.max_iterations = max_iterations
        self.solver = solver

    def fit(self, semantic_map: SemanticMap, y=None) -> "Localizer":
        check_map(semantic_map)
        self._check_params()
        if self.window < 2:
            raise ValueError("window must hold at least two poses")
        if self.solver not in ("dense", "graph"):
            raise ValueError("solver must be 'dense' or 'graph'")
        self.map_ = semantic_map
        self.slot_records_ = [asc.SlotRecord(i, s.label, s.corners.copy()) for i, s in enumerate(semantic_map.slots)]
        self.tag_positions_ = {t.tag_id: t.position.copy() for t in semantic_map.tags}
        return self

    # ------------------------------------------------------------------
    def predict(self, dataset) -> np.ndarray:
        if not hasattr(self, "map_"):
            raise AttributeError("Localizer is not fitted yet; call fit with a map")
        check_dataset(dataset)
        lm = LmConfig(max_iterations=self.max_iterations, convergence_tol=self.convergence_tol)
        odom_info = odometry_information(self.odom_sigma)
        corner_info = asc.corner_information(self.corner_sigma)
        dr = asc.DeadReckoner(state=dataset.origin, wheelbase=dataset.wheelbase, compass_sigma=self.compass_sigma)
        reset_cov = np.diag([0.05**2, 0.05**2, 0.01**2])

        # one entry per pose in the window: (frame, estimate, increment, observations)
        win: deque = deque(maxlen=self.window)
        trace = np.zeros((len(dataset.frames), 3))
        matched = np.zeros(len(dataset.frames), dtype=int)
        unmatched_run = 0
        lost_frames = []
        t0 = time.perf_counter()
        tags_by_frame = dataset_tag_estimates(dataset.frames, dataset.camera, dataset.tag_side,
                                              self.tag_validation_tol, self.tag_max_range,
                                              edge_ranging=self.tag_edge_ranging)

        for k, frame in enumerate(dataset.frames):
            if k == 0:
                pose, z = dataset.origin, None
            else:
                pose, z = dead_reckon(dr, frame.odom, dataset.dt)
            obs = self._observations(frame, tags_by_frame[k], pose, dr, dataset, corner_info)
            matched[k] = len(obs)
            win.append([k, pose.as_array(), z, obs])
            if obs:
                self._solve(win, odom_info, lm)
            est = win[-1][1]
            trace[k] = est
            dr.reset(type(pose).from_array(est), reset_cov)

            unmatched_run = 0 if obs else unmatched_run + 1
            if unmatched_run > self.lost_after:
                lost_frames.append(k)

        elapsed = time.perf_counter() - t0
        self.matched_per_frame_ = matched
        self.lost_frames_ = lost_frames
        self.lost_track_ = bool(lost_frames)
        self.frames_per_second_ = len(dataset.frames) / elapsed if elapsed > 0 else float("inf")
        self.trace_ = trace
        return trace

    def score(self, dataset, y=None) -> float:
        """Negative lateral deviation std against the map's reference trace."""
        trace = self.predict(dataset)
        return -evaluate(trace, self.map_.reference_trace).trace_lateral_std

    def report(self, trace, dataset=None) -> EvalReport:
        gt = dataset.ground_truth_trace() if dataset is not None else None
        rep = evaluate(trace, self.map_.reference_trace, gt)
        return rep.merge(EvalReport(lost_track=getattr(self, "lost_track_", False),
                                    frames_per_second=min(getattr(self, "frames_per_second_", 0.0), 1e12)))

    # ------------------------------------------------------------------
    def _observations(self, frame, tag_ests, pose, dr, dataset, corner_info) -> list:
        """Tag and slot observations of this frame that hit a map landmark."""
        obs = []
        for est in tag_ests:
            pos = self.tag_positions_.get(est.tag_id)
            if pos is None:
                continue
            obs.append(("tag", est.tag_id, relative_to_body(est.position_vehicle_frame),
                        self._tag_info(est, dataset.camera, dataset.tag_side)))
        if frame.slot_detections and self.slot_records_:
            gate = asc.gate_radius(dr, self.slot_width, self.gate_cap)
            csets = asc.pre_associate(frame.slot_detections, self.slot_records_, pose, gate,
                                      self.high_confidence, self.nn_floor)
            for det, cs in zip(frame.slot_detections, csets):
                if not cs.candidates:
                    continue
                if self.robust and not cs.high_confidence and not cs.supported_by_location:
                    continue
                if not self.robust:
                    cs = asc.CandidateSet(cs.detection, [cs.best()], cs.high_confidence, cs.in_gate)
                obs.append(("slot", cs, det, corner_info))
        return obs

    def _solve(self, win, odom_info, lm) -> None:
        if self.solver == "dense":
            poses = _WindowProblem(win, odom_info, self.tag_positions_, self.slot_records_).solve(lm)
            for entry, p in zip(win, poses):
                entry[1] = p
            return
        self._solve_graph(win, odom_info, lm)

    def _solve_graph(self, win, odom_info, lm) -> None:
        g = Graph()
        lm_vars: dict = {}

        def landmark(key, value):
            var = lm_vars.get(key)
            if var is None:
                var = lm_vars[key] = g.new_point(value, fixed=True)
            return var

        for j, (k, est, z, obs) in enumerate(win):
            # the oldest pose is the gauge: the origin at start-up, later the pose leaving the window
            pv = g.add_pose(j, est, fixed=(j == 0))
            if j > 0:
                g.add_factor(OdometryFactor((pose_id(j - 1), pv), odom_info, measurement=z.as_array()))
            for o in obs:
                if o[0] == "tag":
                    _, tid, meas, info = o
                    var = landmark(("tag", tid), self.tag_positions_[tid])
                    g.add_factor(PointObservationFactor((pv, var), info, measurement=meas))
                else:
                    _, cs, det, info = o
                    slot_vars = {}
                    for c in cs.candidates:
                        corners = self.slot_records_[c.slot].corners
                        slot_vars[c.slot] = tuple(landmark(("slot", c.slot, i), corners[i]) for i in range(4))
                    g.add_factor(asc.build_mixture(cs, det, pv, slot_vars, info))
        optimize(g, lm)
        for j, entry in enumerate(win):
            entry[1] = g.value(pose_id(j))


class _WindowProblem:
    """The sliding-window problem solved densely.

    Landmarks are fixed, so every observation touches a single pose and the
    normal equations are a small dense block-tridiagonal system.  The
    iteration mirrors :func:`graph.optimize` step for step: the same damping
    schedule, acceptance test and max-mixture re-selection after each
    accepted step.
    """

    def __init__(self, win, odom_info, tag_positions, slot_records) -> None:
        self.x0 = np.array([entry[1] for entry in win], dtype=float)
        self.m = len(win)
        self.odom_z = np.array([entry[2].as_array() for entry in list(win)[1:]]).reshape(-1, 3)
        self.odom_info = odom_info
        p_idx, p_lm, p_z, p_info = [], [], [], []
        c_obs, c_idx, c_lm, c_z, c_info, c_pen = [], [], [], [], [], []
        n_mix = 0
        for j, entry in enumerate(win):
            for o in entry[3]:
                if o[0] == "tag":
                    _, tid, meas, info = o
                    p_idx.append(j)
                    p_lm.append(tag_positions[tid])
                    p_z.append(meas)
                    p_info.append(info)
                    continue
                _, cs, det, info = o
                total = sum(c.weight for c in cs.candidates)
                logdet = float(np.linalg.slogdet(info)[1])
                pens = []
                for c in cs.candidates:
                    w = c.weight / total if total > 0 else 1.0 / len(cs.candidates)
                    pens.append(-2.0 * math.log(w) - logdet)
                low = min(pens)
                for c, pen in zip(cs.candidates, pens):
                    c_obs.append(n_mix)
                    c_idx.append(j)
                    c_lm.append(slot_records[c.slot].corners)
                    c_z.append(det.corners)
                    c_info.append(info)
                    c_pen.append(pen - low)
                n_mix += 1
        self.p_idx = np.array(p_idx, dtype=int)
        self.p_lm = np.array(p_lm, dtype=float).reshape(-1, 2)
        self.p_z = np.array(p_z, dtype=float).reshape(-1, 2)
        self.p_info = np.array(p_info, dtype=float).reshape(-1, 2, 2)
        self.n_mix = n_mix
        self.c_obs = np.array(c_obs, dtype=int)
        self.c_local = np.zeros(len(c_obs), dtype=int)
        if len(c_obs):
            starts = np.r_[0, np.nonzero(np.diff(self.c_obs))[0] + 1]
            self.c_local = np.arange(len(c_obs)) - np.repeat(starts, np.diff(np.r_[starts, len(c_obs)]))
        self.c_idx = np.array(c_idx, dtype=int)
        self.c_lm = np.array(c_lm, dtype=float).reshape(-1, 4, 2)
        self.c_z = np.array(c_z, dtype=float).reshape(-1, 4, 2)
        self.c_info = np.array(c_info, dtype=float).reshape(-1, 8, 8)
        self.c_pen = np.array(c_pen, dtype=float)

    # ------------------------------------------------------------------
    def _mix_residuals(self, x):
        pose = x[self.c_idx]
        r = fx.point_obs_error(pose[:, None, :], self.c_lm, self.c_z).reshape(-1, 8)
        return r

    def select(self, x) -> np.ndarray:
        """Chosen component row for every slot observation (lowest index on ties)."""
        if not self.n_mix:
            return np.zeros(0, dtype=int)
        r = self._mix_residuals(x)
        score = np.einsum("ni,nij,nj->n", r, self.c_info, r) + self.c_pen
        order = np.lexsort((self.c_local, score, self.c_obs))
        first = np.ones(len(order), dtype=bool)
        first[1:] = self.c_obs[order][1:] != self.c_obs[order][:-1]
        return order[first]

    def cost(self, x, chosen) -> float:
        total = 0.0
        if self.m > 1:
            r = fx.odometry_error(x[:-1], x[1:], self.odom_z)
            total += float(np.einsum("ni,ij,nj->", r, self.odom_info, r))
        if len(self.p_idx):
            r = fx.point_obs_error(x[self.p_idx], self.p_lm, self.p_z)
            total += float(np.einsum("ni,nij,nj->", r, self.p_info, r))
        if len(chosen):
            pose = x[self.c_idx[chosen]]
            r = fx.point_obs_error(pose[:, None, :], self.c_lm[chosen], self.c_z[chosen]).reshape(-1, 8)
            total += float(np.einsum("ni,nij,nj->", r, self.c_info[chosen], r)) + float(self.c_pen[chosen].sum())
        return total

    def linearize(self, x, chosen):
        m = self.m
        H = np.zeros((3 * m, 3 * m))
        g = np.zeros(3 * m)
        blocks = np.zeros((m, 3, 3))
        grads = np.zeros((m, 3))
        cost = 0.0

        def single(idx, r, J, info):
            nonlocal cost
            w = (info @ r[:, :, None])[:, :, 0]
            cost += float(np.einsum("ni,ni->", r, w))
            JT = np.swapaxes(J, 1, 2)
            np.add.at(blocks, idx, JT @ info @ J)
            np.add.at(grads, idx, (JT @ w[:, :, None])[:, :, 0])

        if len(self.p_idx):
            pose = x[self.p_idx]
            r = fx.point_obs_error(pose, self.p_lm, self.p_z)
            single(self.p_idx, r, fx.point_obs_jacobians(pose, self.p_lm)[0], self.p_info)
        if len(chosen):
            idx = self.c_idx[chosen]
            pose = x[idx]
            lm = self.c_lm[chosen]
            r = fx.point_obs_error(pose[:, None, :], lm, self.c_z[chosen]).reshape(-1, 8)
            jp = fx.point_obs_jacobians(np.broadcast_to(pose[:, None, :], lm.shape[:2] + (3,)), lm)[0]
            single(idx, r, jp.reshape(-1, 8, 3), self.c_info[chosen])
            cost += float(self.c_pen[chosen].sum())
        if m > 1:
            r = fx.odometry_error(x[:-1], x[1:], self.odom_z)
            ji, jj = fx.odometry_jacobians(x[:-1], x[1:])
            w = r @ self.odom_info
            cost += float(np.einsum("ni,ni->", r, w))
            jit = np.swapaxes(ji, 1, 2)
            jjt = np.swapaxes(jj, 1, 2)
            blocks[:-1] += jit @ self.odom_info @ ji
            blocks[1:] += jjt @ self.odom_info @ jj
            grads[:-1] += (jit @ w[:, :, None])[:, :, 0]
            grads[1:] += (jjt @ w[:, :, None])[:, :, 0]
            H4 = H.reshape(m, 3, m, 3)
            ar = np.arange(m - 1)
            H4[ar, :, ar + 1, :] = jit @ self.odom_info @ jj
            H4[ar + 1, :, ar, :] = jjt @ self.odom_info @ ji
        ar = np.arange(m)
        H.reshape(m, 3, m, 3)[ar, :, ar, :] = blocks
        g[:] = grads.reshape(-1)
        # the oldest pose is the gauge
        return H[3:, 3:], g[3:], cost

    def retract(self, x, dx):
        out = x.copy()
        out[1:] += dx.reshape(-1, 3)
        out[:, 2] = normalize_angles(out[:, 2])
        return out

    def solve(self, cfg: LmConfig) -> np.ndarray:
        x = self.x0.copy()
        if self.m < 2:
            return x
        chosen = self.select(x)
        H, g, cost = self.linearize(x, chosen)
        lam = cfg.initial_lambda
        converged = cost <= cfg.min_chi2
        it = 0
        while not converged and it < cfg.max_iterations:
            it += 1
            diag = np.maximum(np.diag(H), 1e-9)
            accepted = False
            while True:
                A = H.copy()
                A[np.diag_indices_from(A)] += lam * diag
                try:
                    c = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
                    dx = scipy.linalg.cho_solve(c, -g, check_finite=False)
                except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                    if lam >= cfg.max_lambda:
                        raise SingularSystem("window normal equations not positive-definite at maximum damping")
                    lam *= cfg.lambda_up
                    continue
                x_new = self.retract(x, dx)
                cost_new = self.cost(x_new, chosen)
                if cost_new < cost:
                    accepted = True
                    break
                lam *= cfg.lambda_up
                if lam > cfg.max_lambda:
                    break
            if not accepted:
                break
            step = float(np.max(np.abs(dx)))
            x = x_new
            chosen = self.select(x)
            H, g, cost_sel = self.linearize(x, chosen)
            rel = (cost - cost_sel) / max(cost, 1e-300)
            cost = cost_sel
            lam = max(lam * cfg.lambda_down, 1e-15)
            if cost <= cfg.min_chi2 or rel < cfg.convergence_tol or step < cfg.step_tol:
                converged = True
        return x
