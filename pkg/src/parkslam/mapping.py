"""Offline map building: association, lazy landmarks and periodic batch optimization."""

from __future__ import annotations

import logging
import math
from collections import defaultdict

import numpy as np
from sklearn.base import BaseEstimator

from . import association as asc
from .evaluation import EvalReport, MapSlotEntry, MapTag, SemanticMap, map_report, nearest_truth_slot
from .factors import MaxMixtureFactor, OdometryFactor, TagObservationFactor, pose_id
from .fiducial import edge_position, pose_estimate, range_filter, relative_to_body, solve_pnp_batch, tag_information
from .geometry import between, to_world_array
from .graph import Graph, LmConfig, optimize
from .validation import check_dataset, check_positive

logger = logging.getLogger(__name__)


def odometry_information(sigma) -> np.ndarray:
    sx, sy, sth = (max(float(s), 1e-4) for s in sigma)
    return np.diag([1.0 / sx**2, 1.0 / sy**2, 1.0 / sth**2])


def dead_reckon(dr, odom, dt):
    """Advance the dead reckoner; returns the new pose and the increment it applied.

    The increment carries the compass correction, so chaining increments
    keeps the heading tied to the compass instead of integrating steering
    noise.
    """
    prev = dr.state
    pose = dr.predict(odom.speed, odom.steering, odom.compass, dt)
    return pose, between(prev, pose)


def apparent_range(det, camera, tag_side) -> float:
    """Depth implied by the longest projected edge; never much above the true range."""
    c = det.corners
    longest = float(np.max(np.hypot(*(c - np.roll(c, -1, axis=0)).T)))
    return camera.f * tag_side / longest if longest > 0 else math.inf


def tag_estimates(frame, camera, tag_side, tol, max_range, prefilter: float = 1.15, edge_ranging: bool = False):
    """Valid-or-fallback tag estimates for a frame, after the range gate.

    Tags whose apparent size puts them well beyond ``max_range`` skip the
    PnP solve; the gate itself is applied to the PnP distance.  With
    ``edge_ranging`` a validated tag takes its position from the vertical
    edges instead of the PnP translation.
    """
    return dataset_tag_estimates([frame], camera, tag_side, tol, max_range, prefilter, edge_ranging)[0]


def dataset_tag_estimates(frames, camera, tag_side, tol, max_range, prefilter: float = 1.15,
                          edge_ranging: bool = False) -> list[list]:
    """:func:`tag_estimates` for every frame, solved as one batch."""
    dets, owner = [], []
    for k, frame in enumerate(frames):
        for d in frame.tag_detections:
            if apparent_range(d, camera, tag_side) <= prefilter * max_range:
                dets.append(d)
                owner.append(k)
    per_frame: list[list] = [[] for _ in frames]
    R, t, ok = solve_pnp_batch(np.stack([d.corners for d in dets]) if dets else np.zeros((0, 4, 2)),
                               camera, tag_side)
    for det, k, Ri, ti, good in zip(dets, owner, R, t, ok):
        if not good:
            logger.debug("dropping tag %s: no pose", det.tag_id)
            continue
        est = pose_estimate(det, Ri, ti, camera, tol)
        if edge_ranging and est.valid:
            est.position_vehicle_frame = edge_position(det, camera, tag_side)
        per_frame[k].append(est)
    return [range_filter(ests, max_range) for ests in per_frame]


class _Params:
    """Shared estimator parameters and their checks."""

    def _check_params(self) -> None:
        for name in ("slot_width", "slot_depth", "corner_sigma", "angle_sigma", "distance_sigma",
                     "tag_max_range", "tag_validation_tol", "gate_cap", "tag_sigma_floor", "tag_pixel_sigma", "tag_range_inflation"):
            check_positive(getattr(self, name), name)
        if len(self.odom_sigma) != 3:
            raise ValueError("odom_sigma needs three entries")
        if not 0.0 <= self.high_confidence <= 1.0:
            raise ValueError("high_confidence must lie in [0, 1]")

    def _tag_info(self, est, camera, tag_side):
        return tag_information(est.d, self.tag_sigma_floor, self.tag_pixel_sigma, camera, tag_side, est.alpha,
                               self.tag_range_inflation, self.tag_inflation_knee)


class SlotMapper(_Params, BaseEstimator):
    """Build a semantic map from one recorded dataset.

    With ``robust=True`` every slot sighting becomes a max-mixture factor over
    all candidate slots and slot IDs are decided by a confidence-weighted vote.
    With ``robust=False`` each sighting is tied to its single highest-weight
    candidate and a slot keeps the first full ID read for it, the way an
    ID-keyed pipeline without outlier handling behaves.

    After ``fit``: ``map_``, ``report_``, ``graph_``, ``result_``,
    ``n_tag_factors_``, ``n_slot_factors_``.
    """

    def __init__(
        self,
        robust: bool = True,
        optimize_every: int = 50,
        promotion_threshold: int = 2,
        match_radius: float = 1.0,
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
        max_iterations: int = 100,
    ) -> None:
        self.robust = robust
        self.optimize_every = optimize_every
        self.promotion_threshold = promotion_threshold
        self.match_radius = match_radius
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

    # ------------------------------------------------------------------
    def fit(self, dataset, y=None) -> "SlotMapper":
        check_dataset(dataset)
        self._check_params()
        if self.optimize_every < 1:
            raise ValueError("optimize_every must be >= 1")
        lm = LmConfig(max_iterations=self.max_iterations, convergence_tol=self.convergence_tol)
        graph = Graph()
        slot_map = asc.SlotMap(graph, self.slot_width, self.slot_depth, self.angle_sigma,
                               self.distance_sigma, self.corner_sigma)
        store = asc.ProvisionalStore(self.match_radius, self.promotion_threshold)
        dr = asc.DeadReckoner(state=dataset.origin, wheelbase=dataset.wheelbase, compass_sigma=self.compass_sigma)
        odom_info = odometry_information(self.odom_sigma)
        tag_vars: dict[int, object] = {}
        truth_of_factor: dict[int, int | None] = {}
        first_read: dict[int, str] = {}
        self.n_tag_factors_ = 0
        self.n_slot_factors_ = 0
        result = None

        n = len(dataset.frames)
        tags_by_frame = dataset_tag_estimates(dataset.frames, dataset.camera, dataset.tag_side,
                                              self.tag_validation_tol, self.tag_max_range,
                                              edge_ranging=self.tag_edge_ranging)
        for k, frame in enumerate(dataset.frames):
            if k == 0:
                pose = dataset.origin
                pv = graph.add_pose(0, pose, fixed=True)
            else:
                pose, z = dead_reckon(dr, frame.odom, dataset.dt)
                pv = graph.add_pose(k, pose)
                graph.add_factor(OdometryFactor((pose_id(k - 1), pv), odom_info, measurement=z.as_array()))

            for est in tags_by_frame[k]:
                z = relative_to_body(est.position_vehicle_frame)
                var = tag_vars.get(est.tag_id)
                if var is None:
                    var = tag_vars[est.tag_id] = graph.new_point(to_world_array(pose, z[None, :])[0])
                info = self._tag_info(est, dataset.camera, dataset.tag_side)
                graph.add_factor(TagObservationFactor((pv, var), info, measurement=z, tag_id=est.tag_id))
                self.n_tag_factors_ += 1

            if frame.slot_detections:
                self._associate_slots(frame, k, pose, pv, dr, graph, slot_map, store, truth_of_factor, first_read)

            last = k == n - 1
            if (k > 0 and k % self.optimize_every == 0) or last:
                result = optimize(graph, lm)
                dr.reset(graph.pose(k), np.diag([1e-4, 1e-4, 1e-6]))
                self._update_labels(graph, slot_map, result.active_components, first_read)

        self.graph_ = graph
        self.result_ = result
        self.slot_map_ = slot_map
        self.tag_vars_ = tag_vars
        self.map_ = self._export(graph, slot_map, tag_vars, n)
        report = EvalReport(chi2_final=float(result.final_chi2))
        lot = getattr(dataset, "lot", None)
        if lot is not None:
            report = report.merge(map_report(self.map_, lot))
            prec = self._association_precision(graph, slot_map, result.active_components, truth_of_factor, lot)
            report = report.merge(EvalReport(association_precision=prec))
        self.report_ = report
        return self

    def transform(self, dataset=None) -> SemanticMap:
        """The fitted map (the dataset argument is accepted for pipeline use)."""
        if not hasattr(self, "map_"):
            raise AttributeError("SlotMapper is not fitted yet; call fit first")
        return self.map_

    def fit_transform(self, dataset, y=None) -> SemanticMap:
        return self.fit(dataset).map_

    # ------------------------------------------------------------------
    def _associate_slots(self, frame, k, pose, pv, dr, graph, slot_map, store, truth_of_factor, first_read):
        records = slot_map.records()
        gate = asc.gate_radius(dr, self.slot_width, self.gate_cap)
        csets = asc.pre_associate(frame.slot_detections, records, pose, gate, self.high_confidence, self.nn_floor)
        slot_vars = slot_map.slot_vars()
        for det, cs in zip(frame.slot_detections, csets):
            lazy = not cs.candidates
            if self.robust and not lazy and not cs.high_confidence and not cs.supported_by_location:
                # an uncertain read whose only hypothesis is an ID match elsewhere
                lazy = True
            if lazy:
                n_before = len(graph.factors)
                prov, promoted = asc.lazy_add(det, pose, store, slot_map, k, pv)
                if promoted is not None:
                    added = [i for i in range(n_before, len(graph.factors))
                             if isinstance(graph.factors[i], MaxMixtureFactor)]
                    dets = [d for _, v, d in prov.sightings if v is not None]
                    self._label_promoted(promoted, list(zip(added, dets)), slot_map, first_read, truth_of_factor)
                    slot_vars = slot_map.slot_vars()
                continue
            if not self.robust:
                cs = asc.CandidateSet(cs.detection, [cs.best()], cs.high_confidence, cs.in_gate)
                if det.slot_id.status == asc.FULL:
                    first_read.setdefault(cs.candidates[0].slot, det.slot_id.label)
            f = asc.build_mixture(cs, det, pv, slot_vars, slot_map.corner_info)
            idx = graph.add_factor(f)
            truth_of_factor[idx] = det.truth_id
            self.n_slot_factors_ += 1

    def _label_promoted(self, slot, sightings, slot_map, first_read, truth_of_factor):
        for idx, det in sightings:
            truth_of_factor[idx] = det.truth_id
            self.n_slot_factors_ += 1
        taken = {s.label for s in slot_map.slots.values() if s.key != slot.key}
        if self.robust:
            tally = defaultdict(float)
            for _, det in sightings:
                if det.slot_id.status == asc.FULL:
                    tally[det.slot_id.label] += det.slot_id.confidence_product
            if tally:
                best = max(sorted(tally), key=lambda lab: tally[lab])
                if best not in taken:
                    slot.label = best
        else:
            for _, det in sightings:
                if det.slot_id.status == asc.FULL:
                    first_read.setdefault(slot.key, det.slot_id.label)
                    break
            slot.label = first_read.get(slot.key, slot.temp_id)

    def _update_labels(self, graph, slot_map, active, first_read):
        if not self.robust:
            for key, slot in slot_map.slots.items():
                slot.label = first_read.get(key, slot.temp_id)
            return
        slot_of_var = {v: key for key, s in slot_map.slots.items() for v in s.corner_vars}
        votes = asc.collect_votes(graph.factors, active, slot_of_var)
        temp = {key: s.temp_id for key, s in slot_map.slots.items()}
        for key, lab in asc.resolve_ids(votes, temp).items():
            slot_map.slots[key].label = lab

    def _export(self, graph, slot_map, tag_vars, n_frames) -> SemanticMap:
        slots = [MapSlotEntry(s.label, slot_map.corners(key)) for key, s in slot_map.slots.items()]
        tags = [MapTag(tid, graph.value(var)) for tid, var in sorted(tag_vars.items())]
        trace = np.array([graph.value(pose_id(k)) for k in range(n_frames)])
        return SemanticMap(slots, tags, trace)

    @staticmethod
    def _association_precision(graph, slot_map, active, truth_of_factor, lot) -> float | None:
        truth_of_slot = {key: nearest_truth_slot(slot_map.corners(key).mean(axis=0), lot) for key in slot_map.slots}
        slot_of_var = {v: key for key, s in slot_map.slots.items() for v in s.corner_vars}
        good = total = 0
        for idx, truth in truth_of_factor.items():
            if truth is None:
                continue
            f = graph.factors[idx]
            key = slot_of_var[f.components[active.get(idx, 0)].targets[0]]
            total += 1
            good += truth_of_slot[key] == truth
        return good / total if total else None
