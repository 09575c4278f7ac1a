import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parkslam import association as asc
from parkslam import factors as fx
from parkslam.exceptions import EmptyCandidates
from parkslam.geometry import Pose2, to_body_array
from parkslam.graph import Graph


def rect(cx, cy, w=2.5, h=5.3):
    return np.array([[cx - w / 2, cy], [cx + w / 2, cy], [cx + w / 2, cy + h], [cx - w / 2, cy + h]])


def records(labels, spacing=2.5):
    return [asc.SlotRecord(i, lab, rect(i * spacing, 0.0)) for i, lab in enumerate(labels)]


def detect(record, pose, label, conf=(1.0, 1.0)):
    return asc.SlotDetection(to_body_array(pose, record.corners), asc.SlotId.from_label(label, conf))


# ---------------------------------------------------------------- SlotId


def test_slot_id_status():
    assert asc.SlotId.from_label("39").status == asc.FULL
    assert asc.SlotId.from_label("3?").status == asc.PARTIAL
    assert asc.SlotId.from_label("??").status == asc.MISSING
    assert asc.SlotId.from_label("3?", (0.8, 0.9)).confidence == (0.8, 0.0)


def test_slot_id_validation():
    with pytest.raises(ValueError):
        asc.SlotId((1, 2, 3))
    with pytest.raises(ValueError):
        asc.SlotId((1, 2), (1.2, 0.5))
    with pytest.raises(ValueError):
        asc.SlotId((1, 12))


@given(st.integers(0, 99))
def test_partial_matching(v):
    label = f"{v:02d}"
    sid = asc.SlotId.from_label(label[0] + "?")
    assert sid.matches(label)
    assert not sid.matches(str((int(label[0]) + 1) % 10) + label[1])


# ---------------------------------------------------------------- dead reckoning


def test_dr_standstill():
    dr = asc.DeadReckoner(state=Pose2(1, 2, 0.3))
    p0 = dr.covariance.copy()
    out = dr.predict(0.0, 0.1, 0.3, 0.1)
    assert (out.x, out.y) == (1, 2) and out.theta == pytest.approx(0.3)
    assert dr.covariance[2, 2] > p0[2, 2] - 1e-18
    assert np.trace(dr.covariance) >= np.trace(p0) - 1e-6


def test_dr_straight():
    dr = asc.DeadReckoner()
    out = dr.predict(1.0, 0.0, 0.0, 1.0)
    assert out.x == pytest.approx(1.0) and out.y == pytest.approx(0.0)


def test_dr_arc_against_closed_form():
    L, delta, v = 2.7, 0.15, 3.0
    kappa = math.tan(delta) / L
    dr = asc.DeadReckoner(wheelbase=L)
    for k in range(1, 101):
        dr.predict(v, delta, kappa * v * 0.1 * k, 0.1)
    s = v * 10.0
    assert dr.state.x == pytest.approx(math.sin(kappa * s) / kappa, abs=1e-3)
    assert dr.state.y == pytest.approx((1 - math.cos(kappa * s)) / kappa, abs=1e-3)


def test_dr_covariance_psd_and_rejects_bad_dt():
    dr = asc.DeadReckoner()
    rng = np.random.default_rng(0)
    for _ in range(50):
        dr.predict(rng.uniform(0, 5), rng.uniform(-0.3, 0.3), rng.uniform(-3, 3), 0.1)
        assert np.allclose(dr.covariance, dr.covariance.T)
        assert np.linalg.eigvalsh(dr.covariance).min() > -1e-12
    with pytest.raises(ValueError):
        dr.predict(1, 0, 0, 0.0)


def test_gate_radius_capped():
    dr = asc.DeadReckoner(covariance=np.eye(3) * 100.0)
    assert asc.gate_radius(dr, 2.5) == 2.5
    dr = asc.DeadReckoner(covariance=np.zeros((3, 3)))
    assert asc.gate_radius(dr, 2.5) == pytest.approx(1.25)


# ---------------------------------------------------------------- pre_associate


def test_exact_id_single_candidate():
    recs = records([str(v) for v in range(30, 40)])
    pose = Pose2(5, -6, 0.2)
    cs = asc.pre_associate([detect(recs[9], pose, "39")], recs, pose, 2.0)[0]
    assert [(c.slot, c.source) for c in cs.candidates] == [(9, asc.EXACT_ID)]
    assert cs.high_confidence


def test_partial_id_enumerates_completions():
    recs = records([str(v) for v in range(30, 40)] + ["41", "52"])
    pose = Pose2(5, -6, 0.2)
    det = detect(recs[3], pose, "3?", (0.95, 1.0))
    cs = asc.pre_associate([det], recs, pose, 2.0)[0]
    partial = {recs[c.slot].label for c in cs.candidates if c.source == asc.PARTIAL_ID}
    assert partial == {str(v) for v in range(30, 40)}
    assert len(cs.slots) == len(set(cs.slots))


def test_missing_id_nearest_neighbor():
    recs = [asc.SlotRecord(0, "12", rect(0, 0)), asc.SlotRecord(1, "13", rect(10, 0))]
    pose = Pose2(0, -5, 0)
    corners = to_body_array(pose, rect(0.4, 0))
    det = asc.SlotDetection(corners, asc.SlotId((None, None), (0.0, 0.0)))
    cs = asc.pre_associate([det], recs, pose, 2.0)[0]
    assert [(c.slot, c.source) for c in cs.candidates] == [(0, asc.NEAREST_NEIGHBOR)]


def test_gate_must_be_positive():
    with pytest.raises(ValueError):
        asc.pre_associate([], records(["10"]), Pose2.identity(), 0.0)


def test_low_confidence_adds_nn_with_floor_weight():
    recs = records(["38", "39"])
    pose = Pose2(3, -6, 0)
    det = detect(recs[1], pose, "38", (0.8, 0.9))
    cs = asc.pre_associate([det], recs, pose, 2.0)[0]
    src = {c.slot: (c.source, c.weight) for c in cs.candidates}
    assert src[0] == (asc.EXACT_ID, pytest.approx(0.72))
    assert src[1] == (asc.NEAREST_NEIGHBOR, pytest.approx(0.2 * 0.72))


@given(st.integers(0, 19), st.floats(0, 20), st.floats(-20, 20), st.floats(-3, 3), st.floats(0.1, 3))
def test_exact_id_never_pruned(idx, px, py, th, gate):
    recs = records([f"{v:02d}" for v in range(20)])
    pose = Pose2(px, py, th)
    far = asc.SlotDetection(rect(100, 100), asc.SlotId.from_label(recs[idx].label, (0.6, 0.6)))
    cs = asc.pre_associate([far], recs, pose, gate)[0]
    assert (idx, asc.EXACT_ID) in [(c.slot, c.source) for c in cs.candidates]


@given(st.integers(0, 2**31 - 1))
def test_zero_noise_one_candidate(seed):
    rng = np.random.default_rng(seed)
    recs = records([f"{v:02d}" for v in range(20)])
    pose = Pose2(rng.uniform(0, 40), rng.uniform(-8, -3), rng.uniform(-1, 1))
    dets = [detect(r, pose, r.label) for r in recs]
    for r, cs in zip(recs, asc.pre_associate(dets, recs, pose, 2.0)):
        assert cs.slots == [r.key]


# ---------------------------------------------------------------- build_mixture


def test_build_mixture_weights():
    det = asc.SlotDetection(rect(0, 0), asc.SlotId.from_label("10"))
    slot_vars = {k: tuple(fx.point_id(4 * k + i) for i in range(4)) for k in range(3)}
    one = asc.build_mixture(asc.CandidateSet(0, [asc.Candidate(0, asc.EXACT_ID, 0.7)]), det, fx.pose_id(0), slot_vars)
    assert [c.weight for c in one.components] == [1.0]
    cs = asc.CandidateSet(0, [asc.Candidate(0, asc.EXACT_ID, 2.0), asc.Candidate(1, asc.PARTIAL_ID, 1.0),
                              asc.Candidate(2, asc.NEAREST_NEIGHBOR, 1.0)])
    mix = asc.build_mixture(cs, det, fx.pose_id(0), slot_vars)
    assert [c.weight for c in mix.components] == pytest.approx([0.5, 0.25, 0.25])
    assert np.array_equal(mix.measurement, det.corners)


def test_build_mixture_empty():
    det = asc.SlotDetection(rect(0, 0), asc.SlotId.from_label("10"))
    with pytest.raises(EmptyCandidates):
        asc.build_mixture(asc.CandidateSet(0, []), det, fx.pose_id(0), {})


# ---------------------------------------------------------------- lazy_add


def test_lazy_add_lifecycle():
    g = Graph()
    g.add_pose(0, [0, 0, 0], fixed=True)
    store = asc.ProvisionalStore(promotion_threshold=3)
    smap = asc.SlotMap(g)
    pose = Pose2(0, -5, 0)
    det = asc.SlotDetection(to_body_array(pose, rect(0, 0)), asc.SlotId((None, None), (0, 0)))

    p, promoted = asc.lazy_add(det, pose, store, smap, frame=0)
    assert p.sighting_count == 1 and p.temp_id == "t0" and promoted is None
    assert len(g.variables) == 1

    shifted = Pose2(0.5, -5, 0)
    p2, promoted = asc.lazy_add(det, shifted, store, smap, frame=1)
    assert p2 is p and p.sighting_count == 2 and len(store.pending) == 1 and promoted is None

    n_factors = len(g.factors)
    _, promoted = asc.lazy_add(det, pose, store, smap, frame=2)
    assert promoted is not None
    new_points = [v for v in g.variables if v.kind == fx.POINT]
    assert len(new_points) == 4
    added = g.factors[n_factors:]
    assert sum(isinstance(f, fx.RectAngleFactor) for f in added) == 4
    assert sum(isinstance(f, fx.RectDistanceFactor) for f in added) == 6
    assert store.pending == []


def test_lazy_add_far_detection_creates_new_entry():
    store = asc.ProvisionalStore()
    det = asc.SlotDetection(rect(0, 0), asc.SlotId((None, None), (0, 0)))
    asc.lazy_add(det, Pose2.identity(), store)
    p, _ = asc.lazy_add(det, Pose2(5, 0, 0), store)
    assert p.temp_id == "t1" and len(store.pending) == 2


# ---------------------------------------------------------------- resolve_ids


def test_resolve_majority_and_temp():
    labels = asc.resolve_ids({0: {"12": 4.0}, 1: {"39": 5.0, "38": 1.0}, 2: {}}, {0: "t0", 1: "t1", 2: "t2"})
    assert labels == {0: "12", 1: "39", 2: "t2"}


def test_resolve_tie_keeps_temp():
    assert asc.resolve_ids({0: {"12": 1.0, "13": 1.0}}, {0: "t0"}) == {0: "t0"}


def test_resolve_conflict_demotes_weaker():
    labels = asc.resolve_ids({0: {"40": 2.0}, 1: {"40": 5.0}}, {0: "t0", 1: "t1"})
    assert labels == {0: "t0", 1: "40"}


@given(st.dictionaries(st.integers(0, 30), st.dictionaries(st.sampled_from(["10", "11", "12", "13"]),
                                                           st.floats(0.01, 10), max_size=4), max_size=15))
def test_resolved_ids_unique(votes):
    temp = {k: f"t{k}" for k in votes}
    labels = asc.resolve_ids(votes, temp)
    real = [v for v in labels.values() if not v.startswith("t")]
    assert len(real) == len(set(real))
