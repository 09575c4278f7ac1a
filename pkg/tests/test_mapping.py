import math

import numpy as np
import pytest

from parkslam.evaluation import id_accuracy, landmark_errors, landmark_rmse
from parkslam.factors import MaxMixtureFactor, TagObservationFactor
from parkslam.mapping import SlotMapper, dataset_tag_estimates
from parkslam.simulator import IdInjection, LotSpec, simulate

SMALL = LotSpec(slots_per_row=6, free_zone_length=20.0, n_tags=20)


@pytest.fixture(scope="module")
def noiseless():
    return simulate(SMALL, "zero", 7)


@pytest.fixture(scope="module")
def swapped():
    # slot 13 first read as its neighbour 12
    return simulate(SMALL, "default", 3, injections=[IdInjection(13, 12, 1)])


@pytest.fixture(scope="module")
def robust_fit(swapped):
    return SlotMapper(robust=True).fit(swapped)


def test_noiseless_map_is_exact(noiseless):
    m = SlotMapper().fit(noiseless)
    assert landmark_errors(m.map_, noiseless.lot).max() < 1e-6
    assert id_accuracy(m.map_, noiseless.lot) == 1.0
    assert m.result_.final_chi2 < 1e-12
    assert len(m.map_.slots) == SMALL.n_slots
    assert {t.tag_id for t in m.map_.tags} <= {t.tag_id for t in noiseless.lot.tags}


def test_report_fields(noiseless):
    rep = SlotMapper().fit(noiseless).report_
    assert rep.landmark_rmse < 1e-6
    assert rep.id_accuracy == 1.0
    assert rep.association_precision == 1.0
    assert rep.chi2_final < 1e-12


def test_robust_resolves_injected_swap(robust_fit, swapped):
    smap = robust_fit.map_
    assert id_accuracy(smap, swapped.lot) == 1.0
    assert landmark_rmse(smap, swapped.lot) < 0.1
    for sid in (12, 13):
        truth = swapped.lot.slot_by_id(sid).centroid
        assert np.linalg.norm(smap.slot(str(sid)).centroid - truth) < 0.2


def test_robust_active_components_are_true_slots(robust_fit):
    assert robust_fit.report_.association_precision == 1.0
    mixes = [i for i, f in enumerate(robust_fit.graph_.factors) if isinstance(f, MaxMixtureFactor)]
    assert mixes and set(mixes) <= set(robust_fit.result_.active_components)


def test_naive_misplaces_swapped_slot(robust_fit, swapped):
    naive = SlotMapper(robust=False).fit(swapped)
    gap = landmark_rmse(naive.map_, swapped.lot) - landmark_rmse(robust_fit.map_, swapped.lot)
    assert gap >= 1.0
    assert id_accuracy(naive.map_, swapped.lot) < 1.0


def test_fit_is_deterministic(noiseless):
    a = SlotMapper().fit(noiseless).map_
    b = SlotMapper().fit(noiseless).map_
    assert a == b


def test_transform_and_fit_transform(noiseless):
    m = SlotMapper()
    with pytest.raises(AttributeError):
        m.transform()
    smap = m.fit_transform(noiseless)
    assert m.transform(noiseless) is smap


@pytest.mark.parametrize("kwargs", [
    {"optimize_every": 0},
    {"odom_sigma": (0.1, 0.1)},
    {"high_confidence": 1.5},
])
def test_bad_params(noiseless, kwargs):
    with pytest.raises(ValueError):
        SlotMapper(**kwargs).fit(noiseless)


def test_get_params_round_trip():
    m = SlotMapper(robust=False, match_radius=0.7)
    clone = SlotMapper(**m.get_params())
    assert clone.get_params() == m.get_params()


def _tag_factor_ranges(mapper, dataset):
    truth = {t.tag_id: np.asarray(t.position, dtype=float)[:2] for t in dataset.lot.tags}
    out = []
    for f in mapper.graph_.factors:
        if isinstance(f, TagObservationFactor):
            k = f.variables[0].index
            p = dataset.frames[k].ground_truth_pose
            out.append(math.hypot(*(truth[f.tag_id] - (p.x, p.y))))
    return np.array(out)


def test_range_gate_noiseless_audit(noiseless):
    for max_range in (8.0, 20.0):
        m = SlotMapper(tag_max_range=max_range).fit(noiseless)
        ranges = _tag_factor_ranges(m, noiseless)
        assert len(ranges) == m.n_tag_factors_ > 0
        assert ranges.max() < max_range
        truth = {t.tag_id: np.asarray(t.position, dtype=float)[:2] for t in noiseless.lot.tags}
        expected = sum(
            1
            for fr in noiseless.frames
            for d in fr.tag_detections
            if math.hypot(*(truth[d.tag_id] - (fr.ground_truth_pose.x, fr.ground_truth_pose.y))) < max_range
        )
        assert m.n_tag_factors_ == expected


def test_range_gate_counts_match_pnp_distance(swapped):
    m = SlotMapper(tag_max_range=12.0).fit(swapped)
    ests = dataset_tag_estimates(swapped.frames, swapped.camera, swapped.tag_side,
                                 m.tag_validation_tol, math.inf)
    assert m.n_tag_factors_ == sum(e.d < 12.0 for fr in ests for e in fr)


def test_shrinking_range_never_adds_factors(noiseless):
    counts = [SlotMapper(tag_max_range=r).fit(noiseless).n_tag_factors_ for r in (4.0, 10.0, 20.0)]
    assert counts == sorted(counts)
