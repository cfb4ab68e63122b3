import math

import numpy as np
import pytest

from binsense.errors import BinsenseError
from binsense.geometry import (
    Bounds,
    ConstantAcceleration,
    ConstantVelocity,
    GaussianRandomWalk,
    MultiLeg,
    SensorField,
    TargetState,
    Vec2,
    cv_transition,
    sample_field,
    sample_times,
    simulate_truth,
)
from binsense.observe import (
    CounterField,
    SignReport,
    Snapshot,
    apply_flip_noise,
    convex_hull,
    feasible_slab,
    hulls_intersect,
    observe_run,
    point_in_hull,
    segments_intersect,
    separability_check,
    sign_at,
    snapshot,
    update_counters,
)


@pytest.fixture
def moving_east():
    return TargetState(Vec2(0.0, 0.0), Vec2(1.0, 0.0), 0.0)


def test_sign_at_ahead_behind_and_tie(moving_east):
    assert sign_at(Vec2(5.0, 0.0), moving_east) == 1
    assert sign_at(Vec2(-5.0, 3.0), moving_east) == -1
    # Sensor abeam of the target: range rate zero, reported as -1
    assert sign_at(Vec2(0.0, 5.0), moving_east) == -1


def test_sign_undefined_for_stationary_target():
    still = TargetState(Vec2(1.0, 1.0), Vec2(0.0, 0.0), 0.0)
    with pytest.raises(BinsenseError):
        sign_at(Vec2(0.0, 0.0), still)


def test_snapshot_matches_per_sensor_sign():
    field = sample_field(40, (0, 0, 100, 100), 1)
    target = TargetState(Vec2(50.0, 40.0), Vec2(1.0, 2.0), 3.0)
    snap = snapshot(field, target)
    assert snap.time == 3.0
    assert [r.sign for r in snap] == [sign_at(field.sensor(i), target) for i in range(len(field))]
    assert isinstance(snap[0], SignReport)
    assert snap[-1].sensor_index == len(field) - 1


def test_snapshot_from_reports_checks_coverage():
    reports = [SignReport(1, 2.0, -1), SignReport(0, 2.0, 1)]
    snap = Snapshot.from_reports(reports)
    assert list(snap.signs) == [1, -1]
    assert snap.has_both_signs
    with pytest.raises(BinsenseError):
        Snapshot.from_reports([SignReport(0, 2.0, 1), SignReport(2, 2.0, 1)])
    with pytest.raises(BinsenseError):
        Snapshot.from_reports([SignReport(0, 1.0, 1), SignReport(1, 2.0, 1)])
    with pytest.raises(BinsenseError):
        SignReport(0, 0.0, 0)


def test_flip_noise():
    snap = Snapshot(0.0, np.ones(10_000))
    rng = np.random.default_rng(0)
    assert np.array_equal(apply_flip_noise(snap, 1.0, rng).signs, snap.signs)
    flipped = np.mean(apply_flip_noise(snap, 0.8, rng).signs < 0)
    assert 0.17 < flipped < 0.23
    # 3 sigma of a fair coin over 10_000 signs
    halved = np.mean(apply_flip_noise(snap, 0.5, rng).signs < 0)
    assert 0.485 < halved < 0.515
    for p in (0.0, 1.5):
        with pytest.raises(BinsenseError):
            apply_flip_noise(snap, p, rng)


def test_counters_accumulate_plus_reports():
    counters = CounterField.empty(3)
    counters = update_counters(counters, Snapshot(0.0, [1, -1, 1]))
    counters = update_counters(counters, Snapshot(1.0, [1, 1, -1]))
    assert list(counters.counts) == [2, 1, 1]
    assert counters.periods_elapsed == 2
    with pytest.raises(BinsenseError):
        update_counters(counters, Snapshot(2.0, [1, 1]))
    with pytest.raises(BinsenseError):
        CounterField(np.array([3, 0]), 2)


def _cv_run(n=150, seed=2):
    field = sample_field(n, (0, 0, 100, 100), seed)
    model = ConstantVelocity((20.0, 10.0), (1.0, 2.0))
    truth = simulate_truth(model, sample_times(35))
    return field, model, truth


def test_observe_run_counters_bounded_and_increasing_along_motion():
    field, model, truth = _cv_run()
    snapshots, counters = observe_run(field, truth)
    assert len(snapshots) == 35
    assert counters.periods_elapsed == 35
    assert counters.counts.max() <= 35
    proj = field.project(model.v.normalized())
    order = np.argsort(proj)
    assert np.all(np.diff(counters.counts[order]) >= 0)


def test_observe_run_is_deterministic_with_noise():
    field, _, truth = _cv_run()
    a, ca = observe_run(field, truth, 0.9, np.random.default_rng(4))
    b, cb = observe_run(field, truth, 0.9, np.random.default_rng(4))
    assert all(np.array_equal(x.signs, y.signs) for x, y in zip(a, b))
    assert np.array_equal(ca.counts, cb.counts)


def test_feasible_slab_contains_true_projection_every_period():
    field, model, truth = _cv_run()
    snapshots, _ = observe_run(field, truth)
    direction = model.v.normalized()
    for state, snap in zip(truth, snapshots):
        slab = feasible_slab(field, snap, direction)
        value = state.position.dot(direction)
        if slab.bounded:
            assert slab.contains(value)
        else:
            assert slab.lower < value < slab.upper


def test_feasible_slab_single_sign_is_unbounded():
    field = SensorField(np.array([[5.0, 0.0], [6.0, 1.0], [7.0, -1.0]]), Bounds(-10, -10, 10, 10))
    snap = snapshot(field, TargetState(Vec2(0.0, 0.0), Vec2(1.0, 0.0), 0.0))
    slab = feasible_slab(field, snap, Vec2(1.0, 0.0))
    assert slab.lower == -math.inf
    assert slab.upper == 5.0
    assert slab.flags == ("slab_unbounded",)


def test_convex_hull_drops_interior_and_collinear_points():
    hull = convex_hull(np.array([[0, 0], [2, 0], [1, 0], [2, 2], [0, 2], [1, 1]]))
    assert hull == [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)]
    assert convex_hull(np.array([[1, 1], [1, 1]])) == [(1.0, 1.0)]
    assert convex_hull(np.array([[0, 0], [1, 1], [2, 2]])) == [(0.0, 0.0), (2.0, 2.0)]


def test_hull_membership_is_closed():
    square = [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)]
    assert point_in_hull((1.0, 0.0), square)
    assert point_in_hull((1.0, 1.0), square)
    assert not point_in_hull((3.0, 3.0), square)
    assert point_in_hull((1.0, 1.0), [(0.0, 0.0), (2.0, 2.0)])
    assert not point_in_hull((1.0, 0.0), [(0.0, 0.0), (2.0, 2.0)])


def test_segments_and_hull_intersection():
    assert segments_intersect((0, 0), (2, 2), (0, 2), (2, 0))
    assert segments_intersect((0, 0), (1, 0), (1, 0), (2, 5))
    assert not segments_intersect((0, 0), (1, 0), (0, 1), (1, 1))
    square = [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)]
    assert hulls_intersect(square, [(1.0, -1.0), (1.0, 3.0)])
    assert hulls_intersect(square, [(2.0, 1.0)])
    assert not hulls_intersect(square, [(3.0, 0.0), (3.0, 2.0)])
    assert not hulls_intersect(square, [])


def test_separability_noiseless_snapshots():
    rng = np.random.default_rng(9)
    for _ in range(50):
        field = sample_field(int(rng.integers(10, 120)), (0, 0, 100, 100), rng)
        target = TargetState(
            Vec2(*rng.uniform(0, 100, 2)), Vec2(*rng.normal(size=2)), float(rng.uniform(0, 10))
        )
        report = separability_check(field, snapshot(field, target), target)
        assert report.hulls_disjoint
        assert report.target_excluded


@pytest.mark.parametrize(
    "model",
    [
        ConstantVelocity((10.0, 20.0), (1.5, 0.5)),
        MultiLeg((10.0, 10.0), [((2.0, 0.0), 5.0), ((0.0, 2.0), 10.0), ((-1.0, 1.0), 20.0)]),
        ConstantAcceleration((10.0, 10.0), (1.0, 0.5), (0.1, 0.2)),
        GaussianRandomWalk((50.0, 50.0), (1.0, 1.0), cv_transition(1.0), np.diag([0.0, 0.0, 0.02, 0.02])),
    ],
    ids=["constant_velocity", "multi_leg", "constant_acceleration", "random_walk"],
)
def test_separability_holds_along_every_motion_model(model):
    field = sample_field(80, (0, 0, 100, 100), 4)
    for target in simulate_truth(model, sample_times(20), np.random.default_rng(3)):
        report = separability_check(field, snapshot(field, target), target)
        assert report.hulls_disjoint
        assert report.target_excluded


def test_separability_detects_overlap():
    field = SensorField(np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [1.0, -1.0]]), Bounds(-5, -5, 5, 5))
    mixed = Snapshot(0.0, [1, 1, -1, -1])
    report = separability_check(field, mixed)
    assert not report.hulls_disjoint
    assert report.target_excluded is None
