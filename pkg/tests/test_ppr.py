import math

import numpy as np
import pytest
from _oracles import stair_counters

from binsense.errors import BinsenseError
from binsense.geometry import Bounds, SensorField, Vec2, sample_field
from binsense.observe import CounterField
from binsense.ppr import (
    KernelConfig,
    StairTemplate,
    circular_mean,
    estimate_velocity_ppr,
    fit_direction,
    fit_speed,
    fit_stair_template,
    kernel_smooth,
    monotone_envelope,
    resolve_ties,
)
from binsense.svm import PPR


@pytest.fixture(scope="module")
def dense_field():
    return sample_field(400, (0, 0, 100, 100), 17)


def _angle_error(estimate: Vec2, truth) -> float:
    truth = np.asarray(truth, dtype=float)
    truth = truth / np.linalg.norm(truth)
    return math.acos(min(1.0, estimate.dot(Vec2(*truth))))


def test_kernel_smooth_examples():
    cfg = KernelConfig(1.5)
    assert kernel_smooth([0.0], [3.0], 42.0, cfg) == pytest.approx(3.0)
    assert kernel_smooth([0.0, 1.0], [2.0, 4.0], 1000.0, cfg) == pytest.approx(4.0)
    assert kernel_smooth([0.0, 1.0, 5.0], [7.0, 7.0, 7.0], 2.3, cfg) == pytest.approx(7.0)
    assert kernel_smooth([0.0, 1.0], [0.0, 10.0], 0.5, cfg) == pytest.approx(5.0)
    epan = KernelConfig(1.5, "epanechnikov")
    assert kernel_smooth([0.0, 1.0], [0.0, 10.0], 0.5, epan) == pytest.approx(5.0)


def test_kernel_smooth_stays_within_data_range():
    rng = np.random.default_rng(0)
    proj = rng.uniform(0, 10, 30)
    counts = rng.integers(0, 8, 30).astype(float)
    for u in np.linspace(-2, 12, 15):
        value = kernel_smooth(proj, counts, float(u), KernelConfig(0.8))
        assert counts.min() - 1e-12 <= value <= counts.max() + 1e-12


def test_kernel_smooth_without_local_mass():
    with pytest.raises(BinsenseError, match="no local mass"):
        kernel_smooth([0.0], [1.0], 5.0, KernelConfig(1.0, "epanechnikov"))
    with pytest.raises(BinsenseError):
        kernel_smooth([], [], 0.0, KernelConfig(1.0))
    with pytest.raises(BinsenseError):
        KernelConfig(0.0)


def test_default_bandwidth():
    field = sample_field(25, (0, 0, 30, 40), 1)
    assert KernelConfig.default_for(field).h == pytest.approx(10.0)


def test_monotone_envelope_examples():
    np.testing.assert_array_equal(monotone_envelope([1, 0.5, 2]), [1, 1, 2])
    np.testing.assert_array_equal(monotone_envelope([3, 2, 1]), [3, 3, 3])
    np.testing.assert_array_equal(monotone_envelope([0, 1, 1, 4]), [0, 1, 1, 4])
    with pytest.raises(BinsenseError):
        monotone_envelope([])


def test_monotone_envelope_idempotent_and_order_preserving():
    rng = np.random.default_rng(2)
    a = rng.normal(size=50)
    b = a + rng.uniform(0, 1, 50)
    env_a, env_b = monotone_envelope(a), monotone_envelope(b)
    np.testing.assert_array_equal(monotone_envelope(env_a), env_a)
    assert np.all(np.diff(env_a) >= 0)
    assert np.all(env_a <= env_b)


def test_resolve_ties_uses_circular_mean():
    angle, n = resolve_ties([0.0, math.pi / 2, 1.0], [2.0, 2.0, 3.0])
    assert n == 2
    assert angle == pytest.approx(math.pi / 4)
    angle, n = resolve_ties([0.0, 1.0], [2.0, 1.0])
    assert (angle, n) == (1.0, 1)
    assert circular_mean([0.1, 0.3]) == pytest.approx(0.2)
    # Antipodal ties have no mean; the first angle is kept
    assert circular_mean([0.0, math.pi]) == 0.0


def test_fit_direction_recovers_oblique_heading(dense_field):
    counts = stair_counters(dense_field.positions, (1, 2), 4.0, 40, 0.0)
    estimate = fit_direction(dense_field, CounterField(counts, 40), grid=90)
    assert _angle_error(estimate, (1, 2)) <= 2 * math.pi / 90


def test_fit_direction_recovers_due_east(dense_field):
    counts = stair_counters(dense_field.positions, (1, 0), 4.0, 40, 0.0)
    estimate = fit_direction(dense_field, CounterField(counts, 40), grid=90)
    assert _angle_error(estimate, (1, 0)) <= 2 * math.pi / 90


def test_fit_direction_is_deterministic(dense_field):
    counters = CounterField(stair_counters(dense_field.positions, (1, 2), 4.0, 40, 0.0), 40)
    assert fit_direction(dense_field, counters, grid=36) == fit_direction(dense_field, counters, grid=36)


def test_fit_direction_rejects_bad_input(dense_field):
    counters = CounterField(stair_counters(dense_field.positions, (1, 0), 4.0, 40, 0.0), 40)
    with pytest.raises(BinsenseError):
        fit_direction(dense_field, counters, grid=4)
    with pytest.raises(BinsenseError, match="no gradient"):
        fit_direction(dense_field, CounterField(np.full(len(dense_field), 2), 5))


def test_stair_template_evaluation():
    template = StairTemplate(offset=10.0, step_width=2.0, levels=3)
    np.testing.assert_array_equal(template([5.0, 10.0, 11.9, 12.0, 15.0, 30.0]), [0, 1, 1, 2, 3, 3])
    with pytest.raises(BinsenseError):
        StairTemplate(0.0, 0.0, 3)


def test_stair_template_recovers_step_width(dense_field):
    counts = stair_counters(dense_field.positions, (1, 0), 2.0, 40, 10.0)
    template = fit_stair_template(dense_field, CounterField(counts, 40), Vec2(1.0, 0.0))
    assert template.step_width == pytest.approx(2.0, abs=0.05)
    assert template.flags == ()


def test_stair_template_scales_with_field(dense_field):
    base = fit_stair_template(
        dense_field,
        CounterField(stair_counters(dense_field.positions, (1, 0), 2.0, 40, 10.0), 40),
        Vec2(1.0, 0.0),
    )
    stretched = SensorField(dense_field.positions * 2, Bounds(0, 0, 200, 200))
    scaled = fit_stair_template(
        stretched,
        CounterField(stair_counters(stretched.positions, (1, 0), 4.0, 40, 20.0), 40),
        Vec2(1.0, 0.0),
    )
    assert scaled.step_width / base.step_width == pytest.approx(2.0, rel=0.03)


def test_single_step_field_is_unidentifiable(dense_field):
    counts = (dense_field.positions[:, 0] >= 50.0).astype(int)
    template = fit_stair_template(dense_field, CounterField(counts, 1), Vec2(1.0, 0.0))
    behind = dense_field.positions[counts == 0, 0]
    assert "unidentifiable" in template.flags
    assert template.step_width >= behind.max() - behind.min()


def test_fit_speed_divides_by_period(dense_field):
    counters = CounterField(stair_counters(dense_field.positions, (1, 0), 2.0, 40, 10.0), 40)
    per_period = fit_speed(dense_field, counters, Vec2(1.0, 0.0), 1.0)
    assert fit_speed(dense_field, counters, Vec2(1.0, 0.0), 2.0) == pytest.approx(per_period / 2)
    with pytest.raises(BinsenseError):
        fit_speed(dense_field, counters, Vec2(1.0, 0.0), 0.0)


def test_estimate_velocity_ppr(dense_field):
    counters = CounterField(stair_counters(dense_field.positions, (1, 0), 2.0, 40, 10.0), 40)
    est = estimate_velocity_ppr(dense_field, counters, grid=72)
    assert est.method == PPR
    assert _angle_error(est.direction, (1, 0)) <= 2 * math.pi / 72
    assert est.speed == pytest.approx(2.0, rel=0.05)
