from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from squashloc.geometry import MicArray, Microphone, plane_offset
from squashloc.localize import (
    EventGroup,
    LocalizationError,
    LocalizerOptions,
    SingularGeometryError,
    event_time,
    event_time_star,
    grad_f,
    localize_3d,
    localize_many,
    localize_on_plane,
    objective_f,
    objective_f_pairwise,
)
from squashloc.simulate import SyntheticEvent, arrival_samples, forward_delays


def random_instance(rng, array, court):
    pos = rng.uniform(0, 1, 3) * court.extent
    truth = rng.uniform(0, 1, 3) * court.extent
    arrivals = arrival_samples(truth, 0.01, array) + rng.normal(0, 20, len(array))
    return pos, EventGroup(dict(enumerate(arrivals)))


def g_direct(t0, pos, group, array):
    """Negative log-likelihood in the reference delay, written out term by term."""
    c = array.speed_of_sound
    ref = min(group.detections.values())
    total = np.zeros_like(np.asarray(t0, dtype=float))
    for ch, s in group.detections.items():
        mic = array.mics[ch]
        tau_hat = (s - ref) / array.sample_rate
        r = np.linalg.norm(pos - mic.position)
        total += (c * tau_hat + c * t0 - r) ** 2 / (2 * mic.sigma**2 * c**2)
    return total


class TestEventGroup:
    def test_reference_is_earliest(self):
        g = EventGroup({3: 10.0, 0: 12.0, 5: 9.5})
        assert g.reference_channel == 5 and g.channels == [0, 3, 5] and g.spread == 2.5

    def test_empty(self):
        with pytest.raises(ValueError):
            EventGroup({})


class TestClosedForm:
    def test_grid_oracle_for_t0(self, rng, array, court):
        for _ in range(20):
            pos, group = random_instance(rng, array, court)
            coarse = np.arange(-0.05, 0.05, 1e-5)
            best = coarse[np.argmin(g_direct(coarse, pos, group, array))]
            step = 1e-8
            fine = best + np.arange(-2000, 2001) * step
            best = fine[np.argmin(g_direct(fine, pos, group, array))]
            assert abs(best - event_time_star(pos, group, array)) <= step

    def test_f_is_min_over_t0(self, rng, array, court):
        for _ in range(20):
            pos, group = random_instance(rng, array, court)
            res = minimize_scalar(lambda t: g_direct(t, pos, group, array),
                                  bracket=(-0.1, 0.1), tol=1e-14)
            assert objective_f(pos, group, array) == pytest.approx(res.fun, rel=1e-7)

    def test_stationary_in_t0(self, rng, array, court):
        pos, group = random_instance(rng, array, court)
        t = event_time_star(pos, group, array)
        h = 1e-9
        deriv = (g_direct(t + h, pos, group, array) - g_direct(t - h, pos, group, array)) / (2 * h)
        scale = (g_direct(t + 1e-6, pos, group, array) - g_direct(t, pos, group, array)) / 1e-6
        assert abs(deriv) <= 1e-9 * max(1.0, abs(scale) * 1e6)

    def test_single_microphone(self, array):
        pos = np.array([2.0, 3.0, 1.0])
        group = EventGroup({2: 5000.0})
        r0 = np.linalg.norm(pos - array.mics[2].position)
        assert event_time_star(pos, group, array) == pytest.approx(r0 / 343.0, rel=1e-14)
        assert objective_f(pos, group, array) == pytest.approx(0.0, abs=1e-20)

    def test_zero_at_truth_and_event_time(self, array):
        ev = SyntheticEvent((1.0, 4.0, 2.0), time=0.731)
        group = forward_delays(ev, array)
        assert objective_f(ev.position, group, array) <= 1e-12
        assert event_time(ev.position, group, array) == pytest.approx(0.731, abs=1e-12)

    def test_pairwise_form_agrees(self, rng, array, court):
        for _ in range(200):
            pos, group = random_instance(rng, array, court)
            a = objective_f(pos, group, array)
            b = objective_f_pairwise(pos, group, array)
            assert a == pytest.approx(b, rel=1e-9)

    def test_sigma_scaling(self, rng, array, court):
        pos, group = random_instance(rng, array, court)
        lam = 3.7
        scaled = MicArray(tuple(Microphone(m.id, m.position, m.kind, m.sigma * lam) for m in array.mics),
                          array.speed_of_sound, array.sample_rate)
        assert objective_f(pos, group, scaled) == pytest.approx(objective_f(pos, group, array) / lam**2,
                                                                rel=1e-12)

    def test_translation_consistency(self, rng, array, court):
        pos, group = random_instance(rng, array, court)
        shifted = EventGroup({c: s + 12345.25 for c, s in group.detections.items()})
        assert objective_f(pos, shifted, array) == pytest.approx(objective_f(pos, group, array), rel=1e-9)
        dt = event_time(pos, shifted, array) - event_time(pos, group, array)
        assert dt == pytest.approx(12345.25 / array.sample_rate, rel=1e-9)


class TestGradient:
    def test_matches_central_differences(self, rng, array, court):
        h = 1e-5
        for _ in range(100):
            pos, group = random_instance(rng, array, court)
            g = grad_f(pos, group, array)
            fd = np.array([(objective_f(pos + h * e, group, array) - objective_f(pos - h * e, group, array))
                           / (2 * h) for e in np.eye(3)])
            assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)

    def test_vanishes_at_truth(self, array):
        ev = SyntheticEvent((4.0, 2.5, 1.2), 0.0)
        assert np.linalg.norm(grad_f(ev.position, forward_delays(ev, array), array)) <= 1e-8

    def test_points_uphill_from_minimizer(self, array):
        ev = SyntheticEvent((3.0, 5.0, 2.0), 0.0)
        group = forward_delays(ev, array)
        assert grad_f(ev.position + [1e-3, 0, 0], group, array)[0] > 0

    def test_singular_at_microphone(self, array):
        group = EventGroup({0: 0.0, 1: 10.0, 2: 20.0, 3: 30.0})
        with pytest.raises(SingularGeometryError):
            grad_f(array.mics[1].position + [0, 0, 5e-4], group, array)


class TestLocalize3d:
    def test_fig2_point(self, array, court):
        truth = np.array([court.width - 0.5, 0.0, 3.0])
        loc = localize_3d(forward_delays(SyntheticEvent(truth, 0.25), array), array, court)
        assert np.linalg.norm(loc.position - truth) <= 1e-3
        assert loc.event_time == pytest.approx(0.25, abs=1e-6)
        assert loc.residual >= 0 and loc.constrained_plane is None

    def test_round_trip_random(self, rng, array, court):
        for _ in range(30):
            truth = rng.uniform(0, 1, 3) * court.extent
            loc = localize_3d(forward_delays(SyntheticEvent(truth, 0.0), array), array, court)
            assert np.linalg.norm(loc.position - truth) <= 1e-3

    def test_local_grid_optimality(self, rng, array, court):
        truth = np.array([2.0, 6.0, 1.5])
        arrivals = arrival_samples(truth, 0.0, array) + rng.normal(0, 10, 6)
        group = EventGroup(dict(enumerate(arrivals)))
        loc = localize_3d(group, array, court)
        f0 = objective_f(loc.position, group, array)
        offsets = np.linspace(-0.1, 0.1, 5)
        for dx in offsets:
            for dy in offsets:
                for dz in offsets:
                    assert f0 <= objective_f(loc.position + [dx, dy, dz], group, array) + 1e-15

    def test_translation_invariant_minimizer(self, rng, array, court):
        arrivals = arrival_samples([1, 2, 3], 0.0, array) + rng.normal(0, 10, 6)
        a = localize_3d(EventGroup(dict(enumerate(arrivals))), array, court)
        b = localize_3d(EventGroup(dict(enumerate(arrivals + 500.0))), array, court)
        assert np.allclose(a.position, b.position, atol=1e-9)
        assert a.residual == pytest.approx(b.residual, rel=1e-6)

    def test_needs_four(self, array, court):
        with pytest.raises(ValueError):
            localize_3d(EventGroup({0: 1.0, 1: 2.0, 2: 3.0}), array, court)

    def test_no_admissible_start(self, array, court):
        opts = LocalizerOptions(max_iters=0, starts=((50.0, 50.0, 50.0),))
        with pytest.raises(LocalizationError) as info:
            localize_3d(forward_delays(SyntheticEvent((1, 1, 1), 0.0), array), array, court, opts)
        assert np.isfinite(info.value.best_residual)

    def test_many_matches_single(self, rng, array, court):
        truths = rng.uniform(0, 1, (8, 3)) * court.extent
        arrivals = np.stack([arrival_samples(t, 0.0, array) for t in truths]) + rng.normal(0, 10, (8, 6))
        pos, res = localize_many(arrivals, array, court)
        for row, p, r in zip(arrivals, pos, res):
            one = localize_3d(EventGroup(dict(enumerate(row))), array, court)
            assert np.allclose(one.position, p, atol=1e-9)
            assert one.residual == pytest.approx(r, rel=1e-9, abs=1e-15)


class TestPlane:
    @pytest.fixture
    def wall_event(self, court):
        return SyntheticEvent((2.3, 0.0, 1.7), 0.1, "front_wall")

    def test_three_channels(self, array, court, wall_event):
        plane = court.surface("front_wall")
        group = forward_delays(wall_event, array, channels=[0, 3, 5])
        loc = localize_on_plane(group, array, plane, court)
        assert np.linalg.norm(loc.position - wall_event.position) <= 1e-3
        assert loc.constrained_plane is plane and plane_offset(loc.position, plane) == pytest.approx(0, abs=1e-12)

    def test_agrees_with_3d(self, rng, array, court, wall_event):
        plane = court.surface("front_wall")
        arrivals = arrival_samples(wall_event.position, 0.0, array) + rng.normal(0, 10, 6)
        group = EventGroup(dict(enumerate(arrivals)))
        a = localize_on_plane(group, array, plane, court).position
        b = localize_3d(group, array, court).position
        assert np.linalg.norm(a - b) < 0.1

    def test_off_plane_event(self, array, court):
        plane = court.surface("front_wall")
        group = forward_delays(SyntheticEvent((3.0, 1.0, 2.0), 0.0), array)
        on = localize_on_plane(group, array, plane, court)
        free = localize_3d(group, array, court)
        assert plane_offset(on.position, plane) == pytest.approx(0.0, abs=1e-12)
        assert on.residual > free.residual

    def test_needs_three(self, array, court):
        with pytest.raises(ValueError):
            localize_on_plane(EventGroup({0: 1.0, 1: 2.0}), array, court.surface("floor"), court)

    @pytest.mark.parametrize("surface", ["floor", "back_glass", "right_wall"])
    def test_other_surfaces(self, rng, array, court, surface):
        plane = court.surface(surface)
        truth = plane.project(rng.uniform(0.3, 0.7, 3) * court.extent)
        loc = localize_on_plane(forward_delays(SyntheticEvent(truth, 0.0), array), array, plane, court)
        assert np.linalg.norm(loc.position - truth) <= 1e-3
