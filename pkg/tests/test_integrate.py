"""Tests for the adaptive Euler-Maruyama engine."""

from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np
import pytest

from metastable.integrate import (
    PathEvent,
    StepPolicy,
    StopSpec,
    adaptive_dt,
    run_batch,
    run_until,
    step,
)
from metastable.model import PerturbationSpec, build_model_1d


@dataclass(frozen=True)
class FakeModel:
    """Minimal drift/diffusion carrier for unit tests of the stepper."""

    drift: Callable = field(default=lambda x: np.zeros_like(x))
    diffusion: Callable = field(default=lambda x: np.zeros_like(x))
    surfaces: Tuple[float, ...] = ()


def one_surface_model(alpha=1.0, beta=2.0):
    return build_model_1d([(0.0, alpha, beta)], bounds=(-1.0, 1.0), core_radius=0.25)


class TestStep:
    def test_null_dynamics(self):
        m = FakeModel()
        x = np.array([0.3, -0.7])
        out = step(x, m, None, 0.5, (np.array([1.0, -1.0]), None))
        assert np.array_equal(out, x)

    def test_pure_drift(self):
        m = FakeModel(drift=lambda x: np.ones_like(x))
        out = step(np.array([0.0]), m, None, 0.5, (np.zeros(1), None))
        assert out[0] == pytest.approx(0.5)

    def test_moment_matching(self):
        # a(x) = x^2, b(x) = 2x at x = 0.1: mean increment 0.2 dt,
        # std sqrt(2 * 0.01 * dt)
        m = FakeModel(drift=lambda x: 2 * x, diffusion=lambda x: x ** 2)
        n = 100_000
        dt = 1e-3
        rng = np.random.default_rng(0)
        x = np.full(n, 0.1)
        out = step(x, m, None, dt, (rng.standard_normal(n), None))
        inc = out - x
        want_mean = 0.2 * dt
        want_std = np.sqrt(2 * 0.01 * dt)
        assert abs(inc.mean() - want_mean) < 3 * want_std / np.sqrt(n)
        assert abs(inc.std() - want_std) / want_std < 0.02

    def test_perturbation_noise(self):
        m = FakeModel()
        pert = PerturbationSpec(0.1, tilde_diffusion=1.0)
        n = 50_000
        rng = np.random.default_rng(1)
        out = step(np.zeros(n), m, pert, 0.01, (np.zeros(n), rng.standard_normal(n)))
        want_std = 0.1 * np.sqrt(2 * 0.01)
        assert abs(out.std() - want_std) / want_std < 0.02

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            step(0.0, FakeModel(), None, 0.0, (0.0, None))


class TestAdaptiveDt:
    def test_far_from_surface_clamps_to_max(self):
        m = one_surface_model()
        policy = StepPolicy(dt_max=1e-2)
        assert adaptive_dt(0.7, m, None, policy) == pytest.approx(1e-2)

    def test_dt_halves_with_distance_when_drift_dominates(self):
        # drift-dominated balance: dt ~ theta^2 * m / |b|, so halving the
        # distance halves dt (within 20%)
        m = FakeModel(drift=lambda x: np.full_like(x, 50.0),
                      diffusion=lambda x: np.full_like(x, 1e-6),
                      surfaces=(0.0,))
        pert = PerturbationSpec(1e-4, tilde_diffusion=1e-4)
        policy = StepPolicy(dt_max=10.0)
        d1 = adaptive_dt(10 * 1e-4, m, pert, policy)
        d2 = adaptive_dt(5 * 1e-4, m, pert, policy)
        assert 0.4 < d2 / d1 < 0.6

    def test_dt_scale_free_in_quadratic_core(self):
        # inside a degenerate core a ~ dist^2, so dt barely changes when the
        # distance halves: the policy resolves the log-distance dynamics
        m = one_surface_model()
        pert = PerturbationSpec(1e-4)
        policy = StepPolicy(dt_max=10.0)
        d1 = adaptive_dt(10 * 1e-4, m, pert, policy)
        d2 = adaptive_dt(5 * 1e-4, m, pert, policy)
        assert 0.8 < d2 / d1 < 1.2

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            StepPolicy(theta_step=0.7)
        with pytest.raises(ValueError):
            StepPolicy(dt_min=1.0, dt_max=0.5)


class TestRunUntil:
    def test_immediate_event_on_layer(self):
        m = one_surface_model()
        stop = StopSpec(levels=(0.2,))
        event, elapsed, steps = run_until(0.2, m, None, stop, seed=3)
        assert event == PathEvent("hit_layer", 0, 0.0, 0.2)
        assert elapsed == 0.0 and steps == 0

    def test_band_exit_returns_a_layer(self):
        m = one_surface_model()
        stop = StopSpec(levels=(0.1, 0.4))
        event, elapsed, steps = run_until(0.2, m, None, stop, seed=4)
        assert event.kind == "hit_layer"
        assert event.position in (0.1, 0.4)
        assert elapsed > 0 and steps > 0

    def test_determinism(self):
        m = one_surface_model()
        stop = StopSpec(levels=(0.1, 0.4))
        a = run_until(0.2, m, None, stop, seed=5, path_index=7)
        b = run_until(0.2, m, None, stop, seed=5, path_index=7)
        assert a == b

    def test_timeout_event(self):
        m = one_surface_model()
        stop = StopSpec(levels=(0.9,), max_time=1e-4)
        event, elapsed, _ = run_until(0.2, m, None, stop, seed=6)
        assert event.kind == "time_out"
        assert elapsed >= 1e-4


class TestRunBatch:
    def test_worker_count_invariance(self):
        m = one_surface_model()
        stop = StopSpec(levels=(0.1, 0.4))
        starts = np.full(10000, 0.2)
        a = run_batch(starts, m, None, stop, seed=7, workers=1)
        b = run_batch(starts, m, None, stop, seed=7, workers=8)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_unperturbed_never_hits_surface(self):
        m = one_surface_model()
        stop = StopSpec(levels=(0.4,), surfaces=(0.0,))
        starts = np.full(2000, 0.05)
        codes, _, _, _ = run_batch(starts, m, None, stop, seed=8)
        assert np.all(codes == 0)  # every path reached the layer, none the surface

    def test_martingale_at_layer_crossings(self):
        # for the exact-core (1,2) model, Z^gamma with gamma = -1 is a
        # martingale: E[Z_exit^-1] must equal zeta^-1 up to MC and crossing
        # bias at small theta_step
        m = one_surface_model()
        zeta, k1, k2 = 0.2, 0.1, 0.4
        n = 20000
        stop = StopSpec(levels=(k1, k2))
        policy = StepPolicy(theta_step=0.04)
        codes, _, pos, _ = run_batch(np.full(n, zeta), m, None, stop, seed=9,
                                     policy=policy)
        vals = pos ** -1.0
        se = vals.std() / np.sqrt(n)
        assert abs(vals.mean() - 1 / zeta) < 3 * se + 0.5

    def test_perturbed_surface_hit_possible(self):
        m = one_surface_model()
        pert = PerturbationSpec(1e-3)
        stop = StopSpec(levels=(0.4,), surfaces=(0.0,))
        starts = np.full(4000, 20 * 1e-3)
        codes, _, _, _ = run_batch(starts, m, pert, stop, seed=10)
        n_surface = int(np.sum(codes == 1))
        assert n_surface > 0
        assert np.all(codes >= 0)
