import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telearm import dmp
from telearm.dmp import (
    Demonstration,
    DmpDof,
    DmpSpace,
    InsufficientDataError,
    ParameterError,
    canonical_phase,
    fit,
    forcing_term,
    model_from_json,
    model_to_json,
    rollout,
)

from oracles import integrate_dmp_oracle


def straight_line_demo(start=0.0, end=0.5, duration=2.0, dt=0.01):
    """A taught straight-line reach: spatially straight, rest-to-rest timing."""
    return Demonstration(positions=dmp.minimum_jerk([start], [end], duration, dt), dt=dt)


def ramp_demo(start=0.0, end=0.5, duration=2.0, dt=0.01):
    n = int(round(duration / dt)) + 1
    return Demonstration(positions=np.linspace(start, end, n)[:, None], dt=dt)


class TestCanonicalPhase:
    def test_starts_at_one(self):
        assert canonical_phase(0.0, tau=2.0, alpha_x=8.333) == 1.0

    def test_closed_form_at_tau(self):
        assert canonical_phase(2.0, tau=2.0, alpha_x=1.0) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_decays_below_1e30_after_ten_taus(self):
        assert canonical_phase(20.0, tau=2.0, alpha_x=8.333) < 1e-30

    def test_strictly_decreasing(self):
        t = np.linspace(0, 5, 400)
        x = canonical_phase(t, tau=2.0, alpha_x=25.0 / 3.0)
        assert np.all(np.diff(x) < 0)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ParameterError):
            canonical_phase(1.0, tau=0.0, alpha_x=1.0)
        with pytest.raises(ParameterError):
            canonical_phase(1.0, tau=1.0, alpha_x=-2.0)


class TestForcingTerm:
    def _dof(self, weights):
        centers, widths = dmp.default_centers_widths(len(weights), alpha_x=25.0 / 3.0)
        return DmpDof(weights=np.array(weights, dtype=float), centers=centers, widths=widths, y0=0.0, g=1.0)

    def test_zero_weights_give_zero(self):
        dof = self._dof(np.zeros(8))
        for x in (1.0, 0.5, 0.01):
            assert forcing_term(dof, x, scale=1.0) == 0.0

    def test_zero_scale_gives_zero(self):
        dof = self._dof(np.arange(1, 9, dtype=float))
        for x in (1.0, 0.3, 0.02):
            assert forcing_term(dof, x, scale=0.0) == 0.0

    def test_uniform_weights_reduce_to_identity(self):
        # normalized weighting of equal weights is the weight itself
        dof = self._dof([2.5, 2.5])
        for x in (1.0, 0.7, 0.2, 0.05):
            assert forcing_term(dof, x, scale=3.0) == pytest.approx(x * 3.0 * 2.5, rel=1e-12)

    def test_phase_out_of_range_rejected(self):
        dof = self._dof(np.ones(4))
        with pytest.raises(ParameterError):
            forcing_term(dof, 0.0, scale=1.0)
        with pytest.raises(ParameterError):
            forcing_term(dof, 1.5, scale=1.0)


class TestFit:
    def test_straight_line_rollout_reaches_goal(self):
        model = fit(straight_line_demo(), n_basis=20)
        path = rollout(model)
        assert abs(path[-1, 0] - 0.5) < 1e-3

    def test_straight_line_matches_independent_integrator(self):
        model = fit(straight_line_demo(), n_basis=20)
        dof = model.dofs[0]
        expected = integrate_dmp_oracle(
            dof.weights, dof.centers, dof.widths,
            y0=dof.y0, g=dof.g, scale=dof.g - dof.y0,
            tau=model.tau, alpha_z=model.alpha_z, beta_z=model.beta_z,
            alpha_x=model.alpha_x, dt=model.dt, duration=1.5 * model.tau,
        )
        path = rollout(model)
        assert path.shape[0] == expected.shape[0]
        assert np.max(np.abs(path[:, 0] - expected)) < 1e-9

    def test_straight_line_pointwise_reproduction(self):
        demo = straight_line_demo()
        model = fit(demo, n_basis=20)
        path = rollout(model)
        n = demo.positions.shape[0]
        assert np.max(np.abs(path[:n, 0] - demo.positions[:, 0])) < 0.02 * 0.5

    def test_constant_velocity_ramp_also_reproduces(self):
        # the zero-acceleration start recovers the launch velocity of a ramp
        demo = ramp_demo()
        model = fit(demo, n_basis=20)
        path = rollout(model)
        n = demo.positions.shape[0]
        assert np.max(np.abs(path[:n, 0] - demo.positions[:, 0])) < 0.02 * 0.5
        assert abs(path[-1, 0] - 0.5) < 1e-3

    def test_constant_demo_stays_at_rest(self):
        demo = Demonstration(positions=np.full((80, 1), 0.37), dt=0.01)
        model = fit(demo, n_basis=10)
        path = rollout(model)
        assert np.max(np.abs(path[:, 0] - 0.37)) < 1e-6

    def test_sine_arc_self_reproduction_within_two_percent(self):
        dt = 0.01
        t = np.arange(0.0, 2.0 + dt / 2, dt)
        y = np.sin(np.pi * t / 2.0)
        model = fit(Demonstration(positions=y[:, None], dt=dt), n_basis=20)
        path = rollout(model)
        amplitude = y.max() - y.min()
        deviation = np.max(np.abs(path[: len(y), 0] - y))
        assert deviation < 0.02 * amplitude

    def test_model_metadata(self):
        demo = straight_line_demo(duration=2.0, dt=0.01)
        model = fit(demo, n_basis=20)
        assert model.tau == pytest.approx(2.0)
        assert model.dofs[0].y0 == 0.0
        assert model.dofs[0].g == 0.5
        assert model.beta_z == pytest.approx(model.alpha_z / 4)

    def test_too_short_demo_rejected(self):
        with pytest.raises(InsufficientDataError):
            Demonstration(positions=np.zeros((2, 1)), dt=0.01)

    def test_non_finite_demo_rejected(self):
        bad = np.zeros((10, 1))
        bad[4] = np.nan
        with pytest.raises(dmp.DataError):
            Demonstration(positions=bad, dt=0.01)


class TestRollout:
    def test_self_reproduction_endpoint(self):
        model = fit(straight_line_demo(), n_basis=20)
        path = rollout(model, y0_new=model.y0, g_new=model.g, tau_new=model.tau, dt=model.dt)
        assert abs(path[-1, 0] - model.g[0]) < 1e-3

    def test_goal_adaptation_to_one_meter(self):
        model = fit(straight_line_demo(), n_basis=20)
        path = rollout(model, g_new=np.array([1.0]))
        assert abs(path[-1, 0] - 1.0) < 1e-3

    def test_goal_adaptation_against_oracle(self):
        model = fit(straight_line_demo(), n_basis=20)
        dof = model.dofs[0]
        expected = integrate_dmp_oracle(
            dof.weights, dof.centers, dof.widths,
            y0=dof.y0, g=1.0, scale=1.0 - dof.y0,
            tau=model.tau, alpha_z=model.alpha_z, beta_z=model.beta_z,
            alpha_x=model.alpha_x, dt=model.dt, duration=1.5 * model.tau,
        )
        path = rollout(model, g_new=np.array([1.0]))
        assert np.max(np.abs(path[:, 0] - expected)) < 1e-9

    def test_time_scaling_doubles_samples(self):
        model = fit(straight_line_demo(), n_basis=20)
        base = rollout(model)
        slow = rollout(model, tau_new=2 * model.tau)
        assert slow.shape[0] == 2 * (base.shape[0] - 1) + 1
        assert abs(slow[-1, 0] - model.g[0]) < 1e-3

    def test_output_length_formula(self):
        model = fit(straight_line_demo(), n_basis=20)
        path = rollout(model, tau_new=1.3, dt=0.02)
        assert path.shape[0] == math.ceil(1.5 * 1.3 / 0.02) + 1

    def test_rejects_non_finite_goal(self):
        model = fit(straight_line_demo(), n_basis=20)
        with pytest.raises(ParameterError):
            rollout(model, g_new=np.array([np.inf]))

    def test_bitwise_determinism(self):
        model_a = fit(straight_line_demo(), n_basis=20)
        model_b = fit(straight_line_demo(), n_basis=20)
        path_a = rollout(model_a, g_new=np.array([0.9]))
        path_b = rollout(model_b, g_new=np.array([0.9]))
        assert np.array_equal(path_a, path_b)


class TestInvariantProperties:
    def test_endpoint_convergence_over_random_goals(self):
        model = fit(straight_line_demo(), n_basis=20)
        rng = np.random.default_rng(42)
        for _ in range(25):
            y0 = rng.uniform(-1.0, 1.0, 1)
            g = rng.uniform(-1.0, 1.0, 1)
            if abs(g[0] - y0[0]) < 1e-6:
                continue
            path = rollout(model, y0_new=y0, g_new=g)
            assert abs(path[-1, 0] - g[0]) < 1e-3

    def test_smooth_demo_self_reproduction(self):
        dt = 0.01
        t = np.arange(0.0, 2.0 + dt / 2, dt)
        # two smooth DOFs within the basis bandwidth
        y = np.column_stack([0.5 * (1 - np.cos(np.pi * t / 2.0)), 0.3 * np.sin(np.pi * t / 4.0)])
        model = fit(Demonstration(positions=y, dt=dt), n_basis=20)
        path = rollout(model)
        for d in range(2):
            span = y[:, d].max() - y[:, d].min()
            assert np.max(np.abs(path[: len(t), d] - y[:, d])) < 0.02 * span

    def test_goal_scaling_keeps_path_nearly_straight(self):
        model = fit(straight_line_demo(), n_basis=20)
        for g_new in (0.25, 1.0, 2.0):
            path = rollout(model, g_new=np.array([g_new]))
            travel = float(np.sum(np.abs(np.diff(path[:, 0])))) + abs(g_new - path[-1, 0])
            assert travel <= 1.05 * abs(g_new - 0.0)

    @given(st.floats(min_value=0.05, max_value=5.0), st.floats(min_value=1.0, max_value=20.0))
    @settings(max_examples=30, deadline=None)
    def test_phase_monotone_for_any_parameters(self, tau, alpha_x):
        t = np.linspace(0.0, 3.0 * tau, 100)
        x = canonical_phase(t, tau=tau, alpha_x=alpha_x)
        assert np.all(np.diff(x) < 0)
        assert x[0] == 1.0


class TestStoreDocument:
    def test_json_roundtrip_field_exact(self):
        demo = Demonstration(
            positions=np.column_stack([np.linspace(0, 0.5, 120), np.linspace(-0.2, 0.4, 120)]),
            dt=0.02,
        )
        model = fit(demo, n_basis=12, space=DmpSpace.CARTESIAN, object_id="cup_a")
        text = model_to_json(model)
        loaded = model_from_json(text)
        assert loaded.tau == model.tau
        assert loaded.dt == model.dt
        assert loaded.space is model.space
        assert loaded.object_id == "cup_a"
        assert loaded.alpha_z == model.alpha_z
        assert loaded.beta_z == model.beta_z
        assert loaded.alpha_x == model.alpha_x
        for a, b in zip(loaded.dofs, model.dofs):
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.centers, b.centers)
            assert np.array_equal(a.widths, b.widths)
            assert a.y0 == b.y0 and a.g == b.g

    def test_store_field_names(self):
        import json

        model = fit(straight_line_demo(), n_basis=8, object_id="block")
        doc = json.loads(model_to_json(model))
        assert set(doc) == {"schema_version", "space", "tau", "dt", "gains", "dofs", "object_id"}
        assert set(doc["gains"]) == {"alpha_z", "beta_z", "alpha_x"}
        assert set(doc["dofs"][0]) == {"weights", "centers", "widths", "y0", "g"}

    def test_centers_strictly_decreasing_in_unit_interval(self):
        model = fit(straight_line_demo(), n_basis=20)
        centers = model.dofs[0].centers
        assert centers[0] == 1.0
        assert np.all(np.diff(centers) < 0)
        assert centers[-1] > 0
        assert np.all(model.dofs[0].widths > 0)
